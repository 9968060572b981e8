//! Brute-force reference computations for small lattices.
//!
//! These enumerate paths and simple cycles explicitly, sharing nothing with
//! the relaxation engine except the edge weights, and are only practical for
//! a few dozen nodes.

use crate::lattice::{NodeId, StepKernel};
use crate::minplus::Digraph;

/// Successors of a node with their edge weights, found by scanning every node
/// of the next layer.
fn successors(kernel: &StepKernel, node: NodeId) -> Vec<(NodeId, f64)> {
    let lat = kernel.lattice();
    let next = lat.next_layer(lat.layer(node));
    (0..lat.cell_count())
        .map(|cell| lat.node(cell, next))
        .filter_map(|y| {
            let w = kernel.edge_weight(node, y);
            w.is_finite().then_some((y, w))
        })
        .collect()
}

/// Minimum over all `m`-step paths from `source`, per end node (`+inf` if none).
pub fn enumerate_path_costs(kernel: &StepKernel, source: NodeId, m: usize) -> Vec<f64> {
    let lat = kernel.lattice();
    let succ: Vec<Vec<(NodeId, f64)>> = lat.nodes().map(|v| successors(kernel, v)).collect();
    let mut best = vec![f64::INFINITY; lat.node_count()];
    fn walk(succ: &[Vec<(NodeId, f64)>], v: NodeId, acc: f64, left: usize, best: &mut [f64]) {
        if left == 0 {
            if acc < best[v.index()] {
                best[v.index()] = acc;
            }
            return;
        }
        for &(y, w) in &succ[v.index()] {
            walk(succ, y, acc + w, left - 1, best);
        }
    }
    walk(&succ, source, 0.0, m, &mut best);
    best
}

/// Simple cycle with the least mean weight, by exhaustive enumeration.
///
/// Each cycle is generated once, from its smallest vertex. Returns
/// `(mean, cycle)` or `None` for an acyclic graph.
pub fn enumerate_min_mean_cycle(n: usize, succ: &[Vec<(usize, f64)>]) -> Option<(f64, Vec<usize>)> {
    struct Search<'a> {
        succ: &'a [Vec<(usize, f64)>],
        on_path: Vec<bool>,
        path: Vec<usize>,
        best: Option<(f64, Vec<usize>)>,
    }
    impl Search<'_> {
        fn dfs(&mut self, start: usize, v: usize, acc: f64) {
            for &(y, w) in &self.succ[v] {
                if y == start {
                    let total = acc + w;
                    let mean = total / self.path.len() as f64;
                    if self.best.as_ref().is_none_or(|(m, _)| mean < *m) {
                        self.best = Some((mean, self.path.clone()));
                    }
                } else if y > start && !self.on_path[y] {
                    self.on_path[y] = true;
                    self.path.push(y);
                    self.dfs(start, y, acc + w);
                    self.path.pop();
                    self.on_path[y] = false;
                }
            }
        }
    }
    let mut search = Search {
        succ,
        on_path: vec![false; n],
        path: Vec::new(),
        best: None,
    };
    for start in 0..n {
        search.on_path[start] = true;
        search.path.push(start);
        search.dfs(start, start, 0.0);
        search.path.pop();
        search.on_path[start] = false;
    }
    search.best
}

/// Exhaustive minimum mean cycle of a lattice kernel.
pub fn kernel_min_mean_cycle(kernel: &StepKernel) -> Option<(f64, Vec<NodeId>)> {
    let lat = kernel.lattice();
    let succ: Vec<Vec<(usize, f64)>> = lat
        .nodes()
        .map(|v| {
            successors(kernel, v)
                .into_iter()
                .map(|(y, w)| (y.index(), w))
                .collect()
        })
        .collect();
    enumerate_min_mean_cycle(lat.node_count(), &succ)
        .map(|(mean, cycle)| (mean, cycle.into_iter().map(|i| NodeId(i as u32)).collect()))
}

/// Exhaustive minimum mean cycle of a [`Digraph`].
pub fn digraph_min_mean_cycle(g: &Digraph) -> Option<(f64, Vec<usize>)> {
    let mut succ = vec![Vec::new(); g.node_count()];
    for &(a, b, w) in g.edges() {
        succ[a as usize].push((b as usize, w));
    }
    enumerate_min_mean_cycle(g.node_count(), &succ)
}

/// Action of a path given as consecutive lattice nodes.
pub fn path_action(kernel: &StepKernel, nodes: &[NodeId]) -> f64 {
    nodes
        .windows(2)
        .fold(0.0, |acc, p| acc + kernel.edge_weight(p[0], p[1]))
}

/// Quadrature of the Mañé potential of a one-dimensional mechanical system at
/// energy `c`, from `x = 0` to `x`, taking the shorter way around the circle:
/// `int sqrt(2 (c - V(s))) ds` by composite Simpson with `panels` panels.
pub fn mane_potential_1d(potential: impl Fn(f64) -> f64, c: f64, x: f64, panels: usize) -> f64 {
    let x = x.rem_euclid(1.0);
    let (a, b) = if x <= 0.5 { (0.0, x) } else { (x, 1.0) };
    let panels = panels.max(2) & !1;
    let h = (b - a) / panels as f64;
    let f = |s: f64| (2.0 * (c - potential(s)).max(0.0)).sqrt();
    let mut sum = f(a) + f(b);
    for i in 1..panels {
        let s = a + i as f64 * h;
        sum += if i % 2 == 1 { 4.0 * f(s) } else { 2.0 * f(s) };
    }
    sum * h / 3.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn mane_potential_of_pendulum_matches_closed_form() {
        let v = |s: f64| (1.0 + (2.0 * PI * s).cos()) / 2.0;
        for x in [0.1f64, 0.25, 0.5, 0.8] {
            let closed = 2f64.sqrt() / PI * (1.0 - (PI * x.min(1.0 - x)).cos());
            assert!((mane_potential_1d(v, 1.0, x, 2000) - closed).abs() < 1e-10);
        }
    }

    #[test]
    fn brute_force_two_node_cycle() {
        let mut g = Digraph::new(2);
        g.add_edge(0, 1, 1.0);
        g.add_edge(1, 0, 3.0);
        g.add_edge(0, 0, 2.5);
        let (mean, cycle) = digraph_min_mean_cycle(&g).unwrap();
        assert_eq!(mean, 2.0);
        assert_eq!(cycle, vec![0, 1]);
    }
}
