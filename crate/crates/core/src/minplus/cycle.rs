//! Minimum mean cycles: Karp's exact algorithm and Howard's policy iteration.
//!
//! Every cycle of the layered graph crosses layer 0, so the lattice problem is
//! solved on the one-period graph over layer-0 cells (edge weight = cheapest
//! `T`-step path) and the winning cycle is expanded back to lattice nodes.

use serde::{Deserialize, Serialize};

use super::{push_argmin, push_layer, PeriodMap};
use crate::error::{Error, Result};
use crate::lattice::{NodeId, StepKernel};

/// Weighted digraph given by an edge list; parallel edges are allowed.
#[derive(Clone, Debug, Default)]
pub struct Digraph {
    n: usize,
    edges: Vec<(u32, u32, f64)>,
}

impl Digraph {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            edges: Vec::new(),
        }
    }

    pub fn add_edge(&mut self, from: usize, to: usize, weight: f64) {
        assert!(from < self.n && to < self.n, "edge endpoint out of range");
        if weight.is_finite() {
            self.edges.push((from as u32, to as u32, weight));
        }
    }

    /// Dense matrix with `+inf` for absent edges.
    pub fn from_dense(n: usize, weights: &[f64]) -> Self {
        let mut g = Self::new(n);
        for a in 0..n {
            for b in 0..n {
                g.add_edge(a, b, weights[a * n + b]);
            }
        }
        g
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(u32, u32, f64)] {
        &self.edges
    }

    fn in_edges(&self) -> Vec<Vec<usize>> {
        let mut ins = vec![Vec::new(); self.n];
        for (i, &(_, b, _)) in self.edges.iter().enumerate() {
            ins[b as usize].push(i);
        }
        ins
    }

    fn out_edges(&self) -> Vec<Vec<usize>> {
        let mut outs = vec![Vec::new(); self.n];
        for (i, &(a, _, _)) in self.edges.iter().enumerate() {
            outs[a as usize].push(i);
        }
        outs
    }

    /// Sum of edge weights along `edges` in order.
    pub fn path_weight(&self, edges: &[usize]) -> f64 {
        edges.iter().fold(0.0, |acc, &e| acc + self.edges[e].2)
    }
}

/// A cycle of a [`Digraph`] with its mean edge weight.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanCycle {
    pub mean: f64,
    /// Vertices in traversal order; the last one links back to the first.
    pub nodes: Vec<usize>,
    /// Edge indices, `edges[i]` leaving `nodes[i]`.
    pub edges: Vec<usize>,
}

/// Karp's theorem with `D_0 = 0` on every vertex, so no strong connectivity is assumed.
pub fn karp(g: &Digraph) -> Result<MeanCycle> {
    let n = g.n;
    if n == 0 || g.edges.is_empty() {
        return Err(Error::NoCycle);
    }
    let ins = g.in_edges();
    let mut d = vec![f64::INFINITY; (n + 1) * n];
    let mut pred = vec![u32::MAX; (n + 1) * n];
    d[..n].iter_mut().for_each(|x| *x = 0.0);
    for k in 1..=n {
        let (prev, cur) = d.split_at_mut(k * n);
        let prev = &prev[(k - 1) * n..];
        for v in 0..n {
            let mut best = (u32::MAX, f64::INFINITY);
            for &e in &ins[v] {
                let (a, _, w) = g.edges[e];
                let val = prev[a as usize] + w;
                if val < best.1 {
                    best = (e as u32, val);
                }
            }
            cur[v] = best.1;
            pred[k * n + v] = best.0;
        }
    }
    let last = &d[n * n..];
    let mut best: Option<(f64, usize)> = None;
    for v in 0..n {
        if !last[v].is_finite() {
            continue;
        }
        let mut worst = f64::NEG_INFINITY;
        for k in 0..n {
            let dk = d[k * n + v];
            if dk.is_finite() {
                worst = worst.max((last[v] - dk) / (n - k) as f64);
            }
        }
        if best.is_none_or(|(m, _)| worst < m) {
            best = Some((worst, v));
        }
    }
    let (karp_mean, v_star) = best.ok_or(Error::NoCycle)?;
    // walk the optimal length-n walk back from v*; any cycle on it is optimal
    let mut walk_nodes = vec![v_star];
    let mut walk_edges = Vec::new();
    let mut seen = vec![usize::MAX; n];
    seen[v_star] = 0;
    let mut v = v_star;
    for k in (1..=n).rev() {
        let e = pred[k * n + v] as usize;
        let a = g.edges[e].0 as usize;
        walk_edges.push(e);
        walk_nodes.push(a);
        let pos = walk_nodes.len() - 1;
        if seen[a] != usize::MAX {
            let q = seen[a];
            // walk_nodes[q..=pos] runs backward in time from a to a
            let mut nodes: Vec<usize> = walk_nodes[q + 1..=pos].to_vec();
            let mut edges: Vec<usize> = walk_edges[q..pos].to_vec();
            nodes.reverse();
            edges.reverse();
            let mean = g.path_weight(&edges) / edges.len() as f64;
            debug_assert!((mean - karp_mean).abs() <= 1e-9 * (1.0 + karp_mean.abs()));
            return Ok(MeanCycle { mean, nodes, edges });
        }
        seen[a] = pos;
        v = a;
    }
    Err(Error::Inconsistent(
        "Karp walk of length n has no repeated vertex".into(),
    ))
}

/// Howard's policy iteration for the minimum cycle mean.
pub fn howard(g: &Digraph, max_iterations: usize) -> Result<MeanCycle> {
    let n = g.n;
    let outs = g.out_edges();
    if n == 0 || outs.iter().any(|o| o.is_empty()) {
        // nodes without successors cannot lie on a cycle; Karp handles those graphs
        return karp(g);
    }
    let eps = 1e-12 * (1.0 + g.edges.iter().map(|e| e.2.abs()).fold(0.0, f64::max));
    let mut policy: Vec<usize> = outs
        .iter()
        .map(|o| {
            *o.iter()
                .min_by(|&&a, &&b| g.edges[a].2.total_cmp(&g.edges[b].2))
                .unwrap()
        })
        .collect();
    let mut eta = vec![0.0; n];
    let mut x = vec![0.0; n];
    for _ in 0..max_iterations {
        evaluate_policy(g, &policy, &mut eta, &mut x);
        let mut changed = false;
        for v in 0..n {
            let mut best = (policy[v], eta[g.edges[policy[v]].1 as usize]);
            for &e in &outs[v] {
                let u = g.edges[e].1 as usize;
                if eta[u] < best.1 - eps {
                    best = (e, eta[u]);
                }
            }
            if best.0 != policy[v] && best.1 < eta[v] - eps {
                policy[v] = best.0;
                changed = true;
            }
        }
        if !changed {
            for v in 0..n {
                let mut best = (policy[v], x[v]);
                for &e in &outs[v] {
                    let (_, u, w) = g.edges[e];
                    let u = u as usize;
                    if (eta[u] - eta[v]).abs() <= eps {
                        let val = w - eta[v] + x[u];
                        if val < best.1 - eps {
                            best = (e, val);
                        }
                    }
                }
                if best.0 != policy[v] {
                    policy[v] = best.0;
                    changed = true;
                }
            }
        }
        if !changed {
            let start = (0..n).min_by(|&a, &b| eta[a].total_cmp(&eta[b])).unwrap();
            return Ok(policy_cycle(g, &policy, start));
        }
    }
    Err(Error::Inconsistent(format!(
        "Howard iteration did not settle in {max_iterations} rounds"
    )))
}

fn policy_cycle(g: &Digraph, policy: &[usize], start: usize) -> MeanCycle {
    let mut pos = vec![usize::MAX; g.n];
    let mut walk = Vec::new();
    let mut v = start;
    while pos[v] == usize::MAX {
        pos[v] = walk.len();
        walk.push(v);
        v = g.edges[policy[v]].1 as usize;
    }
    let nodes = walk[pos[v]..].to_vec();
    let edges: Vec<usize> = nodes.iter().map(|&a| policy[a]).collect();
    let mean = g.path_weight(&edges) / edges.len() as f64;
    MeanCycle { mean, nodes, edges }
}

fn evaluate_policy(g: &Digraph, policy: &[usize], eta: &mut [f64], x: &mut [f64]) {
    const NEW: u8 = 0;
    const ACTIVE: u8 = 1;
    const DONE: u8 = 2;
    let n = g.n;
    let next = |v: usize| g.edges[policy[v]].1 as usize;
    let mut state = vec![NEW; n];
    let mut path = Vec::new();
    for root in 0..n {
        if state[root] != NEW {
            continue;
        }
        path.clear();
        let mut v = root;
        while state[v] == NEW {
            state[v] = ACTIVE;
            path.push(v);
            v = next(v);
        }
        let mut tail_end = path.len();
        if state[v] == ACTIVE {
            // new cycle starting at v
            let start = path.iter().position(|&p| p == v).unwrap();
            let cycle = &path[start..];
            let edges: Vec<usize> = cycle.iter().map(|&c| policy[c]).collect();
            let mean = g.path_weight(&edges) / edges.len() as f64;
            x[v] = 0.0;
            eta[v] = mean;
            for &c in cycle[1..].iter().rev() {
                let nc = next(c);
                x[c] = g.edges[policy[c]].2 - mean + x[nc];
                eta[c] = mean;
            }
            for &c in cycle {
                state[c] = DONE;
            }
            tail_end = start;
        }
        for &p in path[..tail_end].iter().rev() {
            let np = next(p);
            eta[p] = eta[np];
            x[p] = g.edges[policy[p]].2 - eta[np] + x[np];
            state[p] = DONE;
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanCycleMethod {
    #[default]
    Karp,
    Howard,
}

/// Cheapest mean edge weight over all cycles of the lattice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanCycleResult {
    /// Average weight per step.
    pub mean: f64,
    /// Lattice nodes in traversal order; the last links back to the first.
    pub cycle: Vec<NodeId>,
    /// Number of steps, a positive multiple of `T`.
    pub period_steps: usize,
}

/// Minimum mean cycle of a kernel, using a prebuilt layer-0 period map if given.
pub fn min_mean_cycle(
    kernel: &StepKernel,
    method: MeanCycleMethod,
    period_map: Option<&PeriodMap>,
) -> Result<MeanCycleResult> {
    let lat = kernel.lattice();
    let owned;
    let map = match period_map {
        Some(m) if m.layer() == 0 => m,
        _ => {
            owned = PeriodMap::build(kernel, 0);
            &owned
        }
    };
    let g = Digraph::from_dense(lat.cell_count(), map.matrix());
    let reduced = match method {
        MeanCycleMethod::Karp => karp(&g)?,
        MeanCycleMethod::Howard => howard(&g, 10_000)?,
    };
    let mut cycle = Vec::with_capacity(reduced.nodes.len() * lat.layers());
    for (i, &a) in reduced.nodes.iter().enumerate() {
        let b = reduced.nodes[(i + 1) % reduced.nodes.len()];
        cycle.extend(expand_period_path(kernel, a, b));
    }
    let mean = cycle_weight(kernel, &cycle) / cycle.len() as f64;
    Ok(MeanCycleResult {
        mean,
        period_steps: cycle.len(),
        cycle,
    })
}

/// Sum of edge weights around a node cycle, starting at its first node.
pub fn cycle_weight(kernel: &StepKernel, cycle: &[NodeId]) -> f64 {
    (0..cycle.len()).fold(0.0, |acc, i| {
        acc + kernel.edge_weight(cycle[i], cycle[(i + 1) % cycle.len()])
    })
}

/// Nodes of a cheapest `T`-step path from `(a, 0)` to `(b, 0)`, excluding the endpoint.
fn expand_period_path(kernel: &StepKernel, a: usize, b: usize) -> Vec<NodeId> {
    let lat = kernel.lattice();
    let c = lat.cell_count();
    let t = lat.layers();
    let mut slices = Vec::with_capacity(t);
    let mut cur = vec![f64::INFINITY; c];
    cur[a] = 0.0;
    for layer in 0..t {
        let mut next = vec![0.0; c];
        push_layer(kernel, layer, &cur, &mut next);
        slices.push(std::mem::replace(&mut cur, next));
    }
    let mut path = vec![lat.node(b, 0); t];
    let mut y = b;
    for layer in (0..t).rev() {
        let (slot, _) = push_argmin(kernel, layer, &slices[layer], y);
        y = lat.source_cell(y, slot);
        path[layer] = lat.node(y, layer);
    }
    debug_assert_eq!(y, a);
    path
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_node_example() {
        let mut g = Digraph::new(2);
        g.add_edge(0, 1, 1.0);
        g.add_edge(1, 0, 3.0);
        g.add_edge(0, 0, 2.5);
        for found in [karp(&g).unwrap(), howard(&g, 100).unwrap()] {
            assert_eq!(found.mean, 2.0);
            let mut nodes = found.nodes.clone();
            nodes.sort();
            assert_eq!(nodes, vec![0, 1]);
        }
    }

    #[test]
    fn acyclic_graph_has_no_cycle() {
        let mut g = Digraph::new(3);
        g.add_edge(0, 1, 1.0);
        g.add_edge(1, 2, 1.0);
        assert!(matches!(karp(&g), Err(Error::NoCycle)));
        assert!(matches!(howard(&g, 10), Err(Error::NoCycle)));
    }

    #[test]
    fn disconnected_components() {
        let mut g = Digraph::new(5);
        g.add_edge(0, 1, 4.0);
        g.add_edge(1, 0, 4.0);
        g.add_edge(2, 3, -1.0);
        g.add_edge(3, 4, 0.0);
        g.add_edge(4, 2, -2.0);
        let k = karp(&g).unwrap();
        assert_eq!(k.mean, -1.0);
        assert_eq!(k.nodes.len(), 3);
        assert_eq!(howard(&g, 100).unwrap().mean, -1.0);
    }

    #[test]
    fn cycle_edges_follow_nodes() {
        let w = [
            5.0, 1.0, 9.0, 9.0, //
            9.0, 9.0, 1.0, 9.0, //
            1.0, 9.0, 9.0, 0.5, //
            9.0, 9.0, 9.0, 3.0,
        ];
        let g = Digraph::from_dense(4, &w);
        let c = karp(&g).unwrap();
        assert_eq!(c.mean, 1.0);
        for (i, &e) in c.edges.iter().enumerate() {
            let (a, b, _) = g.edges()[e];
            assert_eq!(a as usize, c.nodes[i]);
            assert_eq!(b as usize, c.nodes[(i + 1) % c.nodes.len()]);
        }
    }
}
