//! Action potential, Peierls barrier, Aubry set and static classes.
//!
//! Fields are computed one source at a time by walking single-layer cost
//! slices; `phi` is the minimum over every step count up to `m_max`, `h` the
//! windowed minimum over `[m_min, m_max]`. Since both are taken over the
//! same sequence of slices, `phi <= h` holds exactly.
//!
//! The Aubry diagonal is not read off per-node barrier sweeps. A potential
//! `u = Phi(p -> .)` from a node on the critical cycle turns the kernel into
//! nonnegative reduced weights `w + u(x) - u(y)` with the same cycle costs.
//! Zero-cost cycles then form strongly connected components of the
//! zero-weight subgraph, and `h(n -> n)` is the cheapest detour
//! `Phi(n -> z) + Phi(z -> n)` through such a cycle, found by Dijkstra.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::critical::CriticalKernel;
use crate::error::{Error, Result};
use crate::lattice::{Lattice, NodeId, StepKernel};
use crate::minplus::{potential, CostVector, Orientation, RunningMinParams, Sweep};

/// Costs at one fixed number of whole periods.
#[derive(Clone, Debug, PartialEq)]
pub struct PhiN {
    pub periods: usize,
    pub costs: CostVector,
}

/// Potential and barrier from (or into) one node.
#[derive(Clone, Debug)]
pub struct BarrierField {
    pub source: NodeId,
    pub orientation: Orientation,
    /// Level of the kernel the field was computed on.
    pub k: f64,
    pub phi_n: Option<PhiN>,
    pub phi: CostVector,
    /// No entry of `phi` improved by more than the tolerance in the last window.
    pub phi_stable: bool,
    /// A negative closed walk through the source was found.
    pub divergent: bool,
    /// Step count of the last improvement of `phi`.
    pub stabilized_at: usize,
    pub h: Option<CostVector>,
    pub converged: bool,
    /// Largest improvement of `h` during the final window.
    pub residual: f64,
    pub m_max: usize,
}

impl BarrierField {
    /// `h`, or an error if the field was computed without one.
    pub fn barrier(&self) -> Result<&CostVector> {
        self.h.as_ref().ok_or(Error::Empty("barrier values"))
    }
}

fn field_sweep(
    kernel: &StepKernel,
    node: NodeId,
    orientation: Orientation,
    m_max: usize,
    running: Option<&RunningMinParams>,
    periods_n: Option<usize>,
    tol: f64,
) -> BarrierField {
    let lat = kernel.lattice();
    let (t, c) = (lat.layers(), lat.cell_count());
    let window = running.map_or(1, |p| p.window);
    let window_start = (m_max + 1).saturating_sub(window * t);
    let m_min = running.map(|p| p.m_min);

    let mut phi = vec![f64::INFINITY; lat.node_count()];
    phi[node.index()] = 0.0;
    let mut h = running.map(|_| vec![f64::INFINITY; lat.node_count()]);
    let mut fixed = periods_n.map(|_| vec![f64::INFINITY; lat.node_count()]);
    let (mut phi_residual, mut h_residual, mut stabilized_at) = (0.0f64, 0.0f64, 0);

    let mut sweep = Sweep::new(kernel, node, orientation);
    while sweep.steps() < m_max {
        sweep.step();
        let (m, l) = (sweep.steps(), sweep.layer());
        let values = sweep.values();
        let range = l * c..(l + 1) * c;
        for (p, &v) in phi[range.clone()].iter_mut().zip(values) {
            if v < *p {
                if m >= window_start {
                    phi_residual = phi_residual.max(*p - v);
                }
                stabilized_at = m;
                *p = v;
            }
        }
        if let (Some(h), Some(m_min)) = (h.as_mut(), m_min) {
            if m >= m_min {
                for (b, &v) in h[range.clone()].iter_mut().zip(values) {
                    if v < *b {
                        if m >= window_start {
                            h_residual = h_residual.max(*b - v);
                        }
                        *b = v;
                    }
                }
            }
        }
        if let (Some(f), Some(n)) = (fixed.as_mut(), periods_n) {
            if m / t == n {
                f[range].copy_from_slice(values);
            }
        }
    }

    let divergent = phi[node.index()] < -tol;
    let converged = running.is_some_and(|p| h_residual <= p.residual_tol) && !divergent;
    BarrierField {
        source: node,
        orientation,
        k: kernel.k(),
        phi_n: fixed.zip(periods_n).map(|(f, periods)| PhiN {
            periods,
            costs: CostVector::from_raw(f),
        }),
        phi: CostVector::from_raw(phi),
        phi_stable: phi_residual <= tol,
        divergent,
        stabilized_at,
        h: h.map(CostVector::from_raw),
        converged,
        residual: h_residual,
        m_max,
    }
}

/// `Phi_k(source -> .)` as the minimum over step counts `0..=m_max`, plus the
/// costs at exactly `n` whole periods (and the layer offset of each target)
/// when `n` is given.
///
/// Below the critical level the costs decrease without bound; this shows up
/// as `divergent = true` once a negative loop through the source fits in
/// `m_max` steps.
pub fn action_potential(
    kernel: &StepKernel,
    source: NodeId,
    n: Option<usize>,
    m_max: usize,
    tol: f64,
) -> Result<BarrierField> {
    let lat = kernel.lattice();
    if source.index() >= lat.node_count() {
        return Err(Error::Config(format!("{source} is outside the lattice")));
    }
    if m_max < lat.layers() {
        return Err(Error::Config(format!(
            "m_max = {m_max} must be at least T = {}",
            lat.layers()
        )));
    }
    if let Some(n) = n {
        if (n + 1) * lat.layers() - 1 > m_max {
            return Err(Error::Config(format!(
                "n = {n} periods exceeds m_max = {m_max}"
            )));
        }
    }
    Ok(field_sweep(
        kernel,
        source,
        Orientation::From,
        m_max,
        None,
        n,
        tol,
    ))
}

/// Barrier fields for each source at the critical level, in parallel.
///
/// `orientation = To` gives `h(. -> source)` and `Phi(. -> source)`.
pub fn peierls_barrier(
    ck: &CriticalKernel,
    sources: &[NodeId],
    params: &RunningMinParams,
    orientation: Orientation,
    tol_c: f64,
) -> Result<Vec<BarrierField>> {
    let kernel = ck.kernel();
    let lat = kernel.lattice();
    params.validate(lat.layers())?;
    let mean = ck.residual_mean();
    if mean.abs() > tol_c {
        return Err(Error::Inconsistent(format!(
            "kernel is not critical: cycle mean {mean:e} exceeds tol_c = {tol_c:e}"
        )));
    }
    if let Some(bad) = sources.iter().find(|s| s.index() >= lat.node_count()) {
        return Err(Error::Config(format!("{bad} is outside the lattice")));
    }
    Ok(sources
        .par_iter()
        .map(|&s| {
            field_sweep(
                kernel,
                s,
                orientation,
                params.m_max,
                Some(params),
                None,
                params.residual_tol,
            )
        })
        .collect())
}

/// Sources used when no explicit list is given: every node on small lattices,
/// otherwise one node per cell at layer 0 plus `extra`.
pub fn default_sources(lattice: &Lattice, extra: &[NodeId]) -> Vec<NodeId> {
    let mut out: Vec<NodeId> = if lattice.node_count() <= 4096 {
        lattice.nodes().collect()
    } else {
        (0..lattice.cell_count())
            .map(|c| lattice.node(c, 0))
            .chain(extra.iter().copied())
            .collect()
    };
    out.sort_unstable();
    out.dedup();
    out
}

/// Largest `h(x -> z) - h(x -> y) - Phi(y -> z)` over random triples with
/// `x` a source of `h_fields`, `y` a source of `phi_fields` and `z` any node.
pub fn check_triangle(
    h_fields: &[BarrierField],
    phi_fields: &[BarrierField],
    samples: usize,
    seed: u64,
) -> Result<f64> {
    if h_fields.is_empty() || phi_fields.is_empty() {
        return Err(Error::Empty("barrier fields"));
    }
    let nodes = phi_fields[0].phi.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..samples {
        let hx = h_fields[rng.gen_range(0..h_fields.len())].barrier()?;
        let py = &phi_fields[rng.gen_range(0..phi_fields.len())];
        let z = rng.gen_range(0..nodes);
        let v = hx[z] - hx[py.source.index()] - py.phi[z];
        if !v.is_nan() {
            worst = worst.max(v);
        }
    }
    Ok(worst)
}

/// Largest `phi - h` over all fields (nonpositive when `Phi <= h`).
pub fn phi_h_slack(fields: &[BarrierField]) -> Result<f64> {
    let mut worst = f64::NEG_INFINITY;
    for f in fields {
        for (p, b) in f.phi.iter().zip(f.barrier()?.iter()) {
            if b.is_finite() {
                worst = worst.max(p - b);
            }
        }
    }
    Ok(worst)
}

/// Largest difference quotient `|u(a) - u(b)| N` between spatially adjacent
/// cells of the same layer.
pub fn spatial_lipschitz(lattice: &Lattice, values: &[f64]) -> f64 {
    let (n, d, c) = (lattice.n(), lattice.dim(), lattice.cell_count());
    let mut worst = 0.0f64;
    for layer in 0..lattice.layers() {
        for cell in 0..c {
            let mut stride = 1;
            for _ in 0..d {
                let coord = (cell / stride) % n;
                let neighbour = cell - coord * stride + ((coord + 1) % n) * stride;
                let (a, b) = (
                    values[lattice.node(cell, layer).index()],
                    values[lattice.node(neighbour, layer).index()],
                );
                if a.is_finite() && b.is_finite() {
                    worst = worst.max((a - b).abs() * n as f64);
                }
                stride *= n;
            }
        }
    }
    worst
}

/// Largest spatial Lipschitz quotient of the barrier values over all fields.
pub fn lipschitz_estimate(lattice: &Lattice, fields: &[BarrierField]) -> Result<f64> {
    fields
        .iter()
        .map(|f| f.barrier().map(|h| spatial_lipschitz(lattice, h)))
        .try_fold(0.0f64, |acc, v| v.map(|v| acc.max(v)))
}

/// Nonnegative reduced edge weights from a potential.
#[derive(Clone, Debug)]
pub struct Gauge {
    pub reference: NodeId,
    pub potential: Vec<f64>,
    reduced: Vec<f64>,
    /// Largest negative reduced weight before clipping (zero for an exact
    /// subsolution).
    pub defect: f64,
    pub stable: bool,
    /// Reduced weights at or below this count as zero.
    pub zero_tol: f64,
}

impl Gauge {
    /// Gauge from `Phi(reference -> .)`, iterated to a fixed point or `m_max` steps.
    pub fn new(kernel: &StepKernel, reference: NodeId, m_max: usize) -> Self {
        let lat = kernel.lattice();
        let pot = potential(kernel, reference, m_max, 0.0, Orientation::From);
        let u = pot.costs.into_inner();
        let s = lat.slot_count();
        let c = lat.cell_count();
        let mut reduced = vec![0.0; kernel.weights().len()];
        let mut defect = 0.0f64;
        let mut scale = 0.0f64;
        for layer in 0..lat.layers() {
            let next = lat.next_layer(layer);
            for x in 0..c {
                let ux = u[layer * c + x];
                scale = scale.max(ux.abs());
                for slot in 0..s {
                    let e = kernel.edge_index(x, layer, slot);
                    let w = kernel.weights()[e];
                    let r = w + ux - u[next * c + lat.target_cell(x, slot)];
                    defect = defect.max(-r);
                    scale = scale.max(w.abs());
                    reduced[e] = r.max(0.0);
                }
            }
        }
        let zero_tol = (1e-12 * (1.0 + scale)).max(4.0 * defect);
        Self {
            reference,
            potential: u,
            reduced,
            defect,
            stable: pot.stable,
            zero_tol,
        }
    }

    pub fn reduced(&self) -> &[f64] {
        &self.reduced
    }
}

fn dijkstra(
    kernel: &StepKernel,
    reduced: &[f64],
    sources: &[NodeId],
    orientation: Orientation,
    cap: f64,
) -> Vec<f64> {
    let lat = kernel.lattice();
    let (c, s) = (lat.cell_count(), lat.slot_count());
    let mut dist = vec![f64::INFINITY; lat.node_count()];
    // nonnegative floats order like their bit patterns
    let mut heap = BinaryHeap::new();
    for &src in sources {
        dist[src.index()] = 0.0;
        heap.push(Reverse((0u64, src.0)));
    }
    while let Some(Reverse((bits, v))) = heap.pop() {
        let d = f64::from_bits(bits);
        let v = v as usize;
        if d > dist[v] {
            continue;
        }
        let (cell, layer) = (v % c, v / c);
        for slot in 0..s {
            let (other, e) = match orientation {
                Orientation::From => {
                    let next = lat.next_layer(layer);
                    (
                        next * c + lat.target_cell(cell, slot),
                        kernel.edge_index(cell, layer, slot),
                    )
                }
                Orientation::To => {
                    let prev = lat.prev_layer(layer);
                    let x = lat.source_cell(cell, slot);
                    (prev * c + x, kernel.edge_index(x, prev, slot))
                }
            };
            let nd = d + reduced[e];
            if nd < dist[other] && nd <= cap {
                dist[other] = nd;
                heap.push(Reverse((nd.to_bits(), other as u32)));
            }
        }
    }
    dist
}

/// Strongly connected components (Kosaraju) of the subgraph of edges with
/// reduced weight at most `zero_tol`; returns whether each node lies on a cycle.
fn on_zero_cycle(kernel: &StepKernel, gauge: &Gauge) -> Vec<bool> {
    let lat = kernel.lattice();
    let (c, s, n) = (lat.cell_count(), lat.slot_count(), lat.node_count());
    let zero = |e: usize| gauge.reduced[e] <= gauge.zero_tol;
    let succ = |v: usize, out: &mut Vec<usize>| {
        out.clear();
        let (cell, layer) = (v % c, v / c);
        let next = lat.next_layer(layer);
        for slot in 0..s {
            if zero(kernel.edge_index(cell, layer, slot)) {
                out.push(next * c + lat.target_cell(cell, slot));
            }
        }
    };
    let pred = |v: usize, out: &mut Vec<usize>| {
        out.clear();
        let (cell, layer) = (v % c, v / c);
        let prev = lat.prev_layer(layer);
        for slot in 0..s {
            let x = lat.source_cell(cell, slot);
            if zero(kernel.edge_index(x, prev, slot)) {
                out.push(prev * c + x);
            }
        }
    };

    let mut order = Vec::with_capacity(n);
    let mut seen = vec![false; n];
    let mut buf = Vec::new();
    for root in 0..n {
        if seen[root] {
            continue;
        }
        seen[root] = true;
        let mut stack: Vec<(usize, Vec<usize>)> = Vec::new();
        succ(root, &mut buf);
        stack.push((root, buf.clone()));
        while let Some((v, rest)) = stack.last_mut() {
            if let Some(w) = rest.pop() {
                if !seen[w] {
                    seen[w] = true;
                    succ(w, &mut buf);
                    stack.push((w, buf.clone()));
                }
            } else {
                order.push(*v);
                stack.pop();
            }
        }
    }

    let mut comp = vec![usize::MAX; n];
    let mut size = Vec::new();
    for &root in order.iter().rev() {
        if comp[root] != usize::MAX {
            continue;
        }
        let id = size.len();
        let mut count = 0;
        let mut stack = vec![root];
        comp[root] = id;
        while let Some(v) = stack.pop() {
            count += 1;
            pred(v, &mut buf);
            for &w in &buf {
                if comp[w] == usize::MAX {
                    comp[w] = id;
                    stack.push(w);
                }
            }
        }
        size.push(count);
    }

    (0..n)
        .map(|v| {
            if size[comp[v]] > 1 {
                return true;
            }
            succ(v, &mut buf);
            buf.contains(&v)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagonalKind {
    /// On a zero-cost cycle: `h(n -> n) = 0`.
    Critical,
    /// Computed exactly as the cheapest detour through a zero-cost cycle.
    Refined,
    /// Only a lower bound, known to exceed the cap.
    LowerBound,
}

/// `h(n -> n)` for every node, exact up to `cap` and bounded below beyond it.
#[derive(Clone, Debug)]
pub struct AubryDiagonal {
    pub values: Vec<f64>,
    pub kinds: Vec<DiagonalKind>,
    pub cap: f64,
}

impl AubryDiagonal {
    /// Diagonal from directly computed barrier values (all exact).
    pub fn from_values(values: Vec<f64>) -> Self {
        let kinds = vec![DiagonalKind::Refined; values.len()];
        Self {
            values,
            kinds,
            cap: f64::INFINITY,
        }
    }
}

/// Diagonal of the barrier through the gauge of `kernel`.
pub fn aubry_diagonal(kernel: &StepKernel, gauge: &Gauge, cap: f64) -> AubryDiagonal {
    let n = kernel.lattice().node_count();
    let critical = on_zero_cycle(kernel, gauge);
    let zs: Vec<NodeId> = (0..n)
        .filter(|&v| critical[v])
        .map(|v| NodeId(v as u32))
        .collect();
    let red = &gauge.reduced;
    let into_z = dijkstra(kernel, red, &zs, Orientation::To, f64::INFINITY);
    let from_z = dijkstra(kernel, red, &zs, Orientation::From, f64::INFINITY);

    let refined: Vec<(f64, DiagonalKind)> = (0..n)
        .into_par_iter()
        .map(|v| {
            if critical[v] {
                return (0.0, DiagonalKind::Critical);
            }
            let bound = into_z[v] + from_z[v];
            if bound > cap {
                return (bound, DiagonalKind::LowerBound);
            }
            let node = [NodeId(v as u32)];
            let out = dijkstra(kernel, red, &node, Orientation::From, cap);
            let back = dijkstra(kernel, red, &node, Orientation::To, cap);
            let best = zs
                .iter()
                .map(|z| out[z.index()] + back[z.index()])
                .fold(f64::INFINITY, f64::min);
            if best <= cap {
                (best, DiagonalKind::Refined)
            } else {
                (bound, DiagonalKind::LowerBound)
            }
        })
        .collect();
    let (values, kinds) = refined.into_iter().unzip();
    AubryDiagonal { values, kinds, cap }
}

/// Nodes with `h(n -> n) <= epsilon_aubry`.
pub fn aubry_set(diagonal: &AubryDiagonal, epsilon_aubry: f64) -> Result<Vec<NodeId>> {
    if epsilon_aubry > diagonal.cap {
        return Err(Error::Config(format!(
            "epsilon_aubry = {epsilon_aubry:e} exceeds the diagonal cap {:e}",
            diagonal.cap
        )));
    }
    let nodes: Vec<NodeId> = diagonal
        .values
        .iter()
        .zip(&diagonal.kinds)
        .enumerate()
        .filter(|(_, (v, kind))| **kind != DiagonalKind::LowerBound && **v <= epsilon_aubry)
        .map(|(i, _)| NodeId(i as u32))
        .collect();
    if nodes.is_empty() {
        return Err(Error::Inconsistent(
            "empty Aubry set at the critical level".into(),
        ));
    }
    Ok(nodes)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AubryStructure {
    pub aubry_nodes: Vec<NodeId>,
    /// Static classes, each sorted, ordered by their least node.
    pub classes: Vec<Vec<NodeId>>,
    /// Least node of each class.
    pub representatives: Vec<NodeId>,
    pub epsilon_aubry: f64,
    pub epsilon_class: f64,
}

impl AubryStructure {
    /// Index of the class containing `node`.
    pub fn class_of(&self, node: NodeId) -> Option<usize> {
        self.classes
            .iter()
            .position(|c| c.binary_search(&node).is_ok())
    }
}

fn find(parent: &mut [usize], mut v: usize) -> usize {
    while parent[v] != v {
        parent[v] = parent[parent[v]];
        v = parent[v];
    }
    v
}

/// Connected components of the threshold graph
/// `Phi(x -> y) + Phi(y -> x) <= epsilon_class` on the Aubry nodes.
pub fn static_classes(
    kernel: &StepKernel,
    gauge: &Gauge,
    aubry_nodes: &[NodeId],
    epsilon_aubry: f64,
    epsilon_class: f64,
) -> Result<AubryStructure> {
    if aubry_nodes.is_empty() {
        return Err(Error::Empty("Aubry set"));
    }
    let mut nodes = aubry_nodes.to_vec();
    nodes.sort_unstable();
    nodes.dedup();
    // reduced potentials differ from Phi by u(x) - u(y), which cancels in the sum
    let reach: Vec<Vec<(usize, f64)>> = nodes
        .par_iter()
        .map(|&a| {
            let d = dijkstra(
                kernel,
                &gauge.reduced,
                &[a],
                Orientation::From,
                epsilon_class,
            );
            nodes
                .iter()
                .enumerate()
                .filter(|(_, b)| d[b.index()].is_finite())
                .map(|(j, b)| (j, d[b.index()]))
                .collect()
        })
        .collect();
    let mut parent: Vec<usize> = (0..nodes.len()).collect();
    for (i, row) in reach.iter().enumerate() {
        for &(j, dij) in row.iter().filter(|(j, _)| *j > i) {
            let back = reach[j]
                .binary_search_by_key(&i, |e| e.0)
                .ok()
                .map(|p| reach[j][p].1);
            if back.is_some_and(|dji| dij + dji <= epsilon_class) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut classes: Vec<Vec<NodeId>> = Vec::new();
    let mut class_index = vec![usize::MAX; nodes.len()];
    for (i, &node) in nodes.iter().enumerate() {
        let root = find(&mut parent, i);
        if class_index[root] == usize::MAX {
            class_index[root] = classes.len();
            classes.push(Vec::new());
        }
        classes[class_index[root]].push(node);
    }
    let representatives = classes.iter().map(|c| c[0]).collect();
    Ok(AubryStructure {
        aubry_nodes: nodes,
        classes,
        representatives,
        epsilon_aubry,
        epsilon_class,
    })
}

/// Tolerances and windows for [`analyze_aubry`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AubryConfig {
    pub running: RunningMinParams,
    pub tol_c: f64,
    pub epsilon_aubry: Option<f64>,
    pub epsilon_class: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct AubryAnalysis {
    /// Barrier field from the least node of the critical cycle.
    pub reference: BarrierField,
    pub gauge: Gauge,
    pub diagonal: AubryDiagonal,
    pub structure: AubryStructure,
}

/// Aubry set and static classes of a critical kernel.
///
/// Unless overridden, `epsilon_aubry = 5 r + 2 tol_c T m` with `r` the
/// reference barrier residual and `m` its stabilization step count, and
/// `epsilon_class = 2 epsilon_aubry`.
pub fn analyze_aubry(ck: &CriticalKernel, config: &AubryConfig) -> Result<AubryAnalysis> {
    let kernel = ck.kernel();
    let lat = kernel.lattice();
    let t = lat.layers() as f64;
    let p = *ck.result().cycle.iter().min().ok_or(Error::NoCycle)?;
    let reference =
        peierls_barrier(ck, &[p], &config.running, Orientation::From, config.tol_c)?.remove(0);
    let epsilon_aubry = config
        .epsilon_aubry
        .unwrap_or(
            5.0 * reference.residual + 2.0 * config.tol_c * t * reference.stabilized_at as f64,
        )
        .max(f64::EPSILON);
    let epsilon_class = config.epsilon_class.unwrap_or(2.0 * epsilon_aubry);
    if !(epsilon_aubry.is_finite() && epsilon_class.is_finite() && epsilon_class > 0.0) {
        return Err(Error::Config(
            "epsilon_aubry and epsilon_class must be finite and positive".into(),
        ));
    }
    let gauge = Gauge::new(kernel, p, config.running.m_max);
    let diagonal = aubry_diagonal(kernel, &gauge, epsilon_aubry);
    let nodes = aubry_set(&diagonal, epsilon_aubry)?;
    if let Some(missing) = ck
        .result()
        .cycle
        .iter()
        .find(|v| nodes.binary_search(v).is_err())
    {
        return Err(Error::Inconsistent(format!(
            "critical cycle {missing} is outside the Aubry set"
        )));
    }
    let structure = static_classes(kernel, &gauge, &nodes, epsilon_aubry, epsilon_class)?;
    Ok(AubryAnalysis {
        reference,
        gauge,
        diagonal,
        structure,
    })
}

/// `h(x -> y)` computed through the zero-cost cycles of the gauge, as
/// `min over z` of `Phi(x -> z) + Phi(z -> y)`; independent of the running
/// minimum and exact on the lattice.
pub fn barrier_through_cycles(kernel: &StepKernel, gauge: &Gauge, source: NodeId) -> Vec<f64> {
    let n = kernel.lattice().node_count();
    let critical = on_zero_cycle(kernel, gauge);
    let from_x = dijkstra(
        kernel,
        &gauge.reduced,
        &[source],
        Orientation::From,
        f64::INFINITY,
    );
    let u = &gauge.potential;
    let mut best = vec![f64::INFINITY; n];
    for z in (0..n).filter(|&z| critical[z]) {
        let from_z = dijkstra(
            kernel,
            &gauge.reduced,
            &[NodeId(z as u32)],
            Orientation::From,
            f64::INFINITY,
        );
        for (y, b) in best.iter_mut().enumerate() {
            *b = b.min(from_x[z] + from_z[y]);
        }
    }
    // undo the gauge: Phi(x -> y) = reduced + u(y) - u(x)
    best.iter()
        .enumerate()
        .map(|(y, b)| b + u[y] - u[source.index()])
        .collect()
}
