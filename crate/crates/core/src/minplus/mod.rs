//! Min-plus path costs over the layered kernel.
//!
//! Values live on nodes; `+inf` marks unreachable nodes and `-inf`/NaN are
//! rejected. Relaxation is one min-plus matrix-vector product:
//! `out(y) = min over in-edges (x -> y) of u(x) + w(x, y)`.

mod cycle;
mod period;

pub use cycle::{
    cycle_weight, howard, karp, min_mean_cycle, Digraph, MeanCycle, MeanCycleMethod,
    MeanCycleResult,
};
pub use period::PeriodMap;

use std::ops::Deref;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{NodeId, StepKernel};

const PAR_MIN_LEN: usize = 256;

/// Extended-real values indexed by node.
#[derive(Clone, Debug, PartialEq)]
pub struct CostVector(Vec<f64>);

impl CostVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| v.is_nan() || **v == f64::NEG_INFINITY)
        {
            return Err(Error::InvalidCost { index, value });
        }
        Ok(Self(values))
    }

    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        debug_assert!(values
            .iter()
            .all(|v| !v.is_nan() && *v != f64::NEG_INFINITY));
        Self(values)
    }

    /// `0` at `source`, `+inf` elsewhere.
    pub fn indicator(len: usize, source: NodeId) -> Self {
        let mut v = vec![f64::INFINITY; len];
        v[source.index()] = 0.0;
        Self(v)
    }

    pub fn infinite(len: usize) -> Self {
        Self(vec![f64::INFINITY; len])
    }

    pub fn has_support(&self) -> bool {
        self.0.iter().any(|v| v.is_finite())
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn pointwise_min(&self, other: &Self) -> Self {
        Self(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| a.min(*b))
                .collect(),
        )
    }

    pub fn get(&self, node: NodeId) -> f64 {
        self.0[node.index()]
    }
}

impl Deref for CostVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Costs of `steps`-step paths leaving `source` (or, reversed, reaching it).
#[derive(Clone, Debug)]
pub struct CostMatrix {
    pub source: NodeId,
    pub steps: usize,
    pub costs: CostVector,
}

/// Whether costs are measured from a source or into a target.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    From,
    To,
}

/// `dst(y) = min_s src(source_cell(y, s)) + w(source_cell(y, s), layer, s)`,
/// mapping values on `layer` to values on `layer + 1`.
pub(crate) fn push_layer(kernel: &StepKernel, layer: usize, src: &[f64], dst: &mut [f64]) {
    let lat = kernel.lattice();
    let s = lat.slot_count();
    dst.par_iter_mut()
        .with_min_len(PAR_MIN_LEN)
        .enumerate()
        .for_each(|(y, out)| {
            let mut best = f64::INFINITY;
            for slot in 0..s {
                let x = lat.source_cell(y, slot);
                let v = src[x] + kernel.weight(x, layer, slot);
                if v < best {
                    best = v;
                }
            }
            *out = best;
        });
}

/// `dst(x) = min_s w(x, layer, s) + src(target_cell(x, s))`, mapping values on
/// `layer + 1` back to `layer`.
pub(crate) fn pull_layer(kernel: &StepKernel, layer: usize, src: &[f64], dst: &mut [f64]) {
    let lat = kernel.lattice();
    dst.par_iter_mut()
        .with_min_len(PAR_MIN_LEN)
        .enumerate()
        .for_each(|(x, out)| {
            let w = kernel.out_weights(x, layer);
            let mut best = f64::INFINITY;
            for (slot, wi) in w.iter().enumerate() {
                let v = wi + src[lat.target_cell(x, slot)];
                if v < best {
                    best = v;
                }
            }
            *out = best;
        });
}

/// Predecessor slot realizing [`push_layer`] for one target cell.
pub(crate) fn push_argmin(
    kernel: &StepKernel,
    layer: usize,
    src: &[f64],
    y: usize,
) -> (usize, f64) {
    let lat = kernel.lattice();
    let mut best = (usize::MAX, f64::INFINITY);
    for slot in 0..lat.slot_count() {
        let x = lat.source_cell(y, slot);
        let v = src[x] + kernel.weight(x, layer, slot);
        // ties resolve to the smallest source cell
        if v < best.1 || (v == best.1 && best.0 != usize::MAX && x < lat.source_cell(y, best.0)) {
            best = (slot, v);
        }
    }
    best
}

fn check_input(kernel: &StepKernel, u: &[f64]) -> Result<()> {
    let len = kernel.lattice().node_count();
    if u.len() != len {
        return Err(Error::Length {
            expected: len,
            got: u.len(),
        });
    }
    Ok(())
}

/// One min-plus product over every layer at once.
pub fn relax(kernel: &StepKernel, u: &CostVector) -> Result<CostVector> {
    check_input(kernel, u)?;
    if !u.has_support() {
        return Err(Error::EmptySupport);
    }
    let lat = kernel.lattice();
    let c = lat.cell_count();
    let mut out = vec![f64::INFINITY; lat.node_count()];
    for layer in 0..lat.layers() {
        let next = lat.next_layer(layer);
        push_layer(
            kernel,
            layer,
            &u[layer * c..(layer + 1) * c],
            &mut out[next * c..(next + 1) * c],
        );
    }
    Ok(CostVector(out))
}

/// Transposed product: `out(x) = min over out-edges (x -> y) of w(x, y) + u(y)`.
pub fn relax_transpose(kernel: &StepKernel, u: &CostVector) -> Result<CostVector> {
    check_input(kernel, u)?;
    if !u.has_support() {
        return Err(Error::EmptySupport);
    }
    let lat = kernel.lattice();
    let c = lat.cell_count();
    let mut out = vec![f64::INFINITY; lat.node_count()];
    for layer in 0..lat.layers() {
        let next = lat.next_layer(layer);
        pull_layer(
            kernel,
            layer,
            &u[next * c..(next + 1) * c],
            &mut out[layer * c..(layer + 1) * c],
        );
    }
    Ok(CostVector(out))
}

/// Walks single-layer cost slices away from (or toward) a node.
pub(crate) struct Sweep<'a> {
    kernel: &'a StepKernel,
    orientation: Orientation,
    layer: usize,
    current: Vec<f64>,
    scratch: Vec<f64>,
    steps: usize,
}

impl<'a> Sweep<'a> {
    pub fn new(kernel: &'a StepKernel, node: NodeId, orientation: Orientation) -> Self {
        let lat = kernel.lattice();
        let mut current = vec![f64::INFINITY; lat.cell_count()];
        current[lat.cell(node)] = 0.0;
        Self::from_slice(kernel, lat.layer(node), current, orientation, 0)
    }

    pub fn from_slice(
        kernel: &'a StepKernel,
        layer: usize,
        current: Vec<f64>,
        orientation: Orientation,
        steps: usize,
    ) -> Self {
        let c = kernel.lattice().cell_count();
        Self {
            kernel,
            orientation,
            layer,
            current,
            scratch: vec![0.0; c],
            steps,
        }
    }

    pub fn step(&mut self) {
        let lat = self.kernel.lattice();
        match self.orientation {
            Orientation::From => {
                push_layer(self.kernel, self.layer, &self.current, &mut self.scratch);
                self.layer = lat.next_layer(self.layer);
            }
            Orientation::To => {
                let prev = lat.prev_layer(self.layer);
                pull_layer(self.kernel, prev, &self.current, &mut self.scratch);
                self.layer = prev;
            }
        }
        std::mem::swap(&mut self.current, &mut self.scratch);
        self.steps += 1;
    }

    pub fn layer(&self) -> usize {
        self.layer
    }

    pub fn values(&self) -> &[f64] {
        &self.current
    }

    pub fn steps(&self) -> usize {
        self.steps
    }
}

/// Exact `m`-fold relaxation of the indicator of `source`.
pub fn m_step_costs(kernel: &StepKernel, source: NodeId, m: usize) -> Result<CostMatrix> {
    if m == 0 {
        return Err(Error::Config("m_step_costs needs m >= 1".into()));
    }
    let costs = m_step_costs_oriented(kernel, source, m, Orientation::From);
    Ok(CostMatrix {
        source,
        steps: m,
        costs,
    })
}

/// `m`-step costs into `target` from every node.
pub fn m_step_costs_to(kernel: &StepKernel, target: NodeId, m: usize) -> Result<CostMatrix> {
    if m == 0 {
        return Err(Error::Config("m_step_costs_to needs m >= 1".into()));
    }
    let costs = m_step_costs_oriented(kernel, target, m, Orientation::To);
    Ok(CostMatrix {
        source: target,
        steps: m,
        costs,
    })
}

fn m_step_costs_oriented(
    kernel: &StepKernel,
    node: NodeId,
    m: usize,
    orientation: Orientation,
) -> CostVector {
    let lat = kernel.lattice();
    let c = lat.cell_count();
    let mut sweep = Sweep::new(kernel, node, orientation);
    for _ in 0..m {
        sweep.step();
    }
    let mut out = vec![f64::INFINITY; lat.node_count()];
    let l = sweep.layer();
    out[l * c..(l + 1) * c].copy_from_slice(sweep.values());
    CostVector(out)
}

/// Window parameters for the liminf of path costs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunningMinParams {
    /// First step count included in the minimum.
    pub m_min: usize,
    /// Last step count included in the minimum.
    pub m_max: usize,
    /// Number of final eligible step counts (one per period and target) that
    /// must not improve the minimum by more than `residual_tol`.
    pub window: usize,
    pub residual_tol: f64,
}

impl RunningMinParams {
    /// `m_min = periods_min T`, `m_max = periods_max T`.
    pub fn periods(
        t: usize,
        periods_min: usize,
        periods_max: usize,
        window: usize,
        residual_tol: f64,
    ) -> Self {
        Self {
            m_min: periods_min * t,
            m_max: periods_max * t + t - 1,
            window,
            residual_tol,
        }
    }

    pub(crate) fn validate(&self, t: usize) -> Result<()> {
        if self.m_min >= self.m_max {
            return Err(Error::Config(format!(
                "m_min ({}) must be below m_max ({})",
                self.m_min, self.m_max
            )));
        }
        if self.window == 0 || (self.window + 1) * t > self.m_max - self.m_min + 1 {
            return Err(Error::Config(format!(
                "window of {} periods does not fit in [{}, {}] at T = {t}",
                self.window, self.m_min, self.m_max
            )));
        }
        Ok(())
    }
}

/// Windowed running minimum of path costs, the discrete liminf.
#[derive(Clone, Debug)]
pub struct RunningMin {
    pub costs: CostVector,
    pub converged: bool,
    /// Largest improvement of the running minimum during the final window.
    pub residual: f64,
}

/// Magnitude beyond which costs are treated as diverging to `-inf`.
pub const DIVERGENCE_GUARD: f64 = 1e12;

/// `H(y) = min over m in [m_min, m_max], m = layer offset of y (mod T), of the
/// m-step cost from `source`.
pub fn running_min_costs(
    kernel: &StepKernel,
    source: NodeId,
    params: &RunningMinParams,
) -> Result<RunningMin> {
    running_min_oriented(kernel, source, params, Orientation::From, None)
}

/// Running minimum of costs into `target`.
pub fn running_min_costs_to(
    kernel: &StepKernel,
    target: NodeId,
    params: &RunningMinParams,
) -> Result<RunningMin> {
    running_min_oriented(kernel, target, params, Orientation::To, None)
}

pub(crate) fn running_min_oriented(
    kernel: &StepKernel,
    node: NodeId,
    params: &RunningMinParams,
    orientation: Orientation,
    periods: Option<&PeriodMap>,
) -> Result<RunningMin> {
    let lat = kernel.lattice();
    let t = lat.layers();
    let c = lat.cell_count();
    params.validate(t)?;
    let mut sweep = match periods {
        Some(map) if params.m_min >= t => {
            let whole = params.m_min / t;
            let slice = map.power_row(lat.cell(node), whole, orientation);
            Sweep::from_slice(kernel, lat.layer(node), slice, orientation, whole * t)
        }
        _ => Sweep::new(kernel, node, orientation),
    };
    while sweep.steps() < params.m_min {
        sweep.step();
    }
    let mut best = vec![f64::INFINITY; lat.node_count()];
    let window_start = params.m_max + 1 - params.window * t;
    let mut residual = 0.0f64;
    loop {
        let l = sweep.layer();
        let m = sweep.steps();
        let slice = &mut best[l * c..(l + 1) * c];
        for (b, &v) in slice.iter_mut().zip(sweep.values()) {
            if v < *b {
                if m >= window_start {
                    residual = residual.max(*b - v);
                }
                *b = v;
            }
        }
        if m == params.m_max {
            break;
        }
        sweep.step();
    }
    if let Some(&low) = best.iter().find(|v| **v < -DIVERGENCE_GUARD) {
        return Err(Error::Divergence {
            steps: params.m_max,
            value: low,
        });
    }
    Ok(RunningMin {
        costs: CostVector(best),
        converged: residual <= params.residual_tol,
        residual,
    })
}

/// Result of the Bellman-Ford style infimum over all path lengths.
#[derive(Clone, Debug)]
pub struct Potential {
    pub costs: CostVector,
    /// The infimum stopped improving (within tolerance) before the step cap.
    pub stable: bool,
    /// Largest improvement during the last full sweep over the layers.
    pub last_improvement: f64,
    pub sweeps: usize,
}

/// `Phi(node -> .)` (or `Phi(. -> node)`): minimum over all path lengths
/// `m >= 0` up to roughly `m_max`, computed by layer-cyclic Gauss-Seidel sweeps.
pub fn potential(
    kernel: &StepKernel,
    node: NodeId,
    m_max: usize,
    tol: f64,
    orientation: Orientation,
) -> Potential {
    let lat = kernel.lattice();
    let t = lat.layers();
    let c = lat.cell_count();
    let mut u = vec![f64::INFINITY; lat.node_count()];
    u[node.index()] = 0.0;
    let mut scratch = vec![0.0; c];
    let start = lat.layer(node);
    let max_sweeps = m_max.div_ceil(t).max(1);
    let mut sweeps = 0;
    let mut last_improvement = f64::INFINITY;
    while sweeps < max_sweeps {
        let mut improvement = 0.0f64;
        for i in 0..t {
            match orientation {
                Orientation::From => {
                    let layer = (start + i) % t;
                    let next = lat.next_layer(layer);
                    push_layer(kernel, layer, &u[layer * c..(layer + 1) * c], &mut scratch);
                    merge_min(&mut u[next * c..(next + 1) * c], &scratch, &mut improvement);
                }
                Orientation::To => {
                    let layer = (start + t - i) % t;
                    let prev = lat.prev_layer(layer);
                    pull_layer(kernel, prev, &u[layer * c..(layer + 1) * c], &mut scratch);
                    merge_min(&mut u[prev * c..(prev + 1) * c], &scratch, &mut improvement);
                }
            }
        }
        sweeps += 1;
        last_improvement = improvement;
        if improvement <= tol {
            break;
        }
    }
    Potential {
        costs: CostVector(u),
        stable: last_improvement <= tol,
        last_improvement,
        sweeps,
    }
}

fn merge_min(dst: &mut [f64], src: &[f64], improvement: &mut f64) {
    for (d, &s) in dst.iter_mut().zip(src) {
        if s < *d {
            let gain = if d.is_finite() { *d - s } else { f64::INFINITY };
            *improvement = improvement.max(gain);
            *d = s;
        }
    }
}

/// Backward Lax-Oleinik step on full arrays (alias of [`relax`] without the support check).
pub(crate) fn backward_step(kernel: &StepKernel, u: &[f64]) -> Vec<f64> {
    let lat = kernel.lattice();
    let c = lat.cell_count();
    let mut out = vec![f64::INFINITY; lat.node_count()];
    for layer in 0..lat.layers() {
        let next = lat.next_layer(layer);
        push_layer(
            kernel,
            layer,
            &u[layer * c..(layer + 1) * c],
            &mut out[next * c..(next + 1) * c],
        );
    }
    out
}

/// Forward operator `out(x) = max over out-edges (x -> y) of v(y) - w(x, y)`.
pub(crate) fn forward_step(kernel: &StepKernel, v: &[f64]) -> Vec<f64> {
    let neg: Vec<f64> = v.iter().map(|x| -x).collect();
    let lat = kernel.lattice();
    let c = lat.cell_count();
    let mut out = vec![f64::INFINITY; lat.node_count()];
    for layer in 0..lat.layers() {
        let next = lat.next_layer(layer);
        pull_layer(
            kernel,
            layer,
            &neg[next * c..(next + 1) * c],
            &mut out[layer * c..(layer + 1) * c],
        );
    }
    out.iter_mut().for_each(|x| *x = -*x);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{Lattice, LatticeSpec};
    use crate::model::LagrangianSpec;

    fn free_kernel(n: usize, t: usize) -> StepKernel {
        let lat = Lattice::build(LatticeSpec::new(n, t, 2.0, 1).unwrap()).unwrap();
        StepKernel::build(&LagrangianSpec::free(1), &lat, 0.0, None).unwrap()
    }

    #[test]
    fn identity_kernel_leaves_vector() {
        let lat = Lattice::build(LatticeSpec::new(4, 2, 0.5, 1).unwrap()).unwrap();
        let mut w = vec![f64::INFINITY; lat.edge_count()];
        for layer in 0..2 {
            for cell in 0..4 {
                let slot = lat.slot_between(cell, cell).unwrap();
                w[(layer * 4 + cell) * lat.slot_count() + slot] = 0.0;
            }
        }
        let k = StepKernel::from_weights(lat.clone(), 0.0, w).unwrap();
        let u = CostVector::indicator(8, lat.node(2, 0));
        let out = relax(&k, &u).unwrap();
        assert_eq!(out.get(lat.node(2, 1)), 0.0);
        assert_eq!(out.iter().filter(|v| v.is_finite()).count(), 1);
    }

    #[test]
    fn free_relax_of_zero_is_zero() {
        let k = free_kernel(8, 4);
        let out = relax(&k, &CostVector::new(vec![0.0; 32]).unwrap()).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_support_is_rejected() {
        let k = free_kernel(8, 4);
        assert!(matches!(
            relax(&k, &CostVector::infinite(32)),
            Err(Error::EmptySupport)
        ));
        assert!(CostVector::new(vec![f64::NAN]).is_err());
        assert!(CostVector::new(vec![f64::NEG_INFINITY]).is_err());
    }

    #[test]
    fn one_step_is_kernel_row() {
        let k = free_kernel(8, 4);
        let lat = k.lattice();
        let src = lat.node(3, 2);
        let row = m_step_costs(&k, src, 1).unwrap();
        for y in 0..8 {
            let expected = k.edge_weight(src, lat.node(y, 3));
            assert_eq!(row.costs.get(lat.node(y, 3)), expected);
        }
    }

    #[test]
    fn free_rest_path_costs_zero() {
        let k = free_kernel(8, 4);
        let src = k.lattice().node(0, 0);
        assert_eq!(m_step_costs(&k, src, 4).unwrap().costs.get(src), 0.0);
        let params = RunningMinParams::periods(4, 2, 8, 2, 1e-12);
        let h = running_min_costs(&k, src, &params).unwrap();
        assert!(h.converged);
        assert_eq!(h.costs.get(src), 0.0);
    }

    #[test]
    fn potential_from_source_matches_running_min_bound() {
        let k = free_kernel(8, 4);
        let src = k.lattice().node(1, 1);
        let p = potential(&k, src, 64, 0.0, Orientation::From);
        assert!(p.stable);
        assert_eq!(p.costs.get(src), 0.0);
        let h = running_min_costs(&k, src, &RunningMinParams::periods(4, 2, 8, 2, 1e-12)).unwrap();
        for (a, b) in p.costs.iter().zip(h.costs.iter()) {
            assert!(a <= b);
        }
    }

    #[test]
    fn window_must_fit() {
        let k = free_kernel(8, 4);
        let bad = RunningMinParams {
            m_min: 4,
            m_max: 8,
            window: 3,
            residual_tol: 0.0,
        };
        assert!(running_min_costs(&k, k.lattice().node(0, 0), &bad).is_err());
    }

    #[test]
    fn transpose_agrees_with_forward_costs() {
        let lat = Lattice::build(LatticeSpec::new(6, 3, 1.0, 1).unwrap()).unwrap();
        let k = StepKernel::build(&LagrangianSpec::pendulum(), &lat, 0.3, None).unwrap();
        let a = lat.node(1, 0);
        let b = lat.node(4, 1);
        let from = m_step_costs(&k, a, 7).unwrap();
        let to = m_step_costs_to(&k, b, 7).unwrap();
        assert!((from.costs.get(b) - to.costs.get(a)).abs() < 1e-12);
    }
}
