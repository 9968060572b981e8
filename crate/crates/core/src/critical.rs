//! Critical value, Mather's alpha function and the subsolution classifier.

use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Lattice, NodeId, StepKernel};
use crate::minplus::{self, MeanCycleMethod, PeriodMap};
use crate::model::LagrangianSpec;

/// One atom of a discrete occupation measure: the edge leaving `(cell, layer)`
/// with the given velocity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureAtom {
    pub cell: Vec<usize>,
    pub layer: usize,
    pub velocity: Vec<f64>,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalResult {
    pub c_est: f64,
    /// Minimizing cycle, in traversal order.
    pub cycle: Vec<NodeId>,
    pub period_steps: usize,
    /// Occupation measure of the cycle; weights sum to one.
    pub measure: Vec<MeasureAtom>,
    /// Average of `L` over the atoms, evaluated at each atom's base point.
    pub measure_action: f64,
    /// Largest gap between the midpoint action used on a cycle edge and `L`
    /// at the atom's base point; bounds `|measure_action + c_est|`.
    pub discretization_tol: f64,
}

fn clean_zero(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x
    }
}

/// Critical value of a `k = 0` kernel via its minimum mean cycle.
pub fn critical_value_of_kernel(
    spec: &LagrangianSpec,
    kernel: &StepKernel,
    method: MeanCycleMethod,
    period_map: Option<&PeriodMap>,
) -> Result<CriticalResult> {
    let lat = kernel.lattice();
    let t = lat.layers() as f64;
    let base = if kernel.k() == 0.0 {
        None
    } else {
        Some(kernel.at_level(0.0))
    };
    let kernel = base.as_ref().unwrap_or(kernel);
    let found = minplus::min_mean_cycle(kernel, method, period_map)?;
    let c_est = clean_zero(-t * found.mean);

    let len = found.cycle.len();
    let mut atoms: Vec<MeasureAtom> = Vec::with_capacity(len);
    let mut action = 0.0;
    let mut tol = 0.0f64;
    for (i, &node) in found.cycle.iter().enumerate() {
        let next = found.cycle[(i + 1) % len];
        let (cell, layer) = (lat.cell(node), lat.layer(node));
        let slot = lat
            .slot_between(cell, lat.cell(next))
            .ok_or_else(|| Error::Inconsistent("cycle edge missing from lattice".into()))?;
        let velocity = kernel.velocity(cell, layer, slot);
        let x = lat.position(cell);
        let l_base = spec.eval_lagrangian(&x, &velocity, lat.time(layer));
        let l_mid = kernel.weight(cell, layer, slot) * t;
        tol = tol.max((l_mid - l_base).abs());
        action += l_base;
        let cell_idx = lat.cell_multi(cell);
        match atoms
            .iter_mut()
            .find(|a| a.cell == cell_idx && a.layer == layer && a.velocity == velocity)
        {
            Some(a) => a.weight += 1.0,
            None => atoms.push(MeasureAtom {
                cell: cell_idx,
                layer,
                velocity,
                weight: 1.0,
            }),
        }
    }
    atoms.iter_mut().for_each(|a| a.weight /= len as f64);
    atoms.sort_by(|a, b| (a.layer, &a.cell).cmp(&(b.layer, &b.cell)));
    Ok(CriticalResult {
        c_est,
        cycle: found.cycle,
        period_steps: found.period_steps,
        measure: atoms,
        measure_action: action / len as f64,
        discretization_tol: tol,
    })
}

/// Builds the `k = 0` kernel and returns its critical value.
pub fn critical_value(
    spec: &LagrangianSpec,
    lattice: &Lattice,
    method: MeanCycleMethod,
) -> Result<CriticalResult> {
    let kernel = StepKernel::build(spec, lattice, 0.0, None)?;
    critical_value_of_kernel(spec, &kernel, method, None)
}

/// Kernel re-leveled to `k = c_est`, with lazily built one-period maps.
#[derive(Debug)]
pub struct CriticalKernel {
    kernel: StepKernel,
    result: CriticalResult,
    maps: Vec<OnceLock<PeriodMap>>,
}

impl CriticalKernel {
    pub fn new(
        spec: &LagrangianSpec,
        kernel0: &StepKernel,
        method: MeanCycleMethod,
    ) -> Result<Self> {
        let t = kernel0.lattice().layers();
        let maps: Vec<OnceLock<PeriodMap>> = (0..t).map(|_| OnceLock::new()).collect();
        let result = critical_value_of_kernel(spec, kernel0, method, None)?;
        Ok(Self::from_parts(
            kernel0.at_level(result.c_est),
            result,
            maps,
        ))
    }

    pub fn from_parts(
        kernel: StepKernel,
        result: CriticalResult,
        maps: Vec<OnceLock<PeriodMap>>,
    ) -> Self {
        Self {
            kernel,
            result,
            maps,
        }
    }

    pub fn kernel(&self) -> &StepKernel {
        &self.kernel
    }

    pub fn lattice(&self) -> &Lattice {
        self.kernel.lattice()
    }

    pub fn c_est(&self) -> f64 {
        self.result.c_est
    }

    pub fn result(&self) -> &CriticalResult {
        &self.result
    }

    /// One-period map of `layer` at the critical level.
    pub fn period_map(&self, layer: usize) -> &PeriodMap {
        self.maps[layer].get_or_init(|| PeriodMap::build(&self.kernel, layer))
    }

    /// Mean weight per step of the cheapest cycle at the critical level
    /// (zero up to rounding).
    pub fn residual_mean(&self) -> f64 {
        minplus::cycle_weight(&self.kernel, &self.result.cycle) / self.result.cycle.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaSample {
    pub h: Vec<f64>,
    pub alpha: f64,
}

/// `alpha(h) = c(L - h.v)` for each constant cohomology class `h`.
pub fn alpha_function(
    spec: &LagrangianSpec,
    lattice: &Lattice,
    h_values: &[Vec<f64>],
    method: MeanCycleMethod,
) -> Result<Vec<AlphaSample>> {
    h_values
        .par_iter()
        .map(|h| {
            if h.len() != spec.dim || h.iter().any(|x| !x.is_finite()) {
                return Err(Error::Config(format!(
                    "cohomology vector {h:?} must be finite with {} entries",
                    spec.dim
                )));
            }
            let shifted = spec.with_cohomology(h)?;
            let alpha = critical_value(&shifted, lattice, method)?.c_est;
            Ok(AlphaSample {
                h: h.clone(),
                alpha,
            })
        })
        .collect()
}

/// Largest `alpha(m) - (alpha(a) + alpha(b)) / 2` over all sampled triples
/// where `m` is the midpoint of `a` and `b` (to within `1e-12`).
pub fn midpoint_convexity_defect(samples: &[AlphaSample]) -> f64 {
    let mut worst = 0.0f64;
    for (i, a) in samples.iter().enumerate() {
        for b in &samples[i + 1..] {
            if a.h.len() != b.h.len() {
                continue;
            }
            let mid: Vec<f64> = a.h.iter().zip(&b.h).map(|(x, y)| 0.5 * (x + y)).collect();
            for m in samples {
                if m.h.len() == mid.len()
                    && m.h.iter().zip(&mid).all(|(x, y)| (x - y).abs() <= 1e-12)
                {
                    worst = worst.max(m.alpha - 0.5 * (a.alpha + b.alpha));
                }
            }
        }
    }
    worst
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feasibility {
    /// A bounded discrete subsolution exists: `k >= c`.
    Feasible,
    /// A negative cycle was found: `k < c`.
    Infeasible,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsolutionOutcome {
    pub verdict: Feasibility,
    pub iterations: usize,
    pub min_value: f64,
    /// Mean weight of the negative cycle certifying infeasibility.
    pub cycle_mean: Option<f64>,
}

/// Value iteration `u <- min(u, relax_k(u))` from `u = 0`.
///
/// Stabilization means `u` is a bounded subsolution at level `k`. A cycle in
/// the predecessor graph with negative weight certifies that none exists.
pub fn subsolution_test(
    kernel0: &StepKernel,
    k: f64,
    iterations: usize,
) -> Result<SubsolutionOutcome> {
    let lat = kernel0.lattice();
    let min_iterations = lat.node_count();
    if iterations < min_iterations {
        return Err(Error::Config(format!(
            "subsolution_test needs at least N^d T = {min_iterations} iterations, got {iterations}"
        )));
    }
    let kernel = kernel0.at_level(k);
    let c = lat.cell_count();
    let t = lat.layers();
    let mut u = vec![0.0; lat.node_count()];
    let mut pred = vec![u32::MAX; lat.node_count()];
    let mut scratch = vec![0.0; c];
    for it in 1..=iterations {
        let mut change = 0.0f64;
        let prev = u.clone();
        for layer in 0..t {
            let next = lat.next_layer(layer);
            minplus::push_layer(
                &kernel,
                layer,
                &prev[layer * c..(layer + 1) * c],
                &mut scratch,
            );
            for (y, &cand) in scratch.iter().enumerate() {
                let idx = next * c + y;
                if cand < u[idx] {
                    change = change.max(u[idx] - cand);
                    u[idx] = cand;
                    let (slot, _) =
                        minplus::push_argmin(&kernel, layer, &prev[layer * c..(layer + 1) * c], y);
                    pred[idx] = lat.node(lat.source_cell(y, slot), layer).0;
                }
            }
        }
        let min_value = u.iter().copied().fold(f64::INFINITY, f64::min);
        if change <= 1e-10 {
            return Ok(SubsolutionOutcome {
                verdict: Feasibility::Feasible,
                iterations: it,
                min_value,
                cycle_mean: None,
            });
        }
        if it % t == 0 {
            if let Some(mean) = negative_predecessor_cycle(&kernel, &pred) {
                return Ok(SubsolutionOutcome {
                    verdict: Feasibility::Infeasible,
                    iterations: it,
                    min_value,
                    cycle_mean: Some(mean),
                });
            }
        }
    }
    let min_value = u.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(SubsolutionOutcome {
        verdict: Feasibility::Inconclusive,
        iterations,
        min_value,
        cycle_mean: None,
    })
}

fn negative_predecessor_cycle(kernel: &StepKernel, pred: &[u32]) -> Option<f64> {
    let n = pred.len();
    let mut mark = vec![u32::MAX; n];
    for root in 0..n {
        if mark[root] != u32::MAX {
            continue;
        }
        let mut v = root;
        while v < n && mark[v] == u32::MAX {
            mark[v] = root as u32;
            v = pred[v] as usize;
        }
        if v < n && mark[v] == root as u32 {
            // cycle through v, walked backward along predecessors
            let mut nodes = vec![v];
            let mut x = pred[v] as usize;
            while x != v {
                nodes.push(x);
                x = pred[x] as usize;
            }
            nodes.reverse();
            let ids: Vec<NodeId> = nodes.iter().map(|&i| NodeId(i as u32)).collect();
            let mean = minplus::cycle_weight(kernel, &ids) / ids.len() as f64;
            if mean < -1e-13 {
                return Some(mean);
            }
        }
    }
    None
}
