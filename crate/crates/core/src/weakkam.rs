//! Weak KAM solutions from boundary data on class representatives, the
//! Lax-Oleinik operators, calibrated paths and solution verification.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::barrier::{spatial_lipschitz, BarrierField};
use crate::error::{Error, Result};
use crate::lattice::{NodeId, StepKernel};
use crate::minplus::{backward_step, forward_step, push_argmin, Orientation};
use crate::model::{Covector, LagrangianSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolutionKind {
    Backward,
    Forward,
    Generic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueFunction {
    pub values: Vec<f64>,
    pub kind: SolutionKind,
}

impl ValueFunction {
    pub fn new(values: Vec<f64>, kind: SolutionKind) -> Result<Self> {
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidCost { index, value });
        }
        Ok(Self { values, kind })
    }

    pub fn constant(len: usize, value: f64) -> Self {
        Self {
            values: vec![value; len],
            kind: SolutionKind::Generic,
        }
    }

    pub fn get(&self, node: NodeId) -> f64 {
        self.values[node.index()]
    }
}

/// Which Lax-Oleinik operator to apply.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// `(Tu)(y) = min over in-edges of u(x) + w(x, y)`.
    Backward,
    /// `(Tv)(x) = max over out-edges of v(y) - w(x, y)`.
    Forward,
}

fn check_len(kernel: &StepKernel, values: &[f64]) -> Result<()> {
    let expected = kernel.lattice().node_count();
    if values.len() != expected {
        return Err(Error::Length {
            expected,
            got: values.len(),
        });
    }
    Ok(())
}

fn iterate(kernel: &StepKernel, values: &[f64], direction: Direction, steps: usize) -> Vec<f64> {
    let mut u = values.to_vec();
    for _ in 0..steps {
        u = match direction {
            Direction::Backward => backward_step(kernel, &u),
            Direction::Forward => forward_step(kernel, &u),
        };
    }
    u
}

/// `steps` applications of the chosen operator.
pub fn lax_oleinik(
    u: &ValueFunction,
    kernel: &StepKernel,
    direction: Direction,
    steps: usize,
) -> Result<ValueFunction> {
    check_len(kernel, &u.values)?;
    if steps == 0 {
        return Err(Error::Config("lax_oleinik needs at least one step".into()));
    }
    ValueFunction::new(iterate(kernel, &u.values, direction, steps), u.kind)
}

/// `max |T^T u - u|`: distance from being a fixed point of one full period.
pub fn fixed_point_residual(values: &[f64], kernel: &StepKernel, direction: Direction) -> f64 {
    let t = kernel.lattice().layers();
    iterate(kernel, values, direction, t)
        .iter()
        .zip(values)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

fn field_for(
    fields: &[BarrierField],
    node: NodeId,
    orientation: Orientation,
) -> Result<&BarrierField> {
    fields
        .iter()
        .find(|f| f.source == node && f.orientation == orientation && f.h.is_some())
        .ok_or(Error::NotRepresentative(node))
}

/// Checks `f(q) - f(p) <= Phi(p -> q) + slack` for every ordered pair of
/// boundary nodes, reading `Phi` from fields of the given orientation.
pub fn check_dominated(
    boundary: &[(NodeId, f64)],
    fields: &[BarrierField],
    orientation: Orientation,
    slack: f64,
) -> Result<()> {
    for &(p, fp) in boundary {
        for &(q, fq) in boundary {
            let phi = match orientation {
                Orientation::From => field_for(fields, p, orientation)?.phi.get(q),
                Orientation::To => field_for(fields, q, orientation)?.phi.get(p),
            };
            if fq - fp > phi + slack {
                return Err(Error::NotDominated {
                    from: p,
                    to: q,
                    lhs: fq - fp,
                    phi,
                    slack,
                });
            }
        }
    }
    Ok(())
}

fn check_boundary(boundary: &[(NodeId, f64)]) -> Result<()> {
    if boundary.is_empty() {
        return Err(Error::Empty("boundary data"));
    }
    if let Some(&(node, value)) = boundary.iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::InvalidCost {
            index: node.index(),
            value,
        });
    }
    Ok(())
}

/// `u_f(x) = min over p of f(p) + h(p -> x)`, from `From`-oriented fields of
/// the boundary nodes.
pub fn build_backward_solution(
    boundary: &[(NodeId, f64)],
    fields: &[BarrierField],
    epsilon_class: f64,
) -> Result<ValueFunction> {
    check_boundary(boundary)?;
    check_dominated(boundary, fields, Orientation::From, epsilon_class)?;
    let rows: Vec<(f64, &[f64])> = boundary
        .iter()
        .map(|&(p, fp)| Ok((fp, &field_for(fields, p, Orientation::From)?.barrier()?[..])))
        .collect::<Result<_>>()?;
    let len = rows[0].1.len();
    let values = (0..len)
        .into_par_iter()
        .map(|x| {
            rows.iter()
                .map(|(fp, h)| fp + h[x])
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    ValueFunction::new(values, SolutionKind::Backward)
}

/// `v_f(x) = max over p of f(p) - h(x -> p)`, from `To`-oriented fields.
pub fn build_forward_solution(
    boundary: &[(NodeId, f64)],
    fields: &[BarrierField],
    epsilon_class: f64,
) -> Result<ValueFunction> {
    check_boundary(boundary)?;
    check_dominated(boundary, fields, Orientation::To, epsilon_class)?;
    let rows: Vec<(f64, &[f64])> = boundary
        .iter()
        .map(|&(p, fp)| Ok((fp, &field_for(fields, p, Orientation::To)?.barrier()?[..])))
        .collect::<Result<_>>()?;
    let len = rows[0].1.len();
    let values = (0..len)
        .into_par_iter()
        .map(|x| {
            rows.iter()
                .map(|(fp, h)| fp - h[x])
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    ValueFunction::new(values, SolutionKind::Forward)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub median: f64,
    pub p90: f64,
    pub max: f64,
}

impl Quantiles {
    fn of(mut xs: Vec<f64>) -> Self {
        if xs.is_empty() {
            return Self {
                median: 0.0,
                p90: 0.0,
                max: 0.0,
            };
        }
        xs.sort_by(f64::total_cmp);
        let at = |q: f64| xs[((xs.len() - 1) as f64 * q).round() as usize];
        Self {
            median: at(0.5),
            p90: at(0.9),
            max: xs[xs.len() - 1],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub domination_defect: f64,
    pub fixed_point_residual: f64,
    pub hj_residual_quantiles: Quantiles,
    pub graph_defect: f64,
    pub lipschitz_constant: f64,
}

/// Sample counts and seed for the randomized parts of [`verify_solution`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub domination_samples: usize,
    pub path_samples: usize,
    pub path_periods: usize,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            domination_samples: 10_000,
            path_samples: 32,
            path_periods: 3,
            seed: 0,
        }
    }
}

/// Largest `u(y) - u(x) - Phi(x -> y)` over random pairs with `x` a source of
/// a `From` field; zero when no pair violates domination.
pub fn domination_defect(u: &[f64], phi_fields: &[BarrierField], samples: usize, seed: u64) -> f64 {
    let fields: Vec<&BarrierField> = phi_fields
        .iter()
        .filter(|f| f.orientation == Orientation::From)
        .collect();
    if fields.is_empty() {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let f = fields[rng.gen_range(0..fields.len())];
        let y = rng.gen_range(0..u.len());
        worst = worst.max(u[y] - u[f.source.index()] - f.phi[y]);
    }
    worst
}

/// `|D_t u + H(x, D_x u, t) - c|` at every node, with central differences in
/// space and forward differences in time.
pub fn hj_residuals(u: &[f64], kernel: &StepKernel, spec: &LagrangianSpec, c: f64) -> Vec<f64> {
    let lat = kernel.lattice();
    let (n, d, cells) = (lat.n(), lat.dim(), lat.cell_count());
    let (nf, tf) = (n as f64, lat.layers() as f64);
    lat.nodes()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&v| {
            let (cell, layer) = (lat.cell(v), lat.layer(v));
            let at = |cell: usize, layer: usize| u[layer * cells + cell];
            let mut grad = Vec::with_capacity(d);
            let mut stride = 1;
            for _ in 0..d {
                let coord = (cell / stride) % n;
                let base = cell - coord * stride;
                let up = base + ((coord + 1) % n) * stride;
                let down = base + ((coord + n - 1) % n) * stride;
                grad.push((at(up, layer) - at(down, layer)) * nf / 2.0);
                stride *= n;
            }
            let dt = (at(cell, lat.next_layer(layer)) - at(cell, layer)) * tf;
            let h = spec.eval_hamiltonian(&lat.position(cell), &Covector(grad), lat.time(layer));
            (dt + h - c).abs()
        })
        .collect()
}

/// Full report for a candidate solution on a critical kernel.
pub fn verify_solution(
    u: &ValueFunction,
    kernel: &StepKernel,
    phi_fields: &[BarrierField],
    spec: &LagrangianSpec,
    c_est: f64,
    options: &VerifyOptions,
) -> Result<VerificationReport> {
    check_len(kernel, &u.values)?;
    if let Some((index, &value)) = u.values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::InvalidCost { index, value });
    }
    let direction = match u.kind {
        SolutionKind::Forward => Direction::Forward,
        _ => Direction::Backward,
    };
    Ok(VerificationReport {
        domination_defect: domination_defect(
            &u.values,
            phi_fields,
            options.domination_samples,
            options.seed,
        ),
        fixed_point_residual: fixed_point_residual(&u.values, kernel, direction),
        hj_residual_quantiles: Quantiles::of(hj_residuals(&u.values, kernel, spec, c_est)),
        graph_defect: graph_defect(
            u,
            kernel,
            direction,
            options.path_samples,
            options.path_periods,
            options.seed,
        )?,
        lipschitz_constant: spatial_lipschitz(kernel.lattice(), &u.values),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathStep {
    pub node: NodeId,
    /// Velocity of the edge arriving at `node` from the next entry of the path.
    pub velocity: Vec<f64>,
    pub action: f64,
}

/// Path chosen by repeated argmin of the backward operator, listed from the
/// start node backward in time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibratedPath {
    pub nodes: Vec<NodeId>,
    /// `steps[i]` is the edge from `nodes[i + 1]` to `nodes[i]`.
    pub steps: Vec<PathStep>,
    /// `|u(start) - u(end) - sum of step actions|`.
    pub defect: f64,
}

impl CalibratedPath {
    pub fn start(&self) -> NodeId {
        self.nodes[0]
    }

    pub fn end(&self) -> NodeId {
        self.nodes[self.nodes.len() - 1]
    }

    pub fn action(&self) -> f64 {
        self.steps.iter().map(|s| s.action).sum()
    }
}

/// Follows `predecessor(y) = argmin_x u(x) + w(x, y)` for `periods` periods
/// (ties go to the smallest cell).
pub fn extract_calibrated_path(
    u: &ValueFunction,
    kernel: &StepKernel,
    start: NodeId,
    periods: usize,
) -> Result<CalibratedPath> {
    check_len(kernel, &u.values)?;
    let lat = kernel.lattice();
    if start.index() >= lat.node_count() {
        return Err(Error::Config(format!("{start} is outside the lattice")));
    }
    let c = lat.cell_count();
    let mut nodes = vec![start];
    let mut steps = Vec::with_capacity(periods * lat.layers());
    let mut y = start;
    for _ in 0..periods * lat.layers() {
        let prev = lat.prev_layer(lat.layer(y));
        let (slot, _) = push_argmin(
            kernel,
            prev,
            &u.values[prev * c..(prev + 1) * c],
            lat.cell(y),
        );
        let x = lat.source_cell(lat.cell(y), slot);
        steps.push(PathStep {
            node: y,
            velocity: kernel.velocity(x, prev, slot),
            action: kernel.weight(x, prev, slot),
        });
        y = lat.node(x, prev);
        nodes.push(y);
    }
    let total: f64 = steps.iter().map(|s| s.action).sum();
    let defect = (u.get(start) - u.get(y) - total).abs();
    Ok(CalibratedPath {
        nodes,
        steps,
        defect,
    })
}

/// Forward analogue: `successor(x) = argmax_y v(y) - w(x, y)`, listed forward in time.
fn forward_chain(
    v: &[f64],
    kernel: &StepKernel,
    start: NodeId,
    steps: usize,
) -> Vec<(NodeId, Vec<f64>)> {
    let lat = kernel.lattice();
    let mut out = Vec::with_capacity(steps);
    let mut x = start;
    for _ in 0..steps {
        let (cell, layer) = (lat.cell(x), lat.layer(x));
        let next = lat.next_layer(layer);
        let mut best = (0, f64::NEG_INFINITY, usize::MAX);
        for (slot, w) in kernel.out_weights(cell, layer).iter().enumerate() {
            let y = lat.target_cell(cell, slot);
            let val = v[lat.node(y, next).index()] - w;
            if val > best.1 || (val == best.1 && y < best.2) {
                best = (slot, val, y);
            }
        }
        let y = lat.node(best.2, next);
        out.push((y, kernel.velocity(cell, layer, best.0)));
        x = y;
    }
    out
}

/// Largest spread of velocities with which sampled optimal chains pass
/// through a common node, ignoring each chain's first period.
///
/// A node's own argmin edge is fixed, so what is compared is the edge each
/// chain uses on its other side: toward later times for backward chains,
/// earlier times for forward chains.
pub fn graph_defect(
    u: &ValueFunction,
    kernel: &StepKernel,
    direction: Direction,
    samples: usize,
    periods: usize,
    seed: u64,
) -> Result<f64> {
    check_len(kernel, &u.values)?;
    let lat = kernel.lattice();
    let t = lat.layers();
    let periods = periods.max(2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let starts: Vec<NodeId> = (0..samples)
        .map(|_| NodeId(rng.gen_range(0..lat.node_count()) as u32))
        .collect();
    let visits: Vec<Vec<(NodeId, Vec<f64>)>> = starts
        .par_iter()
        .map(|&s| -> Result<Vec<(NodeId, Vec<f64>)>> {
            Ok(match direction {
                Direction::Backward => {
                    let path = extract_calibrated_path(u, kernel, s, periods)?;
                    // steps[i - 1] is the edge leaving nodes[i] toward later times
                    (t..path.steps.len())
                        .map(|i| (path.nodes[i], path.steps[i - 1].velocity.clone()))
                        .collect()
                }
                Direction::Forward => {
                    let chain = forward_chain(&u.values, kernel, s, periods * t);
                    chain.into_iter().skip(t).collect()
                }
            })
        })
        .collect::<Result<_>>()?;
    let mut seen: HashMap<NodeId, (Vec<f64>, Vec<f64>)> = HashMap::new();
    for (node, vel) in visits.into_iter().flatten() {
        let entry = seen
            .entry(node)
            .or_insert_with(|| (vel.clone(), vel.clone()));
        for ((lo, hi), v) in entry.0.iter_mut().zip(entry.1.iter_mut()).zip(&vel) {
            *lo = lo.min(*v);
            *hi = hi.max(*v);
        }
    }
    Ok(seen
        .values()
        .map(|(lo, hi)| lo.iter().zip(hi).map(|(a, b)| b - a).fold(0.0, f64::max))
        .fold(0.0, f64::max))
}

/// Pointwise minimum of backward solutions.
pub fn min_combine(solutions: &[ValueFunction]) -> Result<ValueFunction> {
    let first = solutions.first().ok_or(Error::Empty("solution list"))?;
    if let Some(bad) = solutions
        .iter()
        .find(|s| s.values.len() != first.values.len())
    {
        return Err(Error::Length {
            expected: first.values.len(),
            got: bad.values.len(),
        });
    }
    let values = (0..first.values.len())
        .map(|i| {
            solutions
                .iter()
                .map(|s| s.values[i])
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let kind = if solutions.iter().all(|s| s.kind == SolutionKind::Backward) {
        SolutionKind::Backward
    } else {
        SolutionKind::Generic
    };
    ValueFunction::new(values, kind)
}

/// Fixed-point residuals of `h(z -> .)` under the backward operator and of
/// `-h(. -> z)` under the forward operator.
pub fn barrier_is_solution_check(
    z: NodeId,
    from_z: &BarrierField,
    to_z: &BarrierField,
    kernel: &StepKernel,
) -> Result<(f64, f64)> {
    if from_z.source != z || to_z.source != z {
        return Err(Error::Config(format!("fields are not rooted at {z}")));
    }
    if from_z.orientation != Orientation::From || to_z.orientation != Orientation::To {
        return Err(Error::Config(
            "expected one field from z and one into z".into(),
        ));
    }
    let u = from_z.barrier()?;
    let v: Vec<f64> = to_z.barrier()?.iter().map(|x| -x).collect();
    check_len(kernel, u)?;
    Ok((
        fixed_point_residual(u, kernel, Direction::Backward),
        fixed_point_residual(&v, kernel, Direction::Forward),
    ))
}
