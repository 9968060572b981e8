//! The layered space-time lattice and its one-step action kernel.
//!
//! Nodes are pairs `(cell, layer)` with `cell` a multi-index in `[0, N)^d`
//! and `layer` in `[0, T)`; position `x = cell / N`, time `t = layer / T`.
//! An edge joins `(x, j)` to `(y, j + 1 mod T)` whenever some integer lift
//! `delta` of `y - x` (in cells, per axis) satisfies `|delta| <= r` with
//! `r = ceil(v_max N / T)`. Its weight is the midpoint-rule action of
//! `L + k` over one time step, minimized over admissible lifts.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{wrap_unit, LagrangianSpec};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSpec {
    /// Grid points per spatial dimension.
    pub n: usize,
    /// Time layers per period.
    pub t: usize,
    /// Velocity cap in torus lengths per period.
    pub v_max: f64,
    pub dim: usize,
}

impl LatticeSpec {
    pub fn new(n: usize, t: usize, v_max: f64, dim: usize) -> Result<Self> {
        let spec = Self { n, t, v_max, dim };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 4 {
            return Err(Error::Config(format!(
                "lattice.n must be at least 4, got {}",
                self.n
            )));
        }
        if self.t < 2 {
            return Err(Error::Config(format!(
                "lattice.t must be at least 2, got {}",
                self.t
            )));
        }
        if self.dim == 0 {
            return Err(Error::Config("lattice.dim must be at least 1".into()));
        }
        if !(self.v_max.is_finite() && self.v_max > 0.0) {
            return Err(Error::Config(format!(
                "lattice.v_max must be positive, got {}",
                self.v_max
            )));
        }
        if self.radius() < 1 {
            return Err(Error::Disconnected {
                radius: self.radius(),
            });
        }
        Ok(())
    }

    /// Reachable radius in cells per step, `ceil(v_max N / T)`.
    pub fn radius(&self) -> usize {
        (self.v_max * self.n as f64 / self.t as f64).ceil() as usize
    }

    pub fn cell_count(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn node_count(&self) -> usize {
        self.cell_count() * self.t
    }
}

/// Flat node index `layer * N^d + cell`. Ordering is by layer, then by cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "node {}", self.0)
    }
}

/// Displacement class of an edge: a residue per axis plus its admissible lifts.
#[derive(Clone, Debug)]
struct Slot {
    residue: Vec<usize>,
    lifts: Vec<Vec<i32>>,
}

/// Node index tables for a [`LatticeSpec`].
#[derive(Clone, Debug)]
pub struct Lattice {
    spec: LatticeSpec,
    cells: usize,
    slots: Vec<Slot>,
    /// `targets[cell * S + s]`: cell reached from `cell` through slot `s`.
    targets: Vec<u32>,
    /// `sources[cell * S + s]`: cell that reaches `cell` through slot `s`.
    sources: Vec<u32>,
}

impl Lattice {
    pub fn build(spec: LatticeSpec) -> Result<Self> {
        spec.validate()?;
        let n = spec.n;
        let r = spec.radius() as i64;
        // per-axis residues with their lifts, residue order fixed by first appearance
        let mut axis: Vec<(usize, Vec<i32>)> = Vec::new();
        for delta in -r..=r {
            let res = delta.rem_euclid(n as i64) as usize;
            match axis.iter_mut().find(|(q, _)| *q == res) {
                Some((_, lifts)) => lifts.push(delta as i32),
                None => axis.push((res, vec![delta as i32])),
            }
        }
        let mut slots = vec![Slot {
            residue: Vec::new(),
            lifts: vec![Vec::new()],
        }];
        for _ in 0..spec.dim {
            let mut next = Vec::with_capacity(slots.len() * axis.len());
            for slot in &slots {
                for (res, lifts) in &axis {
                    let mut residue = slot.residue.clone();
                    residue.push(*res);
                    let lifts = slot
                        .lifts
                        .iter()
                        .flat_map(|prefix| {
                            lifts.iter().map(move |&l| {
                                let mut v = prefix.clone();
                                v.push(l);
                                v
                            })
                        })
                        .collect();
                    next.push(Slot { residue, lifts });
                }
            }
            slots = next;
        }
        let cells = spec.cell_count();
        let s = slots.len();
        let mut lattice = Self {
            spec,
            cells,
            slots,
            targets: vec![0; cells * s],
            sources: vec![0; cells * s],
        };
        for cell in 0..cells {
            let idx = lattice.cell_multi(cell);
            for (si, slot) in lattice.slots.iter().enumerate() {
                let fwd: Vec<usize> = idx
                    .iter()
                    .zip(&slot.residue)
                    .map(|(&i, &q)| (i + q) % n)
                    .collect();
                let back: Vec<usize> = idx
                    .iter()
                    .zip(&slot.residue)
                    .map(|(&i, &q)| (i + n - q) % n)
                    .collect();
                lattice.targets[cell * s + si] = lattice.cell_flat(&fwd) as u32;
                lattice.sources[cell * s + si] = lattice.cell_flat(&back) as u32;
            }
        }
        Ok(lattice)
    }

    pub fn spec(&self) -> &LatticeSpec {
        &self.spec
    }

    pub fn n(&self) -> usize {
        self.spec.n
    }

    pub fn layers(&self) -> usize {
        self.spec.t
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn cell_count(&self) -> usize {
        self.cells
    }

    pub fn node_count(&self) -> usize {
        self.cells * self.spec.t
    }

    /// Number of out-edges per node.
    pub fn slot_count(&self) -> usize {
        self.slots.len()
    }

    pub fn edge_count(&self) -> usize {
        self.node_count() * self.slot_count()
    }

    pub fn node(&self, cell: usize, layer: usize) -> NodeId {
        debug_assert!(cell < self.cells && layer < self.spec.t);
        NodeId((layer * self.cells + cell) as u32)
    }

    pub fn node_at(&self, cell: &[usize], layer: usize) -> NodeId {
        self.node(self.cell_flat(cell), layer)
    }

    pub fn cell(&self, node: NodeId) -> usize {
        node.index() % self.cells
    }

    pub fn layer(&self, node: NodeId) -> usize {
        node.index() / self.cells
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> {
        (0..self.node_count() as u32).map(NodeId)
    }

    /// Row-major multi-index of a flat cell.
    pub fn cell_multi(&self, mut cell: usize) -> Vec<usize> {
        let n = self.spec.n;
        let mut idx = vec![0; self.spec.dim];
        for slot in idx.iter_mut().rev() {
            *slot = cell % n;
            cell /= n;
        }
        idx
    }

    pub fn cell_flat(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &i| acc * self.spec.n + i)
    }

    pub fn position(&self, cell: usize) -> Vec<f64> {
        self.cell_multi(cell)
            .into_iter()
            .map(|i| i as f64 / self.spec.n as f64)
            .collect()
    }

    pub fn time(&self, layer: usize) -> f64 {
        layer as f64 / self.spec.t as f64
    }

    pub fn next_layer(&self, layer: usize) -> usize {
        (layer + 1) % self.spec.t
    }

    pub fn prev_layer(&self, layer: usize) -> usize {
        (layer + self.spec.t - 1) % self.spec.t
    }

    pub fn target_cell(&self, cell: usize, slot: usize) -> usize {
        self.targets[cell * self.slots.len() + slot] as usize
    }

    pub fn source_cell(&self, cell: usize, slot: usize) -> usize {
        self.sources[cell * self.slots.len() + slot] as usize
    }

    pub fn slot_lifts(&self, slot: usize) -> &[Vec<i32>] {
        &self.slots[slot].lifts
    }

    /// Slot joining `from` to `to`, if they are within the reachable radius.
    pub fn slot_between(&self, from: usize, to: usize) -> Option<usize> {
        let s = self.slots.len();
        (0..s).find(|&si| self.targets[from * s + si] as usize == to)
    }

    /// Torus distance between two cells along the grid, max over axes, in cells.
    pub fn cell_distance(&self, a: usize, b: usize) -> usize {
        let n = self.spec.n;
        self.cell_multi(a)
            .into_iter()
            .zip(self.cell_multi(b))
            .map(|(i, j)| {
                let d = i.abs_diff(j);
                d.min(n - d)
            })
            .max()
            .unwrap_or(0)
    }

    /// Cells adjacent to `cell` along each positive axis direction.
    pub fn forward_neighbours(&self, cell: usize) -> Vec<usize> {
        let n = self.spec.n;
        let idx = self.cell_multi(cell);
        (0..self.spec.dim)
            .map(|axis| {
                let mut j = idx.clone();
                j[axis] = (j[axis] + 1) % n;
                self.cell_flat(&j)
            })
            .collect()
    }

    /// Bytes needed to hold a kernel on this lattice.
    pub fn kernel_bytes(&self) -> u64 {
        self.edge_count() as u64
            * (2 * std::mem::size_of::<f64>() + std::mem::size_of::<u16>()) as u64
    }
}

/// Midpoint-rule action of one step along lift `delta` (in cells) from `cell` at `layer`.
fn lift_action(
    spec: &LagrangianSpec,
    lattice: &Lattice,
    cell: usize,
    layer: usize,
    delta: &[i32],
) -> f64 {
    let n = lattice.n() as f64;
    let t = lattice.layers() as f64;
    let start = lattice.cell_multi(cell);
    let mut mid = Vec::with_capacity(delta.len());
    let mut vel = Vec::with_capacity(delta.len());
    for (&i, &d) in start.iter().zip(delta) {
        let disp = d as f64 / n;
        mid.push(wrap_unit(i as f64 / n + 0.5 * disp));
        vel.push(disp * t);
    }
    let t_mid = (layer as f64 + 0.5) / t;
    spec.eval_lagrangian(&mid, &vel, t_mid) / t
}

/// Weight of the edge `(x, j) -> (y, j + 1)` at energy offset `k`; `+inf` if absent.
pub fn step_weight(
    spec: &LagrangianSpec,
    lattice: &Lattice,
    from: usize,
    to: usize,
    layer: usize,
    k: f64,
) -> f64 {
    match lattice.slot_between(from, to) {
        Some(slot) => {
            let (_, base) = best_lift(spec, lattice, from, layer, slot);
            base + k / lattice.layers() as f64
        }
        None => f64::INFINITY,
    }
}

fn best_lift(
    spec: &LagrangianSpec,
    lattice: &Lattice,
    cell: usize,
    layer: usize,
    slot: usize,
) -> (u16, f64) {
    let mut best = (0u16, f64::INFINITY);
    for (li, lift) in lattice.slot_lifts(slot).iter().enumerate() {
        let w = lift_action(spec, lattice, cell, layer, lift);
        if w < best.1 {
            best = (li as u16, w);
        }
    }
    best
}

/// One-step min-plus kernel at energy level `k`.
///
/// Edges are stored layer-major: edge `(layer * C + cell) * S + slot` leaves
/// `(cell, layer)` through `slot`. `base` holds the `k = 0` weights and
/// `weights[e] = base[e] + k / T`.
#[derive(Clone, Debug)]
pub struct StepKernel {
    lattice: Lattice,
    k: f64,
    base: Vec<f64>,
    weights: Vec<f64>,
    lifts: Vec<u16>,
}

impl StepKernel {
    pub fn build(
        spec: &LagrangianSpec,
        lattice: &Lattice,
        k: f64,
        memory_cap: Option<u64>,
    ) -> Result<Self> {
        spec.validate()?;
        if spec.dim != lattice.dim() {
            return Err(Error::Config(format!(
                "model.dim = {} does not match lattice.dim = {}",
                spec.dim,
                lattice.dim()
            )));
        }
        if let Some(cap) = memory_cap {
            let needed = lattice.kernel_bytes();
            if needed > cap {
                return Err(Error::MemoryCap { needed, cap });
            }
        }
        let s = lattice.slot_count();
        let c = lattice.cell_count();
        let mut base = vec![0.0; lattice.edge_count()];
        let mut lifts = vec![0u16; lattice.edge_count()];
        base.par_chunks_mut(s)
            .zip(lifts.par_chunks_mut(s))
            .enumerate()
            .for_each(|(node, (w, l))| {
                let (layer, cell) = (node / c, node % c);
                for slot in 0..s {
                    let (li, wi) = best_lift(spec, lattice, cell, layer, slot);
                    w[slot] = wi;
                    l[slot] = li;
                }
            });
        Ok(Self::from_parts(lattice.clone(), k, base, lifts))
    }

    /// Kernel with caller-provided `k = 0` weights (one per edge) and first lifts.
    pub fn from_weights(lattice: Lattice, k: f64, base: Vec<f64>) -> Result<Self> {
        if base.len() != lattice.edge_count() {
            return Err(Error::Length {
                expected: lattice.edge_count(),
                got: base.len(),
            });
        }
        if let Some((i, &w)) = base
            .iter()
            .enumerate()
            .find(|(_, w)| w.is_nan() || **w == f64::NEG_INFINITY)
        {
            return Err(Error::InvalidCost { index: i, value: w });
        }
        let lifts = vec![0; base.len()];
        Ok(Self::from_parts(lattice, k, base, lifts))
    }

    /// Reassembles a kernel from stored `k = 0` weights and lift choices.
    pub fn from_stored(lattice: Lattice, k: f64, base: Vec<f64>, lifts: Vec<u16>) -> Result<Self> {
        if lifts.len() != base.len() {
            return Err(Error::Length {
                expected: base.len(),
                got: lifts.len(),
            });
        }
        let s = lattice.slot_count();
        if let Some(i) = lifts
            .iter()
            .enumerate()
            .position(|(i, &l)| l as usize >= lattice.slot_lifts(i % s).len())
        {
            return Err(Error::Inconsistent(format!(
                "stored lift index out of range at edge {i}"
            )));
        }
        let mut kernel = Self::from_weights(lattice, 0.0, base)?;
        kernel.lifts = lifts;
        Ok(kernel.at_level(k))
    }

    pub(crate) fn from_parts(lattice: Lattice, k: f64, base: Vec<f64>, lifts: Vec<u16>) -> Self {
        let shift = k / lattice.layers() as f64;
        let weights = base.iter().map(|w| w + shift).collect();
        Self {
            lattice,
            k,
            base,
            weights,
            lifts,
        }
    }

    /// Same edges, re-leveled to energy `k`.
    pub fn at_level(&self, k: f64) -> Self {
        Self::from_parts(
            self.lattice.clone(),
            k,
            self.base.clone(),
            self.lifts.clone(),
        )
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn base_weights(&self) -> &[f64] {
        &self.base
    }

    pub fn lift_indices(&self) -> &[u16] {
        &self.lifts
    }

    pub fn edge_index(&self, cell: usize, layer: usize, slot: usize) -> usize {
        (layer * self.lattice.cell_count() + cell) * self.lattice.slot_count() + slot
    }

    /// Out-edge weights of `(cell, layer)`, indexed by slot.
    pub fn out_weights(&self, cell: usize, layer: usize) -> &[f64] {
        let s = self.lattice.slot_count();
        let start = self.edge_index(cell, layer, 0);
        &self.weights[start..start + s]
    }

    pub fn weight(&self, cell: usize, layer: usize, slot: usize) -> f64 {
        self.weights[self.edge_index(cell, layer, slot)]
    }

    /// Weight between two nodes in consecutive layers, `+inf` if no edge.
    pub fn edge_weight(&self, from: NodeId, to: NodeId) -> f64 {
        let lat = &self.lattice;
        let layer = lat.layer(from);
        if lat.layer(to) != lat.next_layer(layer) {
            return f64::INFINITY;
        }
        match lat.slot_between(lat.cell(from), lat.cell(to)) {
            Some(slot) => self.weight(lat.cell(from), layer, slot),
            None => f64::INFINITY,
        }
    }

    /// Displacement in cells used by an edge.
    pub fn lift(&self, cell: usize, layer: usize, slot: usize) -> &[i32] {
        let li = self.lifts[self.edge_index(cell, layer, slot)] as usize;
        &self.lattice.slot_lifts(slot)[li]
    }

    /// Velocity of an edge in torus lengths per period.
    pub fn velocity(&self, cell: usize, layer: usize, slot: usize) -> Vec<f64> {
        let scale = self.lattice.layers() as f64 / self.lattice.n() as f64;
        self.lift(cell, layer, slot)
            .iter()
            .map(|&d| d as f64 * scale)
            .collect()
    }

    pub fn min_weight(&self) -> f64 {
        self.weights.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lattice_sizes() {
        let lat = Lattice::build(LatticeSpec::new(4, 2, 0.4, 1).unwrap()).unwrap();
        assert_eq!(lat.node_count(), 8);
        assert_eq!(LatticeSpec::new(4, 2, 4.0, 1).unwrap().radius(), 8);
        // tiny cap still reaches nearest cells
        assert_eq!(LatticeSpec::new(4, 16, 0.1, 1).unwrap().radius(), 1);
    }

    #[test]
    fn invalid_specs() {
        assert!(LatticeSpec::new(3, 2, 1.0, 1).is_err());
        assert!(LatticeSpec::new(4, 1, 1.0, 1).is_err());
        assert!(LatticeSpec::new(4, 2, 0.0, 1).is_err());
        assert!(LatticeSpec::new(4, 2, f64::NAN, 1).is_err());
    }

    #[test]
    fn wide_radius_dedupes_lifts() {
        let lat = Lattice::build(LatticeSpec::new(4, 2, 4.0, 1).unwrap()).unwrap();
        assert_eq!(lat.slot_count(), 4);
        let total: usize = (0..4).map(|s| lat.slot_lifts(s).len()).sum();
        assert_eq!(total, 17);
    }

    #[test]
    fn edge_count() {
        let lat = Lattice::build(LatticeSpec::new(4, 2, 0.5, 1).unwrap()).unwrap();
        assert_eq!(lat.slot_count(), 3);
        assert_eq!(lat.edge_count(), 24);
        let lat2 = Lattice::build(LatticeSpec::new(5, 2, 0.4, 2).unwrap()).unwrap();
        assert_eq!(lat2.edge_count(), 25 * 2 * 9);
    }

    #[test]
    fn neighbour_tables_are_inverse() {
        let lat = Lattice::build(LatticeSpec::new(6, 3, 1.0, 2).unwrap()).unwrap();
        for cell in 0..lat.cell_count() {
            for s in 0..lat.slot_count() {
                assert_eq!(lat.source_cell(lat.target_cell(cell, s), s), cell);
            }
        }
    }

    #[test]
    fn step_weight_examples() {
        let free = LagrangianSpec::free(1);
        let lat = Lattice::build(LatticeSpec::new(4, 4, 2.0, 1).unwrap()).unwrap();
        assert_eq!(step_weight(&free, &lat, 0, 1, 0, 0.0), 0.125);
        assert_eq!(step_weight(&free, &lat, 2, 2, 1, 0.0), 0.0);
        assert_eq!(step_weight(&free, &lat, 0, 0, 0, 2.0), 0.5);
        let narrow = Lattice::build(LatticeSpec::new(8, 4, 0.5, 1).unwrap()).unwrap();
        assert_eq!(step_weight(&free, &narrow, 0, 4, 0, 0.0), f64::INFINITY);
    }

    #[test]
    fn kernel_offset_law_and_minimum() {
        let free = LagrangianSpec::free(1);
        let lat = Lattice::build(LatticeSpec::new(4, 2, 0.5, 1).unwrap()).unwrap();
        let k0 = StepKernel::build(&free, &lat, 0.0, None).unwrap();
        let k1 = StepKernel::build(&free, &lat, 1.0, None).unwrap();
        assert_eq!(k0.weights().len(), 24);
        for (a, b) in k1.weights().iter().zip(k0.weights()) {
            assert!((a - b - 0.5).abs() < 1e-15);
        }
        assert_eq!(k0.min_weight(), 0.0);
        for cell in 0..4 {
            for layer in 0..2 {
                let rest = lat.slot_between(cell, cell).unwrap();
                assert_eq!(k0.weight(cell, layer, rest), 0.0);
            }
        }
    }

    #[test]
    fn memory_cap_refuses() {
        let lat = Lattice::build(LatticeSpec::new(64, 8, 2.0, 1).unwrap()).unwrap();
        let err = StepKernel::build(&LagrangianSpec::free(1), &lat, 0.0, Some(1024)).unwrap_err();
        assert!(matches!(err, Error::MemoryCap { .. }));
    }

    #[test]
    fn min_weight_lift_is_chosen() {
        // N = 4, r = 3: residue 1 has lifts +1 and -3; +1 is cheaper for the free particle.
        let lat = Lattice::build(LatticeSpec::new(4, 4, 3.0, 1).unwrap()).unwrap();
        let k = StepKernel::build(&LagrangianSpec::free(1), &lat, 0.0, None).unwrap();
        let slot = lat.slot_between(0, 1).unwrap();
        assert_eq!(k.lift(0, 0, slot), &[1]);
        assert_eq!(k.velocity(0, 0, slot), vec![1.0]);
    }
}
