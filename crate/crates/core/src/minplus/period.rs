use rayon::prelude::*;

use super::{push_layer, Orientation};
use crate::lattice::StepKernel;

/// One-period min-plus matrix of a layer: `costs[a * C + b]` is the cheapest
/// `T`-step path from `(a, layer)` to `(b, layer)`.
#[derive(Clone, Debug)]
pub struct PeriodMap {
    layer: usize,
    cells: usize,
    costs: Vec<f64>,
}

impl PeriodMap {
    pub fn build(kernel: &StepKernel, layer: usize) -> Self {
        let lat = kernel.lattice();
        let c = lat.cell_count();
        let t = lat.layers();
        let mut costs = vec![f64::INFINITY; c * c];
        costs.par_chunks_mut(c).enumerate().for_each(|(a, row)| {
            let mut cur = vec![f64::INFINITY; c];
            let mut next = vec![0.0; c];
            cur[a] = 0.0;
            let mut l = layer;
            for _ in 0..t {
                push_layer(kernel, l, &cur, &mut next);
                std::mem::swap(&mut cur, &mut next);
                l = lat.next_layer(l);
            }
            row.copy_from_slice(&cur);
        });
        Self {
            layer,
            cells: c,
            costs,
        }
    }

    pub fn layer(&self) -> usize {
        self.layer
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.costs[from * self.cells + to]
    }

    pub fn matrix(&self) -> &[f64] {
        &self.costs
    }

    /// `r P` (orientation `From`) or `P r` (orientation `To`).
    pub fn apply(&self, r: &[f64], orientation: Orientation) -> Vec<f64> {
        let c = self.cells;
        let mut out = vec![f64::INFINITY; c];
        match orientation {
            Orientation::From => {
                out.par_iter_mut()
                    .with_min_len(64)
                    .enumerate()
                    .for_each(|(b, o)| {
                        let mut best = f64::INFINITY;
                        for (a, ra) in r.iter().enumerate() {
                            let v = ra + self.costs[a * c + b];
                            if v < best {
                                best = v;
                            }
                        }
                        *o = best;
                    });
            }
            Orientation::To => {
                out.par_iter_mut()
                    .with_min_len(64)
                    .enumerate()
                    .for_each(|(a, o)| {
                        let row = &self.costs[a * c..(a + 1) * c];
                        let mut best = f64::INFINITY;
                        for (p, rb) in row.iter().zip(r) {
                            let v = p + rb;
                            if v < best {
                                best = v;
                            }
                        }
                        *o = best;
                    });
            }
        }
        out
    }

    /// Row (or column) `cell` of `P^periods`.
    pub fn power_row(&self, cell: usize, periods: usize, orientation: Orientation) -> Vec<f64> {
        let mut r = vec![f64::INFINITY; self.cells];
        r[cell] = 0.0;
        for _ in 0..periods {
            r = self.apply(&r, orientation);
        }
        r
    }

    /// Windowed minimum of the diagonal entry `P^i(cell, cell)` over
    /// `i in [i_min, i_max]`, with the largest improvement seen in the last
    /// `window` powers.
    pub fn diagonal_liminf(
        &self,
        cell: usize,
        i_min: usize,
        i_max: usize,
        window: usize,
    ) -> (f64, f64) {
        let mut r = self.power_row(cell, i_min, Orientation::From);
        let mut best = r[cell];
        let mut residual = 0.0f64;
        for i in i_min + 1..=i_max {
            r = self.apply(&r, Orientation::From);
            if r[cell] < best {
                if i + window > i_max {
                    residual = residual.max(best - r[cell]);
                }
                best = r[cell];
            }
        }
        (best, residual)
    }
}
