//! Time-periodic Tonelli Lagrangians on the flat torus and their Legendre duals.
//!
//! Every family is `|v|^2 / 2` plus lower-order terms, so the Legendre
//! transform is available in closed form:
//!
//! | family              | L(x, v, t)                   | H(x, p, t)                     |
//! |---------------------|------------------------------|--------------------------------|
//! | `free`              | `|v|^2/2`                    | `|p|^2/2`                      |
//! | `mechanical`        | `|v|^2/2 - V(x)`             | `|p|^2/2 + V(x)`               |
//! | `drift`             | `|v - c0(t)|^2/2`            | `|p|^2/2 + p.c0(t)`            |
//! | `forced_mechanical` | `|v|^2/2 - V(x)(1 + mu(t))`  | `|p|^2/2 + V(x)(1 + mu(t))`    |
//!
//! A constant closed one-form `h.dx` can be subtracted from any family
//! ([`LagrangianSpec::with_cohomology`]); then `L_h = L - h.v` and
//! `H_h(p) = H(p + h)`.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Free,
    Mechanical,
    Drift,
    ForcedMechanical,
}

/// One term `cos * cos(2 pi wave.x) + sin * sin(2 pi wave.x)` of a potential.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpatialMode {
    pub wave: Vec<i32>,
    #[serde(default)]
    pub cos: f64,
    #[serde(default)]
    pub sin: f64,
}

/// One term `cos * cos(2 pi freq t) + sin * sin(2 pi freq t)` of a periodic signal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemporalMode {
    pub freq: i32,
    #[serde(default)]
    pub cos: f64,
    #[serde(default)]
    pub sin: f64,
}

fn eval_spatial(modes: &[SpatialMode], x: &[f64]) -> f64 {
    modes
        .iter()
        .map(|m| {
            let phase: f64 = m.wave.iter().zip(x).map(|(&k, &xi)| k as f64 * xi).sum();
            let a = TAU * phase;
            m.cos * a.cos() + m.sin * a.sin()
        })
        .sum()
}

fn eval_temporal(modes: &[TemporalMode], t: f64) -> f64 {
    modes
        .iter()
        .map(|m| {
            let a = TAU * m.freq as f64 * t;
            m.cos * a.cos() + m.sin * a.sin()
        })
        .sum()
}

fn amplitude_bound<I: IntoIterator<Item = (f64, f64)>>(terms: I) -> f64 {
    terms.into_iter().map(|(c, s)| c.abs() + s.abs()).sum()
}

/// Reduces a real number to `[0, 1)`.
pub fn wrap_unit(t: f64) -> f64 {
    let r = t - t.floor();
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// A parameterized Lagrangian family on the `dim`-torus, 1-periodic in time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LagrangianSpec {
    pub family: Family,
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// Fourier modes of `V(x)` (mechanical and forced_mechanical).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub potential: Vec<SpatialMode>,
    /// Fourier modes of each component of `c0(t)` (drift).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub drift: Vec<Vec<TemporalMode>>,
    /// Fourier modes of the time modulation `mu(t)` (forced_mechanical).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub modulation: Vec<TemporalMode>,
    #[serde(skip)]
    cohomology: Option<Vec<f64>>,
}

fn default_dim() -> usize {
    1
}

/// A point `(x, v, [t])` of `TM x S^1` in flat torus coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct PhasePoint {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub t: f64,
}

impl PhasePoint {
    pub fn new(x: &[f64], v: &[f64], t: f64) -> Self {
        Self {
            x: x.iter().map(|&xi| wrap_unit(xi)).collect(),
            v: v.to_vec(),
            t: wrap_unit(t),
        }
    }
}

/// A momentum, or the constant closed one-form `h.dx`.
#[derive(Clone, Debug, PartialEq)]
pub struct Covector(pub Vec<f64>);

impl Covector {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if let Some(bad) = p.iter().find(|p| !p.is_finite()) {
            return Err(Error::Config(format!("covector entry {bad} is not finite")));
        }
        Ok(Self(p))
    }

    pub fn dot(&self, v: &[f64]) -> f64 {
        self.0.iter().zip(v).map(|(a, b)| a * b).sum()
    }
}

impl LagrangianSpec {
    pub fn free(dim: usize) -> Self {
        Self {
            family: Family::Free,
            dim,
            potential: Vec::new(),
            drift: Vec::new(),
            modulation: Vec::new(),
            cohomology: None,
        }
    }

    pub fn mechanical(dim: usize, potential: Vec<SpatialMode>) -> Self {
        Self {
            family: Family::Mechanical,
            potential,
            ..Self::free(dim)
        }
    }

    pub fn drift(drift: Vec<Vec<TemporalMode>>) -> Self {
        Self {
            family: Family::Drift,
            dim: drift.len(),
            drift,
            ..Self::free(1)
        }
    }

    pub fn forced_mechanical(
        dim: usize,
        potential: Vec<SpatialMode>,
        modulation: Vec<TemporalMode>,
    ) -> Self {
        Self {
            family: Family::ForcedMechanical,
            potential,
            modulation,
            ..Self::free(dim)
        }
    }

    /// The pendulum `V(x) = (1 + cos 2 pi x) / 2` on the circle.
    pub fn pendulum() -> Self {
        Self::mechanical(
            1,
            vec![
                SpatialMode {
                    wave: vec![0],
                    cos: 0.5,
                    sin: 0.0,
                },
                SpatialMode {
                    wave: vec![1],
                    cos: 0.5,
                    sin: 0.0,
                },
            ],
        )
    }

    /// Two wells of equal depth, `V(x) = (1 + cos 4 pi x) / 2`.
    pub fn two_well() -> Self {
        Self::mechanical(
            1,
            vec![
                SpatialMode {
                    wave: vec![0],
                    cos: 0.5,
                    sin: 0.0,
                },
                SpatialMode {
                    wave: vec![2],
                    cos: 0.5,
                    sin: 0.0,
                },
            ],
        )
    }

    /// Drift `c0(t) = sin 2 pi t` on the circle.
    pub fn sine_drift() -> Self {
        Self::drift(vec![vec![TemporalMode {
            freq: 1,
            cos: 0.0,
            sin: 1.0,
        }]])
    }

    /// Checks that the parameters fit the family and dimension.
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("model.dim must be at least 1".into()));
        }
        let finite = |c: f64, s: f64| c.is_finite() && s.is_finite();
        for m in &self.potential {
            if m.wave.len() != self.dim {
                return Err(Error::Config(format!(
                    "model.potential: wave vector {:?} does not have dim = {} entries",
                    m.wave, self.dim
                )));
            }
            if !finite(m.cos, m.sin) {
                return Err(Error::Config(
                    "model.potential: non-finite coefficient".into(),
                ));
            }
        }
        for m in self.drift.iter().flatten().chain(&self.modulation) {
            if !finite(m.cos, m.sin) {
                return Err(Error::Config(
                    "model: non-finite temporal coefficient".into(),
                ));
            }
        }
        let unused = |name: &str, empty: bool| -> Result<()> {
            if empty {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "model.{name} is not used by family {:?}",
                    self.family
                )))
            }
        };
        match self.family {
            Family::Free => {
                unused("potential", self.potential.is_empty())?;
                unused("drift", self.drift.is_empty())?;
                unused("modulation", self.modulation.is_empty())?;
            }
            Family::Mechanical => {
                unused("drift", self.drift.is_empty())?;
                unused("modulation", self.modulation.is_empty())?;
            }
            Family::Drift => {
                unused("potential", self.potential.is_empty())?;
                unused("modulation", self.modulation.is_empty())?;
                if self.drift.len() != self.dim {
                    return Err(Error::Config(format!(
                        "model.drift needs one mode list per dimension ({}), got {}",
                        self.dim,
                        self.drift.len()
                    )));
                }
            }
            Family::ForcedMechanical => {
                unused("drift", self.drift.is_empty())?;
            }
        }
        if let Some(h) = &self.cohomology {
            if h.len() != self.dim || h.iter().any(|x| !x.is_finite()) {
                return Err(Error::Config(
                    "cohomology class must be finite with dim entries".into(),
                ));
            }
        }
        Ok(())
    }

    /// Returns `L - h.v` for the constant one-form `h.dx`.
    pub fn with_cohomology(&self, h: &[f64]) -> Result<Self> {
        let mut out = self.clone();
        out.cohomology = if h.iter().all(|&x| x == 0.0) {
            None
        } else {
            Some(h.to_vec())
        };
        out.validate()?;
        Ok(out)
    }

    pub fn cohomology(&self) -> Option<&[f64]> {
        self.cohomology.as_deref()
    }

    /// Leading coefficient of the velocity quadratic form. Positive for all families.
    pub fn quadratic_coefficient(&self) -> f64 {
        0.5
    }

    pub fn potential_at(&self, x: &[f64], t: f64) -> f64 {
        match self.family {
            Family::Free | Family::Drift => 0.0,
            Family::Mechanical => eval_spatial(&self.potential, x),
            Family::ForcedMechanical => {
                eval_spatial(&self.potential, x) * (1.0 + eval_temporal(&self.modulation, t))
            }
        }
    }

    fn drift_into(&self, t: f64, out: &mut [f64]) {
        if self.family == Family::Drift {
            for (o, modes) in out.iter_mut().zip(&self.drift) {
                *o = eval_temporal(modes, t);
            }
        } else {
            out.iter_mut().for_each(|o| *o = 0.0);
        }
    }

    pub fn drift_at(&self, t: f64) -> Vec<f64> {
        let mut c = vec![0.0; self.dim];
        self.drift_into(t, &mut c);
        c
    }

    fn shift_dot(&self, v: &[f64]) -> f64 {
        self.cohomology
            .as_ref()
            .map_or(0.0, |h| h.iter().zip(v).map(|(a, b)| a * b).sum())
    }

    /// `L(x, v, t)`; `x` and `t` are reduced mod 1.
    pub fn eval_lagrangian(&self, x: &[f64], v: &[f64], t: f64) -> f64 {
        let t = wrap_unit(t);
        let kinetic = if self.family == Family::Drift {
            self.drift
                .iter()
                .zip(v)
                .map(|(modes, &vi)| {
                    let d = vi - eval_temporal(modes, t);
                    d * d
                })
                .sum::<f64>()
        } else {
            v.iter().map(|vi| vi * vi).sum::<f64>()
        };
        0.5 * kinetic - self.potential_at(x, t) - self.shift_dot(v)
    }

    pub fn eval_lagrangian_at(&self, point: &PhasePoint) -> f64 {
        self.eval_lagrangian(&point.x, &point.v, point.t)
    }

    /// `H(x, p, t) = max_v p.v - L(x, v, t)` in closed form.
    pub fn eval_hamiltonian(&self, x: &[f64], p: &Covector, t: f64) -> f64 {
        let t = wrap_unit(t);
        let mut q = p.0.clone();
        if let Some(h) = &self.cohomology {
            q.iter_mut().zip(h).for_each(|(qi, hi)| *qi += hi);
        }
        let mut c = vec![0.0; self.dim];
        self.drift_into(t, &mut c);
        let kinetic: f64 = q.iter().map(|qi| qi * qi).sum();
        let transport: f64 = q.iter().zip(&c).map(|(qi, ci)| qi * ci).sum();
        0.5 * kinetic + transport + self.potential_at(x, t)
    }

    /// Fiber derivative `p = dL/dv`.
    pub fn velocity_to_momentum(&self, _x: &[f64], v: &[f64], t: f64) -> Covector {
        let c = self.drift_at(wrap_unit(t));
        let mut p: Vec<f64> = v.iter().zip(&c).map(|(vi, ci)| vi - ci).collect();
        if let Some(h) = &self.cohomology {
            p.iter_mut().zip(h).for_each(|(pi, hi)| *pi -= hi);
        }
        Covector(p)
    }

    /// Inverse of [`velocity_to_momentum`](Self::velocity_to_momentum).
    pub fn momentum_to_velocity(&self, _x: &[f64], p: &Covector, t: f64) -> Vec<f64> {
        let c = self.drift_at(wrap_unit(t));
        let mut v: Vec<f64> = p.0.iter().zip(&c).map(|(pi, ci)| pi + ci).collect();
        if let Some(h) = &self.cohomology {
            v.iter_mut().zip(h).for_each(|(vi, hi)| *vi += hi);
        }
        v
    }

    /// Bound on `max |V|` over the torus and the period.
    pub fn potential_bound(&self) -> f64 {
        let v = amplitude_bound(self.potential.iter().map(|m| (m.cos, m.sin)));
        match self.family {
            Family::Free | Family::Drift => 0.0,
            Family::Mechanical => v,
            Family::ForcedMechanical => {
                v * (1.0 + amplitude_bound(self.modulation.iter().map(|m| (m.cos, m.sin))))
            }
        }
    }

    /// Bound on `max |c0(t)|` (Euclidean over components).
    pub fn drift_bound(&self) -> f64 {
        self.drift
            .iter()
            .map(|modes| amplitude_bound(modes.iter().map(|m| (m.cos, m.sin))).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Velocity cap large enough that minimizers are not clipped:
    /// `2 (1 + max|c0| + sqrt(2 max V))`, widened by `|h|` for shifted Lagrangians.
    pub fn default_v_max(&self) -> f64 {
        let shift = self
            .cohomology
            .as_ref()
            .map_or(0.0, |h| h.iter().map(|x| x * x).sum::<f64>().sqrt());
        2.0 * (1.0 + self.drift_bound() + (2.0 * self.potential_bound()).sqrt() + shift)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lagrangian_examples() {
        assert_eq!(
            LagrangianSpec::free(1).eval_lagrangian(&[0.3], &[1.0], 0.2),
            0.5
        );
        assert_eq!(
            LagrangianSpec::pendulum().eval_lagrangian(&[0.0], &[0.0], 0.0),
            -1.0
        );
        let drift = LagrangianSpec::sine_drift();
        for t in [0.0, 0.1, 0.25, 0.7] {
            let v = (TAU * t).sin();
            assert_eq!(drift.eval_lagrangian(&[0.4], &[v], t), 0.0);
        }
    }

    #[test]
    fn hamiltonian_examples() {
        let p1 = Covector(vec![1.0]);
        assert_eq!(
            LagrangianSpec::free(1).eval_hamiltonian(&[0.0], &p1, 0.0),
            0.5
        );
        let h = LagrangianSpec::pendulum().eval_hamiltonian(&[0.0], &Covector(vec![0.0]), 0.0);
        assert_eq!(h, 1.0);
        let h = LagrangianSpec::sine_drift().eval_hamiltonian(&[0.0], &p1, 0.25);
        assert!((h - 1.5).abs() < 1e-15);
    }

    #[test]
    fn legendre_examples() {
        let free = LagrangianSpec::free(1);
        assert_eq!(free.velocity_to_momentum(&[0.0], &[0.3], 0.0).0, vec![0.3]);
        let drift = LagrangianSpec::sine_drift();
        let v = drift.momentum_to_velocity(&[0.0], &Covector(vec![0.0]), 0.25);
        assert!((v[0] - 1.0).abs() < 1e-15);
        let pend = LagrangianSpec::pendulum();
        let p = pend.velocity_to_momentum(&[0.1], &[-2.0], 0.3);
        assert_eq!(p.0, vec![-2.0]);
        assert_eq!(pend.momentum_to_velocity(&[0.1], &p, 0.3), vec![-2.0]);
    }

    #[test]
    fn hamiltonian_is_sampled_sup() {
        let spec = LagrangianSpec::forced_mechanical(
            1,
            vec![SpatialMode {
                wave: vec![1],
                cos: 0.3,
                sin: -0.2,
            }],
            vec![TemporalMode {
                freq: 2,
                cos: 0.1,
                sin: 0.4,
            }],
        );
        let (x, t, p) = ([0.37], 0.61, Covector(vec![0.8]));
        let sampled = (-4000..=4000)
            .map(|i| {
                let v = [i as f64 * 1e-3];
                p.dot(&v) - spec.eval_lagrangian(&x, &v, t)
            })
            .fold(f64::NEG_INFINITY, f64::max);
        // optimum v = 0.8 lies on the sample grid
        assert!((sampled - spec.eval_hamiltonian(&x, &p, t)).abs() < 1e-9);
    }

    #[test]
    fn cohomology_shift() {
        let free = LagrangianSpec::free(1).with_cohomology(&[1.0]).unwrap();
        assert_eq!(free.eval_lagrangian(&[0.0], &[1.0], 0.0), -0.5);
        let p = free.velocity_to_momentum(&[0.0], &[1.0], 0.0);
        assert_eq!(p.0, vec![0.0]);
        // H_h(p) = (p + h)^2 / 2
        assert_eq!(
            free.eval_hamiltonian(&[0.0], &Covector(vec![1.0]), 0.0),
            2.0
        );
    }

    #[test]
    fn validation_errors() {
        let mut bad = LagrangianSpec::pendulum();
        bad.potential[0].wave = vec![0, 1];
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let mut bad = LagrangianSpec::free(1);
        bad.potential = LagrangianSpec::pendulum().potential;
        assert!(bad.validate().is_err());
        assert!(LagrangianSpec::free(0).validate().is_err());
        let parsed: std::result::Result<Family, _> = serde_json::from_str::<Family>("\"magnetic\"");
        assert!(parsed.is_err());
    }

    #[test]
    fn default_velocity_cap() {
        let v = LagrangianSpec::pendulum().default_v_max();
        assert!((v - 2.0 * (1.0 + 2f64.sqrt())).abs() < 1e-12);
        assert_eq!(LagrangianSpec::free(1).default_v_max(), 2.0);
        assert_eq!(LagrangianSpec::sine_drift().default_v_max(), 4.0);
    }
}
