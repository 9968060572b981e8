//! Run configuration: TOML in, validated and canonicalized.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use kamlab_core::minplus::RunningMinParams;
use kamlab_core::{LagrangianSpec, LatticeSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Environment variable overriding `outputs.directory`.
pub const OUTPUT_DIR_ENV: &str = "KAMLAB_OUTPUT_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Seed for the verification samplers.
    #[serde(default)]
    pub seed: u64,
    pub model: LagrangianSpec,
    pub lattice: LatticeConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub limits: Limits,
    #[serde(default)]
    pub outputs: Outputs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    pub n: i64,
    pub t: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_max: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "default_tol")]
    pub tol_c: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon_aubry: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon_class: Option<f64>,
    #[serde(default = "default_tol")]
    pub residual_tol: f64,
}

fn default_tol() -> f64 {
    1e-9
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            tol_c: default_tol(),
            epsilon_aubry: None,
            epsilon_class: None,
            residual_tol: default_tol(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Limits {
    /// Longest path, in steps, used for potentials and barriers (default 64 T).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_max: Option<i64>,
    /// Trailing periods that must not improve a barrier.
    #[serde(default = "default_window")]
    pub window: i64,
    /// Value-iteration sweeps for the subsolution test (default N^d T).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<i64>,
    #[serde(default = "default_memory_cap")]
    pub memory_cap_bytes: u64,
}

fn default_window() -> i64 {
    4
}

fn default_memory_cap() -> u64 {
    1 << 30
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            m_max: None,
            window: default_window(),
            iterations: None,
            memory_cap_bytes: default_memory_cap(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    #[serde(default = "default_directory")]
    pub directory: PathBuf,
}

fn default_directory() -> PathBuf {
    PathBuf::from("kamlab-out")
}

impl Default for Outputs {
    fn default() -> Self {
        Self {
            directory: default_directory(),
        }
    }
}

/// A validated configuration with every default filled in.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: RunConfig,
    /// Whether `lattice.v_max` came from the model rather than the file.
    pub v_max_derived: bool,
    pub canonical: String,
    pub hash: String,
}

fn positive(name: &str, value: f64) -> Result<()> {
    if !(value.is_finite() && value > 0.0) {
        bail!("{name} must be a positive finite number, got {value}");
    }
    Ok(())
}

fn positive_int(name: &str, value: i64) -> Result<usize> {
    if value <= 0 {
        bail!("{name} must be a positive integer, got {value}");
    }
    Ok(value as usize)
}

impl RunConfig {
    pub fn lattice_spec(&self) -> Result<LatticeSpec> {
        let v_max = self
            .lattice
            .v_max
            .unwrap_or_else(|| self.model.default_v_max());
        Ok(LatticeSpec::new(
            self.lattice.n as usize,
            self.lattice.t as usize,
            v_max,
            self.model.dim,
        )?)
    }

    pub fn m_max(&self) -> usize {
        self.limits
            .m_max
            .map_or(64 * self.lattice.t as usize, |m| m as usize)
    }

    pub fn iterations(&self) -> usize {
        let nodes = (self.lattice.n as usize).pow(self.model.dim as u32) * self.lattice.t as usize;
        self.limits.iterations.map_or(nodes, |i| i as usize)
    }

    /// Window for barriers: roughly the second half of `[0, m_max]` and at least
    /// two periods long, with the trailing window shortened if it would not fit.
    pub fn running_params(&self) -> RunningMinParams {
        let t = self.lattice.t as usize;
        let m_max = self.m_max();
        let m_min = (m_max / 2).min(m_max + 1 - 2 * t) / t * t;
        let room = (m_max - m_min + 1) / t;
        let window = (self.limits.window as usize)
            .min(room.saturating_sub(1))
            .max(1);
        RunningMinParams {
            m_min,
            m_max,
            window,
            residual_tol: self.tolerances.residual_tol,
        }
    }

    fn validate(&self) -> Result<()> {
        positive_int("lattice.n", self.lattice.n)?;
        let t = positive_int("lattice.t", self.lattice.t)?;
        if let Some(v) = self.lattice.v_max {
            positive("lattice.v_max", v)?;
        }
        self.model.validate().context("model")?;
        positive("tolerances.tol_c", self.tolerances.tol_c)?;
        positive("tolerances.residual_tol", self.tolerances.residual_tol)?;
        if let Some(e) = self.tolerances.epsilon_aubry {
            positive("tolerances.epsilon_aubry", e)?;
        }
        if let Some(e) = self.tolerances.epsilon_class {
            positive("tolerances.epsilon_class", e)?;
        }
        if let Some(m) = self.limits.m_max {
            let m = positive_int("limits.m_max", m)?;
            if m < 2 * t {
                bail!("limits.m_max must be at least 2 T = {}, got {m}", 2 * t);
            }
        }
        positive_int("limits.window", self.limits.window)?;
        if let Some(i) = self.limits.iterations {
            positive_int("limits.iterations", i)?;
        }
        if self.limits.memory_cap_bytes == 0 {
            bail!("limits.memory_cap_bytes must be positive");
        }
        self.lattice_spec().context("lattice")?;
        Ok(())
    }
}

/// Parses, validates and canonicalizes a configuration text.
pub fn parse_config(text: &str) -> Result<LoadedConfig> {
    let mut config: RunConfig = toml::from_str(text).context("invalid configuration")?;
    config.validate()?;
    let v_max_derived = config.lattice.v_max.is_none();
    config.lattice.v_max = Some(config.lattice_spec()?.v_max);
    config.limits.m_max = Some(config.m_max() as i64);
    config.limits.iterations = Some(config.iterations() as i64);
    let canonical = toml::to_string(&config).context("serializing canonical configuration")?;
    let hash = hex::encode(Sha256::digest(canonical.as_bytes()));
    Ok(LoadedConfig {
        config,
        v_max_derived,
        canonical,
        hash,
    })
}

pub fn load_config(path: &Path) -> Result<LoadedConfig> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_config(&text).with_context(|| format!("in {}", path.display()))
}

impl LoadedConfig {
    /// Output directory, honouring the environment override.
    pub fn output_dir(&self) -> PathBuf {
        std::env::var_os(OUTPUT_DIR_ENV)
            .map_or_else(|| self.config.outputs.directory.clone(), PathBuf::from)
    }
}
