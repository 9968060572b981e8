//! On-disk cache of `k = 0` step kernels.
//!
//! Layout, all little-endian: magic, format version, config hash (32 bytes),
//! N, T, d, slot count (u32 each), k (f64), edge count (u64), the edge
//! weights in layer-major order, the chosen lift per edge (u16), and a
//! SHA-256 digest of everything before it.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use kamlab_core::{LagrangianSpec, Lattice, StepKernel};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

const MAGIC: &[u8; 8] = b"KAMLABK\0";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheStatus {
    Hit,
    Miss,
    /// A cache file existed but failed validation.
    Rebuilt,
}

pub fn cache_path(dir: &Path, config_hash: &str, k: f64) -> PathBuf {
    dir.join(format!(
        "kernel-{}-{:016x}.bin",
        &config_hash[..16],
        k.to_bits()
    ))
}

fn encode(kernel: &StepKernel, config_hash: &str) -> Result<Vec<u8>> {
    let lat = kernel.lattice();
    let hash = hex::decode(config_hash).context("config hash is not hex")?;
    let edges = kernel.base_weights().len();
    let mut out = Vec::with_capacity(80 + edges * 10);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&hash);
    for v in [lat.n(), lat.layers(), lat.dim(), lat.slot_count()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&kernel.k().to_le_bytes());
    out.extend_from_slice(&(edges as u64).to_le_bytes());
    for w in kernel.base_weights() {
        out.extend_from_slice(&w.to_le_bytes());
    }
    for l in kernel.lift_indices() {
        out.extend_from_slice(&l.to_le_bytes());
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

struct Reader<'a>(&'a [u8]);

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.0.len() < n {
            bail!("truncated file");
        }
        let (head, rest) = self.0.split_at(n);
        self.0 = rest;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into()?))
    }
}

fn decode(bytes: &[u8], lattice: &Lattice, config_hash: &str, k: f64) -> Result<StepKernel> {
    if bytes.len() < 32 {
        bail!("truncated file");
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        bail!("digest mismatch");
    }
    let mut r = Reader(body);
    if r.take(8)? != MAGIC {
        bail!("bad magic");
    }
    if r.u32()? != VERSION {
        bail!("unsupported format version");
    }
    if r.take(32)? != hex::decode(config_hash)?.as_slice() {
        bail!("config hash mismatch");
    }
    let dims = [r.u32()?, r.u32()?, r.u32()?, r.u32()?];
    let expected = [
        lattice.n(),
        lattice.layers(),
        lattice.dim(),
        lattice.slot_count(),
    ]
    .map(|v| v as u32);
    if dims != expected {
        bail!("lattice mismatch");
    }
    if r.f64()?.to_bits() != k.to_bits() {
        bail!("level mismatch");
    }
    let edges = r.u64()? as usize;
    if edges != lattice.edge_count() {
        bail!("edge count mismatch");
    }
    let weights = r
        .take(edges * 8)?
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let lifts = r
        .take(edges * 2)?
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if !r.0.is_empty() {
        bail!("trailing bytes");
    }
    Ok(StepKernel::from_stored(lattice.clone(), k, weights, lifts)?)
}

/// Loads the kernel for `(config_hash, 0)` from `dir`, building and storing it
/// on a miss or when the stored file fails validation.
pub fn load_or_build(
    dir: &Path,
    config_hash: &str,
    spec: &LagrangianSpec,
    lattice: &Lattice,
    memory_cap: u64,
) -> Result<(StepKernel, CacheStatus)> {
    let path = cache_path(dir, config_hash, 0.0);
    let status = match std::fs::read(&path) {
        Ok(bytes) => match decode(&bytes, lattice, config_hash, 0.0) {
            Ok(kernel) => return Ok((kernel, CacheStatus::Hit)),
            Err(e) => {
                log::warn!(
                    "kernel cache {} is unusable ({e}); rebuilding",
                    path.display()
                );
                CacheStatus::Rebuilt
            }
        },
        Err(_) => CacheStatus::Miss,
    };
    let kernel =
        StepKernel::build(spec, lattice, 0.0, Some(memory_cap)).context("building step kernel")?;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    std::fs::write(&path, encode(&kernel, config_hash)?)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok((kernel, status))
}
