//! Resumable chain snapshots.
//!
//! Binary layout: 8-byte magic, `u32` format version, `u64` payload length,
//! bincode payload, SHA-256 of the payload. A JSON sidecar next to the file
//! records the configuration, seed and payload hash.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AdaptationState, MixtureState, PosteriorChain, Sampler, SamplerConfig, Trend};
use crate::dataset::LatticeData;
use crate::error::{MsgpError, Result};

pub const MAGIC: &[u8; 8] = b"MSGPCHK\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Payload {
    config: SamplerConfig,
    data: LatticeData,
    trend: Trend,
    y: Vec<f64>,
    state: MixtureState,
    adapt: AdaptationState,
    rng: ChaCha8Rng,
    iteration: usize,
    chain: PosteriorChain,
}

/// Human-readable companion to a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub format_version: u32,
    pub seed: u64,
    pub iteration: usize,
    pub iters: usize,
    pub content_hash: String,
    pub config: SamplerConfig,
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Path of the sidecar for a checkpoint path.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".json");
    path.with_file_name(name)
}

/// Write `bytes` to `path` via a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp_name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

impl Sampler {
    /// Serialize the complete sampler, including the RNG position.
    pub fn to_checkpoint_bytes(&self) -> Result<(Vec<u8>, Sidecar)> {
        let payload = Payload {
            config: self.config.clone(),
            data: self.data.clone(),
            trend: self.trend.clone(),
            y: self.y.clone(),
            state: self.state.clone(),
            adapt: self.adapt.clone(),
            rng: self.rng.clone(),
            iteration: self.iteration,
            chain: self.chain.clone(),
        };
        let body = bincode::serialize(&payload).map_err(|e| MsgpError::Checkpoint(e.to_string()))?;
        let digest = Sha256::digest(&body);
        let mut out = Vec::with_capacity(body.len() + 52);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(body.len() as u64).to_le_bytes());
        out.extend_from_slice(&body);
        out.extend_from_slice(&digest);
        let sidecar = Sidecar {
            format_version: FORMAT_VERSION,
            seed: self.config.seed,
            iteration: self.iteration,
            iters: self.config.iters,
            content_hash: hex(&digest),
            config: self.config.clone(),
        };
        Ok((out, sidecar))
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let err = |m: &str| MsgpError::Checkpoint(m.to_string());
        if bytes.len() < 20 + 32 || &bytes[..8] != MAGIC {
            return Err(err("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(MsgpError::Checkpoint(format!(
                "unsupported checkpoint format version {version}"
            )));
        }
        let len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        if bytes.len() != 20 + len + 32 {
            return Err(err("truncated checkpoint"));
        }
        let body = &bytes[20..20 + len];
        if Sha256::digest(body).as_slice() != &bytes[20 + len..] {
            return Err(err("checkpoint hash mismatch"));
        }
        let p: Payload = bincode::deserialize(body).map_err(|e| MsgpError::Checkpoint(e.to_string()))?;
        Sampler::from_parts(p.config, p.data, p.trend, p.y, p.state, p.adapt, p.rng, p.iteration, p.chain)
    }

    /// Write the checkpoint and its sidecar atomically.
    pub fn save_checkpoint(&self, path: &Path) -> Result<Sidecar> {
        let (bytes, sidecar) = self.to_checkpoint_bytes()?;
        let json = serde_json::to_vec_pretty(&sidecar).map_err(|e| MsgpError::Checkpoint(e.to_string()))?;
        write_atomic(path, &bytes)?;
        write_atomic(&sidecar_path(path), &json)?;
        Ok(sidecar)
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        Self::from_checkpoint_bytes(&fs::read(path)?)
    }
}
