//! Binary checkpoints: model parameters plus the server-side round state
//! needed to resume a run trace-equivalently. Everything is little-endian,
//! the config hash pins the settings, and a trailing SHA-256 catches
//! corruption before any value is trusted.

use std::io::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::encoder::ModelParams;
use crate::numerics::{Coordinates, Vec64};
use crate::server::PopularityState;

const MAGIC: &[u8; 4] = b"FRTS";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("checksum mismatch: file is corrupt")]
    ChecksumMismatch,
    #[error("checkpoint was written under a different config")]
    ConfigMismatch,
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

/// Everything the round loop needs to pick up at round + 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub round: u64,
    pub config_hash: [u8; 32],
    pub params: ModelParams,
    pub popularity: PopularityState,
    /// Median benign update norm of the last completed round; attackers
    /// norm-match against it, so resuming must restore it.
    pub prev_benign_median: Option<f64>,
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    let m = ckpt.params.num_items();
    let d = ckpt.params.dim();
    assert_eq!(ckpt.popularity.num_items(), m, "state matches item universe");

    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&ckpt.config_hash);
    buf.extend_from_slice(&ckpt.round.to_le_bytes());
    buf.extend_from_slice(&(m as u32).to_le_bytes());
    buf.extend_from_slice(&(d as u32).to_le_bytes());
    for i in 0..ckpt.params.num_coords() {
        buf.extend_from_slice(&ckpt.params.coord(i).to_le_bytes());
    }
    let pop = &ckpt.popularity;
    for &v in &pop.ema_magnitude {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for &v in &pop.update_frequency {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for &v in &pop.drift_score {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&pop.rounds_completed.to_le_bytes());
    match &pop.hot_centroid {
        Some(c) => {
            assert_eq!(c.dim(), d);
            buf.push(1);
            for &v in c.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        None => buf.push(0),
    }
    match ckpt.prev_benign_median {
        Some(v) => {
            buf.push(1);
            buf.extend_from_slice(&v.to_le_bytes());
        }
        None => buf.push(0),
    }
    let digest: [u8; 32] = Sha256::digest(&buf).into();
    buf.extend_from_slice(&digest);

    let mut f = std::fs::File::create(path).map_err(|e| CheckpointError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    f.write_all(&buf).map_err(|e| CheckpointError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Malformed("truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Verifies the checksum before parsing anything. When `expected_hash` is
/// given (the normal resume path) a differing stored hash is refused;
/// passing None skips the check for standalone evaluation.
pub fn load_checkpoint(
    path: &Path,
    expected_hash: Option<&[u8; 32]>,
) -> Result<Checkpoint, CheckpointError> {
    let bytes = std::fs::read(path).map_err(|e| CheckpointError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    if bytes.len() < 32 + 4 {
        return Err(CheckpointError::Malformed("file too small".into()));
    }
    let (body, stored) = bytes.split_at(bytes.len() - 32);
    let digest: [u8; 32] = Sha256::digest(body).into();
    if digest != *stored {
        return Err(CheckpointError::ChecksumMismatch);
    }

    let mut cur = Cursor {
        bytes: body,
        pos: 0,
    };
    if cur.take(4)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let mut config_hash = [0u8; 32];
    config_hash.copy_from_slice(cur.take(32)?);
    if let Some(want) = expected_hash {
        if *want != config_hash {
            return Err(CheckpointError::ConfigMismatch);
        }
    }
    let round = cur.u64()?;
    let m = cur.u32()? as usize;
    let d = cur.u32()? as usize;
    if m == 0 || d == 0 {
        return Err(CheckpointError::Malformed("zero model dims".into()));
    }

    let mut params = ModelParams::init(m, d, 0);
    for i in 0..params.num_coords() {
        let v = cur.f64()?;
        params.set_coord(i, v);
    }

    let mut popularity = PopularityState::new(m);
    for v in popularity.ema_magnitude.iter_mut() {
        *v = cur.f64()?;
    }
    for v in popularity.update_frequency.iter_mut() {
        *v = cur.u64()?;
    }
    for v in popularity.drift_score.iter_mut() {
        *v = cur.f64()?;
    }
    popularity.rounds_completed = cur.u64()?;
    popularity.hot_centroid = match cur.u8()? {
        0 => None,
        1 => {
            let mut c = Vec64::zeros(d);
            for v in c.iter_mut() {
                *v = cur.f64()?;
            }
            Some(c)
        }
        b => return Err(CheckpointError::Malformed(format!("bad centroid flag {b}"))),
    };
    let prev_benign_median = match cur.u8()? {
        0 => None,
        1 => Some(cur.f64()?),
        b => return Err(CheckpointError::Malformed(format!("bad median flag {b}"))),
    };
    if cur.pos != body.len() {
        return Err(CheckpointError::Malformed("trailing bytes".into()));
    }

    Ok(Checkpoint {
        round,
        config_hash,
        params,
        popularity,
        prev_benign_median,
    })
}
