//! Versioned binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! bytes 0..8   magic "PDPOCKPT"
//! u32          format version (currently 1)
//! u8           schedule kind (0 = cosine, 1 = linear-logSNR)
//! u32 × 5      dim, time_embed, cond_embed, n_conditions, hidden-layer count
//! u32 × H      hidden-layer widths, in order
//! u64          parameter count
//! u64 × N      parameter f64 bits, in flat layout order (see `denoiser`)
//! ```
//!
//! Parameters are persisted as raw bit patterns, so a save/load round-trip is
//! bit-exact. Loaders reject unknown magic, unknown versions, architecture /
//! parameter-count mismatches, and trailing garbage.

use std::path::Path;

use crate::denoiser::{Denoiser, DenoiserConfig};
use crate::error::{Error, Result};
use crate::io_util::write_atomic;
use crate::schedule::ScheduleKind;

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"PDPOCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A trainable model snapshot: the denoiser plus the schedule it was trained
/// under.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub schedule: ScheduleKind,
    pub model: Denoiser,
}

impl Checkpoint {
    pub fn new(schedule: ScheduleKind, model: Denoiser) -> Self {
        Checkpoint { schedule, model }
    }

    /// Serializes to the documented binary layout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let cfg = self.model.config();
        let mut out = Vec::with_capacity(64 + 8 * self.model.n_params());
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.push(match self.schedule {
            ScheduleKind::Cosine => 0,
            ScheduleKind::LinearLogSnr => 1,
        });
        for v in [
            cfg.dim,
            cfg.time_embed,
            cfg.cond_embed,
            cfg.n_conditions,
            cfg.hidden.len(),
        ] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for &w in &cfg.hidden {
            out.extend_from_slice(&(w as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.model.n_params() as u64).to_le_bytes());
        for p in self.model.params() {
            out.extend_from_slice(&p.to_bits().to_le_bytes());
        }
        out
    }

    /// Parses the documented binary layout.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(8)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::parse("bad magic: not a checkpoint file"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                supported: CHECKPOINT_VERSION,
            });
        }
        let schedule = match r.u8()? {
            0 => ScheduleKind::Cosine,
            1 => ScheduleKind::LinearLogSnr,
            k => return Err(Error::parse(format!("unknown schedule kind tag {k}"))),
        };
        let dim = r.u32()? as usize;
        let time_embed = r.u32()? as usize;
        let cond_embed = r.u32()? as usize;
        let n_conditions = r.u32()? as usize;
        let n_hidden = r.u32()? as usize;
        if n_hidden > 1024 {
            return Err(Error::parse(format!("implausible hidden-layer count {n_hidden}")));
        }
        let mut hidden = Vec::with_capacity(n_hidden);
        for _ in 0..n_hidden {
            hidden.push(r.u32()? as usize);
        }
        let cfg = DenoiserConfig {
            dim,
            hidden,
            time_embed,
            cond_embed,
            n_conditions,
        };
        cfg.validate()
            .map_err(|e| Error::parse(format!("invalid architecture in checkpoint: {e}")))?;
        let n_params = r.u64()? as usize;
        if n_params != cfg.n_params() {
            return Err(Error::parse(format!(
                "checkpoint declares {n_params} parameters, architecture needs {}",
                cfg.n_params()
            )));
        }
        let mut params = Vec::with_capacity(n_params);
        for _ in 0..n_params {
            params.push(f64::from_bits(r.u64()?));
        }
        if r.pos != bytes.len() {
            return Err(Error::parse(format!(
                "{} trailing bytes after checkpoint payload",
                bytes.len() - r.pos
            )));
        }
        Ok(Checkpoint {
            schedule,
            model: Denoiser::from_params(cfg, params)?,
        })
    }

    /// Atomic save to `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::parse(format!(
                "truncated checkpoint: needed {n} bytes at offset {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_checkpoint() -> Checkpoint {
        let cfg = DenoiserConfig {
            dim: 2,
            hidden: vec![3, 2],
            time_embed: 4,
            cond_embed: 2,
            n_conditions: 3,
        };
        Checkpoint::new(
            ScheduleKind::LinearLogSnr,
            Denoiser::random(cfg, 77).unwrap(),
        )
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ckpt = sample_checkpoint();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.schedule, ckpt.schedule);
        assert_eq!(loaded.model.config(), ckpt.model.config());
        let same_bits = ckpt
            .model
            .params()
            .iter()
            .zip(loaded.model.params())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        assert!(same_bits);
        assert_eq!(loaded.model.checksum(), ckpt.model.checksum());
        // Serialization itself is deterministic.
        assert_eq!(ckpt.to_bytes(), loaded.to_bytes());
    }

    #[test]
    fn bad_magic_is_rejected() {
        let mut bytes = sample_checkpoint().to_bytes();
        bytes[0] ^= 0xFF;
        let err = Checkpoint::from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("magic"), "{err}");
    }

    #[test]
    fn unknown_version_is_rejected() {
        let mut bytes = sample_checkpoint().to_bytes();
        bytes[8..12].copy_from_slice(&99u32.to_le_bytes());
        match Checkpoint::from_bytes(&bytes).unwrap_err() {
            Error::UnsupportedVersion { found: 99, supported } => {
                assert_eq!(supported, CHECKPOINT_VERSION);
            }
            other => panic!("expected version error, got {other}"),
        }
    }

    #[test]
    fn truncation_and_trailing_garbage_are_rejected() {
        let bytes = sample_checkpoint().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(Checkpoint::from_bytes(&bytes[..20]).is_err());
        let mut padded = bytes;
        padded.extend_from_slice(&[0, 1, 2]);
        assert!(Checkpoint::from_bytes(&padded).is_err());
    }

    #[test]
    fn parameter_count_mismatch_is_rejected() {
        let ckpt = sample_checkpoint();
        let mut bytes = ckpt.to_bytes();
        // The declared parameter count sits after magic+version+kind+5 u32s+2 u32s.
        let count_off = 8 + 4 + 1 + 5 * 4 + 2 * 4;
        let wrong = (ckpt.model.n_params() as u64 + 1).to_le_bytes();
        bytes[count_off..count_off + 8].copy_from_slice(&wrong);
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }

    #[test]
    fn load_reports_missing_files() {
        let dir = tempfile::tempdir().unwrap();
        assert!(Checkpoint::load(&dir.path().join("absent.ckpt")).is_err());
    }
}
