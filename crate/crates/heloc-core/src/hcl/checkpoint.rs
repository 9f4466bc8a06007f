//! Versioned binary checkpoint: magic `HELC`, a config block, the training
//! RNG state, and little-endian shaped f64 arrays keyed by parameter path.
//! Encoding is canonical, so save -> load -> save is byte-identical.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use super::{HclParams, TrainConfig};
use crate::numerics::Tensor2;

const MAGIC: &[u8; 4] = b"HELC";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum CheckpointError {
    BadMagic,
    Truncated,
    VersionMismatch { found: u32 },
    Config(String),
    Param(String),
}

impl fmt::Display for CheckpointError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CheckpointError::BadMagic => write!(f, "not a checkpoint file (bad magic)"),
            CheckpointError::Truncated => write!(f, "checkpoint truncated"),
            CheckpointError::VersionMismatch { found } => {
                write!(f, "unsupported checkpoint version {found} (expected {VERSION})")
            }
            CheckpointError::Config(msg) => write!(f, "bad checkpoint config: {msg}"),
            CheckpointError::Param(msg) => write!(f, "bad checkpoint parameter: {msg}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for CheckpointError {}

/// A trained model: its config, every parameter value, and the state of the
/// training RNG when it was written.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub params: HclParams,
    pub rng_seed: [u8; 32],
    pub rng_word_pos: u128,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let config = self.config.to_kv_text();
        out.extend_from_slice(&(config.len() as u32).to_le_bytes());
        out.extend_from_slice(config.as_bytes());
        out.extend_from_slice(&self.rng_seed);
        out.extend_from_slice(&self.rng_word_pos.to_le_bytes());
        let named = self.params.named_params();
        out.extend_from_slice(&(named.len() as u32).to_le_bytes());
        for (name, param) in named {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(param.value.rows() as u32).to_le_bytes());
            out.extend_from_slice(&(param.value.cols() as u32).to_le_bytes());
            for &v in param.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::VersionMismatch { found: version });
        }
        let config_len = r.u32()? as usize;
        let config_text = core::str::from_utf8(r.take(config_len)?)
            .map_err(|e| CheckpointError::Config(format!("{e}")))?;
        let mut config = TrainConfig::default();
        config
            .apply_kv_text(config_text)
            .map_err(CheckpointError::Config)?;

        let mut rng_seed = [0u8; 32];
        rng_seed.copy_from_slice(r.take(32)?);
        let mut wp = [0u8; 16];
        wp.copy_from_slice(r.take(16)?);
        let rng_word_pos = u128::from_le_bytes(wp);

        let mut params = HclParams::zeros(&config);
        let count = r.u32()? as usize;
        let mut named = params.named_params_mut();
        if count != named.len() {
            return Err(CheckpointError::Param(format!(
                "{count} parameters in file, config implies {}",
                named.len()
            )));
        }
        let mut filled = alloc::vec![false; named.len()];
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = String::from(
                core::str::from_utf8(r.take(name_len)?)
                    .map_err(|e| CheckpointError::Param(format!("{e}")))?,
            );
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                let mut b = [0u8; 8];
                b.copy_from_slice(r.take(8)?);
                data.push(f64::from_le_bytes(b));
            }
            let idx = named
                .iter()
                .position(|(n, _)| *n == name)
                .ok_or_else(|| CheckpointError::Param(format!("unknown parameter `{name}`")))?;
            if filled[idx] {
                return Err(CheckpointError::Param(format!("duplicate parameter `{name}`")));
            }
            let expected = named[idx].1.value.shape();
            if (rows, cols) != expected {
                return Err(CheckpointError::Param(format!(
                    "`{name}` is {rows}x{cols}, config implies {}x{}",
                    expected.0, expected.1
                )));
            }
            named[idx].1.value =
                Tensor2::from_vec(rows, cols, data).expect("length checked above");
            filled[idx] = true;
        }
        if let Some(i) = filled.iter().position(|&f| !f) {
            return Err(CheckpointError::Param(format!(
                "missing parameter `{}`",
                named[i].0
            )));
        }
        drop(named);
        if r.pos != bytes.len() {
            return Err(CheckpointError::Param(String::from(
                "trailing bytes after parameters",
            )));
        }
        Ok(Self {
            config,
            params,
            rng_seed,
            rng_word_pos,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Truncated);
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        let mut b = [0u8; 2];
        b.copy_from_slice(self.take(2)?);
        Ok(u16::from_le_bytes(b))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        let mut b = [0u8; 4];
        b.copy_from_slice(self.take(4)?);
        Ok(u32::from_le_bytes(b))
    }
}
