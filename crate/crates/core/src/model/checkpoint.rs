//! Named-tensor checkpoint files.
//!
//! Layout: magic `CLOTCKPT`, version `u32`, then until end of file one record
//! per tensor: name length `u16`, UTF-8 name, rows `u32`, cols `u32` and
//! `rows·cols` little-endian `f64` values in row-major order.
//!
//! Scalars needed to rebuild a model (and any run settings the caller wants
//! to keep) are stored as 1×1 tensors under `cfg.` names.

use std::fs;
use std::path::Path;

use super::params::{ModelConfig, ModelParams};
use crate::error::{ClotError, Result};
use crate::numeric::{DenseMatrix, Rng};

pub const MAGIC: &[u8; 8] = b"CLOTCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    entries: Vec<(String, DenseMatrix)>,
}

fn format_err<T>(offset: usize, message: impl Into<String>) -> Result<T> {
    Err(ClotError::Format { offset: offset as u64, message: message.into() })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let remaining = self.bytes.len() - self.pos;
        if remaining < n {
            return format_err(self.pos, format!("truncated {what}: expected {n} bytes, found {remaining}"));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[(String, DenseMatrix)] {
        &self.entries
    }

    /// Adds or replaces a tensor.
    pub fn insert(&mut self, name: impl Into<String>, value: DenseMatrix) {
        let name = name.into();
        match self.entries.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = value,
            None => self.entries.push((name, value)),
        }
    }

    pub fn insert_scalar(&mut self, name: impl Into<String>, value: f64) {
        self.insert(name, DenseMatrix::filled(1, 1, value));
    }

    pub fn get(&self, name: &str) -> Option<&DenseMatrix> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn require(&self, name: &str) -> Result<&DenseMatrix> {
        self.get(name).ok_or_else(|| ClotError::State(format!("checkpoint has no tensor named {name}")))
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        let m = self.require(name)?;
        if m.shape() != (1, 1) {
            return Err(ClotError::State(format!("checkpoint entry {name} is {:?}, expected a scalar", m.shape())));
        }
        Ok(m[(0, 0)])
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for (name, m) in &self.entries {
            let len = u16::try_from(name.len())
                .map_err(|_| ClotError::Parameter(format!("tensor name too long: {} bytes", name.len())))?;
            let dim = |v: usize| {
                u32::try_from(v).map_err(|_| ClotError::Parameter(format!("tensor {name} is too large")))
            };
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&dim(m.rows())?.to_le_bytes());
            out.extend_from_slice(&dim(m.cols())?.to_le_bytes());
            for v in m.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8, "magic")? != MAGIC {
            return format_err(0, "not a checkpoint file (bad magic)");
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return format_err(8, format!("unsupported checkpoint version {version}"));
        }
        let mut ck = Checkpoint::new();
        while r.pos < bytes.len() {
            let start = r.pos;
            let len = r.u16("name length")? as usize;
            let name = std::str::from_utf8(r.take(len, "tensor name")?)
                .map_err(|_| ClotError::Format { offset: start as u64 + 2, message: "tensor name is not UTF-8".into() })?
                .to_string();
            let rows = r.u32("row count")? as usize;
            let cols = r.u32("column count")? as usize;
            let count = rows
                .checked_mul(cols)
                .and_then(|c| c.checked_mul(8))
                .ok_or_else(|| ClotError::Format { offset: start as u64, message: format!("tensor {name} too large") })?;
            let payload = r.take(count, &format!("data of tensor {name}"))?;
            let data = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            ck.entries.push((name, DenseMatrix::from_vec(rows, cols, data)?));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Stores every parameter tensor under its own name and the
    /// architecture under `cfg.model.*`.
    pub fn put_model(&mut self, params: &ModelParams) {
        self.put_model_prefixed("", params)
    }

    /// Like [`Checkpoint::put_model`] with every name prefixed, so several
    /// models can share one file.
    pub fn put_model_prefixed(&mut self, prefix: &str, params: &ModelParams) {
        for (name, t) in params.names().iter().zip(params.tensors()) {
            self.insert(format!("{prefix}{name}"), t.clone());
        }
        let c = &params.config;
        let fields = [
            ("input_dim", c.input_dim as f64),
            ("hidden_dim", c.hidden_dim as f64),
            ("embed_dim", c.embed_dim as f64),
            ("dec_dim", c.dec_dim as f64),
            ("heads", c.heads as f64),
            ("layers", c.layers as f64),
            ("num_actions", c.num_actions as f64),
            ("num_queries", c.num_queries as f64),
            ("dropout", c.dropout),
            ("tau", c.tau),
            ("detach_s_in_refine", if c.detach_s_in_refine { 1.0 } else { 0.0 }),
        ];
        for (k, v) in fields {
            self.insert_scalar(format!("{prefix}cfg.model.{k}"), v);
        }
    }

    pub fn model_config(&self, prefix: &str) -> Result<ModelConfig> {
        let count = |k: &str| -> Result<usize> {
            let v = self.scalar(&format!("{prefix}cfg.model.{k}"))?;
            if v < 0.0 || v.fract() != 0.0 {
                return Err(ClotError::State(format!("cfg.model.{k} = {v} is not a count")));
            }
            Ok(v as usize)
        };
        Ok(ModelConfig {
            input_dim: count("input_dim")?,
            hidden_dim: count("hidden_dim")?,
            embed_dim: count("embed_dim")?,
            dec_dim: count("dec_dim")?,
            heads: count("heads")?,
            layers: count("layers")?,
            num_actions: count("num_actions")?,
            num_queries: count("num_queries")?,
            dropout: self.scalar(&format!("{prefix}cfg.model.dropout"))?,
            tau: self.scalar(&format!("{prefix}cfg.model.tau"))?,
            detach_s_in_refine: self.scalar(&format!("{prefix}cfg.model.detach_s_in_refine"))? != 0.0,
        })
    }

    /// Rebuilds the model; every tensor must be present with the right shape.
    pub fn model(&self) -> Result<ModelParams> {
        self.model_prefixed("")
    }

    pub fn model_prefixed(&self, prefix: &str) -> Result<ModelParams> {
        let config = self.model_config(prefix)?;
        let mut params = ModelParams::new(config, &mut Rng::new(0))?;
        for id in 0..params.len() {
            let name = params.names()[id].clone();
            let t = self.require(&format!("{prefix}{name}"))?.clone();
            params.set(id, t).map_err(|e| ClotError::State(format!("checkpoint tensor mismatch: {e}")))?;
        }
        Ok(params)
    }
}
