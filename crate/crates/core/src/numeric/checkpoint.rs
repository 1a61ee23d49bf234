//! Versioned binary checkpoints.
//!
//! Layout (little endian): magic `HACOCKPT`, `u32` version, config hash
//! string, then three named sections (parameter sets, optimiser states,
//! scalars). Strings are `u32` length + UTF-8 bytes. Floats are stored as
//! raw IEEE-754 bits, so a save/load round trip is bit exact.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{Activation, Layer, NumericError, OptState, ParamSet};

const MAGIC: &[u8; 8] = b"HACOCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub config_hash: String,
    pub params: BTreeMap<String, ParamSet>,
    pub opt_states: BTreeMap<String, OptState>,
    pub scalars: BTreeMap<String, f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("truncated checkpoint at byte {0}")]
    Truncated(usize),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("missing entry `{0}`")]
    Missing(String),
    #[error("config hash mismatch: checkpoint {found}, expected {expected}")]
    ConfigMismatch { expected: String, found: String },
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

impl Checkpoint {
    pub fn param(&self, name: &str) -> Result<&ParamSet, CheckpointError> {
        self.params
            .get(name)
            .ok_or_else(|| CheckpointError::Missing(name.into()))
    }

    pub fn opt(&self, name: &str) -> Result<&OptState, CheckpointError> {
        self.opt_states
            .get(name)
            .ok_or_else(|| CheckpointError::Missing(name.into()))
    }

    pub fn scalar(&self, name: &str) -> Result<f64, CheckpointError> {
        self.scalars
            .get(name)
            .copied()
            .ok_or_else(|| CheckpointError::Missing(name.into()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.buf.extend_from_slice(MAGIC);
        w.u32(CHECKPOINT_VERSION);
        w.str(&self.config_hash);
        w.u32(self.params.len() as u32);
        for (name, p) in &self.params {
            w.str(name);
            w.params(p);
        }
        w.u32(self.opt_states.len() as u32);
        for (name, o) in &self.opt_states {
            w.str(name);
            w.u64(o.step);
            w.params(&o.m);
            w.params(&o.v);
        }
        w.u32(self.scalars.len() as u32);
        for (name, v) in &self.scalars {
            w.str(name);
            w.f64(*v);
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(version));
        }
        let config_hash = r.str()?;
        let mut ck = Checkpoint {
            config_hash,
            ..Default::default()
        };
        for _ in 0..r.u32()? {
            let name = r.str()?;
            let p = r.params()?;
            ck.params.insert(name, p);
        }
        for _ in 0..r.u32()? {
            let name = r.str()?;
            let step = r.u64()?;
            let m = r.params()?;
            let v = r.params()?;
            ck.opt_states.insert(name, OptState { m, v, step });
        }
        for _ in 0..r.u32()? {
            let name = r.str()?;
            let v = r.f64()?;
            ck.scalars.insert(name, v);
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::Corrupt(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_bits().to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }
    fn params(&mut self, p: &ParamSet) {
        self.buf.push(p.activation.code());
        self.u32(p.layers.len() as u32);
        for l in &p.layers {
            let (rows, cols) = l.weight.dim();
            self.u32(rows as u32);
            self.u32(cols as u32);
            l.weight.iter().for_each(|&v| self.f64(v));
            l.bias.iter().for_each(|&v| self.f64(v));
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated(self.pos))?;
        let s = self
            .buf
            .get(self.pos..end)
            .ok_or(CheckpointError::Truncated(self.pos))?;
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_bits(self.u64()?))
    }
    fn str(&mut self) -> Result<String, CheckpointError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| CheckpointError::Corrupt(e.to_string()))
    }
    fn params(&mut self) -> Result<ParamSet, CheckpointError> {
        let code = self.take(1)?[0];
        let activation =
            Activation::from_code(code).ok_or_else(|| CheckpointError::Corrupt(format!("activation code {code}")))?;
        let n = self.u32()? as usize;
        let mut layers = Vec::with_capacity(n.min(64));
        for _ in 0..n {
            let rows = self.u32()? as usize;
            let cols = self.u32()? as usize;
            let w = (0..rows * cols).map(|_| self.f64()).collect::<Result<Vec<_>, _>>()?;
            let b = (0..cols).map(|_| self.f64()).collect::<Result<Vec<_>, _>>()?;
            layers.push(Layer {
                weight: Array2::from_shape_vec((rows, cols), w).map_err(|e| CheckpointError::Corrupt(e.to_string()))?,
                bias: Array1::from(b),
            });
        }
        let p = ParamSet { layers, activation };
        p.validate()?;
        Ok(p)
    }
}
