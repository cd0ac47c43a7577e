//! Binary checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! "DRSAE001"                                   8-byte magic
//! payload:
//!   u32 T, u32 n, u32 m, u32 l
//!   f64 lambda, f64 alpha, f64 d_bound, f64 c_bound
//!   u64 seed
//!   5 × { u32 rows, u32 cols, rows·cols × f64 }  E, S, D, C, b (b as n×1)
//!   u8 stage (0 init, 1 pretrain, 2 finetune)
//!   u32 epoch
//! u32 CRC-32 of the payload
//! ```

use std::fs;
use std::path::Path;

use drsae_core::{Hyper, Matrix, ModelParams, Vector};
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"DRSAE001";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("not a checkpoint: bad magic")]
    BadMagic,
    #[error("checkpoint truncated while reading {field}")]
    Truncated { field: &'static str },
    #[error("checksum mismatch: stored 0x{stored:08x}, computed 0x{computed:08x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("tensor {tensor}: stored shape {found:?}, expected {expected:?}")]
    Shape { tensor: &'static str, expected: (usize, usize), found: (usize, usize) },
    #[error("unknown stage tag {0}")]
    Stage(u8),
    #[error("{0} unexpected bytes after the last field")]
    Trailing(usize),
    #[error("tensor {tensor} holds a non-finite value at index {index}")]
    NonFinite { tensor: &'static str, index: usize },
    #[error("checkpoint {key} = {checkpoint} does not match config {key} = {config}")]
    Mismatch { key: &'static str, checkpoint: String, config: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Init,
    Pretrain,
    Finetune,
}

impl Stage {
    fn tag(self) -> u8 {
        match self {
            Stage::Init => 0,
            Stage::Pretrain => 1,
            Stage::Finetune => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Init => "init",
            Stage::Pretrain => "pretrain",
            Stage::Finetune => "finetune",
        }
    }
}

/// Model-defining constants stored alongside the tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Header {
    pub iterations: usize,
    pub hidden: usize,
    pub input_dim: usize,
    pub classes: usize,
    pub lambda: f64,
    /// Step size the encoder was initialized with.
    pub alpha: f64,
    pub d_bound: f64,
    pub c_bound: f64,
    pub seed: u64,
}

impl Header {
    pub fn new(hyper: &Hyper, alpha: f64) -> Self {
        Header {
            iterations: hyper.iterations,
            hidden: hyper.hidden,
            input_dim: hyper.input_dim,
            classes: hyper.classes,
            lambda: hyper.lambda,
            alpha,
            d_bound: hyper.d_bound,
            c_bound: hyper.c_bound,
            seed: hyper.seed,
        }
    }

    /// Structural keys must match exactly; `lambda` and the bounds must match
    /// because they define the objective and the feasible set.
    pub fn check_against(&self, hyper: &Hyper) -> Result<(), CheckpointError> {
        let ints = [
            ("iterations", self.iterations, hyper.iterations),
            ("hidden", self.hidden, hyper.hidden),
            ("input_dim", self.input_dim, hyper.input_dim),
            ("classes", self.classes, hyper.classes),
        ];
        for (key, c, h) in ints {
            if c != h {
                return Err(CheckpointError::Mismatch { key, checkpoint: c.to_string(), config: h.to_string() });
            }
        }
        let reals = [("lambda", self.lambda, hyper.lambda), ("d_bound", self.d_bound, hyper.d_bound), ("c_bound", self.c_bound, hyper.c_bound)];
        for (key, c, h) in reals {
            if c.to_bits() != h.to_bits() {
                return Err(CheckpointError::Mismatch { key, checkpoint: c.to_string(), config: h.to_string() });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: Header,
    pub params: ModelParams,
    pub stage: Stage,
    pub epoch: u32,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let h = &self.header;
        let mut p = Vec::new();
        for v in [h.iterations, h.hidden, h.input_dim, h.classes] {
            p.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for v in [h.lambda, h.alpha, h.d_bound, h.c_bound] {
            p.extend_from_slice(&v.to_le_bytes());
        }
        p.extend_from_slice(&h.seed.to_le_bytes());
        let b = &self.params.b;
        let tensors: [(usize, usize, &[f64]); 5] = [
            (self.params.e.rows(), self.params.e.cols(), self.params.e.as_slice()),
            (self.params.s.rows(), self.params.s.cols(), self.params.s.as_slice()),
            (self.params.d.rows(), self.params.d.cols(), self.params.d.as_slice()),
            (self.params.c.rows(), self.params.c.cols(), self.params.c.as_slice()),
            (b.len(), 1, b),
        ];
        for (r, c, data) in tensors {
            p.extend_from_slice(&(r as u32).to_le_bytes());
            p.extend_from_slice(&(c as u32).to_le_bytes());
            for v in data {
                p.extend_from_slice(&v.to_le_bytes());
            }
        }
        p.push(self.stage.tag());
        p.extend_from_slice(&self.epoch.to_le_bytes());

        let mut out = Vec::with_capacity(MAGIC.len() + p.len() + 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&p);
        out.extend_from_slice(&crc32fast::hash(&p).to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let rest = &bytes[MAGIC.len()..];
        if rest.len() < 4 {
            return Err(CheckpointError::Truncated { field: "checksum" });
        }
        let (payload, tail) = rest.split_at(rest.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        let computed = crc32fast::hash(payload);
        if stored != computed {
            return Err(CheckpointError::Checksum { stored, computed });
        }
        let mut r = Reader { buf: payload, pos: 0 };
        let ck = parse_payload(&mut r)?;
        if r.pos != payload.len() {
            return Err(CheckpointError::Trailing(payload.len() - r.pos));
        }
        if let Some((tensor, index)) = ck.params.first_non_finite() {
            return Err(CheckpointError::NonFinite { tensor, index });
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, self.to_bytes()).map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = fs::read(path).map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self, field: &'static str) -> Result<[u8; N], CheckpointError> {
        let s = self.buf.get(self.pos..self.pos + N).ok_or(CheckpointError::Truncated { field })?;
        self.pos += N;
        Ok(s.try_into().expect("N bytes"))
    }

    fn u32(&mut self, field: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(field)?))
    }

    fn f64(&mut self, field: &'static str) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(field)?))
    }

    fn tensor(&mut self, name: &'static str, expected: (usize, usize)) -> Result<Vec<f64>, CheckpointError> {
        let found = (self.u32(name)? as usize, self.u32(name)? as usize);
        if found != expected {
            return Err(CheckpointError::Shape { tensor: name, expected, found });
        }
        (0..found.0 * found.1).map(|_| self.f64(name)).collect()
    }
}

fn parse_payload(r: &mut Reader<'_>) -> Result<Checkpoint, CheckpointError> {
    let t = r.u32("T")? as usize;
    let n = r.u32("n")? as usize;
    let m = r.u32("m")? as usize;
    let l = r.u32("l")? as usize;
    let header = Header {
        iterations: t,
        hidden: n,
        input_dim: m,
        classes: l,
        lambda: r.f64("lambda")?,
        alpha: r.f64("alpha")?,
        d_bound: r.f64("d_bound")?,
        c_bound: r.f64("c_bound")?,
        seed: u64::from_le_bytes(r.take("seed")?),
    };
    let mat = |r: &mut Reader<'_>, name, rows, cols| -> Result<Matrix, CheckpointError> {
        Ok(Matrix::from_vec(rows, cols, r.tensor(name, (rows, cols))?).expect("shape checked"))
    };
    let e = mat(r, "E", n, m)?;
    let s = mat(r, "S", n, n)?;
    let d = mat(r, "D", m, n)?;
    let c = mat(r, "C", l, n)?;
    let b = Vector::from(r.tensor("b", (n, 1))?);
    let stage = match r.take::<1>("stage")?[0] {
        0 => Stage::Init,
        1 => Stage::Pretrain,
        2 => Stage::Finetune,
        other => return Err(CheckpointError::Stage(other)),
    };
    let epoch = r.u32("epoch")?;
    Ok(Checkpoint { header, params: ModelParams { e, s, d, c, b }, stage, epoch })
}
