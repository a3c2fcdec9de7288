//! Little-endian binary checkpoints.
//!
//! ```text
//! "HSPL"  u32 version
//! u64 iter  u8 stage
//! u32 len   config text (UTF-8, key = value lines)
//! u32 count, then per tensor:
//!     u32 len  name   u32 rank   u64 extent * rank   f32 payload
//! u32 count  u64 Adam step counters
//! ```
//!
//! Tensor names are `param/<name>`, `adam.m/<name>` and `adam.v/<name>`.

use std::path::Path;

use hsplat_core::numerics::{ParamSet, Tensor};
use hsplat_core::trainer::{AdamState, Model, Stage, Trainer};

use crate::config::RunConfig;
use crate::{read_file, write_file, Error};

pub const MAGIC: &[u8; 4] = b"HSPL";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    /// Completed iterations.
    pub iter: u64,
    /// Stage of the next iteration.
    pub stage: Stage,
    pub params: ParamSet,
    pub adam: AdamState,
}

impl Checkpoint {
    pub fn from_trainer(config: &RunConfig, trainer: &Trainer) -> Self {
        Self {
            config: config.clone(),
            iter: trainer.iter,
            stage: trainer.stage(),
            params: trainer.model.params.clone(),
            adam: trainer.adam.clone(),
        }
    }

    pub fn model(&self) -> Result<Model, Error> {
        Ok(Model {
            config: self.config.model_config()?,
            params: self.params.clone(),
        })
    }

    pub fn into_trainer(self) -> Result<Trainer, Error> {
        let model = self.model()?;
        let mut t = Trainer::new(model, self.config.train_config())?;
        t.adam = self.adam;
        t.iter = self.iter;
        Ok(t)
    }

    pub fn child_float_count(&self) -> usize {
        self.params.count("child.")
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    put_u32(out, b.len() as u32);
    out.extend_from_slice(b);
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) {
    put_bytes(out, name.as_bytes());
    put_u32(out, t.shape().len() as u32);
    for &e in t.shape() {
        put_u64(out, e as u64);
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode(ck: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_u64(&mut out, ck.iter);
    out.push(ck.stage as u8);
    put_bytes(&mut out, ck.config.to_text().as_bytes());
    let sets = [("param/", &ck.params), ("adam.m/", &ck.adam.m), ("adam.v/", &ck.adam.v)];
    put_u32(&mut out, sets.iter().map(|(_, s)| s.len() as u32).sum());
    for (prefix, set) in sets {
        for (name, t) in set.iter() {
            put_tensor(&mut out, &format!("{prefix}{name}"), t);
        }
    }
    put_u32(&mut out, ck.adam.steps.len() as u32);
    for &s in &ck.adam.steps {
        put_u64(&mut out, s);
    }
    out
}

/// Decoding failures; the caller attaches the file path.
#[derive(Debug)]
pub enum DecodeError {
    Magic,
    Version(u32),
    Truncated,
    Invalid(String),
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        let end = self.pos.checked_add(n).ok_or(DecodeError::Truncated)?;
        let s = self.bytes.get(self.pos..end).ok_or(DecodeError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String, DecodeError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| DecodeError::Invalid("non-UTF-8 string".into()))
    }

    fn tensor(&mut self) -> Result<(String, Tensor<f32>), DecodeError> {
        let name = self.string()?;
        let rank = self.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(usize::try_from(self.u64()?).map_err(|_| DecodeError::Invalid("extent overflow".into()))?);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &e| a.checked_mul(e))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| DecodeError::Invalid(format!("tensor {name} is too large")))?;
        let data = self
            .take(n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let t = Tensor::new(&shape, data).map_err(|e| DecodeError::Invalid(e.to_string()))?;
        Ok((name, t))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint, DecodeError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).map_err(|_| DecodeError::Magic)? != MAGIC {
        return Err(DecodeError::Magic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(DecodeError::Version(version));
    }
    let iter = r.u64()?;
    let stage = match r.take(1)?[0] {
        1 => Stage::Parents,
        2 => Stage::Full,
        s => return Err(DecodeError::Invalid(format!("stage {s}"))),
    };
    let config = RunConfig::from_text(&r.string()?).map_err(|e| DecodeError::Invalid(e.to_string()))?;
    let count = r.u32()?;
    let (mut params, mut m, mut v) = (ParamSet::new(), ParamSet::new(), ParamSet::new());
    for _ in 0..count {
        let (name, t) = r.tensor()?;
        let (set, short) = if let Some(n) = name.strip_prefix("param/") {
            (&mut params, n)
        } else if let Some(n) = name.strip_prefix("adam.m/") {
            (&mut m, n)
        } else if let Some(n) = name.strip_prefix("adam.v/") {
            (&mut v, n)
        } else {
            return Err(DecodeError::Invalid(format!("unexpected tensor {name}")));
        };
        set.insert(short, t).map_err(|e| DecodeError::Invalid(e.to_string()))?;
    }
    let n = r.u32()? as usize;
    let mut steps = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        steps.push(r.u64()?);
    }
    if r.pos != bytes.len() {
        return Err(DecodeError::Invalid(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let names_match = |s: &ParamSet| s.len() == params.len() && s.names().zip(params.names()).all(|(a, b)| a == b);
    if !names_match(&m) || !names_match(&v) || steps.len() != params.len() {
        return Err(DecodeError::Invalid("optimizer state does not match the parameters".into()));
    }
    Ok(Checkpoint {
        config,
        iter,
        stage,
        params,
        adam: AdamState { m, v, steps },
    })
}

pub fn save(path: &Path, ck: &Checkpoint) -> Result<(), Error> {
    write_file(path, &encode(ck))
}

pub fn load(path: &Path) -> Result<Checkpoint, Error> {
    decode(&read_file(path)?).map_err(|e| match e {
        DecodeError::Magic => Error::format(path, "not a checkpoint (bad magic)"),
        DecodeError::Version(found) => Error::Version {
            path: path.to_path_buf(),
            found,
            expected: VERSION,
        },
        DecodeError::Truncated => Error::format(path, "truncated checkpoint"),
        DecodeError::Invalid(reason) => Error::format(path, reason),
    })
}
