//! Binary checkpoints.
//!
//! Layout (little-endian):
//!
//! ```text
//! [u8; 4]  magic "PNNC"
//! u32      format version (1)
//! u64      payload length in bytes
//! payload:
//!   str      config, canonical `key = value` text      (u64 len + UTF-8)
//!   u64      input_dim
//!   u64      step (number of completed steps)
//!   u64      rng seed
//!   params   online encoder
//!   u8       1 if a target encoder follows, else 0
//!   params   target encoder (if present)
//!   u64      optimizer step count t
//!   u64 n, then n × f64-vec   optimizer first moments / SGD velocity
//!   u64 n, then n × f64-vec   optimizer second moments (Adam only)
//!   u64      queue capacity
//!   u64      queue length, then per entry (oldest first):
//!              u64 insertion step, u8 has_label, u32 label, f64-vec embedding
//!
//! params = u64 tensor count, then per tensor an f64-vec, in the order
//!          layer weights (row-major, out × in) and biases, norm scale,
//!          norm shift, running mean, running variance
//! f64-vec = u64 count + count × f64
//! ```
//!
//! Every random draw is derived from `(seed, step, ...)`, so the seed and
//! step together are the complete RNG state.

use std::path::Path;

use crate::codec::{Reader, Writer};
use crate::datakit::parse_config;
use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::support_set::{SupportEntry, SupportSet};
use crate::vecspace::Embedding;

use super::{Optimizer, TrainConfig, TrainState};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PNNC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub input_dim: usize,
    pub state: TrainState,
}

fn write_params(w: &mut Writer, p: &EncoderParams) {
    let tensors = p.tensors();
    w.u64(tensors.len() as u64);
    for t in tensors {
        w.f64_slice(t);
    }
}

fn read_params(r: &mut Reader<'_>, template: &EncoderParams) -> Result<EncoderParams> {
    let mut p = template.clone();
    let n = r.u64()?;
    let mut tensors = p.tensors_mut();
    if n != tensors.len() as u64 {
        return Err(Error::FormatViolation(format!(
            "checkpoint has {n} tensors, architecture needs {}",
            tensors.len()
        )));
    }
    for t in tensors.iter_mut() {
        let values = r.f64_vec()?;
        if values.len() != t.len() {
            return Err(Error::FormatViolation(format!(
                "tensor of {} values where {} expected",
                values.len(),
                t.len()
            )));
        }
        t.copy_from_slice(&values);
    }
    Ok(p)
}

fn write_vecs(w: &mut Writer, vs: &[Vec<f64>]) {
    w.u64(vs.len() as u64);
    for v in vs {
        w.f64_slice(v);
    }
}

fn read_vecs(r: &mut Reader<'_>) -> Result<Vec<Vec<f64>>> {
    let n = r.len_prefix(8)?;
    (0..n).map(|_| r.f64_vec()).collect()
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let s = &self.state;
        let mut p = Writer::new();
        p.str(&self.config.to_canonical_string());
        p.u64(self.input_dim as u64);
        p.u64(s.step);
        p.u64(self.config.seed);
        write_params(&mut p, &s.online);
        match &s.target {
            Some(t) => {
                p.u8(1);
                write_params(&mut p, t);
            }
            None => p.u8(0),
        }
        p.u64(s.optimizer.t);
        write_vecs(&mut p, &s.optimizer.first);
        write_vecs(&mut p, &s.optimizer.second);
        p.u64(s.queue.capacity() as u64);
        p.u64(s.queue.len() as u64);
        for e in s.queue.entries() {
            p.u64(e.step);
            p.u8(u8::from(e.label.is_some()));
            p.u32(e.label.unwrap_or(0));
            p.f64_slice(&e.embedding);
        }
        let payload = p.into_inner();

        let mut w = Writer::new();
        w.bytes(CHECKPOINT_MAGIC);
        w.u32(CHECKPOINT_VERSION);
        w.u64(payload.len() as u64);
        w.bytes(&payload);
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::FormatViolation("bad checkpoint magic".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::FormatViolation(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let len = r.len_prefix(1)?;
        let mut r = Reader::new(r.take(len)?);

        let config = parse_config(&r.string()?)?;
        let input_dim = r.u64()? as usize;
        let step = r.u64()?;
        let seed = r.u64()?;
        if seed != config.seed {
            return Err(Error::FormatViolation(format!(
                "rng seed {seed} disagrees with config seed {}",
                config.seed
            )));
        }
        let template = EncoderParams::zeros(&config.arch(input_dim))?;
        let online = read_params(&mut r, &template)?;
        let target = match r.u8()? {
            0 => None,
            1 => Some(read_params(&mut r, &template)?),
            f => return Err(Error::FormatViolation(format!("bad target flag {f}"))),
        };
        let mut optimizer = Optimizer::new(config.optimizer, &online);
        optimizer.t = r.u64()?;
        let first = read_vecs(&mut r)?;
        let second = read_vecs(&mut r)?;
        let shape = |vs: &[Vec<f64>]| vs.iter().map(Vec::len).collect::<Vec<_>>();
        if shape(&first) != shape(&optimizer.first) || shape(&second) != shape(&optimizer.second) {
            return Err(Error::FormatViolation("optimizer state shape".into()));
        }
        optimizer.first = first;
        optimizer.second = second;

        let capacity = r.u64()? as usize;
        let mut queue = SupportSet::new(capacity)
            .map_err(|_| Error::FormatViolation("zero queue capacity".into()))?;
        let n = r.len_prefix(21)?;
        let mut entries = Vec::with_capacity(n);
        for _ in 0..n {
            let step = r.u64()?;
            let has_label = r.u8()?;
            let label = r.u32()?;
            let embedding = Embedding::new(r.f64_vec()?)?;
            entries.push(SupportEntry::new(embedding, (has_label == 1).then_some(label), step));
        }
        if entries.len() > capacity {
            return Err(Error::FormatViolation("queue longer than its capacity".into()));
        }
        queue.insert_batch(entries)?;
        r.expect_end()?;

        Ok(Self {
            config,
            input_dim,
            state: TrainState {
                step,
                online,
                target,
                optimizer,
                queue,
            },
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
