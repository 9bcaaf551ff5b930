//! Binary checkpoint: `TAVG1` magic, the config as `key = value` text, the
//! iteration counter, each network's parameters and batch-norm statistics,
//! each optimizer's moments, and a SHA-256 trailer over everything before it.
//! All numbers are little-endian.

use std::path::Path;

use sha2::{Digest, Sha256};

use super::{Models, Optimizers, TrainConfig, TrainMode, TrainState};
use crate::error::{Error, Result};
use crate::nn::Params;
use crate::optim::Adam;

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"TAVG1";
const DIGEST_LEN: usize = 32;

struct Writer(Vec<u8>);

impl Writer {
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64s(&mut self, vs: &[f64]) {
        self.u64(vs.len() as u64);
        for v in vs {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn params(&mut self, p: &impl Params) {
        self.f64s(&p.flatten());
        let mut buffers = vec![];
        p.visit_buffers(&mut |t| buffers.extend_from_slice(t.data()));
        self.f64s(&buffers);
    }

    fn adam(&mut self, a: &Adam) {
        for v in [a.lr, a.beta1, a.beta2, a.eps] {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
        self.u64(a.step);
        self.f64s(&a.m);
        self.f64s(&a.v);
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptCheckpoint(msg.into())
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len());
        let end = end.ok_or_else(|| corrupt("truncated"))?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, expected: usize, what: &str) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        if n != expected {
            return Err(corrupt(format!("{what}: {n} values, expected {expected}")));
        }
        let raw = self.take(n.checked_mul(8).ok_or_else(|| corrupt("length overflow"))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect())
    }

    fn params(&mut self, p: &mut impl Params, what: &str) -> Result<()> {
        let flat = self.f64s(p.param_count(), what)?;
        p.set_flat(&flat);
        let mut n_buf = 0;
        p.visit_buffers(&mut |t| n_buf += t.len());
        let buffers = self.f64s(n_buf, what)?;
        let mut off = 0;
        p.visit_buffers_mut(&mut |t| {
            let n = t.len();
            t.data_mut().copy_from_slice(&buffers[off..off + n]);
            off += n;
        });
        Ok(())
    }

    fn adam(&mut self, count: usize, what: &str) -> Result<Adam> {
        let (lr, beta1, beta2, eps) = (self.f64()?, self.f64()?, self.f64()?, self.f64()?);
        let step = self.u64()?;
        let m = self.f64s(count, what)?;
        let v = self.f64s(count, what)?;
        Ok(Adam {
            lr,
            beta1,
            beta2,
            eps,
            step,
            m,
            v,
        })
    }
}

pub fn encode_checkpoint(state: &TrainState) -> Vec<u8> {
    let mut w = Writer(CHECKPOINT_MAGIC.to_vec());
    let cfg = state.config.to_kv();
    w.u64(cfg.len() as u64);
    w.0.extend_from_slice(cfg.as_bytes());
    w.u64(state.iteration);
    w.params(&state.models.encoder);
    w.params(&state.models.generator);
    w.params(&state.models.discriminator);
    w.adam(&state.optimizers.encoder);
    w.adam(&state.optimizers.generator);
    w.adam(&state.optimizers.discriminator);
    let digest = Sha256::digest(&w.0);
    w.0.extend_from_slice(&digest);
    w.0
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<TrainState> {
    if bytes.len() < 4 || &bytes[..4] != b"TAVG" {
        return Err(corrupt("not a checkpoint file"));
    }
    if bytes.len() < CHECKPOINT_MAGIC.len() || &bytes[..CHECKPOINT_MAGIC.len()] != CHECKPOINT_MAGIC {
        let tag = bytes.iter().take(CHECKPOINT_MAGIC.len()).take_while(|b| b.is_ascii_graphic()).map(|&b| b as char).collect();
        return Err(Error::CheckpointVersion(tag));
    }
    if bytes.len() < CHECKPOINT_MAGIC.len() + DIGEST_LEN {
        return Err(corrupt("truncated"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(corrupt("checksum mismatch"));
    }
    let mut r = Reader {
        data: body,
        pos: CHECKPOINT_MAGIC.len(),
    };
    let cfg_len = r.u64()? as usize;
    let cfg_text = std::str::from_utf8(r.take(cfg_len)?).map_err(|_| corrupt("config is not UTF-8"))?;
    let config = TrainConfig::from_kv(cfg_text)?;
    let iteration = r.u64()?;
    let mut models = Models::init(&config)?;
    r.params(&mut models.encoder, "encoder")?;
    r.params(&mut models.generator, "generator")?;
    r.params(&mut models.discriminator, "discriminator")?;
    let optimizers = Optimizers {
        encoder: r.adam(models.encoder.param_count(), "encoder optimizer")?,
        generator: r.adam(models.generator.param_count(), "generator optimizer")?,
        discriminator: r.adam(models.discriminator.param_count(), "discriminator optimizer")?,
    };
    if r.pos != body.len() {
        return Err(corrupt("trailing bytes"));
    }
    Ok(TrainState {
        config,
        models,
        optimizers,
        iteration,
    })
}

pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(state);
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::MissingFile(path.to_path_buf()))
        }
        Err(e) => return Err(Error::io(path, e)),
    };
    decode_checkpoint(&bytes)
}

/// Loads a checkpoint and checks that it was trained in `mode`.
pub fn load_checkpoint_for(path: &Path, mode: TrainMode) -> Result<TrainState> {
    let state = load_checkpoint(path)?;
    if state.mode() != mode {
        return Err(Error::ModeMismatch {
            expected: mode.to_string(),
            found: state.mode().to_string(),
        });
    }
    Ok(state)
}
