//! Versioned binary checkpoints.
//!
//! Layout (little endian): `"MPCK"`, `u32` version, model and training config as
//! length-prefixed JSON, normalization stats (5 × f64), `u64` step, `u64` Adam
//! update count, ChaCha8 seed (32 bytes), stream (`u64`) and word position (`u128`),
//! `u32` tensor count, then per tensor a length-prefixed name, `u32` rank, `u64`
//! dims and f64 values, followed by the Adam first and second moments in the same
//! order. The file ends with the SHA-256 of everything before it.

use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use mpcgen_autodiff::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::network::Cvae;
use super::optim::AdamW;
use super::params::ParamStore;
use super::train::{TrainState, Trainer};
use super::{ModelConfig, ModelError, TrainConfig};
use crate::channel::NormStats;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"MPCK";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    out.write_u64::<LE>(b.len() as u64).unwrap();
    out.extend_from_slice(b);
}

fn put_tensor_data(out: &mut Vec<u8>, t: &Tensor) {
    for &x in t.data() {
        out.write_f64::<LE>(x).unwrap();
    }
}

pub fn checkpoint_bytes(tr: &Trainer) -> Result<Vec<u8>, ModelError> {
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.write_u32::<LE>(CHECKPOINT_VERSION).unwrap();
    put_bytes(&mut out, to_json(&tr.model.cfg)?.as_bytes());
    put_bytes(&mut out, to_json(&tr.train_cfg)?.as_bytes());
    let s = &tr.stats;
    for v in [s.mu_log, s.sigma_log, s.mu_rx, s.sigma_rx, s.window_s] {
        out.write_f64::<LE>(v).unwrap();
    }
    out.write_u64::<LE>(tr.state.step as u64).unwrap();
    out.write_u64::<LE>(tr.state.adam.t).unwrap();
    let rng = &tr.state.rng;
    out.extend_from_slice(&rng.get_seed());
    out.write_u64::<LE>(rng.get_stream()).unwrap();
    out.write_u128::<LE>(rng.get_word_pos()).unwrap();
    out.write_u32::<LE>(tr.params.len() as u32).unwrap();
    for (name, t) in tr.params.names().iter().zip(tr.params.tensors()) {
        put_bytes(&mut out, name.as_bytes());
        out.write_u32::<LE>(t.ndim() as u32).unwrap();
        for &d in t.shape() {
            out.write_u64::<LE>(d as u64).unwrap();
        }
        put_tensor_data(&mut out, t);
    }
    for t in tr.state.adam.m.iter().chain(&tr.state.adam.v) {
        put_tensor_data(&mut out, t);
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

fn to_json<T: serde::Serialize>(v: &T) -> Result<String, ModelError> {
    serde_json::to_string(v).map_err(|e| ModelError::Checkpoint(e.to_string()))
}

fn bad(msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(msg.into())
}

fn get_bytes(cur: &mut Cursor<&[u8]>) -> Result<Vec<u8>, ModelError> {
    let n = cur.read_u64::<LE>()? as usize;
    let remaining = cur.get_ref().len() - cur.position() as usize;
    if n > remaining {
        return Err(bad("truncated string"));
    }
    let mut b = vec![0u8; n];
    cur.read_exact(&mut b)?;
    Ok(b)
}

fn get_f64s(cur: &mut Cursor<&[u8]>, n: usize) -> Result<Vec<f64>, ModelError> {
    let remaining = cur.get_ref().len() - cur.position() as usize;
    if n.checked_mul(8).is_none_or(|b| b > remaining) {
        return Err(bad("truncated tensor"));
    }
    (0..n).map(|_| Ok(cur.read_f64::<LE>()?)).collect()
}

pub fn trainer_from_bytes(bytes: &[u8]) -> Result<Trainer, ModelError> {
    if bytes.len() < 4 + 4 + 32 {
        return Err(bad("file too short"));
    }
    if bytes[..4] != CHECKPOINT_MAGIC {
        return Err(bad(format!("bad magic {:?}", &bytes[..4])));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    let mut cur = Cursor::new(body);
    cur.set_position(4);
    let version = cur.read_u32::<LE>()?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    if Sha256::digest(body).as_slice() != digest {
        return Err(bad("checksum mismatch"));
    }
    let model_cfg: ModelConfig = serde_json::from_slice(&get_bytes(&mut cur)?)
        .map_err(|e| bad(format!("model config: {e}")))?;
    let train_cfg: TrainConfig = serde_json::from_slice(&get_bytes(&mut cur)?)
        .map_err(|e| bad(format!("training config: {e}")))?;
    let s = get_f64s(&mut cur, 5)?;
    let stats = NormStats::new(s[0], s[1], s[2], s[3], s[4]).map_err(|e| bad(e.to_string()))?;
    let step = cur.read_u64::<LE>()? as usize;
    let adam_t = cur.read_u64::<LE>()?;
    let mut seed = [0u8; 32];
    cur.read_exact(&mut seed)?;
    let stream = cur.read_u64::<LE>()?;
    let word_pos = cur.read_u128::<LE>()?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);

    let (model, layout) = Cvae::layout(&model_cfg)?;
    let count = cur.read_u32::<LE>()? as usize;
    if count != layout.len() {
        return Err(bad(format!(
            "checkpoint has {count} tensors, the configured model has {}",
            layout.len()
        )));
    }
    let mut params = ParamStore::default();
    for (i, expected) in layout.tensors().iter().enumerate() {
        let name = String::from_utf8(get_bytes(&mut cur)?).map_err(|_| bad("tensor name is not UTF-8"))?;
        if name != layout.names()[i] {
            return Err(bad(format!("tensor {i} is {name}, expected {}", layout.names()[i])));
        }
        let rank = cur.read_u32::<LE>()? as usize;
        let shape: Vec<usize> = (0..rank)
            .map(|_| Ok(cur.read_u64::<LE>()? as usize))
            .collect::<Result<_, ModelError>>()?;
        if shape != expected.shape() {
            return Err(bad(format!("tensor {name} has shape {shape:?}, expected {:?}", expected.shape())));
        }
        let data = get_f64s(&mut cur, expected.len())?;
        params.push(name, Tensor::new(&shape, data)?);
    }
    let mut moments = Vec::with_capacity(2 * count);
    for _ in 0..2 {
        for t in layout.tensors() {
            moments.push(Tensor::new(t.shape(), get_f64s(&mut cur, t.len())?)?);
        }
    }
    if cur.position() as usize != body.len() {
        return Err(bad("trailing bytes"));
    }
    let v = moments.split_off(count);
    let state = TrainState {
        step,
        adam: AdamW { m: moments, v, t: adam_t },
        rng,
    };
    Ok(Trainer::assemble(model, params, train_cfg, stats, state))
}

pub fn save_checkpoint(tr: &Trainer, path: &Path) -> Result<(), ModelError> {
    std::fs::write(path, checkpoint_bytes(tr)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Trainer, ModelError> {
    trainer_from_bytes(&std::fs::read(path)?)
}
