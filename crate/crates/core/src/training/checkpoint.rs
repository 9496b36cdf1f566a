//! Checkpoint file: magic `AVSC`, u32 version, u32 header length, a JSON
//! header (config, step, tensor manifest with byte offsets into the payload),
//! then little-endian f32 payloads in manifest order. When present, Adam's
//! first and then second moments follow in the same order, and finally a
//! 56-byte generator block (32-byte seed, u64 stream, u128 word position).

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::numerics::{AdamHyper, AdamState, Tensor};
use crate::volsdf::{DecoderSpec, ModelParams};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"AVSC";
pub const CHECKPOINT_VERSION: u32 = 1;
const RNG_BLOCK: usize = 32 + 8 + 16;

/// Exact position of a ChaCha generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub model: ModelParams,
    pub optimizer: Option<AdamState>,
    pub step: u64,
    pub rng: Option<RngState>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct OptimizerHeader {
    step: u64,
    hyper: AdamHyper,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: TrainConfig,
    step: u64,
    tensors: Vec<ManifestEntry>,
    optimizer: Option<OptimizerHeader>,
    rng: bool,
}

fn push_tensor(out: &mut Vec<u8>, t: &Tensor) {
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let names = ckpt.model.tensor_names();
    let tensors = ckpt.model.tensors();
    let mut offset = 0;
    let manifest = names
        .into_iter()
        .zip(&tensors)
        .map(|(name, t)| {
            let e = ManifestEntry {
                name,
                shape: t.shape().to_vec(),
                offset,
            };
            offset += 4 * t.len();
            e
        })
        .collect();
    let header = Header {
        config: ckpt.config.clone(),
        step: ckpt.step,
        tensors: manifest,
        optimizer: ckpt.optimizer.as_ref().map(|a| OptimizerHeader {
            step: a.step,
            hyper: a.hyper,
        }),
        rng: ckpt.rng.is_some(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(12 + json.len() + offset * 3 + RNG_BLOCK);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for t in &tensors {
        push_tensor(&mut out, t);
    }
    if let Some(adam) = &ckpt.optimizer {
        if adam.m.len() != tensors.len() {
            return Err(crate::error::contract(
                "optimizer state does not match the model",
            ));
        }
        for t in adam.m.iter().chain(&adam.v) {
            push_tensor(&mut out, t);
        }
    }
    if let Some(r) = &ckpt.rng {
        out.extend_from_slice(&r.seed);
        out.extend_from_slice(&r.stream.to_le_bytes());
        out.extend_from_slice(&r.word_pos.to_le_bytes());
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("checkpoint is truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn tensor_into(&mut self, t: &mut Tensor) -> Result<()> {
        let raw = self.take(4 * t.len())?;
        for (v, c) in t.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
            *v = f32::from_le_bytes(c.try_into().expect("4 bytes"));
        }
        Ok(())
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let len = r.u32()? as usize;
    let header: Header = serde_json::from_slice(r.take(len)?)
        .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
    let spec = header.config.spec();
    spec.validate()
        .map_err(|e| Error::Architecture(e.to_string()))?;
    let mut model = ModelParams::new(spec, &mut ChaCha8Rng::seed_from_u64(0))?;
    let names = model.tensor_names();
    if names.len() != header.tensors.len() {
        return Err(Error::Architecture(format!(
            "checkpoint lists {} tensors, layout {spec:?} has {}",
            header.tensors.len(),
            names.len()
        )));
    }
    let mut offset = 0;
    for ((name, t), e) in names.iter().zip(model.tensors()).zip(&header.tensors) {
        if &e.name != name || e.shape != t.shape() || e.offset != offset {
            return Err(Error::Architecture(format!(
                "tensor {} {:?} does not match {name} {:?}",
                e.name,
                e.shape,
                t.shape()
            )));
        }
        offset += 4 * t.len();
    }
    for t in model.tensors_mut() {
        r.tensor_into(t)?;
    }
    let optimizer = match header.optimizer {
        Some(h) => {
            let mut adam =
                AdamState::new(&model.tensors().into_iter().cloned().collect::<Vec<_>>());
            adam.hyper = h.hyper;
            adam.step = h.step;
            for t in adam.m.iter_mut().chain(adam.v.iter_mut()) {
                r.tensor_into(t)?;
            }
            Some(adam)
        }
        None => None,
    };
    let rng = if header.rng {
        let block = r.take(RNG_BLOCK)?;
        Some(RngState {
            seed: block[..32].try_into().expect("32 bytes"),
            stream: u64::from_le_bytes(block[32..40].try_into().expect("8 bytes")),
            word_pos: u128::from_le_bytes(block[40..56].try_into().expect("16 bytes")),
        })
    } else {
        None
    };
    if r.pos != bytes.len() {
        return Err(Error::Format(
            "trailing bytes after checkpoint payload".into(),
        ));
    }
    Ok(Checkpoint {
        config: header.config,
        model,
        optimizer,
        step: header.step,
        rng,
    })
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    std::fs::write(path, encode_checkpoint(ckpt)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode_checkpoint(&std::fs::read(path)?)
}

/// Loads a checkpoint and insists on a given decoder layout.
pub fn load_checkpoint_for(path: impl AsRef<Path>, expected: &DecoderSpec) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    if ckpt.model.spec != *expected {
        return Err(Error::Architecture(format!(
            "checkpoint holds {:?}, expected {expected:?}",
            ckpt.model.spec
        )));
    }
    Ok(ckpt)
}
