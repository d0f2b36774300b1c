//! Checkpoint files.
//!
//! ```text
//! magic          "CSIK"
//! version        u16 (little-endian)
//! header_len     u32
//! header         JSON, header_len bytes
//! blobs          f32 little-endian, concatenated in header `tensors` order
//! ```
//!
//! Tensor names follow the module path, e.g. `conv_block_1.conv.weight`,
//! `res_block_2.b.bn.running_var`, `fc.bias`. Convolution weights are
//! `(out, in, kd, kh, kw)` and the FC weight is `(out, in)`, both row-major.
//! Optimizer moments, when present, are stored as `adam.m.<name>` and
//! `adam.v.<name>`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::{build_model, ArchConfig, PredictorModel};
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamState};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CSIK";
pub const CHECKPOINT_VERSION: u16 = 1;

/// What a checkpoint predicts with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// The residual CNN; weights follow in the blob section.
    Cnn,
    /// Sample-and-hold; no weights.
    SampleAndHold,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct OptimizerMeta {
    step: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u16,
    kind: ModelKind,
    history_len: usize,
    arch: Option<ArchConfig>,
    seed: u64,
    epoch: usize,
    norm_power: Vec<f64>,
    tensors: Vec<TensorEntry>,
    optimizer: Option<OptimizerMeta>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub history_len: usize,
    pub model: Option<PredictorModel<f32>>,
    pub seed: u64,
    /// Last completed epoch (zero-based); training resumes at `epoch + 1`.
    pub epoch: usize,
    /// Normalization powers of the training data's constituent sequences.
    pub norm_power: Vec<f64>,
    pub optimizer: Option<Adam<f32>>,
}

impl Checkpoint {
    pub fn cnn(model: PredictorModel<f32>, epoch: usize, norm_power: Vec<f64>, optimizer: Option<Adam<f32>>) -> Self {
        Self {
            kind: ModelKind::Cnn,
            history_len: model.arch.history_len,
            seed: model.seed,
            model: Some(model),
            epoch,
            norm_power,
            optimizer,
        }
    }

    pub fn sample_and_hold(history_len: usize) -> Self {
        Self {
            kind: ModelKind::SampleAndHold,
            history_len,
            model: None,
            seed: 0,
            epoch: 0,
            norm_power: Vec::new(),
            optimizer: None,
        }
    }
}

fn ckpt_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Checkpoint(msg.into()))
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut blobs: Vec<(String, Vec<f32>)> = Vec::new();
    if let Some(model) = &ckpt.model {
        blobs = model.named_tensors();
    }
    let mut optimizer = None;
    if let (Some(opt), Some(model)) = (&ckpt.optimizer, &ckpt.model) {
        if !opt.state.m.is_empty() {
            let mut m = model.clone();
            let names: Vec<String> = m.params_mut().into_iter().map(|(n, _)| n).collect();
            if names.len() != opt.state.m.len() {
                return ckpt_err("optimizer state does not match the model");
            }
            for (name, mv) in names.iter().zip(&opt.state.m) {
                blobs.push((format!("adam.m.{name}"), mv.clone()));
            }
            for (name, vv) in names.iter().zip(&opt.state.v) {
                blobs.push((format!("adam.v.{name}"), vv.clone()));
            }
        }
        optimizer = Some(OptimizerMeta {
            step: opt.state.step,
            beta1: opt.beta1,
            beta2: opt.beta2,
            eps: opt.eps,
        });
    }
    let header = Header {
        format_version: CHECKPOINT_VERSION,
        kind: ckpt.kind,
        history_len: ckpt.history_len,
        arch: ckpt.model.as_ref().map(|m| m.arch.clone()),
        seed: ckpt.seed,
        epoch: ckpt.epoch,
        norm_power: ckpt.norm_power.clone(),
        tensors: blobs
            .iter()
            .map(|(name, v)| TensorEntry {
                name: name.clone(),
                len: v.len(),
            })
            .collect(),
        optimizer,
    };
    let json = serde_json::to_vec(&header)?;
    let header_len = u32::try_from(json.len())
        .map_err(|_| Error::Checkpoint("header exceeds u32".into()))?;

    let tmp = path.with_extension("ckpt.partial");
    let written = (|| -> Result<()> {
        let mut w = BufWriter::new(File::create(&tmp)?);
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_u16::<LittleEndian>(CHECKPOINT_VERSION)?;
        w.write_u32::<LittleEndian>(header_len)?;
        w.write_all(&json)?;
        for (_, v) in &blobs {
            for x in v {
                w.write_f32::<LittleEndian>(*x)?;
            }
        }
        w.flush()?;
        drop(w);
        fs::rename(&tmp, path)?;
        Ok(())
    })();
    if written.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    written
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    if bytes.len() < 10 || &bytes[..4] != CHECKPOINT_MAGIC {
        return ckpt_err(format!("{} is not a checkpoint", path.display()));
    }
    let version = LittleEndian::read_u16(&bytes[4..6]);
    if version != CHECKPOINT_VERSION {
        return ckpt_err(format!("unsupported checkpoint version {version}"));
    }
    let header_len = LittleEndian::read_u32(&bytes[6..10]) as usize;
    let body = 10 + header_len;
    if bytes.len() < body {
        return ckpt_err("truncated header");
    }
    let header: Header = serde_json::from_slice(&bytes[10..body])
        .map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
    let total: usize = header.tensors.iter().map(|t| t.len).sum();
    if bytes.len() != body + 4 * total {
        return ckpt_err(format!(
            "expected {} blob bytes, found {}",
            4 * total,
            bytes.len() - body
        ));
    }

    let mut tensors: Vec<(String, Vec<f64>)> = Vec::with_capacity(header.tensors.len());
    let mut off = body;
    for t in &header.tensors {
        let v = (0..t.len)
            .map(|i| LittleEndian::read_f32(&bytes[off + 4 * i..]) as f64)
            .collect();
        off += 4 * t.len;
        tensors.push((t.name.clone(), v));
    }

    let model = match (header.kind, &header.arch) {
        (ModelKind::Cnn, Some(arch)) => {
            let mut m = build_model::<f32>(arch, header.seed)?;
            m.assign_tensors(&tensors)?;
            Some(m)
        }
        (ModelKind::Cnn, None) => return ckpt_err("CNN checkpoint without architecture"),
        (ModelKind::SampleAndHold, _) => None,
    };

    let optimizer = match (&header.optimizer, &model) {
        (Some(meta), Some(m)) => {
            let mut m = m.clone();
            let names: Vec<String> = m.params_mut().into_iter().map(|(n, _)| n).collect();
            let lookup = |key: String| -> Option<Vec<f32>> {
                tensors
                    .iter()
                    .find(|(n, _)| *n == key)
                    .map(|(_, v)| v.iter().map(|&x| x as f32).collect())
            };
            let m_state: Option<Vec<Vec<f32>>> = names.iter().map(|n| lookup(format!("adam.m.{n}"))).collect();
            let v_state: Option<Vec<Vec<f32>>> = names.iter().map(|n| lookup(format!("adam.v.{n}"))).collect();
            let state = match (m_state, v_state) {
                (Some(m), Some(v)) => AdamState { step: meta.step, m, v },
                _ if meta.step == 0 => AdamState::default(),
                _ => return ckpt_err("optimizer moments missing"),
            };
            Some(Adam {
                beta1: meta.beta1,
                beta2: meta.beta2,
                eps: meta.eps,
                state,
            })
        }
        _ => None,
    };

    Ok(Checkpoint {
        kind: header.kind,
        history_len: header.history_len,
        model,
        seed: header.seed,
        epoch: header.epoch,
        norm_power: header.norm_power,
        optimizer,
    })
}
