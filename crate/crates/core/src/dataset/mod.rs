//! Dataset construction: per-sequence power normalization, sliding windows
//! of `L` inputs plus one target, speed mixing and train/test splitting.

mod format;

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelSequence, ChannelTensor, TensorShape};
use crate::error::{shape_err, Error, Result};
use crate::sim::SimConfig;

pub use format::{load, save, sidecar_path, write_atomic, FORMAT_VERSION, MAGIC};

/// Where a sample was cut from: constituent sequence and the time index of
/// its newest input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SampleOrigin {
    pub sequence: usize,
    pub last_input: usize,
}

/// `L` consecutive snapshots (oldest first) and the snapshot that follows.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSample {
    pub inputs: Vec<Arc<ChannelTensor>>,
    pub target: Arc<ChannelTensor>,
    /// UE speed in km/h.
    pub speed_tag: f32,
    pub origin: SampleOrigin,
}

impl DatasetSample {
    pub fn history_len(&self) -> usize {
        self.inputs.len()
    }

    pub fn shape(&self) -> TensorShape {
        self.target.shape()
    }

    /// Most recent observation, `H^(t)`.
    pub fn last_input(&self) -> &ChannelTensor {
        self.inputs.last().expect("samples hold at least one input")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Test,
    All,
}

/// How [`split`] assigns samples to the two sides.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    /// Shuffle individual windows, then cut.
    #[default]
    Segment,
    /// Within each constituent sequence the earliest windows train and the
    /// latest test.
    Temporal,
}

/// Bookkeeping for one constituent sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceInfo {
    pub speed_kmh: f64,
    pub seed: u64,
    pub norm_power: f64,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<DatasetSample>,
    pub shape: TensorShape,
    pub history_len: usize,
    /// Seconds between snapshots.
    pub sample_period: f64,
    /// Fraction used to produce this split; 1.0 for an unsplit dataset.
    pub train_fraction: f64,
    pub split: SplitTag,
    pub sequences: Vec<SequenceInfo>,
    pub sim_config: Option<SimConfig>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sample count per speed tag, keyed by the tag's bit pattern order.
    pub fn counts_by_speed(&self) -> Vec<(f32, usize)> {
        let mut map: BTreeMap<u32, usize> = BTreeMap::new();
        for s in &self.samples {
            *map.entry(s.speed_tag.to_bits()).or_default() += 1;
        }
        let mut out: Vec<(f32, usize)> = map
            .into_iter()
            .map(|(bits, n)| (f32::from_bits(bits), n))
            .collect();
        out.sort_by(|a, b| a.0.total_cmp(&b.0));
        out
    }

    fn with_samples(&self, samples: Vec<DatasetSample>, split: SplitTag, fraction: f64) -> Self {
        Self {
            samples,
            shape: self.shape,
            history_len: self.history_len,
            sample_period: self.sample_period,
            train_fraction: fraction,
            split,
            sequences: self.sequences.clone(),
            sim_config: self.sim_config.clone(),
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::Invalid("dataset has no samples".into()));
        }
        for (i, s) in self.samples.iter().enumerate() {
            if s.inputs.len() != self.history_len {
                return shape_err(format!(
                    "sample {i} has {} inputs, dataset history length is {}",
                    s.inputs.len(),
                    self.history_len
                ));
            }
            if s.inputs.iter().chain([&s.target]).any(|t| t.shape() != self.shape) {
                return shape_err(format!("sample {i} does not match shape {}", self.shape));
            }
        }
        Ok(())
    }
}

/// Average per-element power `P = sum ||H_n||_F^2 / (Q K Nr Nt)`.
pub fn compute_norm_power(seq: &ChannelSequence) -> Result<f64> {
    let shape = seq
        .shape()
        .ok_or_else(|| Error::Invalid("empty channel sequence".into()))?;
    let total: f64 = seq.tensors.iter().map(ChannelTensor::frob_norm_sq).sum();
    let p = total / (seq.len() * shape.len()) as f64;
    if p == 0.0 {
        return Err(Error::Invalid(
            "channel sequence is identically zero; cannot normalize".into(),
        ));
    }
    Ok(p)
}

/// Scales every snapshot by `1/sqrt(p)` and records `p`.
pub fn normalize(seq: &ChannelSequence, p: f64) -> Result<ChannelSequence> {
    if !(p > 0.0) || !p.is_finite() {
        return Err(Error::Invalid(format!(
            "normalization power must be positive, got {p}"
        )));
    }
    let factor = 1.0 / p.sqrt();
    let mut out = seq.clone();
    for t in &mut out.tensors {
        t.scale(factor);
    }
    out.norm_power = p;
    Ok(out)
}

/// Cuts `Q - l` overlapping windows. Sample `i` has inputs `seq[i..i+l]`
/// and target `seq[i+l]`. Values are rounded to storage precision.
pub fn window(seq: &ChannelSequence, l: usize) -> Result<Vec<DatasetSample>> {
    window_tagged(seq, l, 0)
}

fn window_tagged(seq: &ChannelSequence, l: usize, sequence: usize) -> Result<Vec<DatasetSample>> {
    check_windowable(seq, l)?;
    let shared = seq
        .tensors
        .iter()
        .map(|t| {
            let mut t = t.clone();
            t.quantize_f32();
            Arc::new(t)
        })
        .collect();
    Ok(cut_windows(shared, l, seq.speed_kmh, sequence))
}

fn check_windowable(seq: &ChannelSequence, l: usize) -> Result<TensorShape> {
    let q = seq.len();
    if l < 1 || l >= q {
        return Err(Error::Invalid(format!(
            "history length {l} must satisfy 1 <= L <= Q-1 (Q = {q})"
        )));
    }
    let shape = seq.shape().expect("q >= 2");
    if seq.tensors.iter().any(|t| t.shape() != shape) {
        return shape_err("sequence mixes tensor shapes");
    }
    Ok(shape)
}

fn cut_windows(shared: Vec<Arc<ChannelTensor>>, l: usize, speed_kmh: f64, sequence: usize) -> Vec<DatasetSample> {
    let q = shared.len();
    let speed_tag = speed_kmh as f32;
    (l - 1..q - 1)
        .map(|t| DatasetSample {
            inputs: shared[t + 1 - l..=t].to_vec(),
            target: Arc::clone(&shared[t + 1]),
            speed_tag,
            origin: SampleOrigin {
                sequence,
                last_input: t,
            },
        })
        .collect()
}

/// Incremental form of [`build_mixed`] that takes ownership of one
/// sequence at a time, so raw sequences need not all be held at once.
#[derive(Debug)]
pub struct DatasetBuilder {
    history_len: usize,
    shape: Option<TensorShape>,
    sample_period: f64,
    sim_config: Option<SimConfig>,
    samples: Vec<DatasetSample>,
    sequences: Vec<SequenceInfo>,
}

impl DatasetBuilder {
    pub fn new(history_len: usize) -> Self {
        Self {
            history_len,
            shape: None,
            sample_period: 0.0,
            sim_config: None,
            samples: Vec::new(),
            sequences: Vec::new(),
        }
    }

    /// Normalizes `seq` on its own power and appends its windows.
    pub fn push(&mut self, mut seq: ChannelSequence) -> Result<()> {
        let i = self.sequences.len();
        let shape = check_windowable(&seq, self.history_len)?;
        match self.shape {
            None => {
                self.shape = Some(shape);
                self.sample_period = seq.sample_period;
                self.sim_config = Some(seq.sim_config.clone());
            }
            Some(s) if s != shape => {
                return shape_err(format!("sequence {i} has shape {shape}, expected {s}"));
            }
            Some(_) if seq.sample_period != self.sample_period => {
                return Err(Error::Invalid(format!(
                    "sequence {i} sample period {} differs from {}",
                    seq.sample_period, self.sample_period
                )));
            }
            Some(_) => {}
        }
        let p = compute_norm_power(&seq)?;
        let factor = 1.0 / p.sqrt();
        let info = SequenceInfo {
            speed_kmh: seq.speed_kmh,
            seed: seq.sim_config.seed,
            norm_power: p,
            len: seq.len(),
        };
        let shared = std::mem::take(&mut seq.tensors)
            .into_iter()
            .map(|mut t| {
                t.scale(factor);
                t.quantize_f32();
                Arc::new(t)
            })
            .collect();
        self.samples
            .extend(cut_windows(shared, self.history_len, seq.speed_kmh, i));
        self.sequences.push(info);
        Ok(())
    }

    /// Shuffles all windows under `shuffle_seed`.
    pub fn finish(self, shuffle_seed: u64) -> Result<Dataset> {
        let shape = self
            .shape
            .ok_or_else(|| Error::Invalid("no channel sequences supplied".into()))?;
        let mut samples = self.samples;
        samples.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
        Ok(Dataset {
            samples,
            shape,
            history_len: self.history_len,
            sample_period: self.sample_period,
            train_fraction: 1.0,
            split: SplitTag::All,
            sequences: self.sequences,
            sim_config: self.sim_config,
        })
    }
}

/// Normalizes each sequence on its own power, windows it, and shuffles the
/// union of all windows under `shuffle_seed`.
pub fn build_mixed(seqs: &[ChannelSequence], l: usize, shuffle_seed: u64) -> Result<Dataset> {
    let mut b = DatasetBuilder::new(l);
    for seq in seqs {
        b.push(seq.clone())?;
    }
    b.finish(shuffle_seed)
}

/// Deterministic partition into `(train, test)` with
/// `round(N * train_fraction)` training samples.
pub fn split(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    split_with_mode(ds, train_fraction, seed, SplitMode::Segment)
}

pub fn split_with_mode(
    ds: &Dataset,
    train_fraction: f64,
    seed: u64,
    mode: SplitMode,
) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Invalid(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let n = ds.len();
    let (train_idx, test_idx): (Vec<usize>, Vec<usize>) = match mode {
        SplitMode::Segment => {
            let n_train = (n as f64 * train_fraction).round() as usize;
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let test = order.split_off(n_train.min(n));
            (order, test)
        }
        SplitMode::Temporal => {
            let mut by_seq: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for (i, s) in ds.samples.iter().enumerate() {
                by_seq.entry(s.origin.sequence).or_default().push(i);
            }
            let (mut train, mut test) = (Vec::new(), Vec::new());
            for idx in by_seq.values_mut() {
                idx.sort_by_key(|&i| ds.samples[i].origin.last_input);
                let cut = (idx.len() as f64 * train_fraction).round() as usize;
                train.extend_from_slice(&idx[..cut]);
                test.extend_from_slice(&idx[cut..]);
            }
            (train, test)
        }
    };
    if train_idx.is_empty() || test_idx.is_empty() {
        return Err(Error::Invalid(format!(
            "train fraction {train_fraction} leaves an empty side for {n} samples"
        )));
    }
    let pick = |idx: &[usize]| idx.iter().map(|&i| ds.samples[i].clone()).collect();
    Ok((
        ds.with_samples(pick(&train_idx), SplitTag::Train, train_fraction),
        ds.with_samples(pick(&test_idx), SplitTag::Test, train_fraction),
    ))
}
