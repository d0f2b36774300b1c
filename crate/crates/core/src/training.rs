//! Mini-batch training of the predictor on the mean squared Frobenius error.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelTensor;
use crate::dataset::{Dataset, DatasetSample};
use crate::error::{config_err, shape_err, Error, Result};
use crate::nn::{Adam, Real};
use crate::predictor::{encode_batch, encode_target, save_checkpoint, Checkpoint, PredictorModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub n_epochs: usize,
    pub initial_lr: f64,
    pub lr_milestones: Vec<usize>,
    pub lr_decay: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Write a periodic checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    /// Rescale gradients whose global L2 norm exceeds this value.
    pub clip_grad_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    /// Workstation-sized schedule.
    pub fn desk() -> Self {
        Self {
            batch_size: 64,
            n_epochs: 50,
            initial_lr: 1e-3,
            lr_milestones: vec![25, 40],
            lr_decay: 0.1,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            checkpoint_every: 0,
            clip_grad_norm: None,
        }
    }

    /// Batch 512, 300 epochs, decay 0.1 at epochs 100, 200 and 250.
    pub fn paper() -> Self {
        Self {
            batch_size: 512,
            n_epochs: 300,
            lr_milestones: vec![100, 200, 250],
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return config_err("batch_size must be at least 1");
        }
        if self.n_epochs == 0 {
            return config_err("n_epochs must be at least 1");
        }
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return config_err(format!("initial_lr must be positive, got {}", self.initial_lr));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return config_err(format!("lr_decay must lie in (0, 1], got {}", self.lr_decay));
        }
        if self.lr_milestones.windows(2).any(|w| w[0] >= w[1]) {
            return config_err("lr_milestones must be strictly increasing");
        }
        if let Some(&last) = self.lr_milestones.last() {
            if last >= self.n_epochs {
                return config_err(format!(
                    "milestone {last} is not below n_epochs = {}",
                    self.n_epochs
                ));
            }
        }
        if let Some(c) = self.clip_grad_norm {
            if !(c > 0.0) {
                return config_err("clip_grad_norm must be positive");
            }
        }
        Ok(())
    }
}

/// `initial_lr * lr_decay^(milestones <= epoch)`.
pub fn lr_at_epoch(epoch: usize, cfg: &TrainConfig) -> f64 {
    let drops = cfg.lr_milestones.iter().filter(|&&m| m <= epoch).count();
    cfg.initial_lr * cfg.lr_decay.powi(drops as i32)
}

/// Squared Frobenius error of one prediction.
pub fn squared_error(pred: &ChannelTensor, target: &ChannelTensor) -> Result<f64> {
    if pred.shape() != target.shape() {
        return shape_err(format!("prediction {} vs target {}", pred.shape(), target.shape()));
    }
    Ok(pred
        .as_slice()
        .iter()
        .zip(target.as_slice())
        .map(|(a, b)| (a - b).norm_sqr())
        .sum())
}

/// Mean over the batch of per-sample squared Frobenius errors.
pub fn mse_loss(pred: &[ChannelTensor], target: &[ChannelTensor]) -> Result<f64> {
    if pred.len() != target.len() {
        return shape_err(format!("{} predictions for {} targets", pred.len(), target.len()));
    }
    if pred.is_empty() {
        return Err(Error::Invalid("empty batch".into()));
    }
    let mut total = 0.0;
    for (p, t) in pred.iter().zip(target) {
        total += squared_error(p, t)?;
    }
    Ok(total / pred.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

const HISTORY_HEADER: &str = "epoch,train_loss,test_loss,lr,seconds";

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(HISTORY_HEADER);
        s.push('\n');
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{:e},{:e},{:e},{:.3}",
                r.epoch, r.train_loss, r.test_loss, r.lr, r.seconds
            );
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(HISTORY_HEADER) {
            return Err(Error::Format("history log header".into()));
        }
        let bad = |line: &str| Error::Format(format!("history row `{line}`"));
        let mut records = Vec::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad(line));
            }
            records.push(EpochRecord {
                epoch: f[0].parse().map_err(|_| bad(line))?,
                train_loss: f[1].parse().map_err(|_| bad(line))?,
                test_loss: f[2].parse().map_err(|_| bad(line))?,
                lr: f[3].parse().map_err(|_| bad(line))?,
                seconds: f[4].parse().map_err(|_| bad(line))?,
            });
        }
        Ok(Self { records })
    }

    /// Record with the lowest test loss.
    pub fn best(&self) -> Option<&EpochRecord> {
        self.records.iter().min_by(|a, b| a.test_loss.total_cmp(&b.test_loss))
    }
}

/// Everything needed to continue an interrupted run.
#[derive(Debug, Clone)]
pub struct ResumeState<T: Real> {
    /// History of the epochs already completed.
    pub history: TrainHistory,
    pub optimizer: Adam<T>,
    /// Best model so far with its test loss and epoch.
    pub best: Option<(PredictorModel<T>, f64, usize)>,
}

/// Reported after every completed epoch.
pub struct EpochEvent<'a, T: Real> {
    pub record: &'a EpochRecord,
    pub model: &'a PredictorModel<T>,
    pub optimizer: &'a Adam<T>,
    /// This epoch set a new best test loss.
    pub improved: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T: Real> {
    pub best: PredictorModel<T>,
    pub best_epoch: usize,
    pub best_test_loss: f64,
    pub final_model: PredictorModel<T>,
    pub history: TrainHistory,
    pub optimizer: Adam<T>,
}

fn check_dataset<T: Real>(ds: &Dataset, model: &PredictorModel<T>, what: &str) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::Invalid(format!("{what} set is empty")));
    }
    ds.validate()?;
    if ds.shape != model.arch.shape() || ds.history_len != model.arch.history_len {
        return shape_err(format!(
            "{what} set has shape {} and L={}, model expects {} and L={}",
            ds.shape,
            ds.history_len,
            model.arch.shape(),
            model.arch.history_len
        ));
    }
    Ok(())
}

fn encode_targets<T: Real>(samples: &[&DatasetSample], out_dim: usize) -> Vec<T> {
    let mut t = vec![T::zero(); samples.len() * out_dim];
    for (s, chunk) in samples.iter().zip(t.chunks_mut(out_dim)) {
        encode_target(&s.target, chunk);
    }
    t
}

fn batch_loss<T: Real>(y: &[T], target: &[T]) -> f64 {
    y.iter()
        .zip(target)
        .map(|(a, b)| {
            let d = (*a - *b).to_f64().unwrap_or(f64::NAN);
            d * d
        })
        .sum()
}

/// Mean per-sample loss with running normalization statistics.
pub fn evaluate_loss<T: Real>(model: &PredictorModel<T>, ds: &Dataset, batch_size: usize) -> Result<f64> {
    check_dataset(ds, model, "evaluation")?;
    let out_dim = model.arch.output_dim();
    let mut total = 0.0;
    for chunk in ds.samples.chunks(batch_size.max(1)) {
        let refs: Vec<&DatasetSample> = chunk.iter().collect();
        let windows: Vec<&[std::sync::Arc<ChannelTensor>]> = refs.iter().map(|s| &s.inputs[..]).collect();
        let x = encode_batch::<T, _>(&windows, &model.arch)?;
        let y = model.forward_eval(&x)?;
        total += batch_loss(&y, &encode_targets::<T>(&refs, out_dim));
    }
    Ok(total / ds.len() as f64)
}

fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx
}

fn clip_gradients<T: Real>(model: &mut PredictorModel<T>, max_norm: f64) {
    let mut params = model.params_mut();
    let norm_sq: f64 = params
        .iter()
        .flat_map(|(_, p)| p.grad.iter())
        .map(|g| {
            let g = g.to_f64().unwrap_or(f64::NAN);
            g * g
        })
        .sum();
    let norm = norm_sq.sqrt();
    if norm > max_norm {
        let s = T::of(max_norm / norm);
        for (_, p) in params.iter_mut() {
            p.grad.iter_mut().for_each(|g| *g *= s);
        }
    }
}

/// One optimization step on `samples`; returns the summed per-sample loss.
fn train_step<T: Real>(
    model: &mut PredictorModel<T>,
    opt: &mut Adam<T>,
    samples: &[&DatasetSample],
    lr: f64,
    clip: Option<f64>,
) -> Result<f64> {
    let windows: Vec<&[std::sync::Arc<ChannelTensor>]> = samples.iter().map(|s| &s.inputs[..]).collect();
    let x = encode_batch::<T, _>(&windows, &model.arch)?;
    let target = encode_targets::<T>(samples, model.arch.output_dim());
    model.zero_grad();
    let y = model.forward_train(&x)?;
    let loss = batch_loss(&y, &target);
    if !loss.is_finite() {
        model.clear_cache();
        return Ok(loss);
    }
    let scale = T::of(2.0 / samples.len() as f64);
    let dy: Vec<T> = y.iter().zip(&target).map(|(a, b)| (*a - *b) * scale).collect();
    model.backward(&dy);
    if let Some(c) = clip {
        clip_gradients(model, c);
    }
    let mut params: Vec<_> = model.params_mut().into_iter().map(|(_, p)| p).collect();
    opt.step(&mut params, lr);
    Ok(loss)
}

pub fn train<T: Real>(model: PredictorModel<T>, train_ds: &Dataset, test_ds: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome<T>> {
    train_with(model, train_ds, test_ds, cfg, None, |_| Ok(()))
}

/// Runs epochs `resume.history.len() .. cfg.n_epochs`, calling `on_epoch`
/// after each one. An error from the callback stops training.
pub fn train_with<T: Real, F>(
    mut model: PredictorModel<T>,
    train_ds: &Dataset,
    test_ds: &Dataset,
    cfg: &TrainConfig,
    resume: Option<ResumeState<T>>,
    mut on_epoch: F,
) -> Result<TrainOutcome<T>>
where
    F: FnMut(EpochEvent<'_, T>) -> Result<()>,
{
    cfg.validate()?;
    check_dataset(train_ds, &model, "training")?;
    check_dataset(test_ds, &model, "test")?;

    let (mut history, mut opt, mut best) = match resume {
        Some(r) => (r.history, r.optimizer, r.best),
        None => (TrainHistory::default(), Adam::default(), None),
    };
    let start = history.len();

    for epoch in start..cfg.n_epochs {
        let clock = Instant::now();
        let lr = lr_at_epoch(epoch, cfg);
        let order = epoch_order(train_ds.len(), cfg.seed, epoch);
        let mut total = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let samples: Vec<&DatasetSample> = idx.iter().map(|&i| &train_ds.samples[i]).collect();
            let loss = train_step(&mut model, &mut opt, &samples, lr, cfg.clip_grad_norm)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    loss: loss / samples.len() as f64,
                });
            }
            total += loss;
        }
        let train_loss = total / train_ds.len() as f64;
        let test_loss = evaluate_loss(&model, test_ds, cfg.batch_size)?;
        if !test_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: usize::MAX,
                loss: test_loss,
            });
        }
        let record = EpochRecord {
            epoch,
            train_loss,
            test_loss,
            lr,
            seconds: clock.elapsed().as_secs_f64(),
        };
        let improved = best.as_ref().map_or(true, |(_, l, _)| test_loss < *l);
        if improved {
            best = Some((model.clone(), test_loss, epoch));
        }
        history.records.push(record);
        on_epoch(EpochEvent {
            record: history.records.last().expect("just pushed"),
            model: &model,
            optimizer: &opt,
            improved,
        })?;
    }

    let (best, best_test_loss, best_epoch) = match best {
        Some(b) => b,
        None => {
            let l = evaluate_loss(&model, test_ds, cfg.batch_size)?;
            (model.clone(), l, start.saturating_sub(1))
        }
    };
    Ok(TrainOutcome {
        best,
        best_epoch,
        best_test_loss,
        final_model: model,
        history,
        optimizer: opt,
    })
}

/// File names written by [`CheckpointWriter`].
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const HISTORY_FILE: &str = "history.csv";

/// Epoch callback that keeps `best.ckpt`, `final.ckpt` (latest epoch, with
/// optimizer state) and `history.csv` current in a directory, plus
/// `epoch_NNNN.ckpt` every `checkpoint_every` epochs.
pub struct CheckpointWriter {
    dir: PathBuf,
    every: usize,
    norm_power: Vec<f64>,
    history: TrainHistory,
}

impl CheckpointWriter {
    pub fn new(dir: &Path, cfg: &TrainConfig, norm_power: Vec<f64>, history: TrainHistory) -> Self {
        Self {
            dir: dir.to_path_buf(),
            every: cfg.checkpoint_every,
            norm_power,
            history,
        }
    }

    pub fn on_epoch(&mut self, ev: EpochEvent<'_, f32>) -> Result<()> {
        let e = ev.record.epoch;
        self.history.records.push(ev.record.clone());
        let ckpt = Checkpoint::cnn(ev.model.clone(), e, self.norm_power.clone(), Some(ev.optimizer.clone()));
        if ev.improved {
            let best = Checkpoint { optimizer: None, ..ckpt.clone() };
            save_checkpoint(&self.dir.join(BEST_CHECKPOINT), &best)?;
        }
        if self.every > 0 && (e + 1) % self.every == 0 {
            save_checkpoint(&self.dir.join(format!("epoch_{:04}.ckpt", e + 1)), &ckpt)?;
        }
        save_checkpoint(&self.dir.join(FINAL_CHECKPOINT), &ckpt)?;
        crate::dataset::write_atomic(&self.dir.join(HISTORY_FILE), self.history.to_csv().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::{build_model, load_checkpoint, ArchConfig};
    use crate::sim::SimConfig;
    use approx::assert_relative_eq;
    use num_complex::Complex64;

    fn tiny_data(n_seq: usize, q: usize, speed: f64) -> Dataset {
        let cfg = SimConfig {
            n_tx: 4,
            n_rx: 2,
            n_subbands: 8,
            n_paths: 4,
            seed: 5,
            ..SimConfig::default()
        };
        let seqs: Vec<_> = (0..n_seq)
            .map(|i| {
                crate::sim::generate_sequence(&SimConfig { seed: 5 + i as u64, ..cfg.clone() }, speed, q).unwrap()
            })
            .collect();
        crate::dataset::build_mixed(&seqs, 1, 0).unwrap()
    }

    fn tiny_arch() -> ArchConfig {
        ArchConfig {
            history_len: 1,
            n_rx: 2,
            n_tx: 4,
            n_subbands: 8,
            n_res_blocks: 1,
            ..ArchConfig::default()
        }
    }

    #[test]
    fn lr_schedule_examples() {
        let cfg = TrainConfig::paper();
        assert_eq!(lr_at_epoch(0, &cfg), 1e-3);
        assert_eq!(lr_at_epoch(99, &cfg), 1e-3);
        assert_relative_eq!(lr_at_epoch(100, &cfg), 1e-4, max_relative = 1e-12);
        assert_relative_eq!(lr_at_epoch(250, &cfg), 1e-6, max_relative = 1e-12);
        let lrs: Vec<f64> = (0..cfg.n_epochs).map(|e| lr_at_epoch(e, &cfg)).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(lrs.windows(2).filter(|w| w[1] < w[0]).count(), 3);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::desk().validate().is_ok());
        assert!(TrainConfig::paper().validate().is_ok());
        let bad = |f: fn(&mut TrainConfig)| {
            let mut c = TrainConfig::desk();
            f(&mut c);
            c.validate().is_err()
        };
        assert!(bad(|c| c.batch_size = 0));
        assert!(bad(|c| c.lr_milestones = vec![40, 25]));
        assert!(bad(|c| c.lr_milestones = vec![25, 50]));
        assert!(bad(|c| c.lr_decay = 0.0));
        assert!(bad(|c| c.lr_decay = 1.5));
        assert!(bad(|c| c.clip_grad_norm = Some(-1.0)));
    }

    #[test]
    fn mse_examples() {
        let shape = crate::TensorShape::new(2, 1, 1);
        let t = ChannelTensor::from_fn(shape, 0.0, |k, _, _| Complex64::new(k as f64, 1.0));
        let p = ChannelTensor::from_fn(shape, 0.0, |k, _, _| Complex64::new(k as f64 + 1.0, 1.0));
        assert_eq!(mse_loss(&[t.clone()], &[t.clone()]).unwrap(), 0.0);
        assert_eq!(mse_loss(&[p.clone()], &[t.clone()]).unwrap(), 2.0);
        assert_eq!(mse_loss(&[p, t.clone()], &[t.clone(), t.clone()]).unwrap(), 1.0);
        let other = ChannelTensor::zeros(crate::TensorShape::new(1, 1, 2));
        assert!(mse_loss(&[other], &[t]).is_err());
    }

    #[test]
    fn history_csv_round_trip() {
        let h = TrainHistory {
            records: vec![
                EpochRecord { epoch: 0, train_loss: 1.25, test_loss: 0.1 + 0.2, lr: 1e-3, seconds: 1.5 },
                EpochRecord { epoch: 1, train_loss: 3e-7, test_loss: 2.0, lr: 1e-4, seconds: 0.25 },
            ],
        };
        let csv = h.to_csv();
        assert!(csv.starts_with("epoch,train_loss,test_loss,lr,seconds\n"));
        assert_eq!(TrainHistory::from_csv(&csv).unwrap(), h);
        assert_eq!(h.best().unwrap().epoch, 0);
        assert!(TrainHistory::from_csv("nope\n").is_err());
    }

    #[test]
    fn one_epoch_and_determinism() {
        let ds = tiny_data(1, 24, 30.0);
        let (tr, te) = crate::dataset::split(&ds, 0.7, 1).unwrap();
        let cfg = TrainConfig {
            batch_size: 4,
            n_epochs: 2,
            lr_milestones: vec![1],
            seed: 3,
            ..TrainConfig::desk()
        };
        let run = || {
            let m = build_model::<f64>(&tiny_arch(), 1).unwrap();
            train(m, &tr, &te, &cfg).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.history.len(), 2);
        assert!(a.history.records.iter().all(|r| r.train_loss.is_finite() && r.test_loss.is_finite()));
        let strip = |h: &TrainHistory| -> Vec<(f64, f64, f64)> {
            h.records.iter().map(|r| (r.train_loss, r.test_loss, r.lr)).collect()
        };
        assert_eq!(strip(&a.history), strip(&b.history));
        assert_eq!(a.final_model.named_tensors(), b.final_model.named_tensors());
        assert_eq!(a.history.records[1].lr, 1e-4);
        assert_eq!(a.best_test_loss, a.history.best().unwrap().test_loss);
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let ds = tiny_data(1, 20, 30.0);
        let (tr, te) = crate::dataset::split(&ds, 0.7, 1).unwrap();
        let cfg = TrainConfig {
            batch_size: 4,
            n_epochs: 3,
            lr_milestones: vec![],
            ..TrainConfig::desk()
        };
        let m = build_model::<f64>(&tiny_arch(), 2).unwrap();
        let full = train(m.clone(), &tr, &te, &cfg).unwrap();
        let first = train(m, &tr, &te, &TrainConfig { n_epochs: 1, ..cfg.clone() }).unwrap();
        let resumed = train_with(
            first.final_model,
            &tr,
            &te,
            &cfg,
            Some(ResumeState {
                history: first.history,
                optimizer: first.optimizer,
                best: Some((first.best, first.best_test_loss, first.best_epoch)),
            }),
            |_| Ok(()),
        )
        .unwrap();
        assert_eq!(resumed.history.records[2].epoch, 2);
        assert_eq!(resumed.final_model.named_tensors(), full.final_model.named_tensors());
        assert_eq!(resumed.history.records[2].test_loss, full.history.records[2].test_loss);
    }

    #[test]
    fn shape_mismatch_is_refused() {
        let ds = tiny_data(1, 12, 30.0);
        let arch = ArchConfig { n_subbands: 16, ..tiny_arch() };
        let m = build_model::<f32>(&arch, 0).unwrap();
        assert!(matches!(train(m, &ds, &ds, &TrainConfig::desk()), Err(Error::Shape(_))));
    }

    #[test]
    fn non_finite_loss_aborts_with_location() {
        let ds = tiny_data(1, 12, 30.0);
        let mut m = build_model::<f32>(&tiny_arch(), 0).unwrap();
        for (name, p) in m.params_mut() {
            if name == "fc.bias" {
                p.value[0] = f32::NAN;
            }
        }
        let cfg = TrainConfig { n_epochs: 1, lr_milestones: vec![], ..TrainConfig::desk() };
        match train(m, &ds, &ds, &cfg) {
            Err(Error::NonFiniteLoss { epoch, batch, loss }) => {
                assert_eq!((epoch, batch), (0, 0));
                assert!(loss.is_nan());
            }
            other => panic!("expected NonFiniteLoss, got {other:?}"),
        }
    }

    #[test]
    fn clipping_bounds_the_update() {
        let ds = tiny_data(1, 12, 30.0);
        let m = build_model::<f64>(&tiny_arch(), 0).unwrap();
        let samples: Vec<&DatasetSample> = ds.samples.iter().collect();
        let mut clipped = m.clone();
        let windows: Vec<_> = samples.iter().map(|s| &s.inputs[..]).collect();
        let x = encode_batch::<f64, _>(&windows, &m.arch).unwrap();
        clipped.zero_grad();
        let y = clipped.forward_train(&x).unwrap();
        clipped.backward(&y);
        clip_gradients(&mut clipped, 1e-3);
        let norm: f64 = clipped.params_mut().iter().flat_map(|(_, p)| p.grad.iter()).map(|g| g * g).sum::<f64>().sqrt();
        assert_relative_eq!(norm, 1e-3, max_relative = 1e-9);
    }

    #[test]
    fn tiny_step_does_not_increase_loss() {
        let ds = tiny_data(1, 10, 30.0);
        let samples: Vec<&DatasetSample> = ds.samples.iter().collect();
        let m = build_model::<f64>(&tiny_arch(), 4).unwrap();
        let windows: Vec<_> = samples.iter().map(|s| &s.inputs[..]).collect();
        let x = encode_batch::<f64, _>(&windows, &m.arch).unwrap();
        let target = encode_targets::<f64>(&samples, m.arch.output_dim());
        let loss_of = |m: &mut PredictorModel<f64>| {
            let y = m.forward_train(&x).unwrap();
            m.clear_cache();
            batch_loss(&y, &target)
        };
        let mut probe = m.clone();
        let before = loss_of(&mut probe);
        let mut stepped = m.clone();
        stepped.zero_grad();
        let y = stepped.forward_train(&x).unwrap();
        let dy: Vec<f64> = y.iter().zip(&target).map(|(a, b)| 2.0 * (a - b) / samples.len() as f64).collect();
        stepped.backward(&dy);
        let lr = 1e-7;
        for (_, p) in stepped.params_mut() {
            for (v, g) in p.value.iter_mut().zip(&p.grad) {
                *v -= lr * g;
            }
        }
        let after = loss_of(&mut stepped);
        assert!(after <= before, "{after} > {before}");
    }

    #[test]
    fn checkpoint_round_trip_reproduces_test_loss() {
        let ds = tiny_data(2, 16, 40.0);
        let (tr, te) = crate::dataset::split(&ds, 0.7, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig { batch_size: 4, n_epochs: 2, lr_milestones: vec![], checkpoint_every: 1, ..TrainConfig::desk() };
        let m = build_model::<f32>(&tiny_arch(), 6).unwrap();
        let mut writer = CheckpointWriter::new(dir.path(), &cfg, vec![1.0, 2.0], TrainHistory::default());
        let out = train_with(m, &tr, &te, &cfg, None, |ev| writer.on_epoch(ev)).unwrap();
        for f in [BEST_CHECKPOINT, FINAL_CHECKPOINT, HISTORY_FILE, "epoch_0001.ckpt", "epoch_0002.ckpt"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let loaded = load_checkpoint(&dir.path().join(FINAL_CHECKPOINT)).unwrap();
        assert_eq!(loaded.epoch, 1);
        assert_eq!(loaded.norm_power, vec![1.0, 2.0]);
        let model = loaded.model.unwrap();
        assert_eq!(model.named_tensors(), out.final_model.named_tensors());
        assert_eq!(
            evaluate_loss(&model, &te, 4).unwrap(),
            evaluate_loss(&out.final_model, &te, 4).unwrap()
        );
        let opt = loaded.optimizer.unwrap();
        assert_eq!(opt.state, out.optimizer.state);
        let best = load_checkpoint(&dir.path().join(BEST_CHECKPOINT)).unwrap();
        assert_eq!(best.epoch, out.best_epoch);
        assert!(best.optimizer.is_none());
        let hist = TrainHistory::from_csv(&std::fs::read_to_string(dir.path().join(HISTORY_FILE)).unwrap()).unwrap();
        assert_eq!(hist.len(), 2);
    }

    #[test]
    fn overfits_a_small_set() {
        let mut ds = tiny_data(1, 9, 30.0);
        ds.samples.truncate(8);
        let cfg = TrainConfig {
            batch_size: 8,
            n_epochs: 500,
            initial_lr: 3e-3,
            lr_milestones: vec![],
            ..TrainConfig::desk()
        };
        let m = build_model::<f32>(&tiny_arch(), 0).unwrap();
        let out = train(m, &ds, &ds, &cfg).unwrap();
        let first = out.history.records[0].train_loss;
        let last = out.history.records.last().unwrap().train_loss;
        assert!(last < 1e-3 * first, "{first} -> {last}");
    }
}
