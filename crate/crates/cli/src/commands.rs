use std::fs;
use std::path::{Path, PathBuf};

use chanpred::dataset::{self, split_with_mode, Dataset, DatasetBuilder};
use chanpred::eval::{evaluate, ChannelPredictor, EvalOptions, EvalReport, SampleAndHold};
use chanpred::predictor::{build_model, load_checkpoint, ModelKind, PredictorModel};
use chanpred::sim::{generate_sequence, SimConfig};
use chanpred::training::{
    train_with, CheckpointWriter, ResumeState, TrainHistory, BEST_CHECKPOINT, FINAL_CHECKPOINT, HISTORY_FILE,
};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::figures;

/// Where each command reads and writes under the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn data_dir(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn train_set(&self) -> PathBuf {
        self.data_dir().join("train.csif")
    }

    pub fn test_set(&self) -> PathBuf {
        self.data_dir().join("test.csif")
    }

    pub fn train_dir(&self) -> PathBuf {
        self.root.join("train")
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.root.join("eval")
    }

    pub fn report(&self) -> PathBuf {
        self.eval_dir().join("report.json")
    }

    pub fn figures_dir(&self) -> PathBuf {
        self.root.join("figures")
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn require(path: &Path) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Missing(path.display().to_string()))
    }
}

/// Writes the resolved config next to the outputs it produced.
pub fn write_config(cfg: &ExperimentConfig, layout: &Layout) -> CliResult<()> {
    create_dir(&layout.root)?;
    dataset::write_atomic(&layout.config(), cfg.to_toml()?.as_bytes())?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateSummary {
    pub total: usize,
    pub train: usize,
    pub test: usize,
    /// `(speed km/h, samples)` over the whole dataset.
    pub per_speed: Vec<(f32, usize)>,
    pub train_path: PathBuf,
    pub test_path: PathBuf,
}

/// Simulator seed of sequence `i` at speed index `j`.
pub fn sequence_seed(base: u64, j: usize, i: usize, per_speed: usize) -> u64 {
    base.wrapping_add((j * per_speed + i) as u64)
}

/// Generates, normalizes, windows and mixes every configured sequence.
pub fn build_dataset(cfg: &ExperimentConfig) -> CliResult<Dataset> {
    let d = &cfg.dataset;
    let mut builder = DatasetBuilder::new(d.history_len);
    for (j, &speed) in cfg.simulator.speed_list()?.iter().enumerate() {
        for i in 0..d.sequences_per_speed {
            let sim = SimConfig {
                seed: sequence_seed(cfg.simulator.config.seed, j, i, d.sequences_per_speed),
                ..cfg.simulator.config.clone()
            };
            builder.push(generate_sequence(&sim, speed, d.seq_len)?)?;
        }
    }
    Ok(builder.finish(d.shuffle_seed)?)
}

/// Writes `train.csif` and `test.csif` (with sidecars) under `out/data`.
pub fn cmd_simulate(cfg: &ExperimentConfig, out: &Path) -> CliResult<SimulateSummary> {
    cfg.validate()?;
    let layout = Layout::new(out);
    let all = build_dataset(cfg)?;
    let (train, test) = split_with_mode(&all, cfg.dataset.train_fraction, cfg.dataset.split_seed, cfg.dataset.split_mode)?;
    create_dir(&layout.data_dir())?;
    let (train_path, test_path) = (layout.train_set(), layout.test_set());
    dataset::save(&train, &train_path)?;
    if let Err(e) = dataset::save(&test, &test_path) {
        let _ = fs::remove_file(&train_path);
        let _ = fs::remove_file(dataset::sidecar_path(&train_path));
        return Err(e.into());
    }
    Ok(SimulateSummary {
        total: all.len(),
        train: train.len(),
        test: test.len(),
        per_speed: all.counts_by_speed(),
        train_path,
        test_path,
    })
}

fn load_dataset(path: &Path) -> CliResult<Dataset> {
    require(path)?;
    Ok(dataset::load(path)?)
}

fn check_against_config(ds: &Dataset, cfg: &ExperimentConfig, path: &Path) -> CliResult<()> {
    let arch = cfg.arch();
    if ds.shape != arch.shape() || ds.history_len != arch.history_len {
        return Err(CliError::Config(format!(
            "{} holds K={}, Nr={}, Nt={}, L={} but the model is configured for K={}, Nr={}, Nt={}, L={}",
            path.display(),
            ds.shape.subbands,
            ds.shape.rx,
            ds.shape.tx,
            ds.history_len,
            arch.n_subbands,
            arch.n_rx,
            arch.n_tx,
            arch.history_len
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub history: TrainHistory,
    pub best_epoch: usize,
    pub best_test_loss: f64,
    pub dir: PathBuf,
}

fn resume_state(dir: &Path, cfg: &ExperimentConfig) -> CliResult<(PredictorModel<f32>, ResumeState<f32>)> {
    let final_path = dir.join(FINAL_CHECKPOINT);
    let history_path = dir.join(HISTORY_FILE);
    require(&final_path)?;
    require(&history_path)?;
    let last = load_checkpoint(&final_path)?;
    let (model, optimizer) = match (last.model, last.optimizer) {
        (Some(m), Some(o)) => (m, o),
        _ => {
            return Err(CliError::Config(format!(
                "{} has no model or optimizer state to resume from",
                final_path.display()
            )))
        }
    };
    if model.arch != cfg.arch() {
        return Err(CliError::Config(format!(
            "{} was trained with a different architecture",
            final_path.display()
        )));
    }
    let text = fs::read_to_string(&history_path).map_err(|e| CliError::io(&history_path, e))?;
    let mut history = TrainHistory::from_csv(&text)?;
    history.records.truncate(last.epoch + 1);
    if history.len() != last.epoch + 1 {
        return Err(CliError::Missing(format!(
            "{} ends before epoch {} of {}",
            history_path.display(),
            last.epoch,
            final_path.display()
        )));
    }
    let best = match history.best() {
        Some(rec) => {
            let b = load_checkpoint(&dir.join(BEST_CHECKPOINT))?;
            b.model.map(|m| (m, rec.test_loss, rec.epoch))
        }
        None => None,
    };
    Ok((
        model,
        ResumeState {
            history,
            optimizer,
            best,
        },
    ))
}

/// Trains on `data_dir/{train,test}.csif`; writes best/final checkpoints and
/// the history log to `out/train`. With `resume`, continues from
/// `final.ckpt` at the epoch after the one it records.
pub fn cmd_train(cfg: &ExperimentConfig, data_dir: &Path, out: &Path, resume: bool) -> CliResult<TrainSummary> {
    cfg.validate()?;
    let (train_path, test_path) = (data_dir.join("train.csif"), data_dir.join("test.csif"));
    let train = load_dataset(&train_path)?;
    check_against_config(&train, cfg, &train_path)?;
    let test = load_dataset(&test_path)?;
    check_against_config(&test, cfg, &test_path)?;

    let dir = Layout::new(out).train_dir();
    let (model, state) = if resume {
        let (m, s) = resume_state(&dir, cfg)?;
        (m, Some(s))
    } else {
        (build_model::<f32>(&cfg.arch(), cfg.training.seed)?, None)
    };
    create_dir(&dir)?;
    let prior = state.as_ref().map(|s| s.history.clone()).unwrap_or_default();
    let norm_power = train.sequences.iter().map(|s| s.norm_power).collect();
    let mut writer = CheckpointWriter::new(&dir, &cfg.training, norm_power, prior);
    let n_epochs = cfg.training.n_epochs;
    let outcome = train_with(model, &train, &test, &cfg.training, state, |ev| {
        let r = ev.record;
        eprintln!(
            "epoch {}/{}  train_loss={:.6e}  test_loss={:.6e}  lr={:.1e}  {:.1}s{}",
            r.epoch + 1,
            n_epochs,
            r.train_loss,
            r.test_loss,
            r.lr,
            r.seconds,
            if ev.improved { "  *" } else { "" }
        );
        writer.on_epoch(ev)
    })?;
    Ok(TrainSummary {
        history: outcome.history,
        best_epoch: outcome.best_epoch,
        best_test_loss: outcome.best_test_loss,
        dir,
    })
}

/// Loads any checkpoint kind as a predictor.
pub fn load_predictor(path: &Path) -> CliResult<(Box<dyn ChannelPredictor>, usize, Option<chanpred::TensorShape>)> {
    require(path)?;
    let ckpt = load_checkpoint(path)?;
    Ok(match (ckpt.kind, ckpt.model) {
        (ModelKind::Cnn, Some(m)) => {
            let shape = m.arch.shape();
            (Box::new(m), ckpt.history_len, Some(shape))
        }
        (ModelKind::SampleAndHold, _) => (Box::new(SampleAndHold), ckpt.history_len, None),
        (ModelKind::Cnn, None) => {
            return Err(CliError::Missing(format!("{} holds no weights", path.display())));
        }
    })
}

/// Scores `checkpoint` and sample-and-hold on `dataset_path`; writes
/// `report.json`, `samples.csv` and `summary.txt` to `out/eval`.
pub fn cmd_evaluate(cfg: &ExperimentConfig, checkpoint: &Path, dataset_path: &Path, out: &Path) -> CliResult<EvalReport> {
    if !cfg.evaluation.snr_db.is_finite() || cfg.evaluation.batch_size == 0 {
        return Err(CliError::Config("evaluation section is invalid".into()));
    }
    let (predictor, history_len, shape) = load_predictor(checkpoint)?;
    let test = load_dataset(dataset_path)?;
    if let Some(s) = shape {
        if s != test.shape || history_len != test.history_len {
            return Err(CliError::Config(format!(
                "{} expects shape {s} and L={history_len}, {} holds {} and L={}",
                checkpoint.display(),
                dataset_path.display(),
                test.shape,
                test.history_len
            )));
        }
    }
    let opts = EvalOptions {
        snr_db: cfg.evaluation.snr_db,
        heatmap_sample: cfg.evaluation.heatmap_sample,
        batch_size: cfg.evaluation.batch_size,
    };
    let report = evaluate(&predictor, &test, &opts)?;
    let dir = Layout::new(out).eval_dir();
    create_dir(&dir)?;
    dataset::write_atomic(&dir.join("report.json"), report.to_json()?.as_bytes())?;
    dataset::write_atomic(&dir.join("samples.csv"), report.samples_csv().as_bytes())?;
    dataset::write_atomic(&dir.join("summary.txt"), format!("{}\n", report.summary_line()).as_bytes())?;
    Ok(report)
}

fn run_label(path: &Path, report: &EvalReport) -> String {
    // runs/<name>/eval/report.json -> <name>
    path.parent()
        .and_then(Path::parent)
        .and_then(Path::file_name)
        .map(|n| format!("{} ({})", n.to_string_lossy(), report.model_name))
        .unwrap_or_else(|| report.model_name.clone())
}

/// Draws figures for the first report and a CDF across all of them into
/// `out/figures`.
pub fn cmd_report(reports: &[PathBuf], out: &Path) -> CliResult<Vec<PathBuf>> {
    let first = reports
        .first()
        .ok_or_else(|| CliError::Missing("no report given".into()))?;
    let mut runs = Vec::with_capacity(reports.len());
    for p in reports {
        let r = figures::read_report(p)?;
        runs.push((run_label(p, &r), r));
    }
    let samples = first.with_file_name("samples.csv");
    require(&samples)?;
    let dir = Layout::new(out).figures_dir();
    create_dir(&dir)?;
    let mut files = figures::write_heatmaps(&runs[0].1.heatmap, &dir)?;
    files.extend(figures::write_histogram(&runs[0].1, &dir)?);
    files.extend(figures::write_cdf(&runs, &dir)?);
    Ok(files)
}

#[derive(Debug)]
pub struct PipelineSummary {
    pub simulate: SimulateSummary,
    pub train: TrainSummary,
    pub report: EvalReport,
    pub figures: Vec<PathBuf>,
}

/// simulate, train, evaluate the best checkpoint on the test split, report.
pub fn cmd_all(cfg: &ExperimentConfig, out: &Path) -> CliResult<PipelineSummary> {
    cfg.validate()?;
    let layout = Layout::new(out);
    write_config(cfg, &layout)?;
    let simulate = cmd_simulate(cfg, out)?;
    let train = cmd_train(cfg, &layout.data_dir(), out, false)?;
    let report = cmd_evaluate(cfg, &train.dir.join(BEST_CHECKPOINT), &layout.test_set(), out)?;
    let figures = cmd_report(&[layout.report()], out)?;
    Ok(PipelineSummary {
        simulate,
        train,
        report,
        figures,
    })
}
