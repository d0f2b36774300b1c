//! Experiment configuration.
//!
//! A config file is TOML with the sections `[simulator]`, `[dataset]`,
//! `[model]`, `[training]` and `[evaluation]` plus a top-level `out_dir`.
//! Any key left out keeps the value of the selected preset.
//!
//! ```toml
//! out_dir = "runs/mid-speed"
//!
//! [simulator]
//! speed_range = { start = 30, stop = 50, step = 10 }
//! n_paths = 16
//!
//! [dataset]
//! seq_len = 2000
//! sequences_per_speed = 5
//!
//! [training]
//! n_epochs = 50
//! ```

use std::path::{Path, PathBuf};

use chanpred::dataset::SplitMode;
use chanpred::predictor::{fc_input_dim, Activation, ArchConfig, NormLayer};
use chanpred::sim::SimConfig;
use chanpred::training::TrainConfig;
use chanpred::TensorShape;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Workstation-sized training schedule.
    #[default]
    Desk,
    /// Batch 512, 300 epochs, milestones 100/200/250.
    Paper,
}

/// Inclusive arithmetic progression of speeds in km/h.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeedRange {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl SpeedRange {
    pub fn expand(&self) -> CliResult<Vec<f64>> {
        let SpeedRange { start, stop, step } = *self;
        if !(start.is_finite() && stop.is_finite() && step > 0.0) || stop < start {
            return Err(CliError::Config(format!(
                "speed_range needs finite start <= stop and step > 0, got {start}..{stop} step {step}"
            )));
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize + 1;
        Ok((0..n).map(|i| start + i as f64 * step).collect())
    }
}

/// Simulator parameters plus the speeds to generate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulatorSection {
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub speeds: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub speed_range: Option<SpeedRange>,
    #[serde(flatten)]
    pub config: SimConfig,
}

impl Default for SimulatorSection {
    fn default() -> Self {
        Self {
            speeds: vec![30.0],
            speed_range: None,
            config: SimConfig::default(),
        }
    }
}

impl<'de> Deserialize<'de> for SimulatorSection {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let mut table = toml::Table::deserialize(d)?;
        let speeds = match table.remove("speeds") {
            Some(v) => v.try_into::<Vec<f64>>().map_err(D::Error::custom)?,
            None => Vec::new(),
        };
        let speed_range = match table.remove("speed_range") {
            Some(v) => Some(v.try_into::<SpeedRange>().map_err(D::Error::custom)?),
            None => None,
        };
        let config = toml::Value::Table(table)
            .try_into::<SimConfig>()
            .map_err(D::Error::custom)?;
        Ok(Self {
            speeds,
            speed_range,
            config,
        })
    }
}

impl SimulatorSection {
    pub fn speed_list(&self) -> CliResult<Vec<f64>> {
        let speeds = match (&self.speed_range, self.speeds.is_empty()) {
            (Some(_), false) => {
                return Err(CliError::Config(
                    "give either simulator.speeds or simulator.speed_range, not both".into(),
                ))
            }
            (Some(r), true) => r.expand()?,
            (None, false) => self.speeds.clone(),
            (None, true) => return Err(CliError::Config("no speeds configured".into())),
        };
        if let Some(v) = speeds.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(CliError::Config(format!("speed {v} km/h is not a non-negative number")));
        }
        Ok(speeds)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    /// Past observations per sample (L).
    pub history_len: usize,
    /// Snapshots per sequence (Q).
    pub seq_len: usize,
    pub sequences_per_speed: usize,
    pub train_fraction: f64,
    pub split_mode: SplitMode,
    pub shuffle_seed: u64,
    pub split_seed: u64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            history_len: 3,
            seq_len: 2000,
            sequences_per_speed: 5,
            train_fraction: 0.7,
            split_mode: SplitMode::Segment,
            shuffle_seed: 0,
            split_seed: 0,
        }
    }
}

/// Network options. Dimensions default to the dataset's and, when given,
/// must agree with it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub history_len: Option<usize>,
    pub n_rx: Option<usize>,
    pub n_tx: Option<usize>,
    pub n_subbands: Option<usize>,
    pub n_res_blocks: usize,
    pub use_residual: bool,
    pub activation: Activation,
    pub norm_layer: NormLayer,
}

impl Default for ModelSection {
    fn default() -> Self {
        let a = ArchConfig::default();
        Self {
            history_len: None,
            n_rx: None,
            n_tx: None,
            n_subbands: None,
            n_res_blocks: a.n_res_blocks,
            use_residual: a.use_residual,
            activation: a.activation,
            norm_layer: a.norm_layer,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub snr_db: f64,
    /// Test sample drawn in the heatmaps.
    pub heatmap_sample: usize,
    pub batch_size: usize,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            snr_db: 10.0,
            heatmap_sample: 0,
            batch_size: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub out_dir: PathBuf,
    pub simulator: SimulatorSection,
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub training: TrainConfig,
    pub evaluation: EvaluationSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::preset(Preset::Desk)
    }
}

/// Command-line overrides applied on top of a config.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub snr_db: Option<f64>,
    pub no_residual: bool,
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

impl ExperimentConfig {
    pub fn preset(p: Preset) -> Self {
        let (training, out_dir) = match p {
            Preset::Desk => (TrainConfig::desk(), "runs/desk"),
            Preset::Paper => (TrainConfig::paper(), "runs/paper"),
        };
        Self {
            out_dir: out_dir.into(),
            simulator: SimulatorSection::default(),
            dataset: DatasetSection::default(),
            model: ModelSection::default(),
            training,
            evaluation: EvaluationSection::default(),
        }
    }

    /// Parses `text` as overrides of `preset`.
    pub fn from_toml(text: &str, preset: Preset) -> CliResult<Self> {
        let over: toml::Table = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let mut base = toml::Table::try_from(Self::preset(preset)).map_err(|e| CliError::Config(e.to_string()))?;
        // a speed list in the file replaces a preset range and vice versa
        if let Some(toml::Value::Table(sim)) = over.get("simulator") {
            if sim.contains_key("speeds") || sim.contains_key("speed_range") {
                if let Some(toml::Value::Table(b)) = base.get_mut("simulator") {
                    b.remove("speeds");
                    b.remove("speed_range");
                }
            }
        }
        merge(&mut base, over);
        toml::Value::Table(base)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path, preset: Preset) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text, preset).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// `--seed` reseeds every stochastic stage.
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.simulator.config.seed = s;
            self.dataset.shuffle_seed = s;
            self.dataset.split_seed = s;
            self.training.seed = s;
        }
        if let Some(d) = &o.out_dir {
            self.out_dir = d.clone();
        }
        if let Some(snr) = o.snr_db {
            self.evaluation.snr_db = snr;
        }
        if o.no_residual {
            self.model.use_residual = false;
        }
    }

    pub fn shape(&self) -> TensorShape {
        self.simulator.config.shape()
    }

    pub fn arch(&self) -> ArchConfig {
        let m = &self.model;
        let s = self.shape();
        ArchConfig {
            history_len: m.history_len.unwrap_or(self.dataset.history_len),
            n_rx: m.n_rx.unwrap_or(s.rx),
            n_tx: m.n_tx.unwrap_or(s.tx),
            n_subbands: m.n_subbands.unwrap_or(s.subbands),
            n_res_blocks: m.n_res_blocks,
            use_residual: m.use_residual,
            activation: m.activation,
            norm_layer: m.norm_layer,
        }
    }

    /// Samples per side of the split, `(train, test)`.
    pub fn split_sizes(&self) -> CliResult<(usize, usize)> {
        let d = &self.dataset;
        let per_seq = d.seq_len.saturating_sub(d.history_len);
        let n_seq = self.simulator.speed_list()?.len() * d.sequences_per_speed;
        let train = match d.split_mode {
            SplitMode::Segment => (n_seq as f64 * per_seq as f64 * d.train_fraction).round() as usize,
            SplitMode::Temporal => n_seq * (per_seq as f64 * d.train_fraction).round() as usize,
        };
        Ok((train, n_seq * per_seq - train.min(n_seq * per_seq)))
    }

    /// Checks every cross-module constraint before any work is done.
    pub fn validate(&self) -> CliResult<()> {
        let cfg = |e: chanpred::Error| CliError::Config(e.to_string());
        self.simulator.config.validate().map_err(cfg)?;
        self.simulator.speed_list()?;

        let d = &self.dataset;
        if d.history_len == 0 {
            return Err(CliError::Config("dataset.history_len must be at least 1".into()));
        }
        if d.seq_len < 2 || d.history_len >= d.seq_len {
            return Err(CliError::Config(format!(
                "dataset.seq_len = {} must exceed history_len = {} (and be at least 2)",
                d.seq_len, d.history_len
            )));
        }
        if d.sequences_per_speed == 0 {
            return Err(CliError::Config("dataset.sequences_per_speed must be at least 1".into()));
        }
        if !(d.train_fraction > 0.0 && d.train_fraction < 1.0) {
            return Err(CliError::Config(format!(
                "dataset.train_fraction must lie in (0, 1), got {}",
                d.train_fraction
            )));
        }
        let (train, test) = self.split_sizes()?;
        if train == 0 || test == 0 {
            return Err(CliError::Config(format!(
                "split gives {train} training and {test} test samples; both must be non-empty"
            )));
        }

        let arch = self.arch();
        let s = self.shape();
        for (what, given, want) in [
            ("history_len", arch.history_len, d.history_len),
            ("n_rx", arch.n_rx, s.rx),
            ("n_tx", arch.n_tx, s.tx),
            ("n_subbands", arch.n_subbands, s.subbands),
        ] {
            if given != want {
                return Err(CliError::Config(format!(
                    "model.{what} = {given} disagrees with the dataset value {want}"
                )));
            }
        }
        fc_input_dim(arch.n_rx, arch.n_tx, arch.n_subbands).map_err(cfg)?;
        arch.validate().map_err(cfg)?;

        self.training.validate().map_err(cfg)?;

        let e = &self.evaluation;
        if !e.snr_db.is_finite() {
            return Err(CliError::Config(format!("evaluation.snr_db = {} is not finite", e.snr_db)));
        }
        if e.batch_size == 0 {
            return Err(CliError::Config("evaluation.batch_size must be at least 1".into()));
        }
        if self.out_dir.as_os_str().is_empty() {
            return Err(CliError::Config("out_dir is empty".into()));
        }
        Ok(())
    }
}
