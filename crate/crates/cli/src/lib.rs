//! Reproducible channel-prediction experiments: dataset simulation,
//! training, evaluation and figures, driven by one TOML config.
//!
//! Every command writes below a single output directory:
//!
//! ```text
//! <out>/config.toml            resolved configuration
//! <out>/data/{train,test}.csif datasets (+ .meta.json sidecars)
//! <out>/train/                 best.ckpt, final.ckpt, history.csv
//! <out>/eval/                  report.json, samples.csv, summary.txt
//! <out>/figures/               heatmaps, histogram, CDF (+ CSV data)
//! ```

pub mod commands;
pub mod config;
pub mod error;
pub mod figures;

pub use commands::{cmd_all, cmd_evaluate, cmd_report, cmd_simulate, cmd_train, Layout};
pub use config::{ExperimentConfig, Overrides, Preset};
pub use error::{CliError, CliResult};
