use std::path::PathBuf;
use std::process::ExitCode;

use chanpred_cli::commands::{self, write_config};
use chanpred::training::BEST_CHECKPOINT as BEST;
use chanpred_cli::{CliResult, ExperimentConfig, Layout, Overrides, Preset};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "chanpred", version, about = "MIMO-OFDM channel prediction experiments")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML experiment config; keys it omits keep the preset's values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Preset::Desk)]
    preset: Preset,
    /// Seed for simulation, shuffling, splitting, initialization and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides `out_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Evaluation SNR in dB.
    #[arg(long, global = true, allow_negative_numbers = true)]
    snr_db: Option<f64>,
    /// Drop the residual blocks.
    #[arg(long, global = true)]
    no_residual: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate, normalize, window, mix and split the datasets.
    Simulate,
    /// Train the predictor.
    Train {
        /// Directory holding train.csif and test.csif [default: <out>/data].
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// Continue from <out>/train/final.ckpt.
        #[arg(long)]
        resume: bool,
    },
    /// Score a checkpoint and sample-and-hold on a dataset.
    Evaluate {
        /// [default: <out>/train/best.ckpt]
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// [default: <out>/data/test.csif]
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Draw figures from one or more evaluation reports.
    Report {
        /// report.json files; the first drives the heatmaps and histogram
        /// [default: <out>/eval/report.json].
        #[arg(long = "report")]
        reports: Vec<PathBuf>,
    },
    /// simulate, train, evaluate and report in one go.
    All,
}

fn resolve(g: &Global) -> CliResult<ExperimentConfig> {
    let mut cfg = match &g.config {
        Some(path) => ExperimentConfig::load(path, g.preset)?,
        None => ExperimentConfig::preset(g.preset),
    };
    cfg.apply(&Overrides {
        seed: g.seed,
        out_dir: g.out.clone(),
        snr_db: g.snr_db,
        no_residual: g.no_residual,
    });
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = resolve(&cli.global)?;
    let out = cfg.out_dir.clone();
    let layout = Layout::new(&out);
    match cli.command {
        Command::Simulate => {
            cfg.validate()?;
            write_config(&cfg, &layout)?;
            let s = commands::cmd_simulate(&cfg, &out)?;
            for (speed, n) in &s.per_speed {
                println!("speed {speed} km/h: {n} samples");
            }
            println!("total {} samples: {} train, {} test", s.total, s.train, s.test);
            println!("wrote {} and {}", s.train_path.display(), s.test_path.display());
        }
        Command::Train { data_dir, resume } => {
            cfg.validate()?;
            let data_dir = data_dir.unwrap_or_else(|| layout.data_dir());
            let t = commands::cmd_train(&cfg, &data_dir, &out, resume)?;
            write_config(&cfg, &layout)?;
            println!(
                "best test loss {:.6e} at epoch {}; checkpoints in {}",
                t.best_test_loss,
                t.best_epoch + 1,
                t.dir.display()
            );
        }
        Command::Evaluate { checkpoint, dataset } => {
            let checkpoint = checkpoint.unwrap_or_else(|| layout.train_dir().join(BEST));
            let dataset = dataset.unwrap_or_else(|| layout.test_set());
            let r = commands::cmd_evaluate(&cfg, &checkpoint, &dataset, &out)?;
            println!("{}", r.summary_line());
        }
        Command::Report { mut reports } => {
            if reports.is_empty() {
                reports.push(layout.report());
            }
            for f in commands::cmd_report(&reports, &out)? {
                println!("wrote {}", f.display());
            }
        }
        Command::All => {
            let p = commands::cmd_all(&cfg, &out)?;
            println!("total {} samples: {} train, {} test", p.simulate.total, p.simulate.train, p.simulate.test);
            println!("{}", p.report.summary_line());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
