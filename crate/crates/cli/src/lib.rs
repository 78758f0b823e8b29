//! Command-line front end: single runs, replay-steps × storage sweeps,
//! baselines, dataset generation and config validation.

pub mod config;
pub mod experiment;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Parser, Subcommand};
use onepass_core::{write_examples, DatasetSpec, Error as CoreError};

use crate::config::{ConfigError, ExperimentConfig};
use crate::experiment::{
    aggregate_reports, run_jobs, sweep_jobs, write_atomic, write_report, Job,
};

#[derive(Debug, Parser)]
#[command(name = "onepass", version, about = "One-pass training with error-prioritized replay")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train once with the replay settings of the config's `harness` section.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides both the run seed and the stream order seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every (replay steps, storage fraction) cell for every seed.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
    /// Multi-epoch training without replay; `--epochs 1` is the naive one-pass run.
    Baseline {
        #[arg(long)]
        epochs: u32,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic dataset spec out as `train.opds` and `test.opds`.
    GenData {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parse and check a config without running anything.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

enum Failure {
    Config(ConfigError),
    Runtime(anyhow::Error),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        // a config problem that only surfaced once data was loaded
        if let Some(CoreError::Config { field, message }) = e.downcast_ref::<CoreError>() {
            return Failure::Config(ConfigError {
                field: field.clone(),
                message: message.clone(),
            });
        }
        Failure::Runtime(e)
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code: 0 on success, 2 for usage or config errors, 1 for
/// runtime failures.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            2
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run { config, seed, out } => cmd_run(&config, seed, out),
        Command::Sweep {
            config,
            out,
            parallel,
        } => cmd_sweep(&config, &out, parallel),
        Command::Baseline {
            epochs,
            config,
            out,
        } => cmd_baseline(epochs, &config, out),
        Command::GenData { spec, out } => cmd_gen_data(&spec, &out),
        Command::ValidateConfig { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            println!("ok {}", cfg.hash());
            Ok(())
        }
    }
}

fn out_dir(cfg: &ExperimentConfig, flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn cmd_run(path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<(), Failure> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.harness.seed = s;
        cfg.dataset.order_seed = s;
    }
    let out = out_dir(&cfg, out);
    let dataset = cfg.dataset.load().map_err(anyhow::Error::from)?;
    let job = Job::Epr {
        replay_steps: cfg.harness.replay_steps,
        storage_fraction: cfg.harness.storage_fraction,
        seed_index: 0,
    };
    let report = experiment::run_job(&cfg, &dataset, &job)?;
    write_report(&out, &report)?;
    println!(
        "accuracy {:.4}  storage {:.4}  compute {:.4}  -> {}",
        report.top1_accuracy,
        report.storage_metric,
        report.compute_metric,
        out.display()
    );
    Ok(())
}

fn finish(cfg: &ExperimentConfig, out: &Path, jobs: &[Job], parallel: usize) -> Result<(), Failure> {
    let dataset = cfg.dataset.load().map_err(anyhow::Error::from)?;
    let reports = run_jobs(cfg, &dataset, jobs, parallel)?;
    for (job, report) in jobs.iter().zip(&reports) {
        write_report(&out.join(job.dir()), report)?;
    }
    write_atomic(&out.join("config.json"), cfg.to_json().as_bytes())?;
    let summary = aggregate_reports(&reports)?;
    write_atomic(&out.join("summary.csv"), summary.to_csv().as_bytes())?;
    print!("{}", summary.table());
    Ok(())
}

fn cmd_sweep(path: &Path, out: &Path, parallel: usize) -> Result<(), Failure> {
    let cfg = ExperimentConfig::load(path)?;
    cfg.validate_sweep()?;
    let jobs = sweep_jobs(&cfg);
    finish(&cfg, out, &jobs, parallel)
}

fn cmd_baseline(epochs: u32, path: &Path, out: Option<PathBuf>) -> Result<(), Failure> {
    let cfg = ExperimentConfig::load(path)?;
    if epochs == 0 {
        return Err(ConfigError {
            field: "epochs".into(),
            message: "must be at least 1".into(),
        }
        .into());
    }
    let out = out_dir(&cfg, out);
    let jobs: Vec<Job> = (0..cfg.n_seeds)
        .map(|i| {
            if epochs == 1 {
                Job::Naive { seed_index: i }
            } else {
                Job::MultiEpoch {
                    epochs,
                    seed_index: i,
                }
            }
        })
        .collect();
    finish(&cfg, &out, &jobs, 1)
}

fn cmd_gen_data(spec_path: &Path, out: &Path) -> Result<(), Failure> {
    let text = std::fs::read_to_string(spec_path)
        .with_context(|| format!("reading {}", spec_path.display()))?;
    let spec: DatasetSpec = serde_json::from_str(&text).map_err(|e| ConfigError {
        field: String::new(),
        message: e.to_string(),
    })?;
    spec.validate().map_err(|e| match e {
        CoreError::Config { field, message } => ConfigError { field, message },
        other => ConfigError {
            field: String::new(),
            message: other.to_string(),
        },
    })?;
    let ds = onepass_core::generate_blobs(&spec).map_err(anyhow::Error::from)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_examples(out.join("train.opds"), &ds.train, ds.feature_dim, ds.n_classes)
        .map_err(anyhow::Error::from)?;
    write_examples(out.join("test.opds"), &ds.test, ds.feature_dim, ds.n_classes)
        .map_err(anyhow::Error::from)?;
    println!(
        "wrote {} train / {} test examples to {}",
        ds.train.len(),
        ds.test.len(),
        out.display()
    );
    Ok(())
}
