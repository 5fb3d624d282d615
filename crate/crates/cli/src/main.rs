use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use predsense_core::harness::{self, ExperimentConfig, SuiteKind};
use predsense_core::stream_io::StreamEncoding;

/// Surprise-driven memory and segmentation experiments on synthetic latent streams.
#[derive(Parser, Debug)]
#[command(name = "predsense", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build all task suites and write their manifests.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Also write the test split streams in this encoding.
        #[arg(long, value_enum)]
        streams: Option<Encoding>,
    },
    /// Train the predictor of every suite and save checkpoints.
    Train(Common),
    /// Select thresholds on the tuning split.
    Sweep(Common),
    /// Run the whole pipeline and write results and summaries.
    Run(Common),
    /// Render summary CSVs into a markdown report.
    Report {
        /// Directory holding the summaries; defaults to the configured output directory.
        dir: Option<PathBuf>,
        #[arg(short, long)]
        config: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// TOML experiment config. Built-in defaults are used when omitted.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Output directory, overriding PREDSENSE_OUT and the config.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Restrict to these suites.
    #[arg(long = "suite", value_enum)]
    suites: Vec<Suite>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Suite {
    Recall,
    Count,
    Drift,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Encoding {
    Jsonl,
    Binary,
}

fn load_config(path: Option<&PathBuf>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(ExperimentConfig::default()),
    }
}

impl Common {
    fn resolve(&self) -> Result<(ExperimentConfig, PathBuf)> {
        let mut cfg = load_config(self.config.as_ref())?;
        if !self.suites.is_empty() {
            if !self.suites.contains(&Suite::Recall) {
                cfg.recall = None;
            }
            if !self.suites.contains(&Suite::Count) {
                cfg.count = None;
            }
            if !self.suites.contains(&Suite::Drift) {
                cfg.drift = None;
            }
        }
        let out = self.out.clone().unwrap_or_else(|| cfg.resolve_output_dir());
        Ok((cfg, out))
    }
}

fn suite_name(k: SuiteKind) -> String {
    k.to_string()
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Generate { common, streams } => {
            let (cfg, out) = common.resolve()?;
            let encoding = streams.map(|e| match e {
                Encoding::Jsonl => StreamEncoding::Jsonl,
                Encoding::Binary => StreamEncoding::Binary,
            });
            let files = harness::generate_suites(&cfg, &out, encoding)?;
            for f in files {
                println!("{}", f.display());
            }
        }
        Command::Train(common) => {
            let (cfg, out) = common.resolve()?;
            for (kind, history) in harness::train_predictors(&cfg, &out)? {
                let last = history.last().copied().unwrap_or(f64::NAN);
                println!("{:<8} epochs {:>3}  final loss {last:.6}", suite_name(kind), history.len());
            }
            println!("checkpoints in {}", out.display());
        }
        Command::Sweep(common) => {
            let (cfg, out) = common.resolve()?;
            let table = harness::run_sweep(&cfg, &out)?;
            for ((suite, method, duration), tau) in &table.selected {
                println!("{:<8} {:<18} {duration:>6}  tau {tau}", suite_name(*suite), method);
            }
        }
        Command::Run(common) => {
            let (cfg, out) = common.resolve()?;
            let outcome = harness::run_experiment(&cfg, &out)?;
            println!("{} tasks completed, {} failed", outcome.completed, outcome.failed.len());
            for (id, err) in &outcome.failed {
                eprintln!("task {id} failed: {err}");
            }
            println!("results in {}", out.display());
            return Ok(outcome.all_completed());
        }
        Command::Report { dir, config } => {
            let dir = match dir {
                Some(d) => d,
                None => load_config(config.as_ref())?.resolve_output_dir(),
            };
            if !dir.is_dir() {
                bail!("no output directory at {}", dir.display());
            }
            println!("{}", harness::write_report(&dir)?.display());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
