//! `forge`: runs the oversampling comparison pipeline from a JSON config.
//!
//! Exit codes: 0 success, 1 some grid cells failed, 2 usage or IO error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use forge_core::classifiers::ClassifierKind;
use forge_core::experiment::{
    cmd_compare, cmd_oversample, cmd_preprocess, cmd_train_eval, CellFailure, ExperimentConfig, ExperimentError,
};
use forge_core::oversample::Method;
use forge_core::par::Exec;

#[derive(Parser)]
#[command(name = "forge", version, about = "Synthetic oversampling for fraud detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; `{}` runs the built-in blob fixture.
    #[arg(long)]
    config: PathBuf,
    /// Run a single seed instead of the config's list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Clean, split and scale the dataset.
    Preprocess {
        #[command(flatten)]
        common: Common,
    },
    /// Fit the synthesizers and write synthetic rows.
    Oversample {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_method)]
        method: Option<Method>,
    },
    /// Train classifiers and score the test split.
    TrainEval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_method)]
        method: Option<Method>,
        #[arg(long, value_parser = parse_classifier)]
        classifier: Option<ClassifierKind>,
    },
    /// Run the whole method x classifier x seed grid and write the tables.
    Compare {
        #[command(flatten)]
        common: Common,
    },
}

fn parse_method(s: &str) -> Result<Method, String> {
    Method::parse(s).ok_or_else(|| format!("unknown method {s:?}"))
}

fn parse_classifier(s: &str) -> Result<ClassifierKind, String> {
    ClassifierKind::parse(s).ok_or_else(|| format!("unknown classifier {s:?}"))
}

fn load(common: &Common) -> Result<ExperimentConfig, ExperimentError> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(s) = common.seed {
        cfg = cfg.with_seed(s);
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

/// Worker count from `FORGE_THREADS`; unset means rayon's default.
fn executor() -> Result<Exec, String> {
    let Ok(raw) = std::env::var("FORGE_THREADS") else {
        return Ok(Exec::default());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("FORGE_THREADS must be a positive integer, got {raw:?}"))?;
    if n == 1 {
        return Ok(Exec::Sequential);
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| format!("thread pool: {e}"))?;
    Ok(Exec::default())
}

fn report_failures(failures: &[CellFailure]) -> ExitCode {
    if failures.is_empty() {
        return ExitCode::SUCCESS;
    }
    for f in failures {
        let clf = f.classifier.map_or("-", |k| k.name());
        eprintln!("failed: seed {} {} {}: {}", f.seed, f.method.name(), clf, f.error);
    }
    ExitCode::from(1)
}

fn run(cli: Cli, exec: Exec) -> Result<ExitCode, ExperimentError> {
    match cli.command {
        Command::Preprocess { common } => {
            let cfg = load(&common)?;
            for c in cmd_preprocess(&cfg)? {
                println!(
                    "seed {}: train {} neg / {} pos, test {} neg / {} pos",
                    c.seed, c.train_negatives, c.train_positives, c.test_negatives, c.test_positives
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Oversample { common, method } => {
            let out = cmd_oversample(&load(&common)?, method, exec)?;
            Ok(report_failures(&out.failures))
        }
        Command::TrainEval {
            common,
            method,
            classifier,
        } => {
            let out = cmd_train_eval(&load(&common)?, method, classifier, exec)?;
            Ok(report_failures(&out.failures))
        }
        Command::Compare { common } => {
            let cfg = load(&common)?;
            let grid = cmd_compare(&cfg, exec)?;
            println!(
                "{} reports in {:.1}s; tables in {}",
                grid.reports.len(),
                grid.metadata.wall_time_secs,
                cfg.out_dir.join("compare").display()
            );
            Ok(report_failures(&grid.failures))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let exec = match executor() {
        Ok(x) => x,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    match run(cli, exec) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
