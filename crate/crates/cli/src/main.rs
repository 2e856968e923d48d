//! `narrm`: simulate, train, evaluate, sweep, calibrate, table.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "narrm", version, about = "NARNN interference prediction and finite-blocklength resource control")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Top-level seed, overriding the config.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Override one config key, e.g. `--set sweep.steps=100000`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the interference series used for training.
    Simulate,
    /// Train the NARNN on a series and score it on the test split.
    Train {
        /// Series CSV (`t,interference_linear`); defaults to <out>/series.csv.
        #[arg(long, value_name = "PATH")]
        series: Option<PathBuf>,
        /// Model file to write; defaults to <out>/model.narnn.
        #[arg(long, value_name = "PATH")]
        model_out: Option<PathBuf>,
    },
    /// Score every predictor at the scenario's target BLER.
    Evaluate {
        #[command(flatten)]
        model: ModelArg,
        /// Per-step records written per predictor.
        #[arg(long, default_value_t = 1000, value_name = "N")]
        records: usize,
    },
    /// Score every predictor at every target of `[sweep]`.
    Sweep {
        #[command(flatten)]
        model: ModelArg,
    },
    /// Find the NAR scaling α matching the quantile benchmark per target.
    Calibrate {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long, value_enum)]
        mode: Mode,
    },
    /// Prediction accuracy over neuron counts, activations and delay taps.
    Table {
        /// Series CSV; generated from the scenario when omitted.
        #[arg(long, value_name = "PATH")]
        series: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct ModelArg {
    /// Trained model (binary or text); defaults to <out>/model.narnn.
    #[arg(long, value_name = "PATH")]
    model: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    MatchRu,
    MatchOutage,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };

    let mut overrides = cli.common.overrides.clone();
    if let Some(seed) = cli.common.seed {
        overrides.push(format!("seed={seed}"));
    }
    if let Some(out) = &cli.common.out {
        overrides.push(format!("out_dir={:?}", out.display().to_string()));
    }
    let cfg = match RunConfig::load(cli.common.config.as_deref(), &overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    if let Some(n) = cli.common.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }

    let result = match cli.command {
        Command::Simulate => commands::simulate(&cfg),
        Command::Train { series, model_out } => commands::train(&cfg, series, model_out),
        Command::Evaluate { model, records } => commands::evaluate(&cfg, model.model, records),
        Command::Sweep { model } => commands::sweep(&cfg, model.model),
        Command::Calibrate { model, mode } => {
            let mode = match mode {
                Mode::MatchRu => narnn_rrm::eval::CalibrationMode::MatchResourceUsage,
                Mode::MatchOutage => narnn_rrm::eval::CalibrationMode::MatchOutage,
            };
            commands::calibrate(&cfg, model.model, mode)
        }
        Command::Table { series } => commands::table(&cfg, series),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
