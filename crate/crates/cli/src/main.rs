//! `flowdistill`: generate synthetic scene-flow data, pseudo-label it, train
//! and evaluate students.
//!
//! Exit status: 0 on success, 1 on usage errors, 2 when a command fails.

mod commands;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use flowdistill::teacher::TeacherKind;

#[derive(Debug, Parser)]
#[command(
    name = "flowdistill",
    version,
    about = "Scene flow distillation toolkit"
)]
struct Cli {
    /// Seed for every random choice (scenes, teacher and student init,
    /// shuffling). Overrides the seeds in config files when given.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate train and val splits from an experiment config.
    Generate {
        /// Experiment config (JSON with `version`).
        #[arg(long, value_name = "FILE")]
        config: PathBuf,
        /// Dataset directory to create.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Label the train split with default teacher settings; labels go to
    /// <DATASET>/labels/<TEACHER>/.
    Pseudolabel {
        /// Dataset directory.
        #[arg(long, value_name = "DIR")]
        dataset: PathBuf,
        #[arg(long, value_parser = parse_teacher, value_name = "nsfp|nn|gt")]
        teacher: TeacherKind,
        /// Worker threads; labels do not depend on it.
        #[arg(long, default_value_t = 1, value_name = "N")]
        jobs: usize,
    },
    /// Train a student on labeled pairs.
    Train {
        /// Dataset directory.
        #[arg(long, value_name = "DIR")]
        dataset: PathBuf,
        /// Label directory written by `pseudolabel`.
        #[arg(long, value_name = "DIR")]
        labels: PathBuf,
        /// Experiment config (student and training settings).
        #[arg(long, value_name = "FILE")]
        config: PathBuf,
        /// Checkpoint path; the config sidecar goes to <OUT>.json and the
        /// per-epoch log to <OUT>.epochs.csv.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Score a checkpoint on the val split.
    Eval {
        /// Checkpoint written by `train`.
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        /// Dataset directory.
        #[arg(long, value_name = "DIR")]
        dataset: PathBuf,
        /// Side of the centered square scored, in meters.
        #[arg(long, value_name = "METERS")]
        crop: f64,
        /// Report CSV to write.
        #[arg(long, value_name = "FILE")]
        report: PathBuf,
    },
    /// Residual endpoint heatmap of a checkpoint on the val split.
    Heatmap {
        /// Checkpoint written by `train`.
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        /// Dataset directory.
        #[arg(long, value_name = "DIR")]
        dataset: PathBuf,
        /// Heatmap spec (JSON with `version`; extent in meters, speed
        /// threshold in m/s).
        #[arg(long, value_name = "FILE")]
        spec: PathBuf,
        /// Output directory for the PGM and CSV files.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Train on growing prefixes of the train split; writes scaling.csv to
    /// the experiment's artifacts directory under the cache.
    Scaling {
        /// Experiment config.
        #[arg(long, value_name = "FILE")]
        config: PathBuf,
        /// Comma-separated fractions in (0, 1], increasing.
        #[arg(long, value_delimiter = ',', required = true, value_name = "F,F,...")]
        fractions: Vec<f64>,
    },
    /// Run every config in a directory and write one combined report to
    /// <cache>/artifacts/compare/report.csv.
    Compare {
        /// Directory of experiment configs (*.json).
        #[arg(long, value_name = "DIR")]
        configs: PathBuf,
    },
    /// Time student inference per frame pair on the val split, in ms.
    Bench {
        /// Checkpoint written by `train`.
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        /// Dataset directory.
        #[arg(long, value_name = "DIR")]
        dataset: PathBuf,
        /// Runs per pair, the first of which is discarded (>= 3).
        #[arg(long, default_value_t = 3, value_name = "N")]
        repeats: usize,
    },
}

fn parse_teacher(s: &str) -> Result<TeacherKind, String> {
    s.parse().map_err(|e: flowdistill::Error| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format(|buf, record| writeln!(buf, "[{}] {}", record.level(), record.args()))
        .target(env_logger::Target::Stderr)
        .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli.command, cli.seed) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut msg = format!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                msg.push_str(&format!("\n  caused by: {s}"));
                source = s.source();
            }
            eprintln!("{msg}");
            ExitCode::from(2)
        }
    }
}
