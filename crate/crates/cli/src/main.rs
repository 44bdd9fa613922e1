//! `cobra`: subject-level confidence scores, correlation with clinical
//! assessments, Fréchet distances and synthetic cohorts from the command line.
//!
//! Exit codes: 0 success, 2 input error, 3 scoring policy error,
//! 4 statistical degeneracy.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cobra_core::scoring::MissingPolicy;
use cobra_core::stats::MIN_BOOTSTRAP_ITERS;
use cobra_core::ErrorClass;

mod commands;
mod output;

use commands::DEFAULT_SEED;

#[derive(Parser)]
#[command(name = "cobra", version, about = "Confidence-based subject scoring and analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Policy {
    /// Report the subject's score as missing.
    Exclude,
    /// Fail with exit code 3.
    Error,
}

#[derive(Clone, Copy, ValueEnum)]
enum CiKind {
    Fisher,
    Bootstrap,
}

#[derive(Args)]
struct CiOpts {
    /// Interval method for correlations.
    #[arg(long, value_enum, default_value = "fisher")]
    ci: CiKind,
    /// Confidence level.
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Bootstrap iterations.
    #[arg(long, default_value_t = 2000, value_parser = clap::value_parser!(u64).range(MIN_BOOTSTRAP_ITERS as u64..))]
    iters: u64,
    /// Seed for resampling.
    #[arg(long, env = "COBRA_SEED")]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Score every subject of a predictions file.
    Score {
        predictions: PathBuf,
        /// Relevant classes: comma-separated indices or class names.
        #[arg(long)]
        relevant: String,
        /// Class names, in index order, when the header carries indices.
        #[arg(long)]
        class_names: Option<String>,
        /// One score per subject and group.
        #[arg(long)]
        by_group: bool,
        #[arg(long, value_enum, default_value = "exclude")]
        missing_policy: Policy,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Correlate subject scores with clinical assessments.
    Correlate {
        scores: PathBuf,
        assessments: PathBuf,
        /// `subject_id,stratum` file for stratified correlations.
        #[arg(long)]
        strata: Option<PathBuf>,
        #[command(flatten)]
        ci: CiOpts,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fréchet distance of each subject's features to a reference population.
    Fid {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        subjects: PathBuf,
        #[arg(long)]
        assessments: PathBuf,
        /// Predictions for the subject features, used with --relevant.
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Predictions for the reference features, used with --relevant.
        #[arg(long)]
        reference_predictions: Option<PathBuf>,
        /// Keep only rows predicted in these classes.
        #[arg(long)]
        relevant: Option<String>,
        #[command(flatten)]
        ci: CiOpts,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic cohort.
    Simulate {
        /// JSON cohort configuration; omitted fields take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, env = "COBRA_SEED")]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the reference classifier on labelled features.
    Train {
        data: PathBuf,
        /// JSON training configuration; flags override it.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Number of classes (default: largest label + 1).
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        hidden: Option<usize>,
        #[arg(long)]
        init_scale: Option<f64>,
        #[arg(long, env = "COBRA_SEED")]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply a trained model to a features file.
    Predict {
        #[arg(long)]
        model: PathBuf,
        data: PathBuf,
        #[arg(long)]
        class_names: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Scores, correlation tables, metrics and plot data for one run.
    Report {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        assessments: PathBuf,
        #[arg(long)]
        relevant: String,
        #[arg(long)]
        class_names: Option<String>,
        #[arg(long)]
        strata: Option<PathBuf>,
        /// `subject_id,label` file; adds per-label classifier metrics.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[command(flatten)]
        ci: CiOpts,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> cobra_core::Result<()> {
    match cli.command {
        Command::Score {
            predictions,
            relevant,
            class_names,
            by_group,
            missing_policy,
            out,
        } => commands::score(&commands::ScoreArgs {
            predictions,
            relevant,
            class_names,
            by_group,
            missing_policy: match missing_policy {
                Policy::Exclude => MissingPolicy::ExcludeSubject,
                Policy::Error => MissingPolicy::ErrorOut,
            },
            out,
        }),
        Command::Correlate {
            scores,
            assessments,
            strata,
            ci,
            out,
        } => commands::correlate(&commands::CorrelateArgs {
            scores,
            assessments,
            strata,
            bootstrap: matches!(ci.ci, CiKind::Bootstrap),
            level: ci.level,
            iters: ci.iters as usize,
            seed: ci.seed.unwrap_or(DEFAULT_SEED),
            out,
        }),
        Command::Fid {
            reference,
            subjects,
            assessments,
            predictions,
            reference_predictions,
            relevant,
            ci,
            out,
        } => commands::fid(&commands::FidArgs {
            reference,
            subjects,
            assessments,
            predictions,
            reference_predictions,
            relevant,
            bootstrap: matches!(ci.ci, CiKind::Bootstrap),
            level: ci.level,
            iters: ci.iters as usize,
            seed: ci.seed.unwrap_or(DEFAULT_SEED),
            out,
        }),
        Command::Simulate { config, seed, out } => commands::simulate(&commands::SimulateArgs { config, seed, out }),
        Command::Train {
            data,
            config,
            classes,
            learning_rate,
            epochs,
            batch_size,
            hidden,
            init_scale,
            seed,
            out,
        } => commands::train_cmd(&commands::TrainArgs {
            data,
            config,
            classes,
            learning_rate,
            epochs,
            batch_size,
            hidden,
            init_scale,
            seed,
            out,
        }),
        Command::Predict {
            model,
            data,
            class_names,
            out,
        } => commands::predict(&commands::PredictArgs {
            model,
            data,
            class_names,
            out,
        }),
        Command::Report {
            predictions,
            assessments,
            relevant,
            class_names,
            strata,
            labels,
            ci,
            out,
        } => commands::report(&commands::ReportArgs {
            predictions,
            assessments,
            relevant,
            class_names,
            strata,
            labels,
            bootstrap: matches!(ci.ci, CiKind::Bootstrap),
            level: ci.level,
            iters: ci.iters as usize,
            seed: ci.seed.unwrap_or(DEFAULT_SEED),
            out,
        }),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cobra: error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Input => 2,
                ErrorClass::ScoringPolicy => 3,
                ErrorClass::Statistical => 4,
            })
        }
    }
}
