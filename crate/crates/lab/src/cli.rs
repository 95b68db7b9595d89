//! Flag parsing for the `ssvae` binary.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ssvae_core::ObjectiveChoice;

use crate::commands::{self, EstimateArgs, RatioArgs, RatioTarget, TrainArgs, TrainSource, VerifyArgs};
use crate::{LabError, Outcome};

#[derive(Debug, Parser)]
#[command(name = "ssvae", version, about = "Exact-enumeration SSVAE objectives over finite spaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check the objective identities on a spec and on seeded random instances.
    Verify {
        #[arg(long)]
        spec: Option<PathBuf>,
        /// `a..b`, `a..=b`, `n` or a comma list.
        #[arg(long, default_value = "0..10")]
        seeds: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
    /// Finite-N InfoNCE estimates against the exact objective.
    Estimate {
        #[arg(long)]
        spec: PathBuf,
        /// Comma-separated negative counts.
        #[arg(long, default_value = "1,4,16,64,256")]
        negatives: String,
        #[arg(long, default_value_t = 20000)]
        mc_reps: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
    /// Gradient ascent on one objective.
    Train(TrainFlags),
    /// Fit the density-ratio classifier.
    Ratio {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, value_enum, default_value_t = TargetFlag::Joint)]
        target: TargetFlag,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct TrainFlags {
    /// Model spec to train; omit to use the shared-factor generator.
    #[arg(long, conflicts_with_all = ["s_count", "noise_count", "noise_level", "latent_count"])]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    s_count: usize,
    #[arg(long, default_value_t = 2)]
    noise_count: usize,
    #[arg(long, default_value_t = 0.0)]
    noise_level: f64,
    #[arg(long)]
    latent_count: Option<usize>,
    #[arg(long, value_parser = parse_objective)]
    objective: ObjectiveChoice,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    step_size: f64,
    #[arg(long, default_value_t = 20000)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-8)]
    tolerance: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TargetFlag {
    Marginal,
    Joint,
}

fn parse_objective(s: &str) -> Result<ObjectiveChoice, String> {
    ObjectiveChoice::parse(s).ok_or_else(|| {
        let names: Vec<_> = ObjectiveChoice::ALL.iter().map(|c| c.name()).collect();
        format!("unknown objective `{s}`, expected one of {}", names.join(", "))
    })
}

/// Parses `a..b`, `a..=b`, a single seed or a comma-separated list.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>, LabError> {
    let bad = || LabError::Usage(format!("cannot read seeds `{s}`"));
    let num = |t: &str| t.trim().parse::<u64>().map_err(|_| bad());
    if let Some((a, b)) = s.split_once("..=") {
        return Ok((num(a)?..=num(b)?).collect());
    }
    if let Some((a, b)) = s.split_once("..") {
        return Ok((num(a)?..num(b)?).collect());
    }
    s.split(',').map(num).collect()
}

pub fn parse_list(s: &str) -> Result<Vec<usize>, LabError> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| LabError::Usage(format!("cannot read `{t}` in list `{s}`")))
        })
        .collect()
}

fn dispatch(command: Command) -> Result<Outcome, LabError> {
    match command {
        Command::Verify {
            spec,
            seeds,
            out,
            parallel,
        } => commands::verify(&VerifyArgs {
            spec,
            seeds: parse_seeds(&seeds)?,
            out,
            parallel,
        }),
        Command::Estimate {
            spec,
            negatives,
            mc_reps,
            seed,
            out,
            parallel,
        } => commands::estimate(&EstimateArgs {
            spec,
            negatives: parse_list(&negatives)?,
            mc_reps: usize::try_from(mc_reps).map_err(|_| LabError::Usage("--mc-reps too large".into()))?,
            seed,
            out,
            parallel,
        }),
        Command::Train(f) => commands::train(&TrainArgs {
            source: match f.spec {
                Some(path) => TrainSource::Spec(path),
                None => TrainSource::SharedFactor {
                    s_count: f.s_count,
                    noise_count: f.noise_count,
                    noise_level: f.noise_level,
                    latent_count: f.latent_count,
                },
            },
            objective: f.objective,
            seed: f.seed,
            step_size: f.step_size,
            max_iters: f.max_iters,
            tolerance: f.tolerance,
            out: f.out,
        }),
        Command::Ratio { spec, target, out } => commands::ratio(&RatioArgs {
            spec,
            target: match target {
                TargetFlag::Marginal => RatioTarget::Marginal,
                TargetFlag::Joint => RatioTarget::Joint,
            },
            out,
        }),
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// exit code. Diagnostics go to stderr.
pub fn run<I, T>(argv: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { Outcome::InputError.code() } else { Outcome::Success.code() };
        }
    };
    match dispatch(cli.command) {
        Ok(outcome) => outcome.code(),
        Err(e) => {
            eprintln!("ssvae: {e}");
            e.outcome().code()
        }
    }
}
