//! `fcm` — fuzzy cognitive map simulation, learning, and evaluation.
//!
//! Subcommands:
//! * `simulate` — run one weight matrix forward from a baseline vector.
//! * `learn` — fit weight matrices to a longitudinal cohort with the genetic
//!   learner (one per participant, one shared, or one named participant).
//! * `evaluate` — score learned matrices against observed trajectories.
//! * `synth` — generate a synthetic cohort with known ground truth.
//!
//! Exit status: 0 on success, 2 for usage and configuration errors
//! (including missing input files), 1 for data and processing errors.

mod commands;
mod manifest;

use std::io::ErrorKind;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fcm_core::{Error, FitnessMode, MutationSchedule};

#[derive(Parser)]
#[command(
    name = "fcm",
    version,
    about = "Fuzzy cognitive map simulation, learning, and evaluation"
)]
struct Cli {
    /// Worker threads for parallel learning (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a weight matrix forward from a baseline vector.
    Simulate(SimulateArgs),
    /// Learn weight matrices from a longitudinal dataset.
    Learn(LearnArgs),
    /// Evaluate learned matrices against observed trajectories.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic cohort with known ground-truth matrices.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ActivationKind {
    Sigmoid,
    Clip,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeKind {
    /// One matrix per participant, fitted independently.
    OneForEach,
    /// One shared matrix, fitted to the element-wise mean participant.
    OneFitsAll,
    /// One matrix for the participant named with --participant.
    Single,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FitnessKind {
    /// Error summed over every follow-up wave.
    Trajectory,
    /// Error on the final wave only.
    Endpoint,
}

impl From<FitnessKind> for FitnessMode {
    fn from(kind: FitnessKind) -> Self {
        match kind {
            FitnessKind::Trajectory => FitnessMode::Trajectory,
            FitnessKind::Endpoint => FitnessMode::Endpoint,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScheduleKind {
    /// Mutate a fixed number of cells every generation.
    Constant,
    /// Each generation flips a fair coin between the fixed count and a count
    /// that decays linearly to 1 over the run.
    Decaying,
}

impl From<ScheduleKind> for MutationSchedule {
    fn from(kind: ScheduleKind) -> Self {
        match kind {
            ScheduleKind::Constant => MutationSchedule::Constant,
            ScheduleKind::Decaying => MutationSchedule::Decaying,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PresetKind {
    /// Generous search budget: 1,000,000 generations and 100 restarts.
    Full,
}

/// Activation flags shared by every subcommand that simulates.
#[derive(Args, Clone, Copy)]
pub struct ActivationArgs {
    /// Activation function applied after each update step.
    #[arg(long, value_enum)]
    activation: Option<ActivationKind>,

    /// Sigmoid steepness (sigmoid activation only).
    #[arg(long)]
    lambda: Option<f64>,
}

#[derive(Args)]
pub struct SimulateArgs {
    /// Weight matrix CSV: a concept-label header, then one row per source
    /// concept.
    #[arg(long)]
    weights: PathBuf,

    /// Baseline concept vector CSV: a concept-label header, then one value
    /// row.
    #[arg(long)]
    baseline: PathBuf,

    /// Update steps to run; the trajectory has steps + 1 rows.
    #[arg(long)]
    steps: usize,

    /// Concept indices (0-based, comma-separated) watched for stabilization;
    /// when every watched concept changes by less than the threshold, the
    /// run stops early. Empty: never stop early.
    #[arg(long, value_delimiter = ',')]
    output_set: Vec<usize>,

    /// Stabilization threshold for the watched concepts.
    #[arg(long, default_value_t = 0.001)]
    stabilize_threshold: f64,

    #[command(flatten)]
    activation: ActivationArgs,

    /// Output directory (writes trajectory.csv and manifest.json). Omitted:
    /// print the trajectory table to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct LearnArgs {
    /// Longitudinal dataset CSV with the long-form header
    /// participant_id,timestep,concept_id,value.
    #[arg(long)]
    data: PathBuf,

    /// Concept schema JSON for raw-valued datasets; values are min-max
    /// normalized to [0,1] before learning. Omitted: values must already be
    /// in [0,1].
    #[arg(long)]
    schema: Option<PathBuf>,

    /// What to fit.
    #[arg(long, value_enum, default_value_t = ModeKind::OneForEach)]
    mode: ModeKind,

    /// Participant id to fit (required with --mode single).
    #[arg(long)]
    participant: Option<String>,

    /// Independently seeded learner runs per matrix; the best result is
    /// kept.
    #[arg(long)]
    restarts: Option<usize>,

    /// Run every restart to completion instead of stopping at the first
    /// restart that reaches the fitness threshold.
    #[arg(long)]
    exhaustive_restarts: bool,

    /// Master seed; per-matrix seeds are derived from it. Overrides the
    /// FCM_SEED environment variable and the config file.
    #[arg(long)]
    seed: Option<u64>,

    /// Learner configuration JSON; omitted fields keep their defaults, and
    /// individual flags below override the file.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Named parameter bundle applied before individual flags.
    #[arg(long, value_enum)]
    preset: Option<PresetKind>,

    /// Generation cap per learner run.
    #[arg(long)]
    max_generations: Option<usize>,

    /// Population size (even, at least 2).
    #[arg(long)]
    gen_size: Option<usize>,

    /// Stop a run as soon as any candidate reaches this fitness.
    #[arg(long)]
    fitness_threshold: Option<f64>,

    /// Per-pair crossover probability.
    #[arg(long)]
    p_crossover: Option<f64>,

    /// Per-matrix mutation probability.
    #[arg(long)]
    p_mutation: Option<f64>,

    /// Cells rewritten per mutation.
    #[arg(long)]
    n_mutation: Option<usize>,

    /// How the mutation cell count evolves over generations.
    #[arg(long, value_enum)]
    mutation_schedule: Option<ScheduleKind>,

    /// What the fitness function scores.
    #[arg(long, value_enum)]
    fitness: Option<FitnessKind>,

    #[command(flatten)]
    activation: ActivationArgs,

    /// At the generation cap, return the best matrix of the final generation
    /// instead of the best matrix ever evaluated.
    #[arg(long)]
    no_best_ever: bool,

    /// Output directory (one weights CSV per matrix, index.csv, fitness.csv,
    /// manifest.json).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct EvaluateArgs {
    /// Longitudinal dataset CSV (same format as `learn`).
    #[arg(long)]
    data: PathBuf,

    /// Concept schema JSON for raw-valued datasets (same as `learn`).
    #[arg(long)]
    schema: Option<PathBuf>,

    /// Directory holding weight matrices and the index.csv naming them, as
    /// written by `learn` or `synth`.
    #[arg(long)]
    results: PathBuf,

    /// Participants sampled without replacement for the error report
    /// (default: the whole cohort, capped at 100).
    #[arg(long)]
    sample_size: Option<usize>,

    /// Also run the normality screen over every (wave, concept) column of
    /// the cohort.
    #[arg(long)]
    normality: bool,

    /// Sampling seed. Overrides the FCM_SEED environment variable.
    #[arg(long)]
    seed: Option<u64>,

    #[command(flatten)]
    activation: ActivationArgs,

    /// Output directory (error_report.json/.csv, optional
    /// normality.json/.csv, manifest.json).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct SynthArgs {
    /// Number of participants.
    #[arg(long = "p", visible_alias = "participants", default_value_t = 20)]
    participants: usize,

    /// Number of concepts.
    #[arg(long = "n", visible_alias = "concepts", default_value_t = 5)]
    concepts: usize,

    /// Follow-up waves after the baseline.
    #[arg(long = "T", visible_alias = "follow-ups", default_value_t = 3)]
    follow_ups: usize,

    /// Probability that each ground-truth edge is nonzero.
    #[arg(long, default_value_t = 0.4)]
    density: f64,

    /// Standard deviation of the Gaussian observation noise added to
    /// follow-up waves (the baseline stays exact).
    #[arg(long, default_value_t = 0.05)]
    noise_sd: f64,

    /// Generator seed. Overrides the FCM_SEED environment variable.
    #[arg(long)]
    seed: Option<u64>,

    #[command(flatten)]
    activation: ActivationArgs,

    /// Output directory (dataset.csv, schema.json, truth/, manifest.json).
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let started = Instant::now();
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints help/version to stdout (exit 0) and usage errors
            // to stderr (exit 2).
            let code = e.exit_code().clamp(0, 255) as u8;
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli, argv, started) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn run(cli: Cli, argv: Vec<String>, started: Instant) -> fcm_core::Result<()> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(Error::InvalidConfig("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    }
    let ctx = commands::Context {
        argv,
        started,
        threads: cli.threads,
    };
    match cli.command {
        Command::Simulate(args) => commands::run_simulate(&ctx, &args),
        Command::Learn(args) => commands::run_learn(&ctx, &args),
        Command::Evaluate(args) => commands::run_evaluate(&ctx, &args),
        Command::Synth(args) => commands::run_synth(&ctx, &args),
    }
}

/// Usage and configuration problems (including missing input files) exit
/// with 2; data and processing problems exit with 1.
fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::InvalidConfig(_)
        | Error::DimensionMismatch { .. }
        | Error::MissingModel(_)
        | Error::SampleTooSmall { .. } => 2,
        Error::Io(e) if e.kind() == ErrorKind::NotFound => 2,
        _ => 1,
    }
}
