use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod inputs;
mod solve;
mod sweep;
mod synth;

#[derive(Parser, Debug)]
#[command(name = "gnrs", version, about = "Dense non-rigid structure from motion on Grassmann manifolds")]
struct Cli {
    /// Worker threads for data-parallel kernels and sweeps.
    #[arg(long, global = true, env = "GNRS_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Reconstruct shapes from measurements and cameras.
    Solve(solve::SolveArgs),
    /// Write a synthetic scene with ground truth.
    Synth(synth::SynthArgs),
    /// Paired solver errors on noisy synthetic scenes.
    NoiseSweep(sweep::NoiseArgs),
    /// Data fit and ground-truth fit across reshuffled-shape ranks.
    RankSweep(sweep::RankArgs),
    /// Algorithm 1 with spatial and/or temporal priors switched off.
    Ablation(sweep::AblationArgs),
    /// Reconstruction error across per-group subspace dimensions.
    PSweep(sweep::PArgs),
    /// Algorithm 2 across energy thresholds for the projected dimension.
    TauSweep(sweep::TauArgs),
}

/// Solver choice, configuration file and per-solver overrides.
#[derive(Args, Debug, Clone)]
pub struct SolverArgs {
    /// 1: spatial-temporal solver, 2: geometry-aware solver.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub algo: u8,
    /// `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Spatial clusters (Algorithm 1).
    #[arg(long)]
    pub ks: Option<usize>,
    /// Temporal clusters (Algorithm 1).
    #[arg(long)]
    pub kt: Option<usize>,
    /// Spatial subspace dimension (Algorithm 1).
    #[arg(long)]
    pub ps: Option<usize>,
    /// Temporal subspace dimension (Algorithm 1).
    #[arg(long)]
    pub pt: Option<usize>,
    /// Spatial clusters (Algorithm 2).
    #[arg(long)]
    pub k: Option<usize>,
    /// Subspace dimension (Algorithm 2).
    #[arg(long)]
    pub p: Option<usize>,
    /// Energy threshold for the projected dimension (Algorithm 2).
    #[arg(long)]
    pub tau: Option<f64>,
    /// Projected dimension, overriding `--tau` (Algorithm 2).
    #[arg(long)]
    pub dtilde: Option<usize>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Evaluate e3d with a per-frame depth flip instead of one global flip.
    #[arg(long)]
    pub per_frame_flip: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} worker threads: {e}");
            return ExitCode::FAILURE;
        }
    }
    let result = match cli.command {
        Command::Solve(a) => solve::run(a),
        Command::Synth(a) => synth::run(a),
        Command::NoiseSweep(a) => sweep::noise(a),
        Command::RankSweep(a) => sweep::rank(a),
        Command::Ablation(a) => sweep::ablation(a),
        Command::PSweep(a) => sweep::p_sweep(a),
        Command::TauSweep(a) => sweep::tau(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
