use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use clap::Args;
use gnrs::experiments::{
    ablation_run, datafit_sweep, default_noise_levels, noise_sweep, singular_count_sweep, tau_sweep, Ablation,
    Table,
};
use gnrs::ShapeMatrix64;
use rayon::prelude::*;

use crate::inputs::{create, finish, DataArgs};
use crate::synth::SceneArgs;
use crate::SolverArgs;

fn write_table(table: &Table, path: &Path) -> Result<()> {
    let mut out = create(path)?;
    table.write_csv(&mut out)?;
    finish(out, path)
}

fn require_gt(gt: Option<ShapeMatrix64>) -> Result<ShapeMatrix64> {
    match gt {
        Some(gt) => Ok(gt),
        None => bail!("this sweep needs --gt (3F x P ground-truth shape)"),
    }
}

#[derive(Args, Debug)]
pub struct NoiseArgs {
    #[command(flatten)]
    pub scene: SceneArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Noise levels; defaults to 0.01, 0.015, ..., 0.055.
    #[arg(long, value_delimiter = ',')]
    pub levels: Vec<f64>,
    /// Number of paired seeds per level, starting at `--seed` (default 0).
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn noise(args: NoiseArgs) -> Result<()> {
    let levels = if args.levels.is_empty() {
        default_noise_levels()
    } else {
        args.levels.clone()
    };
    let first = args.solver.seed.unwrap_or(0);
    let seeds: Vec<u64> = (first..first + args.seeds).collect();
    let table = noise_sweep(
        &args.scene.params(first),
        &levels,
        &seeds,
        &args.solver.algo1()?,
        &args.solver.algo2()?,
        args.solver.flip(),
    )?;
    write_table(&table, &args.out)
}

#[derive(Args, Debug)]
pub struct RankArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long, value_delimiter = ',', default_values_t = 1..=10usize)]
    pub ranks: Vec<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn rank(args: RankArgs) -> Result<()> {
    let data = args.data.load()?;
    let gt = require_gt(data.gt)?;
    let table = datafit_sweep(&data.w, &data.r, &gt, &args.ranks, &args.solver.solver()?)?;
    write_table(&table, &args.out)
}

#[derive(Args, Debug)]
pub struct AblationArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Modes among none, spatial, temporal, both.
    #[arg(long, value_delimiter = ',', default_values_t = ["none".to_string(), "spatial".into(), "temporal".into(), "both".into()])]
    pub modes: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn ablation(args: AblationArgs) -> Result<()> {
    let data = args.data.load()?;
    let gt = require_gt(data.gt)?;
    let modes = args
        .modes
        .iter()
        .map(|m| m.parse::<Ablation>())
        .collect::<gnrs::Result<Vec<_>>>()?;
    let cfg = args.solver.algo1()?;
    let flip = args.solver.flip();
    let errors = modes
        .par_iter()
        .map(|&m| ablation_run(&data.w, &data.r, &gt, m, &cfg, flip))
        .collect::<gnrs::Result<Vec<_>>>()?;
    let mut out = create(&args.out)?;
    writeln!(out, "mode,e3d")?;
    for (m, e) in modes.iter().zip(&errors) {
        writeln!(out, "{},{e}", m.as_str())?;
    }
    finish(out, &args.out)
}

#[derive(Args, Debug)]
pub struct PArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long, value_delimiter = ',', default_values_t = 1..=8usize)]
    pub dims: Vec<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn p_sweep(args: PArgs) -> Result<()> {
    let data = args.data.load()?;
    let gt = require_gt(data.gt)?;
    let flip = args.solver.flip();
    let table = singular_count_sweep(&data.w, &data.r, &gt, &args.dims, &args.solver.solver()?, flip)?;
    write_table(&table, &args.out)
}

#[derive(Args, Debug)]
pub struct TauArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long, value_delimiter = ',', default_values_t = [0.8, 0.85, 0.9, 0.95, 0.97, 0.99])]
    pub taus: Vec<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn tau(args: TauArgs) -> Result<()> {
    let data = args.data.load()?;
    let gt = require_gt(data.gt)?;
    let flip = args.solver.flip();
    let table = tau_sweep(&data.w, &data.r, &gt, &args.taus, &args.solver.algo2()?, flip)?;
    write_table(&table, &args.out)
}
