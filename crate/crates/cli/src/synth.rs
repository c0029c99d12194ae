use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use gnrs::experiments::{add_noise, generate_scene, SceneParams};
use gnrs::io::{save_matrix, MatrixFormat};

use crate::inputs::write_labels;

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum Preset {
    /// One rigid group.
    Rigid,
    /// Two orthogonal groups over two basis shapes.
    Planted,
}

/// Scene shape; unset fields come from the preset.
#[derive(Args, Debug, Clone)]
pub struct SceneArgs {
    #[arg(long, value_enum, default_value = "planted")]
    pub preset: Preset,
    #[arg(long, default_value_t = 20)]
    pub frames: usize,
    #[arg(long, default_value_t = 200)]
    pub points: usize,
    #[arg(long)]
    pub clusters: Option<usize>,
    #[arg(long)]
    pub subspace_dim: Option<usize>,
    #[arg(long)]
    pub modes: Option<usize>,
    #[arg(long)]
    pub deform_scale: Option<f64>,
    #[arg(long)]
    pub offset: Option<f64>,
    #[arg(long)]
    pub spread: Option<f64>,
}

impl SceneArgs {
    pub fn params(&self, seed: u64) -> SceneParams {
        let mut p = match self.preset {
            Preset::Rigid => SceneParams::rigid(self.frames, self.points, seed),
            Preset::Planted => SceneParams::planted(self.frames, self.points, seed),
        };
        p.clusters = self.clusters.unwrap_or(p.clusters);
        p.subspace_dim = self.subspace_dim.unwrap_or(p.subspace_dim);
        p.modes = self.modes.unwrap_or(p.modes);
        p.deform_scale = self.deform_scale.unwrap_or(p.deform_scale);
        p.offset = self.offset.unwrap_or(p.offset);
        p.spread = self.spread.unwrap_or(p.spread);
        p
    }
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[command(flatten)]
    pub scene: SceneArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Noise level: standard deviation relative to max |W|.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Output directory for W, R, GT and labels.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "csv")]
    pub format: MatrixFormat,
}

pub fn run(args: SynthArgs) -> Result<()> {
    let scene = generate_scene::<f64>(&args.scene.params(args.seed))?;
    let w = if args.noise > 0.0 {
        add_noise(scene.w.data(), args.noise, args.seed ^ 0x5eed)?
    } else {
        scene.w.data().clone()
    };
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let ext = args.format.extension();
    for (name, m) in [("W", &w), ("R", &scene.r.to_matrix()), ("GT", scene.s_gt.data())] {
        let path = args.out.join(format!("{name}.{ext}"));
        save_matrix(m, &path, args.format).with_context(|| format!("writing {}", path.display()))?;
    }
    write_labels(&args.out.join("labels.csv"), &scene.planted_labels)
}
