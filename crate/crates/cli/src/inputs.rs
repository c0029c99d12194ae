//! Loading inputs and assembling solver configurations from flags.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use gnrs::config::{Algo1Config, Algo2Config, ConfigFile};
use gnrs::data::{MeasurementMatrix, RotationStack, ShapeMatrix};
use gnrs::experiments::{FlipMode, Solver};
use gnrs::io::{load_matrix, MatrixFormat};
use gnrs::Matrix64;

use crate::SolverArgs;

/// Measurement, camera and optional ground-truth files.
#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Measurements `W` (2F x P), `.csv` or `.bin`.
    #[arg(long)]
    pub w: PathBuf,
    /// Stacked cameras `R` (2F x 3).
    #[arg(long)]
    pub r: PathBuf,
    /// Ground-truth shape (3F x P).
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Subtract each frame's centroid from the measurements.
    #[arg(long)]
    pub center: bool,
}

pub struct Data {
    pub w: MeasurementMatrix<f64>,
    pub r: RotationStack<f64>,
    pub gt: Option<ShapeMatrix<f64>>,
}

fn read(path: &Path, what: &str) -> Result<Matrix64> {
    load_matrix(path, MatrixFormat::from_path(path)).with_context(|| format!("reading {what} from {}", path.display()))
}

impl DataArgs {
    pub fn load(&self) -> Result<Data> {
        let w = MeasurementMatrix::new(read(&self.w, "W")?)
            .with_context(|| format!("W ({}) must be 2F x P", self.w.display()))?;
        let w = if self.center { w.centered() } else { w };
        let r = RotationStack::from_matrix(&read(&self.r, "R")?)
            .with_context(|| format!("R ({}) must be 2F x 3 with orthonormal row pairs", self.r.display()))?;
        if r.frames() != w.frames() {
            bail!(
                "R ({}) holds {} cameras but W ({}) has {} frames; expected R to be {} x 3",
                self.r.display(),
                r.frames(),
                self.w.display(),
                w.frames(),
                2 * w.frames()
            );
        }
        let gt = match &self.gt {
            Some(path) => {
                let gt = ShapeMatrix::new(read(path, "ground truth")?)
                    .with_context(|| format!("ground truth ({}) must be 3F x P", path.display()))?;
                if gt.frames() != w.frames() || gt.points() != w.points() {
                    bail!(
                        "ground truth ({}) is {}x{}; expected {}x{} (3F x P)",
                        path.display(),
                        3 * gt.frames(),
                        gt.points(),
                        3 * w.frames(),
                        w.points()
                    );
                }
                Some(gt)
            }
            None => None,
        };
        Ok(Data { w, r, gt })
    }
}

impl SolverArgs {
    fn config_file(&self) -> Result<Option<ConfigFile>> {
        self.config
            .as_ref()
            .map(|p| ConfigFile::load(p).with_context(|| format!("config file {}", p.display())))
            .transpose()
    }

    pub fn algo1(&self) -> Result<Algo1Config> {
        let mut cfg = Algo1Config::default();
        if let Some(file) = self.config_file()? {
            cfg.apply(&file)?;
        }
        set(&mut cfg.seed, self.seed);
        set(&mut cfg.ks, self.ks);
        set(&mut cfg.kt, self.kt);
        set(&mut cfg.ps, self.ps);
        set(&mut cfg.pt, self.pt);
        set(&mut cfg.max_iters, self.max_iters);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn algo2(&self) -> Result<Algo2Config> {
        let mut cfg = Algo2Config::default();
        if let Some(file) = self.config_file()? {
            cfg.apply(&file)?;
        }
        set(&mut cfg.seed, self.seed);
        set(&mut cfg.k, self.k);
        set(&mut cfg.p, self.p);
        set(&mut cfg.tau, self.tau);
        set(&mut cfg.max_iters, self.max_iters);
        if self.dtilde.is_some() {
            cfg.dtilde = self.dtilde;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn solver(&self) -> Result<Solver> {
        Ok(match self.algo {
            1 => Solver::Algo1(self.algo1()?),
            _ => Solver::Algo2(self.algo2()?),
        })
    }

    pub fn flip(&self) -> FlipMode {
        if self.per_frame_flip {
            FlipMode::PerFrame
        } else {
            FlipMode::Global
        }
    }
}

fn set<V>(slot: &mut V, value: Option<V>) {
    if let Some(v) = value {
        *slot = v;
    }
}

/// Buffered writer for `path`, naming the file on failure.
pub fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

pub fn finish(mut w: BufWriter<fs::File>, path: &Path) -> Result<()> {
    w.flush().with_context(|| format!("writing {}", path.display()))
}

/// `point_id,label` rows.
pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut out = create(path)?;
    writeln!(out, "point_id,label")?;
    for (id, label) in labels.iter().enumerate() {
        writeln!(out, "{id},{label}")?;
    }
    finish(out, path)
}
