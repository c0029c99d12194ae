//! Synthetic scenes with planted structure, noise, error metrics and the
//! parameter sweeps used to study the solvers.

use std::io::Write;

use nalgebra::{DMatrix, Matrix2x3, Quaternion, UnitQuaternion};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;

use crate::algo1::run_algorithm1;
use crate::algo2::run_algorithm2;
use crate::config::{Algo1Config, Algo2Config};
use crate::data::{MeasurementMatrix, RotationStack, ShapeMatrix};
use crate::{Diagnostics, Error, OrderingVector, Real, Result};

/// Parameters of [`generate_scene`].
#[derive(Debug, Clone, PartialEq)]
pub struct SceneParams {
    pub frames: usize,
    pub points: usize,
    /// Number of planted trajectory groups.
    pub clusters: usize,
    /// Dimension of each group's coefficient subspace.
    pub subspace_dim: usize,
    /// Number of basis shapes; bounds the rank of the reshuffled shape.
    pub modes: usize,
    /// RMS amplitude of the deformation coefficients (0 gives a rigid scene).
    pub deform_scale: f64,
    /// Distance of each group's mean coefficient from the origin.
    pub offset: f64,
    /// Standard deviation of the per-point coefficients around the mean.
    pub spread: f64,
    pub seed: u64,
}

impl SceneParams {
    /// Rigid, centered scene: one group spanning all three axes.
    pub fn rigid(frames: usize, points: usize, seed: u64) -> Self {
        Self {
            frames,
            points,
            clusters: 1,
            subspace_dim: 3,
            modes: 1,
            deform_scale: 0.0,
            offset: 0.0,
            spread: 1.0,
            seed,
        }
    }

    /// Two orthogonal 3-dimensional groups over two basis shapes.
    pub fn planted(frames: usize, points: usize, seed: u64) -> Self {
        Self {
            frames,
            points,
            clusters: 2,
            subspace_dim: 3,
            modes: 2,
            deform_scale: 0.5,
            offset: 4.0,
            spread: 1.0,
            seed,
        }
    }
}

/// Ground truth, cameras and exact measurements.
#[derive(Debug, Clone)]
pub struct SyntheticScene<T: Real> {
    pub s_gt: ShapeMatrix<T>,
    pub r: RotationStack<T>,
    pub w: MeasurementMatrix<T>,
    /// Planted group of every point.
    pub planted_labels: Vec<usize>,
    pub modes: usize,
}

/// Builds a scene whose trajectories follow a union of subspaces.
///
/// Frame shapes mix `modes` basis shapes with coefficients `C` (`F x modes`;
/// column 0 is constant, the others are orthogonal to it and to each other).
/// Each point's `3 * modes` basis coordinates are confined to a
/// group-specific set of coordinates, so the groups' trajectory subspaces
/// are mutually orthogonal. Cameras are the top two rows of uniformly random
/// rotations.
pub fn generate_scene<T: Real>(params: &SceneParams) -> Result<SyntheticScene<T>> {
    let SceneParams {
        frames,
        points,
        clusters,
        subspace_dim: p,
        modes,
        ..
    } = *params;
    if frames == 0 || points == 0 || clusters == 0 || p == 0 || modes == 0 {
        return Err(Error::InvalidParameter("scene sizes must be positive".into()));
    }
    if clusters * p > 3 * modes {
        return Err(Error::InvalidParameter(format!(
            "{clusters} orthogonal groups of dimension {p} need more than {} basis coordinates",
            3 * modes
        )));
    }
    if modes > frames {
        return Err(Error::InvalidParameter(format!("{modes} basis shapes over {frames} frames")));
    }
    if points < clusters {
        return Err(Error::InvalidParameter(format!("{points} points for {clusters} groups")));
    }
    if !(params.deform_scale >= 0.0 && params.spread >= 0.0 && params.offset >= 0.0) {
        return Err(Error::InvalidParameter("scales must be nonnegative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    // Mode coefficients.
    let mut coeff = DMatrix::<f64>::zeros(frames, modes);
    coeff.column_mut(0).fill(1.0);
    for k in 1..modes {
        let mut v: nalgebra::DVector<f64> =
            nalgebra::DVector::from_fn(frames, |_, _| StandardNormal.sample(&mut rng));
        for _ in 0..2 {
            for prev in 0..k {
                let u = coeff.column(prev).normalize();
                let proj = u.dot(&v);
                v -= u * proj;
            }
        }
        let norm = v.norm();
        if norm <= 1e-12 {
            return Err(Error::InvalidParameter("degenerate deformation coefficients".into()));
        }
        v *= params.deform_scale * (frames as f64).sqrt() / norm;
        coeff.set_column(k, &v);
    }

    // Planted groups, interleaved in point order.
    let mut labels: Vec<usize> = (0..points).map(|j| j % clusters).collect();
    labels.shuffle(&mut rng);
    let mean = params.offset / (p as f64).sqrt();
    let noise = Normal::new(0.0, params.spread).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    // basis[(3 * mode + axis, j)]
    let mut basis = DMatrix::<f64>::zeros(3 * modes, points);
    for j in 0..points {
        let g = labels[j];
        for i in 0..p {
            let coord = g + clusters * i;
            basis[(coord, j)] = mean + noise.sample(&mut rng);
        }
    }
    let mut s = DMatrix::<f64>::zeros(3 * frames, points);
    for f in 0..frames {
        for k in 0..modes {
            let c = coeff[(f, k)];
            if c == 0.0 {
                continue;
            }
            for axis in 0..3 {
                for j in 0..points {
                    s[(3 * f + axis, j)] += c * basis[(3 * k + axis, j)];
                }
            }
        }
    }

    let blocks = (0..frames)
        .map(|_| {
            let q = Quaternion::new(
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
            );
            let rot = UnitQuaternion::from_quaternion(q).to_rotation_matrix();
            let m = rot.matrix();
            Matrix2x3::from_fn(|r, c| T::lit(m[(r, c)]))
        })
        .collect();
    let r = RotationStack::new(blocks)?;
    let s_gt = ShapeMatrix::new(s.map(T::lit))?;
    let w = MeasurementMatrix::new(r.project(s_gt.data())?)?;
    Ok(SyntheticScene {
        s_gt,
        r,
        w,
        planted_labels: labels,
        modes,
    })
}

/// `W + N(0, sigma^2)` with `sigma = lambda_g * max|W|`.
pub fn add_noise<T: Real>(w: &DMatrix<T>, lambda_g: f64, seed: u64) -> Result<DMatrix<T>> {
    if !(lambda_g >= 0.0 && lambda_g.is_finite()) {
        return Err(Error::InvalidParameter(format!("noise level must be nonnegative, got {lambda_g}")));
    }
    if lambda_g == 0.0 {
        return Ok(w.clone());
    }
    let sigma = lambda_g * crate::numeric::max_abs(w).as_f64();
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // row-major draw order so the noise does not depend on storage layout
    let mut out = w.clone();
    for r in 0..w.nrows() {
        for c in 0..w.ncols() {
            out[(r, c)] += T::lit(normal.sample(&mut rng));
        }
    }
    Ok(out)
}

/// How the depth sign is resolved before measuring error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FlipMode {
    /// Compare as is.
    None,
    /// Negate every depth row at once if that lowers the error.
    #[default]
    Global,
    /// Decide the depth sign frame by frame.
    PerFrame,
}

/// Mean over frames of `||S_est^f - S_gt^f||_F / ||S_gt^f||_F`.
///
/// `est` may be in any column order; its `point_ids` chart is undone first.
pub fn e3d<T: Real>(est: &ShapeMatrix<T>, gt: &ShapeMatrix<T>, flip: FlipMode) -> Result<f64> {
    let est = est.in_original_order();
    e3d_aligned(est.data(), gt.data(), flip)
}

/// [`e3d`] for an estimate whose columns were permuted by the cumulative
/// `history` (its last entry maps columns to original point ids).
pub fn e3d_with_history<T: Real>(
    est: &DMatrix<T>,
    gt: &DMatrix<T>,
    history: &[OrderingVector],
    flip: FlipMode,
) -> Result<f64> {
    match history.last() {
        Some(chart) => {
            let shape = ShapeMatrix::with_point_ids(est.clone(), chart.indices().to_vec())?;
            e3d(&shape, &ShapeMatrix::new(gt.clone())?, flip)
        }
        None => e3d_aligned(est, gt, flip),
    }
}

fn e3d_aligned<T: Real>(est: &DMatrix<T>, gt: &DMatrix<T>, flip: FlipMode) -> Result<f64> {
    if est.shape() != gt.shape() || gt.nrows() % 3 != 0 || gt.nrows() == 0 {
        return Err(Error::Dimension(format!(
            "estimate {:?} and ground truth {:?} differ",
            est.shape(),
            gt.shape()
        )));
    }
    let frames = gt.nrows() / 3;
    // per frame: (plain error, flipped error, ground-truth norm)
    let mut parts = Vec::with_capacity(frames);
    for f in 0..frames {
        let g = gt.rows(3 * f, 3);
        let e = est.rows(3 * f, 3);
        let norm = g.norm().as_f64();
        if norm == 0.0 {
            return Err(Error::InvalidParameter(format!("ground-truth frame {f} is all zero")));
        }
        let plain = (e - g).norm().as_f64();
        let xy = (e.rows(0, 2) - g.rows(0, 2)).norm_squared().as_f64();
        let z = (e.row(2) + g.row(2)).norm_squared().as_f64();
        parts.push((plain, (xy + z).sqrt(), norm));
    }
    let mean = |pick: &dyn Fn(&(f64, f64, f64)) -> f64| {
        parts.iter().map(|p| pick(p) / p.2).sum::<f64>() / frames as f64
    };
    Ok(match flip {
        FlipMode::None => mean(&|p| p.0),
        FlipMode::Global => mean(&|p| p.0).min(mean(&|p| p.1)),
        FlipMode::PerFrame => mean(&|p| p.0.min(p.1)),
    })
}

/// Fraction of points whose label matches the planted one under the best
/// relabeling.
pub fn label_agreement(labels: &[usize], truth: &[usize]) -> Result<f64> {
    if labels.len() != truth.len() || labels.is_empty() {
        return Err(Error::Dimension("label vectors differ in length".into()));
    }
    let ka = labels.iter().max().unwrap() + 1;
    let kb = truth.iter().max().unwrap() + 1;
    let k = ka.max(kb);
    let mut table = vec![vec![0usize; k]; k];
    for (&a, &b) in labels.iter().zip(truth) {
        table[a][b] += 1;
    }
    let best = if k <= 8 {
        let mut perm: Vec<usize> = (0..k).collect();
        let mut best = 0;
        permutations(&mut perm, 0, &mut |p| {
            best = best.max((0..k).map(|a| table[a][p[a]]).sum());
        });
        best
    } else {
        // greedy matching on the largest overlaps
        let mut used_a = vec![false; k];
        let mut used_b = vec![false; k];
        let mut cells: Vec<(usize, usize, usize)> =
            (0..k).flat_map(|a| (0..k).map(move |b| (a, b))).map(|(a, b)| (table[a][b], a, b)).collect();
        cells.sort_by(|x, y| y.cmp(x));
        let mut total = 0;
        for (n, a, b) in cells {
            if !used_a[a] && !used_b[b] {
                used_a[a] = true;
                used_b[b] = true;
                total += n;
            }
        }
        total
    };
    Ok(best as f64 / labels.len() as f64)
}

fn permutations(v: &mut Vec<usize>, start: usize, visit: &mut dyn FnMut(&[usize])) {
    if start == v.len() {
        visit(v);
        return;
    }
    for i in start..v.len() {
        v.swap(start, i);
        permutations(v, start + 1, visit);
        v.swap(start, i);
    }
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Dimension("rank correlation needs two equal series of length >= 2".into()));
    }
    let ra = ranks(a);
    let rb = ranks(b);
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return Ok(0.0);
    }
    Ok(cov / (va * vb).sqrt())
}

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
    let mut out = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Either solver with its configuration.
#[derive(Debug, Clone)]
pub enum Solver {
    Algo1(Algo1Config),
    Algo2(Algo2Config),
}

/// Solver output with the shape in original point order.
#[derive(Debug, Clone)]
pub struct SolveOutput<T: Real> {
    pub shape: ShapeMatrix<T>,
    pub labels: Vec<usize>,
    pub history: Vec<OrderingVector>,
    pub diagnostics: Diagnostics,
}

impl Solver {
    pub fn run<T: Real>(&self, w: &MeasurementMatrix<T>, r: &RotationStack<T>) -> Result<SolveOutput<T>> {
        match self {
            Self::Algo1(cfg) => {
                let out = run_algorithm1(w, r, cfg)?;
                Ok(SolveOutput {
                    shape: out.shape.in_original_order(),
                    labels: out.spatial_labels,
                    history: out.history,
                    diagnostics: out.diagnostics,
                })
            }
            Self::Algo2(cfg) => {
                let out = run_algorithm2(w, r, cfg)?;
                Ok(SolveOutput {
                    shape: out.shape.in_original_order(),
                    labels: out.spatial_labels,
                    history: out.history,
                    diagnostics: out.diagnostics,
                })
            }
        }
    }

    /// Rank of the reshuffled shape: a single temporal group of dimension
    /// `k` for Algorithm 1, the spatial subspace dimension for Algorithm 2.
    pub fn with_rank(&self, k: usize) -> Self {
        match self {
            Self::Algo1(cfg) => Self::Algo1(Algo1Config {
                kt: 1,
                pt: k,
                ..cfg.clone()
            }),
            Self::Algo2(cfg) => Self::Algo2(Algo2Config { p: k, ..cfg.clone() }),
        }
    }

    /// Number of singular vectors kept per spatial group.
    pub fn with_subspace_dim(&self, p: usize) -> Self {
        match self {
            Self::Algo1(cfg) => Self::Algo1(Algo1Config { ps: p, ..cfg.clone() }),
            Self::Algo2(cfg) => Self::Algo2(Algo2Config { p, ..cfg.clone() }),
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        match self {
            Self::Algo1(cfg) => Self::Algo1(Algo1Config { seed, ..cfg.clone() }),
            Self::Algo2(cfg) => Self::Algo2(Algo2Config { seed, ..cfg.clone() }),
        }
    }
}

/// Column-named numeric table written as CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", self.header.join(","))?;
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

/// Data fit `||W - RS||_F` and ground-truth fit `||S_gt - S||_F` for each
/// rank in `ranks`.
pub fn datafit_sweep<T: Real>(
    w: &MeasurementMatrix<T>,
    r: &RotationStack<T>,
    gt: &ShapeMatrix<T>,
    ranks: &[usize],
    solver: &Solver,
) -> Result<Table> {
    let rows = ranks
        .par_iter()
        .map(|&k| {
            let out = solver.with_rank(k).run(w, r)?;
            let datafit = (r.project(out.shape.data())? - w.data()).norm().as_f64();
            let gtfit = (out.shape.data() - gt.data()).norm().as_f64();
            Ok(vec![k as f64, datafit, gtfit])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Table {
        header: vec!["k".into(), "datafit".into(), "gtfit".into()],
        rows,
    })
}

/// e3d for each per-group subspace dimension in `dims`.
pub fn singular_count_sweep<T: Real>(
    w: &MeasurementMatrix<T>,
    r: &RotationStack<T>,
    gt: &ShapeMatrix<T>,
    dims: &[usize],
    solver: &Solver,
    flip: FlipMode,
) -> Result<Table> {
    let rows = dims
        .par_iter()
        .map(|&p| {
            let out = solver.with_subspace_dim(p).run(w, r)?;
            Ok(vec![p as f64, e3d(&out.shape, gt, flip)?])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Table {
        header: vec!["p".into(), "e3d".into()],
        rows,
    })
}

/// Which self-expressive priors stay active in an ablation run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    None,
    Spatial,
    Temporal,
    Both,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::None, Ablation::Spatial, Ablation::Temporal, Ablation::Both];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Spatial => "spatial",
            Self::Temporal => "temporal",
            Self::Both => "both",
        }
    }

    /// Zeroes `(lambda1, lambda3)` to drop the spatial prior and
    /// `(lambda2, lambda4)` to drop the temporal one.
    pub fn apply(self, config: &Algo1Config) -> Algo1Config {
        let mut cfg = config.clone();
        if matches!(self, Self::None | Self::Temporal) {
            cfg.lambda1 = 0.0;
            cfg.lambda3 = 0.0;
        }
        if matches!(self, Self::None | Self::Spatial) {
            cfg.lambda2 = 0.0;
            cfg.lambda4 = 0.0;
        }
        cfg
    }
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown ablation mode `{s}`")))
    }
}

pub fn ablation_run<T: Real>(
    w: &MeasurementMatrix<T>,
    r: &RotationStack<T>,
    gt: &ShapeMatrix<T>,
    mode: Ablation,
    config: &Algo1Config,
    flip: FlipMode,
) -> Result<f64> {
    let out = Solver::Algo1(mode.apply(config)).run(w, r)?;
    e3d(&out.shape, gt, flip)
}

/// Paired e3d of both solvers on noisy copies of planted scenes. One row per
/// `(lambda_g, seed)`: `lambda_g, seed, e3d_algo1, e3d_algo2`.
pub fn noise_sweep(
    scene: &SceneParams,
    levels: &[f64],
    seeds: &[u64],
    algo1: &Algo1Config,
    algo2: &Algo2Config,
    flip: FlipMode,
) -> Result<Table> {
    let jobs: Vec<(f64, u64)> = levels.iter().flat_map(|&l| seeds.iter().map(move |&s| (l, s))).collect();
    let rows = jobs
        .par_iter()
        .map(|&(level, seed)| {
            let sc = generate_scene::<f64>(&SceneParams { seed, ..scene.clone() })?;
            let noisy = MeasurementMatrix::new(add_noise(sc.w.data(), level, seed ^ 0x5eed)?)?;
            let a = Solver::Algo1(Algo1Config { seed, ..algo1.clone() }).run(&noisy, &sc.r)?;
            let b = Solver::Algo2(Algo2Config { seed, ..algo2.clone() }).run(&noisy, &sc.r)?;
            Ok(vec![level, seed as f64, e3d(&a.shape, &sc.s_gt, flip)?, e3d(&b.shape, &sc.s_gt, flip)?])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Table {
        header: vec!["lambda_g".into(), "seed".into(), "e3d_algo1".into(), "e3d_algo2".into()],
        rows,
    })
}

/// e3d of Algorithm 2 and the chosen projected dimension for each `tau`.
pub fn tau_sweep<T: Real>(
    w: &MeasurementMatrix<T>,
    r: &RotationStack<T>,
    gt: &ShapeMatrix<T>,
    taus: &[f64],
    config: &Algo2Config,
    flip: FlipMode,
) -> Result<Table> {
    let rows = taus
        .par_iter()
        .map(|&tau| {
            let cfg = Algo2Config {
                tau,
                dtilde: None,
                ..config.clone()
            };
            let out = run_algorithm2(w, r, &cfg)?;
            Ok(vec![tau, out.dtilde as f64, e3d(&out.shape, gt, flip)?])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Table {
        header: vec!["tau".into(), "dtilde".into(), "e3d".into()],
        rows,
    })
}

/// Noise levels `0.01, 0.015, ..., 0.055`.
pub fn default_noise_levels() -> Vec<f64> {
    (0..10).map(|i| (10.0 + 5.0 * i as f64) / 1000.0).collect()
}
