//! Pieces shared by both ADMM solvers: the closed-form sub-updates, the
//! per-iteration diagnostics and state snapshots.

use std::io::Write;

use nalgebra::{DMatrix, Matrix3x1};
use rayon::prelude::*;

use crate::data::{inverse_reshuffle, reorder_columns, reorder_sharp_rows, reshuffle, RotationStack};
use crate::numeric::{max_abs, solve_right_spd, svt, svt_with_norm, CholeskyFactor};
use crate::{Error, OrderingVector, Real, Result};

/// Diagonal shift used when a Gram matrix needs regularizing before Cholesky.
pub(crate) const GAMMA_SHIFT: f64 = 1e-10;

/// One row of the diagnostics table.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub maxgap: f64,
    pub beta: f64,
    pub reproj_fro: f64,
    pub sharp_nuclear: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// The constraint gap fell below the tolerance.
    Converged,
    /// The penalty exceeded its ceiling.
    PenaltyLimit,
    /// The iteration budget ran out.
    MaxIters,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Converged => "converged",
            Self::PenaltyLimit => "penalty_limit",
            Self::MaxIters => "max_iters",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Diagnostics {
    pub records: Vec<IterationRecord>,
    pub stop: StopReason,
    /// Number of projections whose triangular factor had to be regularized.
    pub regularized_projections: usize,
}

impl Diagnostics {
    pub(crate) fn new() -> Self {
        Self {
            records: Vec::new(),
            stop: StopReason::MaxIters,
            regularized_projections: 0,
        }
    }

    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    pub fn final_gap(&self) -> Option<f64> {
        self.records.last().map(|r| r.maxgap)
    }

    /// `iteration,maxgap,beta,reproj_fro,sharp_nuclear` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "iteration,maxgap,beta,reproj_fro,sharp_nuclear")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{:e},{:e},{:e},{:e}",
                r.iteration, r.maxgap, r.beta, r.reproj_fro, r.sharp_nuclear
            )?;
        }
        Ok(())
    }
}

/// Read-only view of solver state handed to observers after an iteration.
#[derive(Debug)]
pub struct Snapshot<'a, T: Real> {
    pub iteration: usize,
    pub beta: T,
    pub shape: &'a DMatrix<T>,
    pub sharp: &'a DMatrix<T>,
    pub coefficients: &'a DMatrix<T>,
    /// `chart[column] = original point id`.
    pub chart: &'a OrderingVector,
}

pub type Observer<'o, T> = &'o mut dyn FnMut(&Snapshot<'_, T>);

/// Shape update: per frame, `(R_f^T R_f + beta I) S_f = R_f^T W_f + beta
/// unshuffle(sharp)_f + unshuffle(l1)_f`.
pub fn update_shape<T: Real>(
    w: &DMatrix<T>,
    r: &RotationStack<T>,
    sharp: &DMatrix<T>,
    l1: &DMatrix<T>,
    beta: T,
) -> Result<DMatrix<T>> {
    let frames = r.frames();
    let points = w.ncols();
    if w.nrows() != 2 * frames {
        return Err(Error::Dimension(format!(
            "measurements have {} rows for {frames} cameras",
            w.nrows()
        )));
    }
    if sharp.shape() != (3 * points, frames) || l1.shape() != sharp.shape() {
        return Err(Error::Dimension(format!(
            "reshuffled shape {:?} and multiplier {:?} for {points} points in {frames} frames",
            sharp.shape(),
            l1.shape()
        )));
    }
    if !(beta > T::zero()) {
        return Err(Error::InvalidParameter(format!("penalty must be positive, got {beta:?}")));
    }
    let prior = inverse_reshuffle(sharp)? * beta + inverse_reshuffle(l1)?;
    let blocks: Vec<DMatrix<T>> = (0..frames)
        .into_par_iter()
        .map(|f| {
            let rf = r.blocks()[f];
            let mut normal = rf.transpose() * rf;
            for i in 0..3 {
                normal[(i, i)] += beta;
            }
            let lu = normal.lu();
            let mut out = DMatrix::zeros(3, points);
            for j in 0..points {
                let wf = nalgebra::Vector2::new(w[(2 * f, j)], w[(2 * f + 1, j)]);
                let rhs: Matrix3x1<T> = rf.transpose() * wf
                    + Matrix3x1::new(prior[(3 * f, j)], prior[(3 * f + 1, j)], prior[(3 * f + 2, j)]);
                let x = lu.solve(&rhs).ok_or_else(|| {
                    Error::Decomposition(format!("singular normal equations in frame {f}"))
                })?;
                out.set_column(j, &x);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut s = DMatrix::zeros(3 * frames, points);
    for (f, b) in blocks.iter().enumerate() {
        s.rows_mut(3 * f, 3).copy_from(b);
    }
    Ok(s)
}

/// Reshuffled-shape update `svt(f(S) - l1 / beta, weight / beta)`; also
/// returns the nuclear norm of the result.
pub fn update_sharp<T: Real>(
    s: &DMatrix<T>,
    l1: &DMatrix<T>,
    weight: T,
    beta: T,
) -> Result<(DMatrix<T>, T)> {
    let target = reshuffle(s) - l1 / beta;
    svt_with_norm(&target, weight / beta)
}

/// Coefficient update `(2 w G + beta (J - L / beta)) (2 w G + beta I)^{-1}`
/// with `G = L_c L_c^T` from the Cholesky factor.
pub fn update_coefficients<T: Real>(
    chol: &CholeskyFactor<T>,
    aux: &DMatrix<T>,
    multiplier: &DMatrix<T>,
    weight: T,
    beta: T,
) -> Result<DMatrix<T>> {
    let k = chol.l.nrows();
    if aux.shape() != (k, k) || multiplier.shape() != (k, k) {
        return Err(Error::Dimension(format!(
            "coefficient blocks {:?} and {:?} for {k} subspaces",
            aux.shape(),
            multiplier.shape()
        )));
    }
    let fit = chol.gram() * (T::lit(2.0) * weight);
    let rhs = &fit + aux * beta - multiplier;
    let mut lhs = fit;
    for i in 0..k {
        lhs[(i, i)] += beta;
    }
    solve_right_spd(&rhs, &lhs)
}

/// Auxiliary low-rank update `svt(C + L / beta, weight / beta)`.
pub fn update_auxiliary<T: Real>(
    c: &DMatrix<T>,
    multiplier: &DMatrix<T>,
    weight: T,
    beta: T,
) -> Result<DMatrix<T>> {
    svt(&(c + multiplier / beta), weight / beta)
}

/// Errors with the iteration and variable name if `m` holds NaN or infinity.
pub(crate) fn ensure_finite<T: Real>(iteration: usize, variable: &'static str, m: &DMatrix<T>) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { iteration, variable })
    }
}

/// Entrywise max-abs of a constraint residual.
pub(crate) fn gap<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> T {
    max_abs(&(a - b))
}

/// Applies a column permutation of the trajectories to every matrix indexed
/// by point: columns of `W` and `S`, rows of the reshuffled quantities.
pub(crate) struct PointMatrices<'a, T: Real> {
    pub w: &'a mut DMatrix<T>,
    pub s: &'a mut DMatrix<T>,
    pub sharp: &'a mut DMatrix<T>,
    pub l1: &'a mut DMatrix<T>,
}

impl<T: Real> PointMatrices<'_, T> {
    pub fn reorder(self, order: &OrderingVector) -> Result<()> {
        if order.is_identity() {
            return Ok(());
        }
        *self.w = reorder_columns(self.w, order)?;
        *self.s = reorder_columns(self.s, order)?;
        *self.sharp = reorder_sharp_rows(self.sharp, order)?;
        *self.l1 = reorder_sharp_rows(self.l1, order)?;
        Ok(())
    }
}

/// `P M P^T` for a cluster permutation with `perm[new] = old`.
pub(crate) fn permute_square<T: Real>(m: &DMatrix<T>, perm: &[usize]) -> DMatrix<T> {
    DMatrix::from_fn(perm.len(), perm.len(), |i, j| m[(perm[i], perm[j])])
}

pub(crate) fn check_schedule(beta0: f64, beta_max: f64, growth: f64, epsilon: f64) -> Result<()> {
    if !(beta0 > 0.0 && beta0 < beta_max) {
        return Err(Error::InvalidParameter(format!(
            "penalty schedule needs 0 < beta0 < beta_max, got {beta0} and {beta_max}"
        )));
    }
    if !(growth > 1.0) {
        return Err(Error::InvalidParameter(format!("penalty growth must exceed 1, got {growth}")));
    }
    if !(epsilon >= 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be nonnegative, got {epsilon}")));
    }
    Ok(())
}
