//! Geometry-aware spatial ADMM.
//!
//! Trajectory subspaces are mapped from `G(p, d)` to a lower-dimensional
//! `G(p, d~)` through a learned projection `Delta` that keeps similar
//! subspaces close. Self-expressiveness and re-grouping act on the projected
//! subspaces; shape refinement still uses the full-dimensional ones.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::algo1::{check_clusters, iteration_seed, labels_by_point};
use crate::clustering::{kmeanspp, similarity_graph, spectral_order};
use crate::config::Algo2Config;
use crate::data::{reshuffle, MeasurementMatrix, Partition, ReshuffledShape, RotationStack, ShapeMatrix};
use crate::manifold::{build_grassmannians, gamma_matrix, reconstruct_from_grassmannians};
use crate::numeric::{generalized_symmetric_eig, psd_cholesky, thin_svd};
use crate::solver::{
    ensure_finite, gap, permute_square, update_shape,
    update_sharp, Diagnostics, IterationRecord, Observer, PointMatrices, Snapshot, StopReason,
    GAMMA_SHIFT,
};
use crate::{Error, OrderingVector, Real, Result};

/// Projection `Delta` (`d x d~`) and the per-subspace factors of
/// `Delta^T Phi_i = Theta_i U_i`.
#[derive(Debug, Clone)]
pub struct ProjectionMap<T: Real> {
    pub delta: DMatrix<T>,
    /// `d~ x p` orthonormal bases of the projected subspaces.
    pub theta: Vec<DMatrix<T>>,
    /// `p x p` upper-triangular factors with nonnegative diagonal.
    pub u: Vec<DMatrix<T>>,
    /// `Phi_i U_i^{-1}`, so that `Theta_i = Delta^T Omega_i`.
    pub omega: Vec<DMatrix<T>>,
    /// Subspaces whose triangular factor needed regularizing.
    pub regularized: usize,
}

pub const RANK_TOL: f64 = 1e-12;
pub const U_REGULARIZATION: f64 = 1e-10;
pub const DELTA_INIT_SPREAD: f64 = 1e-3;

/// Smallest `d~` whose leading squared singular values of `[Phi_1 .. Phi_K]`
/// hold at least a `tau` fraction of the energy, clamped to `[p, d]`.
pub fn choose_dtilde<T: Real>(bases: &[DMatrix<T>], tau: f64) -> Result<usize> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::InvalidParameter(format!("tau must lie in (0, 1], got {tau}")));
    }
    let first = bases
        .first()
        .ok_or_else(|| Error::InvalidParameter("no subspaces to measure".into()))?;
    let (d, p) = first.shape();
    let mut stack = DMatrix::zeros(d, p * bases.len());
    for (i, b) in bases.iter().enumerate() {
        if b.shape() != (d, p) {
            return Err(Error::Dimension("subspace bases differ in shape".into()));
        }
        stack.columns_mut(i * p, p).copy_from(b);
    }
    let energy: Vec<f64> = thin_svd(&stack)?.sigma.iter().map(|s| s.as_f64().powi(2)).collect();
    let total: f64 = energy.iter().sum();
    let mut acc = 0.0;
    let mut count = energy.len();
    for (i, e) in energy.iter().enumerate() {
        acc += e;
        // relative slack so that tau = 1 stops at the numerical rank
        if acc >= tau * total * (1.0 - 1e-10) {
            count = i + 1;
            break;
        }
    }
    Ok(count.max(p).min(d))
}

/// `Delta_0 = [I; noise]` with entries of `noise` uniform in `(-1e-3, 1e-3)`.
pub fn initial_delta<T: Real>(d: usize, dtilde: usize, seed: u64) -> Result<DMatrix<T>> {
    if dtilde == 0 || dtilde > d {
        return Err(Error::InvalidParameter(format!("projected dimension {dtilde} for ambient {d}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(DMatrix::from_fn(d, dtilde, |r, c| {
        if r < dtilde {
            if r == c {
                T::one()
            } else {
                T::zero()
            }
        } else {
            T::lit(rng.random_range(-DELTA_INIT_SPREAD..DELTA_INIT_SPREAD))
        }
    }))
}

/// Projects each basis: `Delta^T Phi_i = Theta_i U_i` (economy QR with a
/// nonnegative diagonal), `Omega_i = Phi_i U_i^{-1}`.
pub fn project_grassmannians<T: Real>(bases: &[DMatrix<T>], delta: &DMatrix<T>) -> Result<ProjectionMap<T>> {
    let mut map = ProjectionMap {
        delta: delta.clone(),
        theta: Vec::with_capacity(bases.len()),
        u: Vec::with_capacity(bases.len()),
        omega: Vec::with_capacity(bases.len()),
        regularized: 0,
    };
    for phi in bases {
        if phi.nrows() != delta.nrows() {
            return Err(Error::Dimension(format!(
                "basis with {} rows projected by a {}x{} map",
                phi.nrows(),
                delta.nrows(),
                delta.ncols()
            )));
        }
        let p = phi.ncols();
        if p > delta.ncols() {
            return Err(Error::InvalidParameter(format!(
                "cannot project a {p}-dimensional subspace to {} dimensions",
                delta.ncols()
            )));
        }
        let m = delta.transpose() * phi;
        let qr = m.clone().qr();
        let mut q = qr.q();
        let mut u = qr.unpack_r();
        for i in 0..p {
            if u[(i, i)] < T::zero() {
                u.row_mut(i).neg_mut();
                q.column_mut(i).neg_mut();
            }
        }
        let floor = T::lit(RANK_TOL) * m.norm();
        let deficient = (0..p).any(|i| u[(i, i)].abs() <= floor);
        if deficient {
            for i in 0..p {
                u[(i, i)] += T::lit(U_REGULARIZATION);
            }
            map.regularized += 1;
        }
        // Omega = Phi U^{-1}: solve U^T Omega^T = Phi^T.
        let omega_t = u
            .tr_solve_upper_triangular(&phi.transpose())
            .ok_or_else(|| Error::Decomposition("triangular factor is singular".into()))?;
        let omega = omega_t.transpose();
        let theta = if deficient { delta.transpose() * &omega } else { q };
        map.theta.push(theta);
        map.u.push(u);
        map.omega.push(omega);
    }
    Ok(map)
}

/// `X = sum_i lambda_ii Omega_i Omega_i^T` with `lambda_ii = sum_j w_ij`.
pub fn delta_constraint_matrix<T: Real>(omega: &[DMatrix<T>], weights: &DMatrix<T>) -> Result<DMatrix<T>> {
    check_weights(omega, weights)?;
    let d = omega[0].nrows();
    let mut x = DMatrix::zeros(d, d);
    for (i, o) in omega.iter().enumerate() {
        let lambda = weights.row(i).sum();
        x += o * o.transpose() * lambda;
    }
    Ok(x)
}

/// `Y = sum_{i,j} (w_ij / 2) Lambda_ij D D^T Lambda_ij` with
/// `Lambda_ij = Omega_i Omega_i^T - Omega_j Omega_j^T`, assembled through
/// `A_i = Omega_i Omega_i^T D`.
pub fn delta_energy_matrix<T: Real>(
    omega: &[DMatrix<T>],
    weights: &DMatrix<T>,
    delta_prev: &DMatrix<T>,
) -> Result<DMatrix<T>> {
    check_weights(omega, weights)?;
    let d = omega[0].nrows();
    if delta_prev.nrows() != d {
        return Err(Error::Dimension("previous projection has the wrong ambient dimension".into()));
    }
    let a: Vec<DMatrix<T>> = omega.iter().map(|o| o * (o.transpose() * delta_prev)).collect();
    let mut y = DMatrix::zeros(d, d);
    for (i, ai) in a.iter().enumerate() {
        let lambda = weights.row(i).sum();
        let mut bi = DMatrix::zeros(d, delta_prev.ncols());
        for (j, aj) in a.iter().enumerate() {
            bi += aj * weights[(i, j)];
        }
        y += ai * (ai * lambda - bi).transpose();
    }
    Ok((&y + y.transpose()) * T::lit(0.5))
}

/// `E(Delta) = sum_{i,j} (w_ij / 2) ||Delta^T Lambda_ij Delta||_F^2`.
pub fn delta_energy<T: Real>(omega: &[DMatrix<T>], weights: &DMatrix<T>, delta: &DMatrix<T>) -> Result<T> {
    check_weights(omega, weights)?;
    let proj: Vec<DMatrix<T>> = omega.iter().map(|o| delta.transpose() * o).collect();
    let grams: Vec<DMatrix<T>> = proj.iter().map(|t| t * t.transpose()).collect();
    let mut e = T::zero();
    for i in 0..omega.len() {
        for j in 0..omega.len() {
            e += weights[(i, j)] * T::lit(0.5) * (&grams[i] - &grams[j]).norm_squared();
        }
    }
    Ok(e)
}

/// Minimizes the linearized energy `tr(Delta^T Y Delta)` subject to
/// `tr(Delta^T X Delta) = 1` with a generalized eigenproblem.
pub fn solve_delta<T: Real>(
    omega: &[DMatrix<T>],
    weights: &DMatrix<T>,
    delta_prev: &DMatrix<T>,
    dtilde: usize,
) -> Result<DMatrix<T>> {
    let x = delta_constraint_matrix(omega, weights)?;
    let y = delta_energy_matrix(omega, weights, delta_prev)?;
    Ok(generalized_symmetric_eig(&y, &x, dtilde)?.vectors)
}

fn check_weights<T: Real>(omega: &[DMatrix<T>], weights: &DMatrix<T>) -> Result<()> {
    if omega.is_empty() {
        return Err(Error::InvalidParameter("no subspaces in the projection problem".into()));
    }
    if weights.shape() != (omega.len(), omega.len()) {
        return Err(Error::Dimension(format!(
            "similarity matrix {:?} for {} subspaces",
            weights.shape(),
            omega.len()
        )));
    }
    Ok(())
}

/// `C~` update: identical in form to the spatial coefficient update, with
/// the Gram factor taken from the projected subspaces.
pub use crate::solver::update_coefficients as update_ctilde;

/// `Z = svt(C~ + L2 / beta, beta3 / beta)`.
pub use crate::solver::update_auxiliary as update_z;

#[derive(Debug, Clone)]
pub struct Algo2Result<T: Real> {
    pub shape: ShapeMatrix<T>,
    pub sharp: ReshuffledShape<T>,
    pub ctilde: DMatrix<T>,
    /// Cumulative column orderings, one more than the iteration count.
    pub history: Vec<OrderingVector>,
    pub spatial_labels: Vec<usize>,
    pub dtilde: usize,
    pub projection: Option<ProjectionMap<T>>,
    pub diagnostics: Diagnostics,
}

pub fn run_algorithm2<T: Real>(
    w: &MeasurementMatrix<T>,
    r: &RotationStack<T>,
    config: &Algo2Config,
) -> Result<Algo2Result<T>> {
    run_algorithm2_observed(w, r, config, None)
}

pub fn run_algorithm2_observed<T: Real>(
    w: &MeasurementMatrix<T>,
    r: &RotationStack<T>,
    config: &Algo2Config,
    mut observer: Option<Observer<'_, T>>,
) -> Result<Algo2Result<T>> {
    config.validate()?;
    let frames = w.frames();
    let points = w.points();
    if r.frames() != frames {
        return Err(Error::Dimension(format!(
            "measurements cover {frames} frames but {} cameras were given",
            r.frames()
        )));
    }
    let d = 3 * frames;
    check_clusters("spatial", config.k, config.p, points, d)?;
    let lit = T::lit;
    let (b1, b2, b3) = (lit(config.beta1), lit(config.beta2), lit(config.beta3));

    let mut wm = w.data().clone();
    let mut s = r.pinv_apply(&wm)?;
    ensure_finite(0, "S", &s)?;
    let boot = kmeanspp(&s, config.k, config.seed, config.p)?;
    let mut chart = OrderingVector::new(w.point_ids().to_vec())?;
    let mut sharp = reshuffle(&s);
    let mut l1 = DMatrix::zeros(3 * points, frames);
    PointMatrices {
        w: &mut wm,
        s: &mut s,
        sharp: &mut sharp,
        l1: &mut l1,
    }
    .reorder(&boot.partition.order)?;
    chart = chart.then(&boot.partition.order)?;
    let mut spatial = Partition::new(OrderingVector::identity(points), boot.partition.sizes.clone())?;
    let mut history = vec![chart.clone()];

    let xi = build_grassmannians(&s, &spatial, config.p)?;
    let dtilde = match config.dtilde {
        Some(v) => v.max(config.p).min(d),
        None => choose_dtilde(&xi.bases(), config.tau)?,
    };
    let mut delta = initial_delta::<T>(d, dtilde, config.seed)?;
    let mut projection: Option<ProjectionMap<T>> = None;

    let k = config.k;
    let mut ctilde = DMatrix::zeros(k, k);
    let mut z = DMatrix::zeros(k, k);
    let mut l2 = DMatrix::zeros(k, k);
    let mut beta = lit(config.beta0);
    let beta_max = lit(config.beta_max);
    let mut diagnostics = Diagnostics::new();

    for it in 1..=config.max_iters {
        // steps 1-3
        let s_raw = update_shape(&wm, r, &sharp, &l1, beta)?;
        ensure_finite(it, "S", &s_raw)?;
        let mut xi = build_grassmannians(&s_raw, &spatial, config.p)?;
        let bases = xi.bases();
        // step 4
        let graph = similarity_graph(&bases)?;
        // step 5: one projection solve linearized at the previous Delta
        let prev = &delta / delta.norm();
        let lin = project_grassmannians(&bases, &prev)?;
        delta = solve_delta(&lin.omega, &graph.weights, &prev, dtilde)?;
        ensure_finite(it, "Delta", &delta)?;
        let map = project_grassmannians(&bases, &delta)?;
        diagnostics.regularized_projections += map.regularized;
        // step 6
        let chol = psd_cholesky(&gamma_matrix(&map.theta)?, lit(GAMMA_SHIFT))?;
        // step 7
        ctilde = update_ctilde(&chol, &z, &l2, b1, beta)?;
        ensure_finite(it, "C~", &ctilde)?;
        // step 8: groups from the projected problem
        let order = spectral_order(
            &xi,
            &ctilde,
            &OrderingVector::identity(points),
            k,
            config.p,
            iteration_seed(config.seed, it),
            |col, c| xi.points[c].residual(&s_raw.column(col).into_owned()),
        )?;
        // step 9: refine with the full-dimensional subspaces, then apply
        // the new grouping to every point-indexed matrix
        s = reconstruct_from_grassmannians(&xi, d, points)?;
        PointMatrices {
            w: &mut wm,
            s: &mut s,
            sharp: &mut sharp,
            l1: &mut l1,
        }
        .reorder(&order.partition.order)?;
        chart = chart.then(&order.partition.order)?;
        spatial = Partition::new(OrderingVector::identity(points), order.partition.sizes.clone())?;
        let mut map = map;
        if let Some(perm) = order.cluster_permutation() {
            xi.permute_clusters(&perm);
            map.theta = perm.iter().map(|&i| map.theta[i].clone()).collect();
            map.u = perm.iter().map(|&i| map.u[i].clone()).collect();
            map.omega = perm.iter().map(|&i| map.omega[i].clone()).collect();
            for m in [&mut ctilde, &mut z, &mut l2] {
                *m = permute_square(m, &perm);
            }
        }
        // steps 10-11
        let (sharp_new, nuclear) = update_sharp(&s, &l1, b2, beta)?;
        sharp = sharp_new;
        ensure_finite(it, "S#", &sharp)?;
        z = update_z(&ctilde, &l2, b3, beta)?;
        ensure_finite(it, "Z", &z)?;
        // step 12
        let fs = reshuffle(&s);
        let gap1 = gap(&sharp, &fs);
        let gap2 = gap(&ctilde, &z);
        l1 += (&sharp - &fs) * beta;
        l2 += (&ctilde - &z) * beta;
        ensure_finite(it, "L1", &l1)?;
        ensure_finite(it, "L2", &l2)?;
        // step 13
        history.push(chart.clone());
        projection = Some(map);

        let maxgap = gap1.max(gap2);
        diagnostics.records.push(IterationRecord {
            iteration: it,
            maxgap: maxgap.as_f64(),
            beta: beta.as_f64(),
            reproj_fro: (r.project(&s)? - &wm).norm().as_f64(),
            sharp_nuclear: nuclear.as_f64(),
        });
        if let Some(obs) = observer.as_mut() {
            obs(&Snapshot {
                iteration: it,
                beta,
                shape: &s,
                sharp: &sharp,
                coefficients: &ctilde,
                chart: &chart,
            });
        }
        // steps 14-15
        let grown = beta * lit(config.growth);
        beta = if grown < beta_max { grown } else { beta_max };
        if maxgap < lit(config.epsilon) {
            diagnostics.stop = StopReason::Converged;
            break;
        }
        if beta > beta_max {
            diagnostics.stop = StopReason::PenaltyLimit;
            break;
        }
    }

    let spatial_labels = labels_by_point(&spatial, &chart);
    Ok(Algo2Result {
        shape: ShapeMatrix::with_point_ids(s, chart.into_indices())?,
        sharp: ReshuffledShape::new(sharp)?,
        ctilde,
        history,
        spatial_labels,
        dtilde,
        projection,
        diagnostics,
    })
}
