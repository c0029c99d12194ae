//! Joint spatial and temporal Grassmannian ADMM.
//!
//! Trajectories (columns of `S`) and shapes (columns of the reshuffled
//! `S#`) are both grouped into low-dimensional subspaces. The subspaces are
//! embedded on Grassmann manifolds and asked to be self-expressive through
//! low-rank coefficient matrices `C_s` and `C_t`, while `S#` itself is kept
//! low rank.

use nalgebra::DMatrix;

use crate::clustering::{kmeanspp, spectral_order};
use crate::config::Algo1Config;
use crate::data::{reshuffle, MeasurementMatrix, Partition, ReshuffledShape, RotationStack, ShapeMatrix};
use crate::manifold::{build_grassmannians, gamma_matrix, reconstruct_from_grassmannians, GrassmannSet};
use crate::numeric::{psd_cholesky, CholeskyFactor};
use crate::solver::{
    ensure_finite, gap, permute_square, Diagnostics, IterationRecord, Observer, PointMatrices,
    Snapshot, StopReason, GAMMA_SHIFT,
};
use crate::{Error, OrderingVector, Real, Result};

pub use crate::solver::{
    update_auxiliary as update_j, update_coefficients as update_c, update_shape as update_s,
    update_sharp as update_ssharp,
};

#[derive(Debug, Clone)]
pub struct Algo1Result<T: Real> {
    /// Final shape in the solver's column order; `point_ids` maps columns to
    /// original points.
    pub shape: ShapeMatrix<T>,
    pub sharp: ReshuffledShape<T>,
    pub cs: DMatrix<T>,
    pub ct: DMatrix<T>,
    /// Cumulative column orderings: entry 0 after the bootstrap grouping,
    /// then one per iteration.
    pub history: Vec<OrderingVector>,
    /// `labels[point_id]` spatial cluster.
    pub spatial_labels: Vec<usize>,
    /// Grouping of frames into temporal clusters.
    pub temporal: Partition,
    pub diagnostics: Diagnostics,
}

/// Runs Algorithm 1 without observing intermediate state.
pub fn run_algorithm1<T: Real>(
    w: &MeasurementMatrix<T>,
    r: &RotationStack<T>,
    config: &Algo1Config,
) -> Result<Algo1Result<T>> {
    run_algorithm1_observed(w, r, config, None)
}

/// Runs Algorithm 1, calling `observer` after every iteration.
pub fn run_algorithm1_observed<T: Real>(
    w: &MeasurementMatrix<T>,
    r: &RotationStack<T>,
    config: &Algo1Config,
    mut observer: Option<Observer<'_, T>>,
) -> Result<Algo1Result<T>> {
    config.validate()?;
    let frames = w.frames();
    let points = w.points();
    if r.frames() != frames {
        return Err(Error::Dimension(format!(
            "measurements cover {frames} frames but {} cameras were given",
            r.frames()
        )));
    }
    check_clusters("spatial", config.ks, config.ps, points, 3 * frames)?;
    check_clusters("temporal", config.kt, config.pt, frames, 3 * points)?;

    let lit = T::lit;
    let (l1w, l2w, l3w, l4w, gw) = (
        lit(config.lambda1),
        lit(config.lambda2),
        lit(config.lambda3),
        lit(config.lambda4),
        lit(config.gamma),
    );

    // Initialization.
    let mut wm = w.data().clone();
    let mut s = r.pinv_apply(&wm)?;
    ensure_finite(0, "S", &s)?;
    let boot = kmeanspp(&s, config.ks, config.seed, config.ps)?;
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
    let mut temporal = kmeanspp(&sharp, config.kt, config.seed.wrapping_add(1), config.pt)?.partition;
    let mut history = vec![chart.clone()];

    let mut xi_s = build_grassmannians(&s, &spatial, config.ps)?;
    let mut xi_t = build_grassmannians(&sharp, &temporal, config.pt)?;
    let mut chol_s = gram_factor(&xi_s)?;
    let mut chol_t = gram_factor(&xi_t)?;

    let (ks, kt) = (config.ks, config.kt);
    let mut cs = DMatrix::zeros(ks, ks);
    let mut js = DMatrix::zeros(ks, ks);
    let mut ct = DMatrix::zeros(kt, kt);
    let mut jt = DMatrix::zeros(kt, kt);
    let mut l2 = DMatrix::zeros(ks, ks);
    let mut l3 = DMatrix::zeros(kt, kt);
    let mut beta = lit(config.beta0);
    let beta_max = lit(config.beta_max);
    let mut diagnostics = Diagnostics::new();

    for it in 1..=config.max_iters {
        let s_raw = update_s(&wm, r, &sharp, &l1, beta)?;
        ensure_finite(it, "S", &s_raw)?;
        cs = update_c(&chol_s, &js, &l2, l1w, beta)?;
        ensure_finite(it, "C_s", &cs)?;
        xi_s = build_grassmannians(&s_raw, &spatial, config.ps)?;
        s = reconstruct_from_grassmannians(&xi_s, 3 * frames, points)?;
        js = update_j(&cs, &l2, l3w, beta)?;
        ensure_finite(it, "J_s", &js)?;
        let (sharp_raw, _) = update_ssharp(&s, &l1, gw, beta)?;
        ensure_finite(it, "S#", &sharp_raw)?;
        ct = update_c(&chol_t, &jt, &l3, l2w, beta)?;
        ensure_finite(it, "C_t", &ct)?;
        xi_t = build_grassmannians(&sharp_raw, &temporal, config.pt)?;
        sharp = reconstruct_from_grassmannians(&xi_t, 3 * points, frames)?;
        jt = update_j(&ct, &l3, l4w, beta)?;
        ensure_finite(it, "J_t", &jt)?;

        // Re-group trajectories and shapes from the fresh coefficients.
        let seed = iteration_seed(config.seed, it);
        let spatial_order = spectral_order(
            &xi_s,
            &cs,
            &OrderingVector::identity(points),
            ks,
            config.ps,
            seed,
            |col, c| xi_s.points[c].residual(&s_raw.column(col).into_owned()),
        )?;
        let temporal_order = spectral_order(
            &xi_t,
            &ct,
            &temporal.order,
            kt,
            config.pt,
            seed.wrapping_add(1),
            |col, c| xi_t.points[c].residual(&sharp_raw.column(col).into_owned()),
        )?;
        PointMatrices {
            w: &mut wm,
            s: &mut s,
            sharp: &mut sharp,
            l1: &mut l1,
        }
        .reorder(&spatial_order.partition.order)?;
        chart = chart.then(&spatial_order.partition.order)?;
        spatial = Partition::new(OrderingVector::identity(points), spatial_order.partition.sizes.clone())?;
        if let Some(perm) = spatial_order.cluster_permutation() {
            xi_s.permute_clusters(&perm);
            for m in [&mut cs, &mut js, &mut l2] {
                *m = permute_square(m, &perm);
            }
        }
        temporal = temporal_order.partition.clone();
        if let Some(perm) = temporal_order.cluster_permutation() {
            xi_t.permute_clusters(&perm);
            for m in [&mut ct, &mut jt, &mut l3] {
                *m = permute_square(m, &perm);
            }
        }
        chol_s = gram_factor(&xi_s)?;
        chol_t = gram_factor(&xi_t)?;

        let fs = reshuffle(&s);
        let gap1 = gap(&sharp, &fs);
        let gap2 = gap(&cs, &js);
        let gap3 = gap(&ct, &jt);
        l1 += (&sharp - &fs) * beta;
        l2 += (&cs - &js) * beta;
        l3 += (&ct - &jt) * beta;
        ensure_finite(it, "L1", &l1)?;
        ensure_finite(it, "L2", &l2)?;
        ensure_finite(it, "L3", &l3)?;
        history.push(chart.clone());

        let maxgap = gap1.max(gap2).max(gap3);
        diagnostics.records.push(IterationRecord {
            iteration: it,
            maxgap: maxgap.as_f64(),
            beta: beta.as_f64(),
            reproj_fro: (r.project(&s)? - &wm).norm().as_f64(),
            sharp_nuclear: crate::numeric::nuclear_norm(&sharp)?.as_f64(),
        });
        if let Some(obs) = observer.as_mut() {
            obs(&Snapshot {
                iteration: it,
                beta,
                shape: &s,
                sharp: &sharp,
                coefficients: &cs,
                chart: &chart,
            });
        }
        let grown = beta * lit(config.rho);
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
    Ok(Algo1Result {
        shape: ShapeMatrix::with_point_ids(s, chart.into_indices())?,
        sharp: ReshuffledShape::new(sharp)?,
        cs,
        ct,
        history,
        spatial_labels,
        temporal,
        diagnostics,
    })
}

pub(crate) fn check_clusters(kind: &str, k: usize, p: usize, columns: usize, dim: usize) -> Result<()> {
    if k * p > columns || p > dim {
        return Err(Error::InvalidParameter(format!(
            "{kind} grouping needs {k} clusters of dimension {p}, but there are {columns} columns of length {dim}"
        )));
    }
    Ok(())
}

pub(crate) fn gram_factor<T: Real>(set: &GrassmannSet<T>) -> Result<CholeskyFactor<T>> {
    psd_cholesky(&gamma_matrix(&set.bases())?, T::lit(GAMMA_SHIFT))
}

pub(crate) fn iteration_seed(seed: u64, iteration: usize) -> u64 {
    seed ^ (iteration as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Cluster label of every original point id.
pub(crate) fn labels_by_point(partition: &Partition, chart: &OrderingVector) -> Vec<usize> {
    let by_column = partition.labels();
    let mut out = vec![0; by_column.len()];
    for (col, &id) in chart.indices().iter().enumerate() {
        out[id] = by_column[col];
    }
    out
}
