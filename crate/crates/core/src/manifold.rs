//! Grassmann points fitted to column blocks, the projection-embedding kernel
//! `Gamma` and per-cluster low-rank reconstruction.
//!
//! A point on `G(p, d)` is stored as an orthonormal `d x p` basis `Phi`.
//! Under the projection embedding `Phi -> Phi Phi^T` the inner product of two
//! points is `Gamma_ij = tr((Phi_j^T Phi_i)(Phi_i^T Phi_j)) = ||Phi_i^T Phi_j||_F^2`
//! and the projection distance is `d_g^2 = p - Gamma_ij`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::data::{Partition, ReshuffledShape, ShapeMatrix};
use crate::numeric::{fix_column_signs, thin_svd};
use crate::{Error, Real, Result};

/// Truncated SVD of one cluster: `block ~ basis * diag(sigma) * right^T`.
#[derive(Debug, Clone)]
pub struct GrassmannPoint<T: Real> {
    pub basis: DMatrix<T>,
    pub sigma: DVector<T>,
    pub right: DMatrix<T>,
}

impl<T: Real> GrassmannPoint<T> {
    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    /// `basis * diag(sigma) * right^T`.
    pub fn reconstruct(&self) -> DMatrix<T> {
        let mut scaled = self.basis.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= self.sigma[j];
        }
        scaled * self.right.transpose()
    }

    /// Distance from `x` to its orthogonal projection on the subspace.
    pub fn residual(&self, x: &DVector<T>) -> T {
        let coeff = self.basis.transpose() * x;
        (x - &self.basis * coeff).norm()
    }
}

/// Anything that assigns matrix columns to subspace clusters.
pub trait ClusterMembership {
    fn membership(&self) -> &[Vec<usize>];

    fn cluster_count(&self) -> usize {
        self.membership().len()
    }

    /// `labels[column] = cluster`.
    fn column_labels(&self) -> Vec<usize> {
        let n = self.membership().iter().map(Vec::len).sum();
        let mut labels = vec![0; n];
        for (c, members) in self.membership().iter().enumerate() {
            for &j in members {
                labels[j] = c;
            }
        }
        labels
    }
}

/// One Grassmann point per cluster plus the columns each cluster owns.
#[derive(Debug, Clone)]
pub struct GrassmannSet<T: Real> {
    pub points: Vec<GrassmannPoint<T>>,
    pub membership: Vec<Vec<usize>>,
}

impl<T: Real> ClusterMembership for GrassmannSet<T> {
    fn membership(&self) -> &[Vec<usize>] {
        &self.membership
    }
}

impl<T: Real> GrassmannSet<T> {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bases(&self) -> Vec<DMatrix<T>> {
        self.points.iter().map(|p| p.basis.clone()).collect()
    }

    /// Reorders clusters so that new cluster `c` is old cluster `perm[c]`.
    pub fn permute_clusters(&mut self, perm: &[usize]) {
        self.points = perm.iter().map(|&i| self.points[i].clone()).collect();
        self.membership = perm.iter().map(|&i| self.membership[i].clone()).collect();
    }
}

/// Top-`p` singular triplets of `block`.
pub fn fit_grassmann<T: Real>(block: &DMatrix<T>, p: usize) -> Result<GrassmannPoint<T>> {
    let (d, m) = block.shape();
    if p == 0 || p > d.min(m) {
        return Err(Error::InvalidParameter(format!(
            "subspace dimension {p} outside 1..={} for a {d}x{m} block",
            d.min(m)
        )));
    }
    let svd = thin_svd(block)?;
    let mut basis = svd.u.columns(0, p).into_owned();
    let mut right = svd.v_t.rows(0, p).transpose();
    let sigma = svd.sigma.rows(0, p).into_owned();
    for (j, flipped) in fix_column_signs(&mut basis).into_iter().enumerate() {
        if flipped {
            right.column_mut(j).neg_mut();
        }
    }
    Ok(GrassmannPoint {
        basis,
        sigma,
        right,
    })
}

/// Fits one Grassmann point per cluster of `partition` over the columns of
/// `x`. Clusters smaller than `p` first receive the worst-fitting columns of
/// the largest cluster.
pub fn build_grassmannians<T: Real>(
    x: &DMatrix<T>,
    partition: &Partition,
    p: usize,
) -> Result<GrassmannSet<T>> {
    if partition.order.len() != x.ncols() {
        return Err(Error::Dimension(format!(
            "partition covers {} columns, matrix has {}",
            partition.order.len(),
            x.ncols()
        )));
    }
    if p * partition.k() > x.ncols() {
        return Err(Error::InvalidParameter(format!(
            "{} clusters of at least {p} columns need more than {} columns",
            partition.k(),
            x.ncols()
        )));
    }
    let mut membership = partition.membership();
    rebalance(x, &mut membership, p)?;
    let points = membership
        .par_iter()
        .map(|cols| fit_grassmann(&x.select_columns(cols), p))
        .collect::<Result<Vec<_>>>()?;
    Ok(GrassmannSet { points, membership })
}

/// Spatial points: clusters of shape columns (trajectories, `d = 3F`).
pub fn build_spatial_grassmannians<T: Real>(
    s: &ShapeMatrix<T>,
    partition: &Partition,
    p: usize,
) -> Result<GrassmannSet<T>> {
    build_grassmannians(s.data(), partition, p)
}

/// Temporal points: clusters of reshuffled columns (shapes, `d = 3P`).
pub fn build_temporal_grassmannians<T: Real>(
    sharp: &ReshuffledShape<T>,
    partition: &Partition,
    p: usize,
) -> Result<GrassmannSet<T>> {
    build_grassmannians(sharp.data(), partition, p)
}

fn rebalance<T: Real>(x: &DMatrix<T>, membership: &mut [Vec<usize>], min_size: usize) -> Result<()> {
    let min_size = min_size.max(1);
    while let Some(small) = membership.iter().position(|m| m.len() < min_size) {
        let donor = (0..membership.len())
            .max_by_key(|&c| (membership[c].len(), std::cmp::Reverse(c)))
            .expect("at least one cluster");
        if membership[donor].len() <= min_size {
            return Err(Error::InvalidParameter(format!(
                "cannot give every cluster {min_size} columns"
            )));
        }
        let block = x.select_columns(&membership[donor]);
        let fit = fit_grassmann(&block, min_size.min(block.nrows()).min(block.ncols() - 1).max(1))?;
        let (pos, _) = membership[donor]
            .iter()
            .enumerate()
            .map(|(i, &j)| (i, fit.residual(&x.column(j).into_owned())))
            .fold((0, T::lit(-1.0)), |best, cur| if cur.1 > best.1 { cur } else { best });
        let col = membership[donor].remove(pos);
        membership[small].push(col);
    }
    Ok(())
}

/// Writes each cluster's rank-`p` reconstruction back to its columns.
pub fn reconstruct_from_grassmannians<T: Real>(
    set: &GrassmannSet<T>,
    nrows: usize,
    ncols: usize,
) -> Result<DMatrix<T>> {
    let mut out = DMatrix::zeros(nrows, ncols);
    let blocks: Vec<DMatrix<T>> = set.points.par_iter().map(GrassmannPoint::reconstruct).collect();
    for (block, cols) in blocks.iter().zip(&set.membership) {
        if block.nrows() != nrows {
            return Err(Error::Dimension(format!(
                "point of ambient dimension {} written into {nrows} rows",
                block.nrows()
            )));
        }
        for (k, &j) in cols.iter().enumerate() {
            if j >= ncols {
                return Err(Error::Dimension(format!("column {j} outside {ncols}")));
            }
            out.set_column(j, &block.column(k));
        }
    }
    Ok(out)
}

/// `tr((Phi_j^T Phi_i)(Phi_i^T Phi_j))`.
pub fn gamma_entry<T: Real>(phi_i: &DMatrix<T>, phi_j: &DMatrix<T>) -> Result<T> {
    if phi_i.shape() != phi_j.shape() {
        return Err(Error::Dimension(format!(
            "Grassmann bases {:?} and {:?} differ in shape",
            phi_i.shape(),
            phi_j.shape()
        )));
    }
    Ok((phi_i.transpose() * phi_j).norm_squared())
}

/// Symmetric `K x K` Gram matrix of the embedded points.
pub fn gamma_matrix<T: Real>(bases: &[DMatrix<T>]) -> Result<DMatrix<T>> {
    let k = bases.len();
    let pairs: Vec<(usize, usize)> = (0..k).flat_map(|i| (i..k).map(move |j| (i, j))).collect();
    let values = pairs
        .par_iter()
        .map(|&(i, j)| gamma_entry(&bases[i], &bases[j]))
        .collect::<Result<Vec<_>>>()?;
    let mut g = DMatrix::zeros(k, k);
    for (&(i, j), v) in pairs.iter().zip(values) {
        g[(i, j)] = v;
        g[(j, i)] = v;
    }
    Ok(g)
}

/// Projection distance `0.5 ||Phi Phi^T - Psi Psi^T||_F^2`, evaluated as
/// `p - Gamma`.
pub fn projection_distance_sq<T: Real>(phi_i: &DMatrix<T>, phi_j: &DMatrix<T>) -> Result<T> {
    let p = T::lit(phi_i.ncols() as f64);
    Ok((p - gamma_entry(phi_i, phi_j)?).max(T::zero()))
}
