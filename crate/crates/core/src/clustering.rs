//! k-means++ bootstrap grouping, Grassmann similarity graphs and spectral
//! re-grouping of subspaces from self-expressive coefficients.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{OrderingVector, Partition};
use crate::manifold::{projection_distance_sq, ClusterMembership};
use crate::{Error, Real, Result};

pub const KMEANS_MAX_ITERS: usize = 100;
pub const KMEANS_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct KMeans<T: Real> {
    /// `labels[column] = cluster`, numbered by first appearance.
    pub labels: Vec<usize>,
    /// Columns sorted by label, stable within a label.
    pub partition: Partition,
    /// `d x K` cluster centers.
    pub centers: DMatrix<T>,
}

/// k-means++ seeding followed by Lloyd iterations over the columns of
/// `columns`. Every cluster ends with at least `max(min_size, 1)` members.
pub fn kmeanspp<T: Real>(
    columns: &DMatrix<T>,
    k: usize,
    seed: u64,
    min_size: usize,
) -> Result<KMeans<T>> {
    let (d, n) = columns.shape();
    let min_size = min_size.max(1);
    if k == 0 || k > n {
        return Err(Error::InvalidParameter(format!("k-means with K={k} on {n} columns")));
    }
    if k * min_size > n {
        return Err(Error::InvalidParameter(format!(
            "{k} clusters of at least {min_size} columns need more than {n} columns"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let norms: Vec<T> = columns.column_iter().map(|c| c.norm_squared()).collect();

    let mut centers = DMatrix::zeros(d, k);
    let first = rng.random_range(0..n);
    centers.set_column(0, &columns.column(first));
    let mut chosen = vec![first];
    let mut nearest: Vec<T> = (0..n)
        .map(|j| (columns.column(j) - columns.column(first)).norm_squared())
        .collect();
    for c in 1..k {
        let total = nearest.iter().fold(T::zero(), |a, v| a + *v).as_f64();
        let pick = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut pick = n - 1;
            for (j, v) in nearest.iter().enumerate() {
                target -= v.as_f64();
                if target < 0.0 {
                    pick = j;
                    break;
                }
            }
            pick
        } else {
            (0..n).find(|j| !chosen.contains(j)).expect("k <= n")
        };
        chosen.push(pick);
        centers.set_column(c, &columns.column(pick));
        for (j, v) in nearest.iter_mut().enumerate() {
            let dist = (columns.column(j) - columns.column(pick)).norm_squared();
            if dist < *v {
                *v = dist;
            }
        }
    }

    let mut labels = vec![0; n];
    let mut dist = vec![T::zero(); n];
    let tol = T::lit(KMEANS_TOL);
    for _ in 0..KMEANS_MAX_ITERS {
        assign(columns, &norms, &centers, &mut labels, &mut dist);
        let mut next = DMatrix::zeros(d, k);
        let mut counts = vec![0usize; k];
        for (j, &l) in labels.iter().enumerate() {
            let mut col = next.column_mut(l);
            col += columns.column(j);
            counts[l] += 1;
        }
        for c in 0..k {
            if counts[c] == 0 {
                // reseed an empty cluster at the worst-served column
                let far = (0..n)
                    .max_by(|&a, &b| dist[a].partial_cmp(&dist[b]).unwrap_or(std::cmp::Ordering::Equal))
                    .expect("n > 0");
                next.set_column(c, &columns.column(far));
                dist[far] = T::zero();
            } else {
                let mut col = next.column_mut(c);
                col /= T::lit(counts[c] as f64);
            }
        }
        let shift = (0..k)
            .map(|c| (next.column(c) - centers.column(c)).norm())
            .fold(T::zero(), |a, v| a.max(v));
        centers = next;
        if shift <= tol {
            break;
        }
    }
    assign(columns, &norms, &centers, &mut labels, &mut dist);
    enforce_min_size(&mut labels, k, min_size, |j, c| {
        (columns.column(j) - centers.column(c)).norm_squared()
    });
    let (labels, perm) = canonical_labels(&labels, k, &OrderingVector::identity(n));
    let centers = centers.select_columns(&perm);
    let partition = Partition::from_labels(&labels, k)?;
    Ok(KMeans {
        labels,
        partition,
        centers,
    })
}

fn assign<T: Real>(
    columns: &DMatrix<T>,
    norms: &[T],
    centers: &DMatrix<T>,
    labels: &mut [usize],
    dist: &mut [T],
) {
    let dots = centers.transpose() * columns;
    let cnorm: Vec<T> = centers.column_iter().map(|c| c.norm_squared()).collect();
    for j in 0..columns.ncols() {
        let mut best = 0;
        let mut best_d = T::max_value().expect("bounded scalar");
        for (c, cn) in cnorm.iter().enumerate() {
            let d = (norms[j] - dots[(c, j)] * T::lit(2.0) + *cn).max(T::zero());
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        labels[j] = best;
        dist[j] = best_d;
    }
}

/// Moves items into clusters smaller than `min_size`, always taking from a
/// cluster that can spare one the item with the lowest `cost(item, target)`.
fn enforce_min_size<T: Real>(
    labels: &mut [usize],
    k: usize,
    min_size: usize,
    cost: impl Fn(usize, usize) -> T,
) {
    loop {
        let mut counts = vec![0usize; k];
        for &l in labels.iter() {
            counts[l] += 1;
        }
        let Some(small) = (0..k).find(|&c| counts[c] < min_size) else {
            return;
        };
        let candidate = (0..labels.len())
            .filter(|&j| counts[labels[j]] > min_size)
            .min_by(|&a, &b| {
                cost(a, small)
                    .partial_cmp(&cost(b, small))
                    .unwrap_or(std::cmp::Ordering::Equal)
            });
        match candidate {
            Some(j) => labels[j] = small,
            None => return,
        }
    }
}

/// Renumbers labels by first appearance along `along`. Returns the new
/// labels and `perm` with `perm[new] = old`; labels that never appear keep
/// the trailing slots in their original relative order.
fn canonical_labels(labels: &[usize], k: usize, along: &OrderingVector) -> (Vec<usize>, Vec<usize>) {
    let mut map = vec![usize::MAX; k];
    let mut perm = Vec::with_capacity(k);
    for &j in along.indices() {
        let l = labels[j];
        if map[l] == usize::MAX {
            map[l] = perm.len();
            perm.push(l);
        }
    }
    for l in 0..k {
        if map[l] == usize::MAX {
            map[l] = perm.len();
            perm.push(l);
        }
    }
    (labels.iter().map(|&l| map[l]).collect(), perm)
}

/// Pairwise subspace similarity `w_ij = exp(-d_g^2(Phi_i, Phi_j))`.
#[derive(Debug, Clone)]
pub struct SimilarityGraph<T: Real> {
    pub weights: DMatrix<T>,
}

impl<T: Real> SimilarityGraph<T> {
    /// `lambda_ii = sum_j w_ij`.
    pub fn degrees(&self) -> Vec<T> {
        self.weights.row_iter().map(|r| r.sum()).collect()
    }
}

pub fn similarity_graph<T: Real>(bases: &[DMatrix<T>]) -> Result<SimilarityGraph<T>> {
    let k = bases.len();
    let mut weights = DMatrix::zeros(k, k);
    for i in 0..k {
        weights[(i, i)] = T::one();
        for j in i + 1..k {
            let w = (-projection_distance_sq(&bases[i], &bases[j])?).exp();
            weights[(i, j)] = w;
            weights[(j, i)] = w;
        }
    }
    Ok(SimilarityGraph { weights })
}

#[derive(Debug, Clone)]
pub struct SpectralOrder {
    /// New column grouping, stable with respect to the previous ordering.
    pub partition: Partition,
    /// `subspace_labels[old_cluster] = new_cluster`.
    pub subspace_labels: Vec<usize>,
}

impl SpectralOrder {
    /// `perm[new] = old` when every new cluster comes from exactly one old
    /// cluster.
    pub fn cluster_permutation(&self) -> Option<Vec<usize>> {
        let k = self.partition.k();
        if self.subspace_labels.len() != k {
            return None;
        }
        let mut perm = vec![usize::MAX; k];
        for (old, &new) in self.subspace_labels.iter().enumerate() {
            if perm[new] != usize::MAX {
                return None;
            }
            perm[new] = old;
        }
        Some(perm)
    }
}

/// Re-groups the columns owned by `set` from the coefficient matrix
/// `coeffs` (`K x K`, one row per subspace).
///
/// The affinity `(|C| + |C^T|) / 2` is embedded with the eigenvectors of the
/// symmetric normalized Laplacian belonging to the `target` smallest
/// eigenvalues; rows are normalized and grouped with [`kmeanspp`]. Subspace
/// labels are broadcast to the columns of each subspace. Labels with fewer
/// than `min_size` columns receive, from the largest label, the columns with
/// the highest `residual(column, old_cluster)`.
pub fn spectral_order<T: Real, M: ClusterMembership>(
    set: &M,
    coeffs: &DMatrix<T>,
    prev: &OrderingVector,
    target: usize,
    min_size: usize,
    seed: u64,
    residual: impl Fn(usize, usize) -> T,
) -> Result<SpectralOrder> {
    let k = set.cluster_count();
    if coeffs.shape() != (k, k) {
        return Err(Error::Dimension(format!(
            "coefficient matrix {:?} for {k} subspaces",
            coeffs.shape()
        )));
    }
    if target == 0 || target > k {
        return Err(Error::InvalidParameter(format!(
            "spectral target {target} with {k} subspaces"
        )));
    }
    if !coeffs.iter().all(|v| v.is_finite()) {
        return Err(Error::Malformed("coefficient matrix is not finite".into()));
    }
    let old_labels = set.column_labels();
    if old_labels.len() != prev.len() {
        return Err(Error::Dimension(format!(
            "membership covers {} columns, ordering has {}",
            old_labels.len(),
            prev.len()
        )));
    }

    let raw = subspace_labels(coeffs, target, seed)?;
    let mut col_labels: Vec<usize> = old_labels.iter().map(|&c| raw[c]).collect();
    let (canon, _) = canonical_labels(&col_labels, target, prev);
    let mut map = vec![usize::MAX; target];
    for (j, &l) in col_labels.iter().enumerate() {
        map[l] = canon[j];
    }
    let mut sub_labels: Vec<usize> = raw.iter().map(|&l| map[l]).collect();
    col_labels = canon;

    // Donation keeps every label at or above `min_size` columns.
    let min_size = min_size.max(1);
    if target * min_size > col_labels.len() {
        return Err(Error::InvalidParameter(format!(
            "{target} clusters of at least {min_size} columns need more than {} columns",
            col_labels.len()
        )));
    }
    let mut donated = false;
    loop {
        let mut counts = vec![0usize; target];
        for &l in &col_labels {
            counts[l] += 1;
        }
        let Some(small) = (0..target).find(|&c| counts[c] < min_size) else {
            break;
        };
        let donor = (0..target)
            .max_by_key(|&c| (counts[c], std::cmp::Reverse(c)))
            .expect("target > 0");
        let pick = (0..col_labels.len())
            .filter(|&j| col_labels[j] == donor)
            .max_by(|&a, &b| {
                residual(a, old_labels[a])
                    .partial_cmp(&residual(b, old_labels[b]))
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .expect("donor is non-empty");
        col_labels[pick] = small;
        donated = true;
    }
    if donated {
        // a subspace split across labels no longer has a single image
        sub_labels = vec![usize::MAX; k];
    }

    let partition = Partition::from_labels_along(&col_labels, target, prev)?;
    Ok(SpectralOrder {
        partition,
        subspace_labels: sub_labels,
    })
}

fn subspace_labels<T: Real>(coeffs: &DMatrix<T>, target: usize, seed: u64) -> Result<Vec<usize>> {
    let k = coeffs.nrows();
    if k == 1 {
        return Ok(vec![0]);
    }
    let half = T::lit(0.5);
    let affinity = (coeffs.abs() + coeffs.transpose().abs()) * half;
    let degree: Vec<T> = affinity.row_iter().map(|r| r.sum()).collect();
    let dmax = degree.iter().fold(T::zero(), |a, v| a.max(*v));
    let floor = dmax * T::lit(1e-14);
    let connected: Vec<usize> = (0..k).filter(|&i| degree[i] > floor && degree[i] > T::zero()).collect();
    let isolated: Vec<usize> = (0..k).filter(|i| !connected.contains(i)).collect();

    let mut labels = vec![0; k];
    let groups = target.saturating_sub(isolated.len()).max(1);
    if !connected.is_empty() {
        let n = connected.len();
        let groups = groups.min(n);
        let mut lap = DMatrix::<T>::identity(n, n);
        for (a, &i) in connected.iter().enumerate() {
            for (b, &j) in connected.iter().enumerate() {
                lap[(a, b)] -= affinity[(i, j)] / (degree[i] * degree[j]).sqrt();
            }
        }
        let lap = (&lap + lap.transpose()) * half;
        let eig = SymmetricEigen::try_new(lap, T::default_epsilon(), 0)
            .ok_or_else(|| Error::Decomposition("Laplacian eigendecomposition failed".into()))?;
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| {
            eig.eigenvalues[a]
                .partial_cmp(&eig.eigenvalues[b])
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        // one column per node: groups x n
        let mut embed = DMatrix::zeros(groups, n);
        for (r, &e) in idx.iter().take(groups).enumerate() {
            for a in 0..n {
                embed[(r, a)] = eig.eigenvectors[(a, e)];
            }
        }
        for mut col in embed.column_iter_mut() {
            let norm = col.norm();
            if norm > T::zero() {
                col /= norm;
            }
        }
        let km = kmeanspp(&embed, groups, seed, 1)?;
        for (a, &i) in connected.iter().enumerate() {
            labels[i] = km.labels[a];
        }
    }
    let base = if connected.is_empty() { 0 } else { groups };
    for (n, &i) in isolated.iter().enumerate() {
        labels[i] = (base + n).min(target - 1);
    }
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::GrassmannSet;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    struct Members(Vec<Vec<usize>>);

    impl ClusterMembership for Members {
        fn membership(&self) -> &[Vec<usize>] {
            &self.0
        }
    }

    fn contiguous(sizes: &[usize]) -> Members {
        let mut start = 0;
        Members(
            sizes
                .iter()
                .map(|&s| {
                    let v = (start..start + s).collect();
                    start += s;
                    v
                })
                .collect(),
        )
    }

    #[test]
    fn kmeans_one_column_per_cluster() {
        let x = DMatrix::from_row_slice(2, 4, &[0.0, 5.0, 0.0, 9.0, 0.0, 0.0, 7.0, 9.0]);
        let km = kmeanspp(&x, 4, 3, 1).unwrap();
        let mut seen = km.labels.clone();
        seen.sort();
        assert_eq!(seen, vec![0, 1, 2, 3]);
        assert_eq!(km.labels, vec![0, 1, 2, 3]);
    }

    #[test]
    fn kmeans_single_cluster() {
        let x = DMatrix::from_fn(3, 10, |r, c| (r * c) as f64);
        let km = kmeanspp(&x, 1, 0, 1).unwrap();
        assert!(km.labels.iter().all(|&l| l == 0));
        assert!(km.partition.order.is_identity());
        assert!(kmeanspp(&x, 11, 0, 1).is_err());
    }

    #[test]
    fn kmeans_separates_distant_blobs_like_nearest_center() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 60;
        let truth: Vec<usize> = (0..n).map(|j| (j * 7 % 3 == 0) as usize).collect();
        let centers = [[0.0, 0.0, 0.0], [100.0, 0.0, 0.0]];
        let x = DMatrix::from_fn(3, n, |r, c| {
            let z: f64 = StandardNormal.sample(&mut rng);
            centers[truth[c]][r] + z
        });
        let km = kmeanspp(&x, 2, 5, 1).unwrap();
        // oracle: nearest planted center
        let oracle: Vec<usize> = (0..n)
            .map(|j| {
                let d0 = (x.column(j) - DMatrix::from_row_slice(3, 1, &centers[0])).norm();
                let d1 = (x.column(j) - DMatrix::from_row_slice(3, 1, &centers[1])).norm();
                (d1 < d0) as usize
            })
            .collect();
        let flip = km.labels[0] != oracle[0];
        for j in 0..n {
            assert_eq!(km.labels[j] ^ flip as usize, oracle[j]);
        }
    }

    #[test]
    fn kmeans_is_reproducible_and_respects_min_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let x = DMatrix::from_fn(4, 50, |_, _| rng.random_range(-1.0..1.0));
        let a = kmeanspp(&x, 5, 99, 6).unwrap();
        let b = kmeanspp(&x, 5, 99, 6).unwrap();
        assert_eq!(a.labels, b.labels);
        assert!(a.partition.sizes.iter().all(|&s| s >= 6));
        assert!(kmeanspp(&x, 5, 99, 11).is_err());
    }

    #[test]
    fn similarity_graph_examples() {
        let phi = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        let g = similarity_graph(&[phi.clone(), phi.clone()]).unwrap();
        assert!((g.weights - DMatrix::from_element(2, 2, 1.0)).abs().max() < 1e-14);

        let e1 = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let e2 = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let g = similarity_graph(&[e1, e2]).unwrap();
        assert!((g.weights[(0, 1)] - (-1.0f64).exp()).abs() < 1e-14);
        assert!((g.weights[(0, 1)] - 0.3679).abs() < 1e-4);
    }

    #[test]
    fn similarity_graph_matches_gamma_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let bases: Vec<DMatrix<f64>> = (0..5)
            .map(|_| DMatrix::from_fn(6, 2, |_, _| rng.random_range(-1.0..1.0)).qr().q())
            .collect();
        let g = similarity_graph(&bases).unwrap();
        let gamma = crate::manifold::gamma_matrix(&bases).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let expected = (-(2.0 - gamma[(i, j)])).exp();
                assert!((g.weights[(i, j)] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identity_coefficients_keep_previous_order() {
        let set = contiguous(&[3, 2, 4]);
        let prev = OrderingVector::identity(9);
        let out = spectral_order(&set, &DMatrix::<f64>::identity(3, 3), &prev, 3, 1, 0, |_, _| 0.0).unwrap();
        assert_eq!(out.partition.order, prev);
        assert_eq!(out.partition.sizes, vec![3, 2, 4]);
        assert_eq!(out.cluster_permutation(), Some(vec![0, 1, 2]));
    }

    #[test]
    fn single_subspace_keeps_previous_order() {
        let prev = OrderingVector::new(vec![4, 2, 0, 1, 3]).unwrap();
        let set = Members(vec![prev.indices().to_vec()]);
        let out = spectral_order(&set, &DMatrix::<f64>::identity(1, 1), &prev, 1, 1, 0, |_, _| 0.0).unwrap();
        assert_eq!(out.partition.order, prev);
    }

    #[test]
    fn block_diagonal_coefficients_recover_components() {
        // subspaces {0, 2, 4} and {1, 3} are connected components
        let k = 5;
        let mut c = DMatrix::<f64>::zeros(k, k);
        let blocks = [vec![0, 2, 4], vec![1, 3]];
        for b in &blocks {
            for &i in b {
                for &j in b {
                    c[(i, j)] = 0.3 + 0.1 * ((i + j) % 3) as f64;
                }
            }
        }
        let set = contiguous(&[2, 2, 2, 2, 2]);
        let prev = OrderingVector::identity(10);
        let out = spectral_order(&set, &c, &prev, 2, 1, 7, |_, _| 0.0).unwrap();
        // oracle: connected components of the affinity graph
        let comp = |i: usize| if blocks[0].contains(&i) { 0 } else { 1 };
        for i in 0..k {
            for j in 0..k {
                assert_eq!(
                    out.subspace_labels[i] == out.subspace_labels[j],
                    comp(i) == comp(j)
                );
            }
        }
        assert_eq!(out.partition.sizes, vec![6, 4]);
        assert_eq!(out.partition.order.indices(), &[0, 1, 4, 5, 8, 9, 2, 3, 6, 7]);
    }

    #[test]
    fn spectral_order_is_transpose_invariant_and_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        for trial in 0..20 {
            let k = 4;
            let c = DMatrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
            let set = contiguous(&[3, 3, 3, 3]);
            let prev = OrderingVector::identity(12);
            let a = spectral_order(&set, &c, &prev, 3, 2, trial, |_, _| 0.0).unwrap();
            let b = spectral_order(&set, &c.transpose(), &prev, 3, 2, trial, |_, _| 0.0).unwrap();
            assert_eq!(a.partition, b.partition);
            assert!(OrderingVector::new(a.partition.order.indices().to_vec()).is_ok());
            assert!(a.partition.sizes.iter().all(|&s| s >= 2));
        }
    }

    #[test]
    fn isolated_node_gets_its_own_label() {
        let mut c = DMatrix::<f64>::zeros(3, 3);
        c[(0, 1)] = 1.0;
        c[(1, 0)] = 1.0;
        let set = contiguous(&[1, 1, 1]);
        let out = spectral_order(&set, &c, &OrderingVector::identity(3), 2, 1, 0, |_, _| 0.0).unwrap();
        assert_eq!(out.subspace_labels[0], out.subspace_labels[1]);
        assert_ne!(out.subspace_labels[0], out.subspace_labels[2]);
    }

    #[test]
    fn grassmann_set_implements_membership() {
        let set: GrassmannSet<f64> = GrassmannSet {
            points: vec![],
            membership: vec![vec![1], vec![0, 2]],
        };
        assert_eq!(set.column_labels(), vec![1, 0, 1]);
    }
}
