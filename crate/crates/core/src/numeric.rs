//! Proximal operators and dense factorizations shared by both solvers.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::{Error, Real, Result};

/// `sign(x) * max(|x| - tau, 0)`.
pub fn soft_threshold<T: Real>(x: T, tau: T) -> Result<T> {
    if tau < T::zero() {
        return Err(Error::InvalidParameter(format!("negative threshold {tau:?}")));
    }
    Ok(shrink(x, tau))
}

/// Elementwise [`soft_threshold`] of a vector.
pub fn soft_threshold_vec<T: Real>(x: &DVector<T>, tau: T) -> Result<DVector<T>> {
    if tau < T::zero() {
        return Err(Error::InvalidParameter(format!("negative threshold {tau:?}")));
    }
    Ok(x.map(|v| shrink(v, tau)))
}

#[inline]
fn shrink<T: Real>(x: T, tau: T) -> T {
    let mag = (x.abs() - tau).max(T::zero());
    if x < T::zero() {
        -mag
    } else {
        mag
    }
}

/// Economy SVD `M = U diag(sigma) V^T` with descending singular values.
#[derive(Debug, Clone)]
pub struct ThinSvd<T: Real> {
    pub u: DMatrix<T>,
    pub sigma: DVector<T>,
    pub v_t: DMatrix<T>,
}

impl<T: Real> ThinSvd<T> {
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    /// `U diag(s) V^T` for a replacement spectrum.
    pub fn recompose_with(&self, s: &DVector<T>) -> DMatrix<T> {
        let mut us = self.u.clone();
        for (j, mut col) in us.column_iter_mut().enumerate() {
            col *= s[j];
        }
        us * &self.v_t
    }
}

/// Economy SVD. Tall or wide inputs are first reduced by a QR step so the
/// iterative part only ever sees a square-ish core.
pub fn thin_svd<T: Real>(m: &DMatrix<T>) -> Result<ThinSvd<T>> {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return Ok(ThinSvd {
            u: DMatrix::zeros(r, 0),
            sigma: DVector::zeros(0),
            v_t: DMatrix::zeros(0, c),
        });
    }
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::Decomposition("SVD input contains non-finite entries".into()));
    }
    if c > 2 * r {
        let t = thin_svd(&m.transpose())?;
        return Ok(ThinSvd {
            u: t.v_t.transpose(),
            sigma: t.sigma,
            v_t: t.u.transpose(),
        });
    }
    if r > 2 * c {
        let qr = m.clone().qr();
        let q = qr.q();
        let core = qr.unpack_r();
        let inner = dense_svd(core)?;
        return Ok(ThinSvd {
            u: q * inner.u,
            sigma: inner.sigma,
            v_t: inner.v_t,
        });
    }
    dense_svd(m.clone())
}

// nalgebra's bidiagonal sweep loses accuracy on rank-deficient input, which
// is the common case for thresholded iterates, so the core goes through faer
fn dense_svd<T: Real>(m: DMatrix<T>) -> Result<ThinSvd<T>> {
    let (r, c) = m.shape();
    let k = r.min(c);
    let wide = faer::Mat::<f64>::from_fn(r, c, |i, j| m[(i, j)].as_f64());
    let svd = wide
        .thin_svd()
        .map_err(|e| Error::Decomposition(format!("SVD did not converge: {e:?}")))?;
    let (u, s, v) = (svd.U(), svd.S().column_vector(), svd.V());
    Ok(ThinSvd {
        u: DMatrix::from_fn(r, k, |i, j| T::lit(u[(i, j)])),
        sigma: DVector::from_fn(k, |i, _| T::lit(s[i])),
        v_t: DMatrix::from_fn(k, c, |i, j| T::lit(v[(j, i)])),
    })
}

/// Singular value thresholding: the proximal operator of `tau * ||.||_*`.
pub fn svt<T: Real>(m: &DMatrix<T>, tau: T) -> Result<DMatrix<T>> {
    if tau == T::zero() {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::Decomposition("SVT input contains non-finite entries".into()));
        }
        return Ok(m.clone());
    }
    svt_with_norm(m, tau).map(|(out, _)| out)
}

/// [`svt`] that also reports the nuclear norm of its output.
pub fn svt_with_norm<T: Real>(m: &DMatrix<T>, tau: T) -> Result<(DMatrix<T>, T)> {
    if tau < T::zero() {
        return Err(Error::InvalidParameter(format!("negative threshold {tau:?}")));
    }
    let svd = thin_svd(m)?;
    if tau == T::zero() {
        return Ok((m.clone(), svd.sigma.sum()));
    }
    let shrunk = svd.sigma.map(|s| shrink(s, tau));
    let keep = shrunk.iter().take_while(|s| **s > T::zero()).count();
    if keep == 0 {
        return Ok((DMatrix::zeros(m.nrows(), m.ncols()), T::zero()));
    }
    let u = svd.u.columns(0, keep).into_owned();
    let v_t = svd.v_t.rows(0, keep).into_owned();
    let mut us = u;
    for (j, mut col) in us.column_iter_mut().enumerate() {
        col *= shrunk[j];
    }
    Ok((us * v_t, shrunk.sum()))
}

pub fn nuclear_norm<T: Real>(m: &DMatrix<T>) -> Result<T> {
    Ok(thin_svd(m)?.sigma.sum())
}

/// Largest absolute entry (`0` for empty matrices).
pub fn max_abs<T: Real>(m: &DMatrix<T>) -> T {
    m.iter().fold(T::zero(), |acc, v| acc.max(v.abs()))
}

/// Lower-triangular factor of `gamma + shift * I`.
#[derive(Debug, Clone)]
pub struct CholeskyFactor<T: Real> {
    pub l: DMatrix<T>,
    pub shift: T,
}

impl<T: Real> CholeskyFactor<T> {
    /// `L L^T`.
    pub fn gram(&self) -> DMatrix<T> {
        &self.l * self.l.transpose()
    }
}

pub const CHOLESKY_LADDER_STEPS: usize = 8;

/// Cholesky factor of a symmetric PSD matrix. If plain factorization fails,
/// `delta * 10^k * I` is added for `k = 0..=8` until it succeeds.
pub fn psd_cholesky<T: Real>(gamma: &DMatrix<T>, delta: T) -> Result<CholeskyFactor<T>> {
    let n = gamma.nrows();
    if gamma.ncols() != n {
        return Err(Error::Dimension(format!(
            "Cholesky input is {}x{}",
            gamma.nrows(),
            gamma.ncols()
        )));
    }
    let scale = T::one().max(max_abs(gamma));
    let asym = max_abs(&(gamma - gamma.transpose()));
    if asym > T::lit(1e-10) * scale {
        return Err(Error::InvalidParameter(format!(
            "Cholesky input is not symmetric (max deviation {asym:?})"
        )));
    }
    if let Some(l) = cholesky_lower(gamma) {
        return Ok(CholeskyFactor { l, shift: T::zero() });
    }
    let mut shift = delta;
    for _ in 0..=CHOLESKY_LADDER_STEPS {
        let mut shifted = gamma.clone();
        for i in 0..n {
            shifted[(i, i)] += shift;
        }
        if let Some(l) = cholesky_lower(&shifted) {
            return Ok(CholeskyFactor { l, shift });
        }
        shift *= T::lit(10.0);
    }
    Err(Error::Decomposition(format!(
        "Cholesky failed after {CHOLESKY_LADDER_STEPS} escalations of the diagonal shift"
    )))
}

fn cholesky_lower<T: Real>(a: &DMatrix<T>) -> Option<DMatrix<T>> {
    let n = a.nrows();
    let mut l = DMatrix::<T>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > T::zero()) || !d.is_finite() {
            return None;
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Some(l)
}

/// `a * b^{-1}` for symmetric positive definite `b`.
pub fn solve_right_spd<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> Result<DMatrix<T>> {
    if b.nrows() != b.ncols() || a.ncols() != b.nrows() {
        return Err(Error::Dimension(format!(
            "cannot right-divide {}x{} by {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    let at = a.transpose();
    let sol = match b.clone().cholesky() {
        Some(ch) => ch.solve(&at),
        None => b
            .clone()
            .lu()
            .solve(&at)
            .ok_or_else(|| Error::Decomposition("singular system in right division".into()))?,
    };
    Ok(sol.transpose())
}

/// Solution of the pencil `Y d = lambda X d`.
#[derive(Debug, Clone)]
pub struct GeneralizedEigen<T: Real> {
    /// `d x k`, scaled so that `tr(V^T X V) = 1`.
    pub vectors: DMatrix<T>,
    /// Ascending generalized eigenvalues.
    pub values: DVector<T>,
}

/// Generalized eigenvectors of `(Y, X)` for the `k` smallest eigenvalues.
///
/// The pencil is whitened through the eigendecomposition of `X`. When `X` is
/// rank deficient and `k` fits inside its range, the problem is restricted to
/// that range; otherwise `X` is regularized by `1e-10 * tr(X) / d` on the
/// diagonal.
pub fn generalized_symmetric_eig<T: Real>(
    y: &DMatrix<T>,
    x: &DMatrix<T>,
    k: usize,
) -> Result<GeneralizedEigen<T>> {
    let d = x.nrows();
    if x.ncols() != d || y.shape() != (d, d) {
        return Err(Error::Dimension(format!(
            "pencil matrices are {:?} and {:?}",
            y.shape(),
            x.shape()
        )));
    }
    if k > d {
        return Err(Error::InvalidParameter(format!(
            "requested {k} eigenvectors of a {d}x{d} pencil"
        )));
    }
    let half = T::lit(0.5);
    let xs = (x + x.transpose()) * half;
    let ys = (y + y.transpose()) * half;

    let xe = SymmetricEigen::try_new(xs.clone(), T::default_epsilon(), 0)
        .ok_or_else(|| Error::Decomposition("eigendecomposition of X failed".into()))?;
    let dmax = xe.eigenvalues.iter().fold(T::zero(), |a, v| a.max(*v));
    if !(dmax > T::zero()) {
        return Err(Error::Decomposition("X is numerically zero".into()));
    }
    let tol = dmax * T::lit(d as f64) * T::default_epsilon() * T::lit(10.0);
    let range: Vec<usize> = (0..d).filter(|&i| xe.eigenvalues[i] > tol).collect();

    let whitening = if k <= range.len() {
        let mut b = DMatrix::zeros(d, range.len());
        for (c, &i) in range.iter().enumerate() {
            let s = T::one() / xe.eigenvalues[i].sqrt();
            b.set_column(c, &(xe.eigenvectors.column(i) * s));
        }
        b
    } else {
        let delta = T::lit(1e-10) * xs.trace() / T::lit(d as f64);
        let mut b = xe.eigenvectors.clone();
        for (i, mut col) in b.column_iter_mut().enumerate() {
            let ev = xe.eigenvalues[i].max(T::zero()) + delta;
            col /= ev.sqrt();
        }
        b
    };

    let core = whitening.transpose() * &ys * &whitening;
    let core = (&core + core.transpose()) * half;
    let ce = SymmetricEigen::try_new(core, T::default_epsilon(), 0)
        .ok_or_else(|| Error::Decomposition("whitened eigendecomposition failed".into()))?;
    let mut idx: Vec<usize> = (0..ce.eigenvalues.len()).collect();
    idx.sort_by(|&a, &b| {
        ce.eigenvalues[a]
            .partial_cmp(&ce.eigenvalues[b])
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let mut vectors = DMatrix::zeros(d, k);
    let mut values = DVector::zeros(k);
    for (c, &i) in idx.iter().take(k).enumerate() {
        let v = &whitening * ce.eigenvectors.column(i);
        vectors.set_column(c, &v);
        values[c] = ce.eigenvalues[i];
    }
    fix_column_signs(&mut vectors);

    let t = (vectors.transpose() * x * &vectors).trace();
    if t > T::zero() {
        vectors /= t.sqrt();
    } else if k > 0 {
        vectors /= T::lit(k as f64).sqrt();
    }
    Ok(GeneralizedEigen { vectors, values })
}

/// Flips each column so its largest-magnitude entry is positive.
pub fn fix_column_signs<T: Real>(m: &mut DMatrix<T>) -> Vec<bool> {
    let mut flipped = Vec::with_capacity(m.ncols());
    for mut col in m.column_iter_mut() {
        let mut best = T::zero();
        for v in col.iter() {
            if v.abs() > best.abs() {
                best = *v;
            }
        }
        let flip = best < T::zero();
        if flip {
            col.neg_mut();
        }
        flipped.push(flip);
    }
    flipped
}
