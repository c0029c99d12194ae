//! Core matrix types, the shape reshuffle and column-ordering bookkeeping.
//!
//! A shape matrix `S` is `3F x P`: rows `3f..3f+3` hold the X, Y, Z
//! coordinates of every point at frame `f`. Its reshuffle `S#` is `3P x F`;
//! column `f` of `S#` is `[x_f(0..P); y_f(0..P); z_f(0..P)]`.

use nalgebra::{DMatrix, Matrix2x3, Matrix3};

use crate::{Error, Real, Result};

/// Permutation of `0..n` stored as `indices[new_position] = old_position`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct OrderingVector {
    indices: Vec<usize>,
}

impl OrderingVector {
    pub fn new(indices: Vec<usize>) -> Result<Self> {
        let n = indices.len();
        let mut seen = vec![false; n];
        for &i in &indices {
            if i >= n || seen[i] {
                return Err(Error::NotPermutation(format!(
                    "index {i} out of range or repeated in ordering of length {n}"
                )));
            }
            seen[i] = true;
        }
        Ok(Self { indices })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            indices: (0..n).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn into_indices(self) -> Vec<usize> {
        self.indices
    }

    pub fn is_identity(&self) -> bool {
        self.indices.iter().enumerate().all(|(i, &j)| i == j)
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.len()];
        for (new, &old) in self.indices.iter().enumerate() {
            inv[old] = new;
        }
        Self { indices: inv }
    }

    /// Ordering equivalent to applying `self` and then `next`.
    pub fn then(&self, next: &OrderingVector) -> Result<Self> {
        if next.len() != self.len() {
            return Err(Error::Dimension(format!(
                "cannot compose orderings of length {} and {}",
                self.len(),
                next.len()
            )));
        }
        Ok(Self {
            indices: next.indices.iter().map(|&j| self.indices[j]).collect(),
        })
    }

    /// Reorders any slice the same way `reorder_columns` reorders columns.
    pub fn apply<V: Clone>(&self, items: &[V]) -> Result<Vec<V>> {
        if items.len() != self.len() {
            return Err(Error::Dimension(format!(
                "ordering of length {} applied to {} items",
                self.len(),
                items.len()
            )));
        }
        Ok(self.indices.iter().map(|&j| items[j].clone()).collect())
    }
}

/// Columns grouped into consecutive runs of `order`: cluster `c` owns
/// `order[start_c..start_c + sizes[c]]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub order: OrderingVector,
    pub sizes: Vec<usize>,
}

impl Partition {
    pub fn new(order: OrderingVector, sizes: Vec<usize>) -> Result<Self> {
        if sizes.iter().sum::<usize>() != order.len() {
            return Err(Error::Dimension(format!(
                "cluster sizes sum to {} but ordering has {} entries",
                sizes.iter().sum::<usize>(),
                order.len()
            )));
        }
        Ok(Self { order, sizes })
    }

    /// Builds the partition that sorts `0..labels.len()` by label, stable in
    /// index order.
    pub fn from_labels(labels: &[usize], k: usize) -> Result<Self> {
        Self::from_labels_along(labels, k, &OrderingVector::identity(labels.len()))
    }

    /// Sorts the entries of `along` by their label, preserving the relative
    /// order of `along` inside each label.
    pub fn from_labels_along(labels: &[usize], k: usize, along: &OrderingVector) -> Result<Self> {
        if labels.len() != along.len() {
            return Err(Error::Dimension("labels and ordering differ in length".into()));
        }
        let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); k];
        for &col in along.indices() {
            let l = labels[col];
            if l >= k {
                return Err(Error::InvalidParameter(format!("label {l} >= cluster count {k}")));
            }
            buckets[l].push(col);
        }
        let sizes = buckets.iter().map(Vec::len).collect();
        let order = OrderingVector::new(buckets.concat())?;
        Ok(Self { order, sizes })
    }

    pub fn k(&self) -> usize {
        self.sizes.len()
    }

    pub fn membership(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::with_capacity(self.sizes.len());
        let mut start = 0;
        for &s in &self.sizes {
            out.push(self.order.indices()[start..start + s].to_vec());
            start += s;
        }
        out
    }

    /// `labels[column] = cluster`.
    pub fn labels(&self) -> Vec<usize> {
        let mut labels = vec![0; self.order.len()];
        for (c, members) in self.membership().into_iter().enumerate() {
            for j in members {
                labels[j] = c;
            }
        }
        labels
    }
}

/// Stacked 2D tracks `W` (`2F x P`).
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementMatrix<T: Real> {
    data: DMatrix<T>,
    point_ids: Vec<usize>,
}

impl<T: Real> MeasurementMatrix<T> {
    pub fn new(data: DMatrix<T>) -> Result<Self> {
        let ids = (0..data.ncols()).collect();
        Self::with_point_ids(data, ids)
    }

    pub fn with_point_ids(data: DMatrix<T>, point_ids: Vec<usize>) -> Result<Self> {
        if data.nrows() == 0 || data.nrows() % 2 != 0 {
            return Err(Error::Malformed(format!(
                "measurement matrix has {} rows; rows must be even (2F)",
                data.nrows()
            )));
        }
        if data.ncols() == 0 {
            return Err(Error::Malformed("measurement matrix has no points".into()));
        }
        check_finite(&data, "measurement matrix")?;
        check_chart(&point_ids, data.ncols())?;
        Ok(Self { data, point_ids })
    }

    pub fn frames(&self) -> usize {
        self.data.nrows() / 2
    }

    pub fn points(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &DMatrix<T> {
        &self.data
    }

    pub fn into_data(self) -> DMatrix<T> {
        self.data
    }

    pub fn point_ids(&self) -> &[usize] {
        &self.point_ids
    }

    pub fn reorder(&self, ordering: &OrderingVector) -> Result<Self> {
        Ok(Self {
            data: reorder_columns(&self.data, ordering)?,
            point_ids: ordering.apply(&self.point_ids)?,
        })
    }

    /// Subtracts each frame's centroid from its two rows.
    pub fn centered(&self) -> Self {
        let mut data = self.data.clone();
        let n = T::lit(data.ncols() as f64);
        for mut row in data.row_iter_mut() {
            let mean = row.sum() / n;
            row.add_scalar_mut(-mean);
        }
        Self {
            data,
            point_ids: self.point_ids.clone(),
        }
    }
}

/// Per-frame orthographic cameras, each the top two rows of a rotation.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationStack<T: Real> {
    blocks: Vec<Matrix2x3<T>>,
}

impl<T: Real> RotationStack<T> {
    pub const ORTHONORMAL_TOL: f64 = 1e-8;

    pub fn new(blocks: Vec<Matrix2x3<T>>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::Malformed("rotation stack is empty".into()));
        }
        let tol = T::lit(Self::ORTHONORMAL_TOL).max(T::default_epsilon() * T::lit(100.0));
        for (f, r) in blocks.iter().enumerate() {
            let gram = r * r.transpose();
            let dev = (gram - nalgebra::Matrix2::identity()).abs().max();
            if !(dev <= tol) {
                return Err(Error::Malformed(format!(
                    "rotation block {f} has orthonormality error {dev:?}"
                )));
            }
        }
        Ok(Self { blocks })
    }

    /// Parses a `2F x 3` matrix of stacked camera blocks.
    pub fn from_matrix(m: &DMatrix<T>) -> Result<Self> {
        if m.ncols() != 3 || m.nrows() == 0 || m.nrows() % 2 != 0 {
            return Err(Error::Malformed(format!(
                "rotation matrix is {}x{}; expected 2F x 3",
                m.nrows(),
                m.ncols()
            )));
        }
        let blocks = (0..m.nrows() / 2)
            .map(|f| m.fixed_view::<2, 3>(2 * f, 0).into_owned())
            .collect();
        Self::new(blocks)
    }

    pub fn to_matrix(&self) -> DMatrix<T> {
        let mut m = DMatrix::zeros(2 * self.blocks.len(), 3);
        for (f, r) in self.blocks.iter().enumerate() {
            m.fixed_view_mut::<2, 3>(2 * f, 0).copy_from(r);
        }
        m
    }

    pub fn frames(&self) -> usize {
        self.blocks.len()
    }

    pub fn blocks(&self) -> &[Matrix2x3<T>] {
        &self.blocks
    }

    /// `R S` for a `3F x P` shape.
    pub fn project(&self, shape: &DMatrix<T>) -> Result<DMatrix<T>> {
        self.check_shape_rows(shape.nrows())?;
        let p = shape.ncols();
        let mut w = DMatrix::zeros(2 * self.frames(), p);
        for (f, r) in self.blocks.iter().enumerate() {
            let s = shape.rows(3 * f, 3);
            w.rows_mut(2 * f, 2).copy_from(&(r * s));
        }
        Ok(w)
    }

    /// `pinv(R) W`, computed frame by frame from the 2x3 pseudo-inverse.
    pub fn pinv_apply(&self, w: &DMatrix<T>) -> Result<DMatrix<T>> {
        if w.nrows() != 2 * self.frames() {
            return Err(Error::Dimension(format!(
                "measurement has {} rows but {} camera frames",
                w.nrows(),
                self.frames()
            )));
        }
        let mut s = DMatrix::zeros(3 * self.frames(), w.ncols());
        for (f, r) in self.blocks.iter().enumerate() {
            let gram = r * r.transpose();
            let inv = gram
                .try_inverse()
                .ok_or_else(|| Error::Decomposition(format!("camera block {f} is singular")))?;
            let pinv = r.transpose() * inv;
            s.rows_mut(3 * f, 3).copy_from(&(pinv * w.rows(2 * f, 2)));
        }
        Ok(s)
    }

    /// `R_f^T R_f` per frame.
    pub fn normal_blocks(&self) -> Vec<Matrix3<T>> {
        self.blocks.iter().map(|r| r.transpose() * r).collect()
    }

    fn check_shape_rows(&self, rows: usize) -> Result<()> {
        if rows != 3 * self.frames() {
            return Err(Error::Dimension(format!(
                "shape has {rows} rows but {} camera frames",
                self.frames()
            )));
        }
        Ok(())
    }
}

/// `3F x P` shape matrix with its column-to-point-id chart.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeMatrix<T: Real> {
    data: DMatrix<T>,
    point_ids: Vec<usize>,
}

impl<T: Real> ShapeMatrix<T> {
    pub fn new(data: DMatrix<T>) -> Result<Self> {
        let ids = (0..data.ncols()).collect();
        Self::with_point_ids(data, ids)
    }

    pub fn with_point_ids(data: DMatrix<T>, point_ids: Vec<usize>) -> Result<Self> {
        if data.nrows() == 0 || data.nrows() % 3 != 0 {
            return Err(Error::Malformed(format!(
                "shape matrix has {} rows; rows must be a multiple of 3 (3F)",
                data.nrows()
            )));
        }
        check_chart(&point_ids, data.ncols())?;
        Ok(Self { data, point_ids })
    }

    pub fn frames(&self) -> usize {
        self.data.nrows() / 3
    }

    pub fn points(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &DMatrix<T> {
        &self.data
    }

    pub fn into_data(self) -> DMatrix<T> {
        self.data
    }

    pub fn point_ids(&self) -> &[usize] {
        &self.point_ids
    }

    /// Frame `f` as a `3 x P` block.
    pub fn frame(&self, f: usize) -> DMatrix<T> {
        self.data.rows(3 * f, 3).into_owned()
    }

    pub fn reorder(&self, ordering: &OrderingVector) -> Result<Self> {
        Ok(Self {
            data: reorder_columns(&self.data, ordering)?,
            point_ids: ordering.apply(&self.point_ids)?,
        })
    }

    /// Columns rearranged so that column `j` is original point `j`.
    pub fn in_original_order(&self) -> Self {
        let mut data = DMatrix::zeros(self.data.nrows(), self.data.ncols());
        for (col, &id) in self.point_ids.iter().enumerate() {
            data.set_column(id, &self.data.column(col));
        }
        Self {
            data,
            point_ids: (0..self.points()).collect(),
        }
    }

    pub fn reshuffle(&self) -> ReshuffledShape<T> {
        ReshuffledShape {
            data: reshuffle(&self.data),
        }
    }
}

/// `3P x F` reshuffled shape; each column is one frame's shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ReshuffledShape<T: Real> {
    data: DMatrix<T>,
}

impl<T: Real> ReshuffledShape<T> {
    pub fn new(data: DMatrix<T>) -> Result<Self> {
        if data.nrows() == 0 || data.nrows() % 3 != 0 {
            return Err(Error::Malformed(format!(
                "reshuffled shape has {} rows; rows must be a multiple of 3 (3P)",
                data.nrows()
            )));
        }
        Ok(Self { data })
    }

    pub fn data(&self) -> &DMatrix<T> {
        &self.data
    }

    pub fn into_data(self) -> DMatrix<T> {
        self.data
    }

    /// Inverse reshuffle; the point chart restarts at the identity.
    pub fn to_shape(&self) -> ShapeMatrix<T> {
        ShapeMatrix {
            point_ids: (0..self.data.nrows() / 3).collect(),
            data: inverse_reshuffle_unchecked(&self.data),
        }
    }
}

/// `3F x P -> 3P x F`.
pub fn reshuffle<T: Real>(s: &DMatrix<T>) -> DMatrix<T> {
    let f = s.nrows() / 3;
    let p = s.ncols();
    DMatrix::from_fn(3 * p, f, |row, frame| {
        let (axis, point) = (row / p, row % p);
        s[(3 * frame + axis, point)]
    })
}

/// `3P x F -> 3F x P`.
pub fn inverse_reshuffle<T: Real>(sharp: &DMatrix<T>) -> Result<DMatrix<T>> {
    if sharp.nrows() % 3 != 0 {
        return Err(Error::Malformed(format!(
            "reshuffled matrix has {} rows; not divisible by 3",
            sharp.nrows()
        )));
    }
    Ok(inverse_reshuffle_unchecked(sharp))
}

fn inverse_reshuffle_unchecked<T: Real>(sharp: &DMatrix<T>) -> DMatrix<T> {
    let p = sharp.nrows() / 3;
    let f = sharp.ncols();
    DMatrix::from_fn(3 * f, p, |row, point| {
        let (frame, axis) = (row / 3, row % 3);
        sharp[(axis * p + point, frame)]
    })
}

/// Column `j` of the result is column `ordering[j]` of `m`.
pub fn reorder_columns<T: Real>(m: &DMatrix<T>, ordering: &OrderingVector) -> Result<DMatrix<T>> {
    if ordering.len() != m.ncols() {
        return Err(Error::NotPermutation(format!(
            "ordering of length {} for a matrix with {} columns",
            ordering.len(),
            m.ncols()
        )));
    }
    Ok(m.select_columns(ordering.indices()))
}

/// Row permutation of a reshuffled (`3P x F`) matrix matching a column
/// reorder of the underlying shape.
pub fn reorder_sharp_rows<T: Real>(sharp: &DMatrix<T>, ordering: &OrderingVector) -> Result<DMatrix<T>> {
    let p = ordering.len();
    if sharp.nrows() != 3 * p {
        return Err(Error::Dimension(format!(
            "reshuffled matrix has {} rows, expected {}",
            sharp.nrows(),
            3 * p
        )));
    }
    let rows: Vec<usize> = (0..3)
        .flat_map(|axis| ordering.indices().iter().map(move |&j| axis * p + j))
        .collect();
    Ok(sharp.select_rows(&rows))
}

fn check_chart(ids: &[usize], ncols: usize) -> Result<()> {
    if ids.len() != ncols {
        return Err(Error::Dimension(format!(
            "point chart has {} entries for {ncols} columns",
            ids.len()
        )));
    }
    OrderingVector::new(ids.to_vec()).map(|_| ())
}

pub(crate) fn check_finite<T: Real>(m: &DMatrix<T>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Malformed(format!("{what} contains non-finite entries")))
    }
}
