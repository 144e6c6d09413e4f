//! Small sparse matrices, tensor-mode application and dense helpers.
//!
//! Block operators act on `D = d_1 * ... * d_r` dimensional vectors laid out
//! row-major over the factors (factor 0 varies slowest). A factor matrix is
//! applied to one mode without ever forming the Kronecker product.

use std::sync::Arc;

use faer::{Mat, Side};

use crate::error::{Error, Result};

/// Square sparse matrix in compressed-row form.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn identity(n: usize) -> Self {
        Self {
            n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0; n + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < n && c < n, "triplet ({r}, {c}) outside {n}x{n}");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            indices.push(c);
            values.push(v);
            indptr[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..n {
            indptr[r + 1] += indptr[r];
        }
        Self {
            n,
            indptr,
            indices,
            values,
        }
    }

    /// Keeps entries with magnitude above `drop_tol`.
    pub fn from_dense(m: &Mat<f64>, drop_tol: f64) -> Self {
        assert_eq!(m.nrows(), m.ncols());
        let n = m.nrows();
        let mut triplets = Vec::new();
        for r in 0..n {
            for c in 0..n {
                let v = m[(r, c)];
                if v.abs() > drop_tol {
                    triplets.push((r, c, v));
                }
            }
        }
        Self::from_triplets(n, triplets)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn max_row_nnz(&self) -> usize {
        self.indptr
            .windows(2)
            .map(|w| w[1] - w[0])
            .max()
            .unwrap_or(0)
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row(r).find(|&(j, _)| j == c).map_or(0.0, |(_, v)| v)
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        (0..self.n)
            .flat_map(|r| self.row(r).map(move |(c, v)| (r, c, v)))
            .collect()
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let mut m = Mat::zeros(self.n, self.n);
        for (r, c, v) in self.triplets() {
            m[(r, c)] = v;
        }
        m
    }

    pub fn transpose(&self) -> Self {
        Self::from_triplets(
            self.n,
            self.triplets()
                .into_iter()
                .map(|(r, c, v)| (c, r, v))
                .collect(),
        )
    }

    /// Product `self * other`, dropping entries below `1e-14`.
    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.n, other.n);
        let mut triplets = Vec::new();
        let mut acc = vec![0.0; self.n];
        for r in 0..self.n {
            for (k, a) in self.row(r) {
                for (c, b) in other.row(k) {
                    acc[c] += a * b;
                }
            }
            for (c, v) in acc.iter_mut().enumerate() {
                if v.abs() > 1e-14 {
                    triplets.push((r, c, *v));
                }
                *v = 0.0;
            }
        }
        Self::from_triplets(self.n, triplets)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|r| self.row(r).map(|(c, v)| v * x[c]).sum())
            .collect()
    }

    /// Largest entrywise deviation from symmetry.
    pub fn asymmetry(&self) -> f64 {
        self.triplets()
            .into_iter()
            .map(|(r, c, v)| (v - self.get(c, r)).abs())
            .fold(0.0, f64::max)
    }
}

/// Row-major layout of a tensor-product vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorShape {
    dims: Vec<usize>,
    strides: Vec<usize>,
    len: usize,
}

impl TensorShape {
    pub fn new(dims: Vec<usize>) -> Self {
        let mut strides = vec![1; dims.len()];
        for f in (0..dims.len().saturating_sub(1)).rev() {
            strides[f] = strides[f + 1] * dims[f + 1];
        }
        let len = dims.iter().product();
        Self { dims, strides, len }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Per-factor indices of a flat index.
    pub fn unravel(&self, mut flat: usize, out: &mut [usize]) {
        for (f, &s) in self.strides.iter().enumerate() {
            out[f] = flat / s;
            flat %= s;
        }
    }

    /// `y = (I ⊗ .. ⊗ mat ⊗ .. ⊗ I) x` with `mat` acting on factor `mode`.
    pub fn apply_mode(&self, mode: usize, mat: &SparseMatrix, x: &[f64], y: &mut [f64]) {
        let d = self.dims[mode];
        let s = self.strides[mode];
        debug_assert_eq!(mat.dim(), d);
        debug_assert_eq!(x.len(), self.len);
        let block = d * s;
        for (xb, yb) in x.chunks_exact(block).zip(y.chunks_exact_mut(block)) {
            for r in 0..d {
                let yrow = &mut yb[r * s..(r + 1) * s];
                yrow.fill(0.0);
                for (c, v) in mat.row(r) {
                    let xrow = &xb[c * s..(c + 1) * s];
                    for (yi, xi) in yrow.iter_mut().zip(xrow) {
                        *yi += v * xi;
                    }
                }
            }
        }
    }
}

/// A real linear map on `R^dim` given only through its action.
pub trait LinearOperator: Send + Sync {
    fn dim(&self) -> usize;

    /// Writes `A x` into `y` (overwriting it).
    fn apply(&self, x: &[f64], y: &mut [f64]);

    /// Materializes the operator column by column.
    fn to_dense(&self) -> Mat<f64> {
        let n = self.dim();
        let mut m = Mat::zeros(n, n);
        let mut e = vec![0.0; n];
        let mut col = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            self.apply(&e, &mut col);
            for (i, &v) in col.iter().enumerate() {
                m[(i, j)] = v;
            }
            e[j] = 0.0;
        }
        m
    }
}

impl LinearOperator for Mat<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, xj) in x.iter().enumerate() {
                acc += self[(i, j)] * xj;
            }
            *yi = acc;
        }
    }

    fn to_dense(&self) -> Mat<f64> {
        self.clone()
    }
}

/// `stages[last] ∘ ... ∘ stages[0]`: the first stage is applied first.
pub struct OperatorChain {
    dim: usize,
    stages: Vec<Arc<dyn LinearOperator>>,
}

impl OperatorChain {
    pub fn new(stages: Vec<Arc<dyn LinearOperator>>) -> Result<Self> {
        let dim = stages
            .first()
            .map(|s| s.dim())
            .ok_or_else(|| Error::InvalidArgument("empty operator chain".into()))?;
        if stages.iter().any(|s| s.dim() != dim) {
            return Err(Error::InvalidArgument(
                "chain stages differ in dimension".into(),
            ));
        }
        Ok(Self { dim, stages })
    }
}

impl LinearOperator for OperatorChain {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let mut cur = x.to_vec();
        for stage in &self.stages {
            stage.apply(&cur, y);
            cur.copy_from_slice(y);
        }
    }
}

/// `identity * I + Σ_i c_i A_i`.
pub struct OperatorSum {
    dim: usize,
    identity: f64,
    terms: Vec<(f64, Arc<dyn LinearOperator>)>,
}

impl OperatorSum {
    pub fn new(
        dim: usize,
        identity: f64,
        terms: Vec<(f64, Arc<dyn LinearOperator>)>,
    ) -> Result<Self> {
        if terms.iter().any(|(_, t)| t.dim() != dim) {
            return Err(Error::InvalidArgument(
                "summands differ in dimension".into(),
            ));
        }
        Ok(Self {
            dim,
            identity,
            terms,
        })
    }
}

impl LinearOperator for OperatorSum {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (yi, xi) in y.iter_mut().zip(x) {
            *yi = self.identity * xi;
        }
        let mut tmp = vec![0.0; self.dim];
        for (c, term) in &self.terms {
            term.apply(x, &mut tmp);
            for (yi, ti) in y.iter_mut().zip(&tmp) {
                *yi += c * ti;
            }
        }
    }
}

/// Diagonal 0/1 operator.
pub struct DiagonalMask {
    mask: Arc<Vec<bool>>,
}

impl DiagonalMask {
    pub fn new(mask: Arc<Vec<bool>>) -> Self {
        Self { mask }
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }
}

impl LinearOperator for DiagonalMask {
    fn dim(&self) -> usize {
        self.mask.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for ((yi, xi), &keep) in y.iter_mut().zip(x).zip(self.mask.iter()) {
            *yi = if keep { *xi } else { 0.0 };
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y -= alpha * x`
pub fn axpy_neg(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi -= alpha * xi;
    }
}

/// Largest entrywise deviation of a dense matrix from symmetry.
pub fn dense_asymmetry(m: &Mat<f64>) -> f64 {
    let n = m.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..i {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Ascending eigenvalues of a symmetric matrix.
pub fn symmetric_eigenvalues(m: &Mat<f64>) -> Result<Vec<f64>> {
    m.self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Eigensolver(format!("{e:?}")))
}

/// Ascending eigenvalues and orthonormal eigenvectors (as columns).
pub fn symmetric_eigen(m: &Mat<f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    let evd = m
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Eigensolver(format!("{e:?}")))?;
    let values = evd.S().column_vector().iter().copied().collect();
    Ok((values, evd.U().to_owned()))
}

/// Descending singular values.
pub fn singular_values(m: &Mat<f64>) -> Result<Vec<f64>> {
    m.singular_values()
        .map_err(|e| Error::Eigensolver(format!("{e:?}")))
}

/// Dense Kronecker product of a list of factors.
pub fn kron_all(factors: &[Mat<f64>]) -> Mat<f64> {
    let mut acc = Mat::<f64>::from_fn(1, 1, |_, _| 1.0);
    for f in factors {
        let (ar, ac) = (acc.nrows(), acc.ncols());
        let (br, bc) = (f.nrows(), f.ncols());
        let next = Mat::from_fn(ar * br, ac * bc, |i, j| {
            acc[(i / br, j / bc)] * f[(i % br, j % bc)]
        });
        acc = next;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_application_matches_kronecker_product() {
        let shape = TensorShape::new(vec![2, 3, 2]);
        let a = SparseMatrix::from_triplets(
            3,
            vec![(0, 1, 2.0), (1, 0, -1.0), (2, 2, 0.5), (0, 2, 1.5)],
        );
        let x: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut y = vec![0.0; 12];
        shape.apply_mode(1, &a, &x, &mut y);
        let id2 = Mat::<f64>::identity(2, 2);
        let full = kron_all(&[id2.clone(), a.to_dense(), id2]);
        let expect = full.apply_vec(&x);
        for (u, v) in y.iter().zip(&expect) {
            assert!((u - v).abs() < 1e-14);
        }
    }

    #[test]
    fn sparse_products_and_transpose() {
        let a = SparseMatrix::from_triplets(2, vec![(0, 0, 1.0), (0, 1, 2.0), (1, 1, 3.0)]);
        let b = a.transpose();
        assert_eq!(b.get(1, 0), 2.0);
        let c = a.matmul(&b);
        assert_eq!(c.get(0, 0), 5.0);
        assert_eq!(c.get(0, 1), 6.0);
        assert_eq!(c.get(1, 1), 9.0);
        assert_eq!(c.asymmetry(), 0.0);
        assert_eq!(SparseMatrix::from_dense(&c.to_dense(), 0.0), c);
    }

    trait ApplyVec {
        fn apply_vec(&self, x: &[f64]) -> Vec<f64>;
    }

    impl ApplyVec for Mat<f64> {
        fn apply_vec(&self, x: &[f64]) -> Vec<f64> {
            let mut y = vec![0.0; self.nrows()];
            LinearOperator::apply(self, x, &mut y);
            y
        }
    }
}
