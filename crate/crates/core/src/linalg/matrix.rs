use std::fmt;

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
///
/// Every constructor checks `data.len() == rows * cols`; the fields are
/// private so the invariant cannot be broken from outside.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix({}x{}) [", self.rows, self.cols)?;
        for i in 0..self.rows {
            if i > 0 {
                write!(f, "; ")?;
            }
            for (j, v) in self.row(i).iter().enumerate() {
                if j > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{v}")?;
            }
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                op: "Matrix::new",
                left: (rows, cols),
                right: (data.len(), 1),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from nested rows. Panics on ragged input, so it is
    /// meant for literals in tests and examples.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.as_ref().len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            let row = row.as_ref();
            assert_eq!(row.len(), c, "ragged rows in Matrix::from_rows");
            data.extend_from_slice(row);
        }
        Self { rows: r, cols: c, data }
    }

    /// Builds a matrix entry by entry.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    /// Gathers the listed rows into a new matrix (used for minibatching).
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    fn same_shape(&self, other: &Matrix, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Dimension {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(())
    }

    /// Standard product `self · other`.
    ///
    /// Each output entry accumulates `a_ik * b_kj` for ascending `k`
    /// starting from zero; the i-k-j loop order keeps that order while
    /// streaming rows of `other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Dimension {
                op: "matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let (n, k, m) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let out_row = &mut out[i * m..(i + 1) * m];
            let a_row = &self.data[i * k..(i + 1) * k];
            for (kk, &a) in a_row.iter().enumerate() {
                let b_row = &other.data[kk * m..(kk + 1) * m];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Matrix {
            rows: n,
            cols: m,
            data: out,
        })
    }

    /// `selfᵀ · other` without forming the transpose.
    pub fn t_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::Dimension {
                op: "t_matmul",
                left: (self.cols, self.rows),
                right: other.shape(),
            });
        }
        let (k, n, m) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; n * m];
        for kk in 0..k {
            let a_row = &self.data[kk * n..(kk + 1) * n];
            let b_row = &other.data[kk * m..(kk + 1) * m];
            for (i, &a) in a_row.iter().enumerate() {
                let out_row = &mut out[i * m..(i + 1) * m];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Matrix {
            rows: n,
            cols: m,
            data: out,
        })
    }

    /// `self · otherᵀ` without forming the transpose.
    pub fn matmul_t(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::Dimension {
                op: "matmul_t",
                left: self.shape(),
                right: (other.cols, other.rows),
            });
        }
        let (n, k, m) = (self.rows, self.cols, other.rows);
        let mut out = Vec::with_capacity(n * m);
        for i in 0..n {
            let a_row = &self.data[i * k..(i + 1) * k];
            for j in 0..m {
                let b_row = &other.data[j * k..(j + 1) * k];
                out.push(dot(a_row, b_row));
            }
        }
        Ok(Matrix {
            rows: n,
            cols: m,
            data: out,
        })
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.same_shape(other, "add")?;
        Ok(self.zip_map(other, |a, b| a + b))
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.same_shape(other, "sub")?;
        Ok(self.zip_map(other, |a, b| a - b))
    }

    /// Entrywise (Hadamard) product.
    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        self.same_shape(other, "hadamard")?;
        Ok(self.zip_map(other, |a, b| a * b))
    }

    fn zip_map(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, c: f64) -> Matrix {
        self.map(|v| c * v)
    }

    pub fn scale_in_place(&mut self, c: f64) {
        self.data.iter_mut().for_each(|v| *v *= c);
    }

    /// `self += c * other`.
    pub fn axpy(&mut self, c: f64, other: &Matrix) -> Result<()> {
        self.same_shape(other, "axpy")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
        Ok(())
    }

    /// Multiplies column `j` by `factors[j]`.
    pub fn scale_columns(&self, factors: &[f64]) -> Result<Matrix> {
        if factors.len() != self.cols {
            return Err(Error::Dimension {
                op: "scale_columns",
                left: self.shape(),
                right: (factors.len(), 1),
            });
        }
        let mut out = self.clone();
        for row in out.data.chunks_exact_mut(self.cols) {
            for (v, &f) in row.iter_mut().zip(factors) {
                *v *= f;
            }
        }
        Ok(out)
    }

    pub fn frob_norm(&self) -> f64 {
        frob_norm(self)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Errors with [`Error::NonFinite`] if any entry is NaN or infinite.
    pub fn ensure_finite(&self, producer: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(producer))
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (&x, &y)| acc + x * y)
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    a.matmul(b)
}

/// `√(Σ m_ij²)`.
pub fn frob_norm(m: &Matrix) -> f64 {
    dot(&m.data, &m.data).sqrt()
}

/// `Σ a_ij·b_ij`.
pub fn frob_inner(a: &Matrix, b: &Matrix) -> Result<f64> {
    a.same_shape(b, "frob_inner")?;
    Ok(dot(&a.data, &b.data))
}

/// ℓ2 norm of every column. Zero columns give zero; callers decide how
/// to guard.
pub fn col_norms(m: &Matrix) -> Vec<f64> {
    let mut sq = vec![0.0; m.cols];
    for row in m.data.chunks_exact(m.cols.max(1)) {
        for (s, &v) in sq.iter_mut().zip(row) {
            *s += v * v;
        }
    }
    sq.into_iter().map(f64::sqrt).collect()
}

/// `‖AB‖_F` computed as `√⟨AᵀA, BBᵀ⟩`, which costs `O(r²(n+m))` and never
/// forms the `n x m` product.
pub fn lowrank_frob_norm(a: &Matrix, b: &Matrix) -> Result<f64> {
    if a.cols != b.rows {
        return Err(Error::Dimension {
            op: "lowrank_frob_norm",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let gram_a = a.t_matmul(a)?;
    let gram_b = b.matmul_t(b)?;
    // ⟨AᵀA, BBᵀ⟩ is a trace of a PSD product; rounding can push it a hair
    // below zero when AB ≈ 0.
    Ok(dot(&gram_a.data, &gram_b.data).max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(a: &Matrix, b: &Matrix) -> Matrix {
        Matrix::from_fn(a.rows(), b.cols(), |i, j| {
            let mut s = 0.0;
            for k in 0..a.cols() {
                s += a.get(i, k) * b.get(k, j);
            }
            s
        })
    }

    fn pseudo(rows: usize, cols: usize, salt: u64) -> Matrix {
        let mut rng = crate::linalg::Rng::new(salt);
        Matrix::from_fn(rows, cols, |_, _| rng.normal())
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
    }

    #[test]
    fn matmul_identity_and_outer() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        assert_eq!(a.matmul(&Matrix::identity(2)).unwrap(), a);
        let col = Matrix::from_rows(&[[1.0], [2.0]]);
        let row = Matrix::from_rows(&[[3.0, 4.0]]);
        assert_eq!(col.matmul(&row).unwrap(), Matrix::from_rows(&[[3.0, 4.0], [6.0, 8.0]]));
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let a = pseudo(8, 6, 1);
        let b = pseudo(6, 4, 2);
        let got = a.matmul(&b).unwrap();
        let want = naive_matmul(&a, &b);
        for (g, w) in got.as_slice().iter().zip(want.as_slice()) {
            assert!(rel(*g, *w) <= 1e-12, "{g} vs {w}");
        }
    }

    #[test]
    fn transposed_products_agree_with_explicit_transpose() {
        let a = pseudo(7, 3, 3);
        let b = pseudo(7, 5, 4);
        let c = pseudo(4, 3, 5);
        let x = a.t_matmul(&b).unwrap();
        let y = a.transpose().matmul(&b).unwrap();
        assert!(x.sub(&y).unwrap().max_abs() < 1e-13);
        let x = a.matmul_t(&c).unwrap();
        let y = a.matmul(&c.transpose()).unwrap();
        assert!(x.sub(&y).unwrap().max_abs() < 1e-13);
    }

    #[test]
    fn matmul_dimension_error_reports_shapes() {
        let err = Matrix::zeros(2, 3).matmul(&Matrix::zeros(2, 3)).unwrap_err();
        assert_eq!(
            err,
            Error::Dimension {
                op: "matmul",
                left: (2, 3),
                right: (2, 3)
            }
        );
    }

    #[test]
    fn new_rejects_bad_length() {
        assert!(Matrix::new(2, 2, vec![1.0; 3]).is_err());
    }

    #[test]
    fn frobenius_norm_cases() {
        assert_eq!(frob_norm(&Matrix::from_rows(&[[3.0, 4.0]])), 5.0);
        assert_eq!(frob_norm(&Matrix::identity(2)), 2f64.sqrt());
        assert_eq!(frob_norm(&Matrix::zeros(3, 3)), 0.0);
        // flatten-then-ℓ2
        let m = pseudo(16, 16, 7);
        let flat: Vec<f64> = (0..16).flat_map(|i| m.row(i).to_vec()).collect();
        let l2 = flat.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(rel(frob_norm(&m), l2) <= 1e-14);
    }

    #[test]
    fn frobenius_inner_cases() {
        let i2 = Matrix::identity(2);
        assert_eq!(frob_inner(&i2, &i2).unwrap(), 2.0);
        let m = pseudo(5, 4, 9);
        assert_eq!(frob_inner(&m, &Matrix::zeros(5, 4)).unwrap(), 0.0);
        let n = frob_norm(&m);
        assert!(rel(frob_inner(&m, &m).unwrap(), n * n) <= 1e-14);
        assert!(frob_inner(&m, &Matrix::zeros(4, 5)).is_err());
    }

    #[test]
    fn column_norms() {
        let m = Matrix::from_rows(&[[3.0, 0.0], [4.0, 1.0]]);
        assert_eq!(col_norms(&m), vec![5.0, 1.0]);
        let z = Matrix::from_rows(&[[0.0, 2.0], [0.0, 0.0]]);
        assert_eq!(col_norms(&z), vec![0.0, 2.0]);
        let r = pseudo(9, 6, 11);
        for (j, n) in col_norms(&r).into_iter().enumerate() {
            let col = Matrix::new(9, 1, r.column(j)).unwrap();
            assert!(rel(n, frob_norm(&col)) <= 1e-14);
        }
    }

    #[test]
    fn lowrank_norm_cases() {
        let a = Matrix::from_rows(&[[1.0], [2.0]]);
        let b = Matrix::from_rows(&[[3.0, 4.0]]);
        assert_eq!(lowrank_frob_norm(&a, &b).unwrap(), 125f64.sqrt());
        assert_eq!(lowrank_frob_norm(&a, &Matrix::zeros(1, 2)).unwrap(), 0.0);
        let a = pseudo(64, 4, 12);
        let b = pseudo(4, 48, 13);
        let dense = frob_norm(&a.matmul(&b).unwrap());
        assert!(rel(lowrank_frob_norm(&a, &b).unwrap(), dense) <= 1e-10);
        assert!(lowrank_frob_norm(&a, &Matrix::zeros(3, 48)).is_err());
    }

    #[test]
    fn scale_columns_and_select_rows() {
        let m = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
        assert_eq!(
            m.scale_columns(&[2.0, -1.0]).unwrap(),
            Matrix::from_rows(&[[2.0, -2.0], [6.0, -4.0], [10.0, -6.0]])
        );
        assert_eq!(m.select_rows(&[2, 0]), Matrix::from_rows(&[[5.0, 6.0], [1.0, 2.0]]));
    }

    #[test]
    fn ensure_finite_flags_nan() {
        let mut m = Matrix::zeros(2, 2);
        assert!(m.ensure_finite("test").is_ok());
        m.set(1, 0, f64::NAN);
        assert_eq!(m.ensure_finite("test"), Err(Error::NonFinite("test")));
    }
}
