use std::fmt;
use std::ops::{Index, IndexMut};

use crate::error::{dim_err, param_err, ClotError, Result};

/// Row-major matrix of `f64`.
///
/// Features, costs, couplings and model weights all travel as `DenseMatrix`.
#[derive(Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "DenseMatrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows.min(8) {
            writeln!(f, "  {:?}", &self.row(r)[..self.cols.min(8)])?;
        }
        write!(f, "]")
    }
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return dim_err(format!(
                "buffer of length {} cannot back a {}x{} matrix",
                data.len(),
                rows,
                cols
            ));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return dim_err(format!("row {i} has length {} but row 0 has {cols}", r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self { rows: rows.len(), cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics, so zero-width matrices yield empty rows explicitly.
        let cols = self.cols;
        (0..self.rows).map(move |r| if cols == 0 { &[][..] } else { &self.data[r * cols..(r + 1) * cols] })
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    /// Copies the listed rows, in order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self { rows: indices.len(), cols: self.cols, data }
    }

    pub fn slice_cols(&self, start: usize, len: usize) -> Self {
        Self::from_fn(self.rows, len, |r, c| self[(r, start + c)])
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    fn same_shape(&self, other: &Self, op: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return dim_err(format!(
                "{op}: shapes {:?} and {:?} differ",
                self.shape(),
                other.shape()
            ));
        }
        Ok(())
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return dim_err(format!(
                "matmul: {:?} x {:?}",
                self.shape(),
                other.shape()
            ));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: &Self) -> Result<Self> {
        if self.cols != other.cols {
            return dim_err(format!(
                "matmul_t: {:?} x {:?}ᵀ",
                self.shape(),
                other.shape()
            ));
        }
        Ok(Self::from_fn(self.rows, other.rows, |i, j| dot(self.row(i), other.row(j))))
    }

    /// `selfᵀ · other`.
    pub fn t_matmul(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows {
            return dim_err(format!(
                "t_matmul: {:?}ᵀ x {:?}",
                self.shape(),
                other.shape()
            ));
        }
        let mut out = Self::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let b_row = other.row(k);
            for (i, &a) in self.row(k).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    pub fn zip_with(&self, other: &Self, op: &str, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.same_shape(other, op)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self { rows: self.rows, cols: self.cols, data })
    }

    /// In-place `self += scale · other`.
    pub fn add_scaled(&mut self, other: &Self, scale: f64) -> Result<()> {
        self.same_shape(other, "add_scaled")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.row_iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for r in self.row_iter() {
            for (o, &v) in out.iter_mut().zip(r) {
                *o += v;
            }
        }
        out
    }

    pub fn frobenius_dot(&self, other: &Self) -> Result<f64> {
        self.same_shape(other, "frobenius_dot")?;
        Ok(dot(&self.data, &other.data))
    }

    pub fn norm(&self) -> f64 {
        dot(&self.data, &self.data).sqrt()
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(p) => Err(ClotError::Input(format!(
                "{what} has non-finite entry at ({}, {})",
                p / self.cols.max(1),
                p % self.cols.max(1)
            ))),
        }
    }

    /// Index of the largest entry in each row; ties go to the lowest column.
    pub fn argmax_rows(&self) -> Vec<usize> {
        self.row_iter()
            .map(|r| {
                let mut best = 0;
                for (j, &v) in r.iter().enumerate() {
                    if v > r[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Max-shifted `log Σ exp` of a slice. Returns `-inf` for an all `-inf` slice.
pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let s: f64 = values.iter().map(|&v| (v - max).exp()).sum();
    max + s.ln()
}

/// Row-wise log-sum-exp.
pub fn logsumexp_rows(m: &DenseMatrix) -> Result<Vec<f64>> {
    if m.is_empty() {
        return dim_err("logsumexp_rows of an empty matrix");
    }
    Ok(m.row_iter().map(logsumexp).collect())
}

/// Row-wise `softmax(m / temperature)`.
pub fn softmax_rows(m: &DenseMatrix, temperature: f64) -> Result<DenseMatrix> {
    if !(temperature > 0.0) {
        return param_err(format!("softmax temperature must be positive, got {temperature}"));
    }
    let mut out = m.scale(1.0 / temperature);
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    Ok(out)
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v /= s;
    }
}

/// Cosine similarity between every row of `a` and every row of `b`.
///
/// Rows with zero norm have similarity 0 with everything.
pub fn cosine_matrix(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols() != b.cols() {
        return dim_err(format!(
            "cosine_matrix: inner dimensions {} and {} differ",
            a.cols(),
            b.cols()
        ));
    }
    let na: Vec<f64> = a.row_iter().map(|r| dot(r, r).sqrt()).collect();
    let nb: Vec<f64> = b.row_iter().map(|r| dot(r, r).sqrt()).collect();
    Ok(DenseMatrix::from_fn(a.rows(), b.rows(), |i, j| {
        if na[i] == 0.0 || nb[j] == 0.0 {
            0.0
        } else {
            (dot(a.row(i), b.row(j)) / (na[i] * nb[j])).clamp(-1.0, 1.0)
        }
    }))
}

/// Generalized KL divergence `Σ p log(p/q) − p + q` for unnormalized measures.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return dim_err(format!("kl_divergence: lengths {} and {} differ", p.len(), q.len()));
    }
    let mut kl = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if !(qi > 0.0) {
            return param_err(format!("kl_divergence: reference entry {qi} is not positive"));
        }
        if pi < 0.0 {
            return param_err(format!("kl_divergence: entry {pi} is negative"));
        }
        if pi > 0.0 {
            kl += pi * (pi / qi).ln();
        }
        kl += qi - pi;
    }
    Ok(kl)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(v: &[f64]) -> DenseMatrix {
        DenseMatrix::from_rows(&[v]).unwrap()
    }

    #[test]
    fn logsumexp_examples() {
        assert!((logsumexp_rows(&row(&[0.0, 0.0])).unwrap()[0] - 2f64.ln()).abs() < 1e-12);
        let big = logsumexp_rows(&row(&[1000.0, 1000.0])).unwrap()[0];
        assert!((big - (1000.0 + 2f64.ln())).abs() < 1e-9);
        // log(1 + e + e^2)
        assert!((logsumexp_rows(&row(&[0.0, 1.0, 2.0])).unwrap()[0] - 2.407_605_964_444_38).abs() < 1e-6);
        assert!(matches!(logsumexp_rows(&DenseMatrix::zeros(0, 0)), Err(ClotError::Dimension(_))));
    }

    #[test]
    fn softmax_examples() {
        let s = softmax_rows(&row(&[0.0, 0.0, 0.0]), 1.0).unwrap();
        for &v in s.as_slice() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let s = softmax_rows(&row(&[2.0, 0.0]), 1.0).unwrap();
        assert!((s[(0, 0)] - 0.880_797).abs() < 1e-6);
        assert!((s[(0, 1)] - 0.119_203).abs() < 1e-6);
        let s = softmax_rows(&row(&[1.0, 0.0]), 1e9).unwrap();
        assert!((s[(0, 0)] - 0.5).abs() < 1e-8);
        assert!(matches!(softmax_rows(&row(&[1.0]), 0.0), Err(ClotError::Parameter(_))));
        assert!(matches!(softmax_rows(&row(&[1.0]), -1.0), Err(ClotError::Parameter(_))));
    }

    #[test]
    fn cosine_examples() {
        let a = row(&[0.6, 0.8]);
        assert!((cosine_matrix(&a, &a).unwrap()[(0, 0)] - 1.0).abs() < 1e-15);
        let c = cosine_matrix(&row(&[1.0, 0.0]), &row(&[0.0, 2.0])).unwrap();
        assert_eq!(c[(0, 0)], 0.0);
        let c = cosine_matrix(&row(&[1.0, 1.0]), &row(&[1.0, 0.0])).unwrap();
        assert!((c[(0, 0)] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        let z = cosine_matrix(&row(&[0.0, 0.0]), &row(&[1.0, 0.0])).unwrap();
        assert_eq!(z[(0, 0)], 0.0);
        assert!(cosine_matrix(&row(&[1.0]), &row(&[1.0, 0.0])).is_err());
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_divergence(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert!((kl_divergence(&[0.0, 1.0], &[0.5, 0.5]).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert!(kl_divergence(&[0.5, 0.5], &[0.5, 0.5]).unwrap().abs() < 1e-15);
        assert!(matches!(kl_divergence(&[0.5], &[0.0]), Err(ClotError::Parameter(_))));
    }

    #[test]
    fn argmax_breaks_ties_low() {
        let m = DenseMatrix::from_rows(&[[0.5, 0.5], [0.2, 0.8]]).unwrap();
        assert_eq!(m.argmax_rows(), vec![0, 1]);
    }

    #[test]
    fn products_agree() {
        let a = DenseMatrix::from_fn(3, 4, |i, j| (i * 4 + j) as f64 - 5.0);
        let b = DenseMatrix::from_fn(5, 4, |i, j| (i as f64 - j as f64) * 0.5);
        let direct = a.matmul(&b.transpose()).unwrap();
        assert_eq!(direct, a.matmul_t(&b).unwrap());
        let c = DenseMatrix::from_fn(3, 2, |i, j| (i + 2 * j) as f64);
        assert_eq!(a.transpose().matmul(&c).unwrap(), a.t_matmul(&c).unwrap());
        assert!(a.matmul(&a).is_err());
    }

    fn finite_matrix() -> impl Strategy<Value = DenseMatrix> {
        (1usize..6, 1usize..6).prop_flat_map(|(r, c)| {
            proptest::collection::vec(-50.0f64..50.0, r * c)
                .prop_map(move |v| DenseMatrix::from_vec(r, c, v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(m in finite_matrix(), t in 0.05f64..10.0) {
            let s = softmax_rows(&m, t).unwrap();
            for r in s.row_iter() {
                prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(r.iter().all(|&v| v >= 0.0));
            }
        }

        #[test]
        fn logsumexp_is_shift_invariant(m in finite_matrix(), c in -100.0f64..100.0) {
            let base = logsumexp_rows(&m).unwrap();
            let shifted = logsumexp_rows(&m.map(|v| v + c)).unwrap();
            for (a, b) in base.iter().zip(&shifted) {
                prop_assert!((a + c - b).abs() < 1e-10);
            }
        }

        #[test]
        fn cosine_is_bounded(a in finite_matrix(), seed in 0u64..1000) {
            let b = DenseMatrix::from_fn(3, a.cols(), |i, j| ((seed as f64 + 1.3 * i as f64) * (j as f64 + 0.7)).sin());
            let c = cosine_matrix(&a, &b).unwrap();
            prop_assert!(c.as_slice().iter().all(|&v| (-1.0 - 1e-12..=1.0 + 1e-12).contains(&v)));
        }
    }
}
