//! Cost and structure matrices for the three transport problems.
//!
//! Every transport cost handed to the solver has the form
//! `1 − cos(x_i, a_j) + ρ·Z_ij [+ SWD(x_i, a_j)]`, where `Z` is the temporal
//! prior. Structure matrices are binary: `c_rows` marks temporally adjacent
//! source items and `c_cols` marks distinct targets.

use crate::error::{dim_err, param_err, Result};
use crate::numeric::{cosine_matrix, DenseMatrix};
use crate::swd::{swd_matrix, ProjectionSet};

/// One transport instance: a linear cost plus the two structure matrices.
#[derive(Clone, Debug)]
pub struct CostBundle {
    pub c_kot: DenseMatrix,
    pub c_rows: DenseMatrix,
    pub c_cols: DenseMatrix,
}

impl CostBundle {
    pub fn new(c_kot: DenseMatrix, c_rows: DenseMatrix, c_cols: DenseMatrix) -> Result<Self> {
        let (n, m) = c_kot.shape();
        if c_rows.shape() != (n, n) || c_cols.shape() != (m, m) {
            return dim_err(format!(
                "cost bundle: c_kot {:?} needs c_rows {n}x{n} and c_cols {m}x{m}, got {:?} and {:?}",
                c_kot.shape(),
                c_rows.shape(),
                c_cols.shape()
            ));
        }
        c_kot.ensure_finite("c_kot")?;
        Ok(Self { c_kot, c_rows, c_cols })
    }
}

/// `Z_ij = |(i+1)/n − (j+1)/k|`.
pub fn temporal_prior(n: usize, k: usize) -> Result<DenseMatrix> {
    if n == 0 || k == 0 {
        return param_err(format!("temporal prior needs positive sizes, got {n}x{k}"));
    }
    Ok(DenseMatrix::from_fn(n, k, |i, j| {
        ((i + 1) as f64 / n as f64 - (j + 1) as f64 / k as f64).abs()
    }))
}

/// `1 − cos(x_i, a_j) + ρ·Z_ij`.
fn cosine_cost(x: &DenseMatrix, a: &DenseMatrix, rho: f64) -> Result<DenseMatrix> {
    if !(rho >= 0.0) {
        return param_err(format!("temporal prior weight must be >= 0, got {rho}"));
    }
    let cos = cosine_matrix(x, a)?;
    let mut cost = cos.map(|c| 1.0 - c);
    if rho > 0.0 {
        let z = temporal_prior(x.rows(), a.rows())?;
        cost.add_scaled(&z, rho)?;
    }
    Ok(cost)
}

/// Stage-1 frame→action cost, `1 + SWD − (cos − ρZ)`.
pub fn frame_kot_cost(x: &DenseMatrix, a: &DenseMatrix, rho: f64, proj: &ProjectionSet) -> Result<DenseMatrix> {
    let mut cost = cosine_cost(x, a, rho)?;
    let swd = swd_matrix(x, a, proj, 1)?;
    cost.add_scaled(&swd, 1.0)?;
    Ok(cost)
}

/// Stage-2 segment→action cost, cosine only.
pub fn segment_kot_cost(s: &DenseMatrix, a: &DenseMatrix, rho_s: f64) -> Result<DenseMatrix> {
    cosine_cost(s, a, rho_s)
}

/// Stage-3 refined-frame→action cost; the SWD term is included only when
/// projections are supplied.
pub fn refined_kot_cost(
    f_r: &DenseMatrix,
    a: &DenseMatrix,
    rho: f64,
    proj: Option<&ProjectionSet>,
) -> Result<DenseMatrix> {
    match proj {
        Some(p) => frame_kot_cost(f_r, a, rho, p),
        None => cosine_cost(f_r, a, rho),
    }
}

/// Adjacency radius `⌈fraction·n⌉`, clamped to `[0, n−1]`.
pub fn radius_from_fraction(n: usize, radius_fraction: f64) -> Result<usize> {
    if !(radius_fraction > 0.0 && radius_fraction <= 1.0) {
        return param_err(format!("radius fraction must lie in (0, 1], got {radius_fraction}"));
    }
    let r = (radius_fraction * n as f64).ceil() as usize;
    Ok(r.min(n.saturating_sub(1)))
}

/// Structure matrices with an explicit adjacency radius.
pub fn structure_matrices_with_radius(n: usize, k: usize, radius: usize) -> (DenseMatrix, DenseMatrix) {
    let c_rows = DenseMatrix::from_fn(n, n, |i, j| {
        let gap = i.abs_diff(j);
        if gap > 0 && gap <= radius {
            1.0
        } else {
            0.0
        }
    });
    let c_cols = DenseMatrix::from_fn(k, k, |j, l| if j != l { 1.0 } else { 0.0 });
    (c_rows, c_cols)
}

/// `(c_rows, c_cols)` with radius `⌈radius_fraction·n⌉`.
pub fn structure_matrices(n: usize, k: usize, radius_fraction: f64) -> Result<(DenseMatrix, DenseMatrix)> {
    let r = radius_from_fraction(n, radius_fraction)?;
    Ok(structure_matrices_with_radius(n, k, r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Rng;
    use crate::swd::sample_projections;

    #[test]
    fn prior_examples() {
        let z = temporal_prior(3, 3).unwrap();
        for i in 0..3 {
            assert_eq!(z[(i, i)], 0.0);
        }
        assert_eq!(temporal_prior(2, 2).unwrap(), DenseMatrix::from_rows(&[[0.0, 0.5], [0.5, 0.0]]).unwrap());
        assert!((temporal_prior(4, 2).unwrap()[(0, 1)] - 0.75).abs() < 1e-15);
        assert!(temporal_prior(0, 2).is_err());
        let z = temporal_prior(17, 5).unwrap();
        assert!(z.as_slice().iter().all(|&v| (0.0..1.0).contains(&v)));
    }

    #[test]
    fn structure_examples() {
        let (rows, cols) = structure_matrices_with_radius(3, 2, 1);
        assert_eq!(rows, DenseMatrix::from_rows(&[[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]]).unwrap());
        assert_eq!(cols, DenseMatrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap());
        assert!(structure_matrices(4, 2, 0.0).is_err());
        assert!(structure_matrices(4, 2, -0.1).is_err());
        assert_eq!(radius_from_fraction(100, 0.04).unwrap(), 4);
        assert_eq!(radius_from_fraction(120, 0.04).unwrap(), 5);
        assert_eq!(radius_from_fraction(3, 1.0).unwrap(), 2);
    }

    #[test]
    fn structure_is_symmetric_binary_zero_diagonal() {
        for (n, k, f) in [(10, 3, 0.1), (25, 6, 0.3), (7, 1, 1.0)] {
            let (rows, cols) = structure_matrices(n, k, f).unwrap();
            for m in [&rows, &cols] {
                assert_eq!(*m, m.transpose());
                assert!(m.as_slice().iter().all(|&v| v == 0.0 || v == 1.0));
                for i in 0..m.rows() {
                    assert_eq!(m[(i, i)], 0.0);
                }
            }
        }
    }

    #[test]
    fn frame_cost_perfect_match_and_orthogonal() {
        let x = DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let proj = sample_projections(2, 3, &mut Rng::new(0)).unwrap();
        let c = frame_kot_cost(&x, &x, 0.0, &proj).unwrap();
        assert!(c[(0, 0)].abs() < 1e-15 && c[(1, 1)].abs() < 1e-15);
        let s = swd_matrix(&x, &x, &proj, 1).unwrap()[(0, 1)];
        assert!((c[(0, 1)] - (1.0 + s)).abs() < 1e-15);
        assert!(c.as_slice().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn segment_cost_examples() {
        let a = DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let c = segment_kot_cost(&a, &a, 0.0).unwrap();
        assert_eq!(c, DenseMatrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap());
        // K' = K: the diagonal of Z vanishes whatever rho is.
        let s = DenseMatrix::from_rows(&[[1.0, 1.0], [0.5, -1.0]]).unwrap();
        let cos = cosine_matrix(&s, &a).unwrap();
        let c = segment_kot_cost(&s, &a, 0.7).unwrap();
        for i in 0..2 {
            assert!((c[(i, i)] - (1.0 - cos[(i, i)])).abs() < 1e-15);
        }
    }

    #[test]
    fn refined_cost_composes_prior_and_cosine() {
        let a = DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let c = refined_kot_cost(&a, &a, 0.0, None).unwrap();
        assert_eq!(c[(0, 0)], 0.0);
        assert_eq!(c[(1, 1)], 0.0);
        let f = DenseMatrix::from_rows(&[[1.0, 1.0], [2.0, -1.0]]).unwrap();
        let cos = cosine_matrix(&f, &a).unwrap();
        let c = refined_kot_cost(&f, &a, 0.1, None).unwrap();
        let expected = DenseMatrix::from_rows(&[
            [1.0 - cos[(0, 0)], 1.05 - cos[(0, 1)]],
            [1.05 - cos[(1, 0)], 1.0 - cos[(1, 1)]],
        ])
        .unwrap();
        assert!(c.max_abs_diff(&expected).unwrap() < 1e-15);
        // with projections the stage-3 cost picks up the SWD term
        let proj = sample_projections(2, 1, &mut Rng::new(2)).unwrap();
        let with = refined_kot_cost(&f, &a, 0.1, Some(&proj)).unwrap();
        let swd = swd_matrix(&f, &a, &proj, 1).unwrap();
        assert!(with.max_abs_diff(&c.add(&swd).unwrap()).unwrap() < 1e-14);
    }

    #[test]
    fn aligned_inputs_minimize_on_matched_column() {
        let mut rng = Rng::new(8);
        let x = DenseMatrix::from_fn(4, 6, |_, _| rng.normal());
        let proj = sample_projections(6, 2, &mut rng).unwrap();
        let c = frame_kot_cost(&x, &x, 0.0, &proj).unwrap();
        assert_eq!(c.argmax_rows().len(), 4);
        for i in 0..4 {
            let row = c.row(i);
            assert!(row.iter().all(|&v| v >= row[i]));
        }
    }

    #[test]
    fn rho_raises_only_positive_prior_entries() {
        let mut rng = Rng::new(12);
        let x = DenseMatrix::from_fn(6, 3, |_, _| rng.normal());
        let a = DenseMatrix::from_fn(3, 3, |_, _| rng.normal());
        let z = temporal_prior(6, 3).unwrap();
        let low = segment_kot_cost(&x, &a, 0.1).unwrap();
        let high = segment_kot_cost(&x, &a, 0.3).unwrap();
        for i in 0..6 {
            for j in 0..3 {
                if z[(i, j)] > 0.0 {
                    assert!(high[(i, j)] > low[(i, j)]);
                } else {
                    assert_eq!(high[(i, j)], low[(i, j)]);
                }
            }
        }
    }

    #[test]
    fn mismatched_dimensions_error() {
        let x = DenseMatrix::zeros(3, 2);
        let a = DenseMatrix::zeros(2, 3);
        assert!(segment_kot_cost(&x, &a, 0.0).is_err());
        let bad = CostBundle::new(DenseMatrix::zeros(3, 2), DenseMatrix::zeros(3, 3), DenseMatrix::zeros(3, 3));
        assert!(bad.is_err());
    }
}
