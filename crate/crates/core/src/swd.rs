//! Sliced discrepancy between frame vectors and action vectors.
//!
//! Each pair `(x_i, a_j)` is compared through `M` random one-dimensional
//! projections `θ_m`. With the quadratic ground loss the entry is
//! `((1/M) Σ_m (θ_m·x_i − θ_m·a_j)²)^(1/p)`. For `p = 1` this is a mean of
//! squared projection gaps, whose expectation over the unit sphere is
//! `‖x_i − a_j‖² / d`.

use crate::error::{dim_err, param_err, Result};
use crate::numeric::{dot, DenseMatrix, Rng};

/// Frozen set of unit projection directions, `M = p_factor × d` rows.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionSet {
    directions: DenseMatrix,
    p_factor: usize,
}

impl ProjectionSet {
    /// Wraps explicit directions. Rows are normalized; zero rows are rejected.
    pub fn from_directions(directions: DenseMatrix) -> Result<Self> {
        let d = directions.cols();
        if d == 0 || directions.rows() == 0 {
            return param_err("projection set needs at least one direction of nonzero dimension");
        }
        let mut directions = directions;
        for r in 0..directions.rows() {
            let row = directions.row_mut(r);
            let norm = dot(row, row).sqrt();
            if norm == 0.0 || !norm.is_finite() {
                return param_err(format!("projection direction {r} has norm {norm}"));
            }
            row.iter_mut().for_each(|v| *v /= norm);
        }
        let p_factor = directions.rows().div_ceil(d);
        Ok(Self { directions, p_factor })
    }

    /// Restores a saved set without renormalizing, so reloads are bit-exact.
    pub(crate) fn from_saved(directions: DenseMatrix) -> Result<Self> {
        if directions.cols() == 0 || directions.rows() == 0 || !directions.is_finite() {
            return param_err("saved projection set is empty or non-finite");
        }
        let p_factor = directions.rows().div_ceil(directions.cols());
        Ok(Self { directions, p_factor })
    }

    pub fn directions(&self) -> &DenseMatrix {
        &self.directions
    }

    pub fn count(&self) -> usize {
        self.directions.rows()
    }

    pub fn dim(&self) -> usize {
        self.directions.cols()
    }

    pub fn p_factor(&self) -> usize {
        self.p_factor
    }
}

/// Draws `p_factor × d` directions uniformly on the unit sphere `S^{d−1}`.
pub fn sample_projections(d: usize, p_factor: usize, rng: &mut Rng) -> Result<ProjectionSet> {
    if d == 0 || p_factor == 0 {
        return param_err(format!("sample_projections needs d >= 1 and p_factor >= 1, got d={d}, p_factor={p_factor}"));
    }
    let m = p_factor * d;
    let mut directions = DenseMatrix::zeros(m, d);
    for r in 0..m {
        loop {
            let row = directions.row_mut(r);
            row.iter_mut().for_each(|v| *v = rng.normal());
            let norm = dot(row, row).sqrt();
            if norm > 1e-12 {
                row.iter_mut().for_each(|v| *v /= norm);
                break;
            }
        }
    }
    Ok(ProjectionSet { directions, p_factor })
}

/// Pairwise sliced discrepancy between rows of `x` (N×d) and rows of `a` (K×d).
pub fn swd_matrix(x: &DenseMatrix, a: &DenseMatrix, proj: &ProjectionSet, p: u32) -> Result<DenseMatrix> {
    if x.cols() != a.cols() || x.cols() != proj.dim() {
        return dim_err(format!(
            "swd_matrix: x has dim {}, a has dim {}, projections have dim {}",
            x.cols(),
            a.cols(),
            proj.dim()
        ));
    }
    if p == 0 {
        return param_err("swd_matrix needs p >= 1");
    }
    let px = x.matmul_t(proj.directions())?;
    let pa = a.matmul_t(proj.directions())?;
    let m = proj.count() as f64;
    let inv_p = 1.0 / p as f64;
    Ok(DenseMatrix::from_fn(x.rows(), a.rows(), |i, j| {
        let mean: f64 = px
            .row(i)
            .iter()
            .zip(pa.row(j))
            .map(|(u, v)| (u - v) * (u - v))
            .sum::<f64>()
            / m;
        if p == 1 {
            mean
        } else {
            mean.powf(inv_p)
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional_sphere_is_plus_minus_one() {
        let proj = sample_projections(1, 8, &mut Rng::new(3)).unwrap();
        assert_eq!(proj.count(), 8);
        for &v in proj.directions().as_slice() {
            assert!(v == 1.0 || v == -1.0);
        }
    }

    #[test]
    fn counts_and_unit_norms() {
        let proj = sample_projections(3, 2, &mut Rng::new(0)).unwrap();
        assert_eq!(proj.count(), 6);
        assert_eq!(proj.p_factor(), 2);
        for r in proj.directions().row_iter() {
            assert!((dot(r, r).sqrt() - 1.0).abs() < 1e-9);
        }
        assert!(sample_projections(0, 2, &mut Rng::new(0)).is_err());
        assert!(sample_projections(2, 0, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn projections_are_deterministic() {
        let a = sample_projections(5, 3, &mut Rng::new(11)).unwrap();
        let b = sample_projections(5, 3, &mut Rng::new(11)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn identical_vectors_give_exact_zero() {
        let x = DenseMatrix::from_rows(&[[0.3, -1.2, 4.0]]).unwrap();
        let proj = sample_projections(3, 4, &mut Rng::new(1)).unwrap();
        assert_eq!(swd_matrix(&x, &x, &proj, 1).unwrap()[(0, 0)], 0.0);
    }

    #[test]
    fn hand_evaluated_axis_projections() {
        let proj = ProjectionSet::from_directions(DenseMatrix::identity(2)).unwrap();
        let x = DenseMatrix::from_rows(&[[1.0, 0.0]]).unwrap();
        let a = DenseMatrix::from_rows(&[[0.0, 1.0]]).unwrap();
        assert!((swd_matrix(&x, &a, &proj, 1).unwrap()[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn symmetric_and_nonnegative() {
        let mut rng = Rng::new(4);
        let x = DenseMatrix::from_fn(5, 4, |_, _| rng.normal());
        let a = DenseMatrix::from_fn(3, 4, |_, _| rng.normal());
        let proj = sample_projections(4, 2, &mut rng).unwrap();
        let xa = swd_matrix(&x, &a, &proj, 1).unwrap();
        let ax = swd_matrix(&a, &x, &proj, 1).unwrap();
        assert_eq!(xa, ax.transpose());
        assert!(xa.as_slice().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let proj = sample_projections(3, 1, &mut Rng::new(0)).unwrap();
        let x = DenseMatrix::zeros(2, 2);
        assert!(swd_matrix(&x, &x, &proj, 1).is_err());
    }

    /// Doubling the number of projections halves the Monte-Carlo variance.
    #[test]
    fn variance_scales_inversely_with_projection_count() {
        let d = 6;
        let x = DenseMatrix::from_rows(&[[1.0, -0.5, 0.2, 0.0, 0.7, -1.1]]).unwrap();
        let a = DenseMatrix::from_rows(&[[0.1, 0.4, -0.3, 0.9, 0.0, 0.2]]).unwrap();
        let replicate_var = |p_factor: usize, base_seed: u64| {
            let vals: Vec<f64> = (0..600)
                .map(|r| {
                    let proj = sample_projections(d, p_factor, &mut Rng::new(base_seed + r)).unwrap();
                    swd_matrix(&x, &a, &proj, 1).unwrap()[(0, 0)]
                })
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64
        };
        let ratio = replicate_var(2, 10_000) / replicate_var(4, 50_000);
        assert!((1.6..2.5).contains(&ratio), "variance ratio {ratio}");
    }
}
