//! Entropic solver for the fused unbalanced transport problem.
//!
//! The problem couples a linear (Kantorovich) cost with a quadratic
//! Gromov-Wasserstein term built from two binary structure matrices:
//!
//! ```text
//! min_T (1−α)⟨C, T⟩ + α/2 · Σ c_rows[i,k] c_cols[j,l] T[i,j] T[k,l]
//!       + ε Σ T (log T − 1) + λ KL(Tᵀ1 ‖ ν)     s.t. T1 = μ
//! ```
//!
//! Rows (frames or segments) are matched exactly; the column marginal is only
//! penalized, so actions may be used unevenly.

mod fused;
mod sinkhorn;

pub use fused::{fused_objective, gw_gradient, solve_fused};
pub use sinkhorn::solve_entropic_kot;

use serde::{Deserialize, Serialize};

use crate::error::{param_err, Result};
use crate::numeric::DenseMatrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OtConfig {
    /// Weight of the structure term against the linear cost, in `[0, 1]`.
    pub alpha: f64,
    /// Entropic regularization.
    pub epsilon: f64,
    /// KL penalty on the column marginal.
    pub lambda: f64,
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub tol: f64,
}

impl Default for OtConfig {
    fn default() -> Self {
        Self { alpha: 0.3, epsilon: 0.07, lambda: 0.1, outer_iters: 10, inner_iters: 500, tol: 1e-6 }
    }
}

impl OtConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return param_err(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return param_err(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(self.lambda > 0.0) {
            return param_err(format!("lambda must be positive, got {}", self.lambda));
        }
        if !(self.tol > 0.0) {
            return param_err(format!("tol must be positive, got {}", self.tol));
        }
        Ok(())
    }
}

/// Source and target histograms.
#[derive(Clone, Debug, PartialEq)]
pub struct Marginals {
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
}

impl Marginals {
    pub fn uniform(n: usize, m: usize) -> Self {
        Self { mu: vec![1.0 / n as f64; n], nu: vec![1.0 / m as f64; m] }
    }

    pub fn new(mu: Vec<f64>, nu: Vec<f64>) -> Result<Self> {
        for (name, v) in [("mu", &mu), ("nu", &nu)] {
            if v.is_empty() || v.iter().any(|&x| !(x > 0.0)) {
                return param_err(format!("{name} must be nonempty with positive entries"));
            }
            let s: f64 = v.iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                return param_err(format!("{name} sums to {s}, expected 1"));
            }
        }
        Ok(Self { mu, nu })
    }
}

/// A transport plan with its marginals and solver diagnostics.
#[derive(Clone, Debug)]
pub struct Coupling {
    pub t: DenseMatrix,
    pub row_marginal: Vec<f64>,
    pub col_marginal: Vec<f64>,
    pub converged: bool,
    /// Total scaling iterations across all inner solves.
    pub iterations_used: usize,
    pub objective: f64,
    /// Objective after the initial solve and after every outer step.
    pub objective_history: Vec<f64>,
}

impl Coupling {
    pub(crate) fn from_plan(t: DenseMatrix, converged: bool, iterations_used: usize, objective: f64) -> Self {
        Self {
            row_marginal: t.row_sums(),
            col_marginal: t.col_sums(),
            t,
            converged,
            iterations_used,
            objective,
            objective_history: vec![objective],
        }
    }
}

/// Per-row argmax of the plan; ties go to the lowest column.
pub fn decode_labels(coupling: &Coupling) -> Vec<usize> {
    coupling.t.argmax_rows()
}
