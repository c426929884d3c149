//! Log-domain scaling iterations with a hard row constraint and a KL-relaxed
//! column constraint.
//!
//! The plan is `T_ij = exp((f_i + g_j − C_ij)/ε)`. The row potential enforces
//! `T1 = μ` exactly; the column potential is damped by `λ/(λ+ε)`, which is the
//! fixed point of the KL penalty.

use super::{Coupling, Marginals, OtConfig};
use crate::error::{dim_err, Result};
use crate::numeric::{kl_divergence, logsumexp, DenseMatrix};

pub(crate) struct ScalingSolution {
    pub t: DenseMatrix,
    pub g: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

fn update_rows(cost: &DenseMatrix, log_mu: &[f64], g: &[f64], eps: f64, f: &mut [f64], buf: &mut [f64]) {
    for (i, fi) in f.iter_mut().enumerate() {
        for ((b, &gj), &c) in buf.iter_mut().zip(g).zip(cost.row(i)) {
            *b = (gj - c) / eps;
        }
        *fi = eps * (log_mu[i] - logsumexp(buf));
    }
}

/// Column-wise `lse_i((f_i − C_ij)/ε)`.
fn column_lse(cost: &DenseMatrix, f: &[f64], eps: f64, out: &mut [f64]) {
    let m = cost.cols();
    let mut max = vec![f64::NEG_INFINITY; m];
    for (i, &fi) in f.iter().enumerate() {
        for (mx, &c) in max.iter_mut().zip(cost.row(i)) {
            *mx = mx.max((fi - c) / eps);
        }
    }
    let mut sum = vec![0.0; m];
    for (i, &fi) in f.iter().enumerate() {
        for ((s, &mx), &c) in sum.iter_mut().zip(&max).zip(cost.row(i)) {
            *s += ((fi - c) / eps - mx).exp();
        }
    }
    for j in 0..m {
        out[j] = max[j] + sum[j].ln();
    }
}

pub(crate) fn scaling_solve(
    cost: &DenseMatrix,
    marg: &Marginals,
    cfg: &OtConfig,
    warm_g: Option<&[f64]>,
) -> Result<ScalingSolution> {
    let (n, m) = cost.shape();
    if n == 0 || m == 0 {
        return dim_err("transport cost must be nonempty");
    }
    if marg.mu.len() != n || marg.nu.len() != m {
        return dim_err(format!(
            "cost is {n}x{m} but marginals have lengths {} and {}",
            marg.mu.len(),
            marg.nu.len()
        ));
    }
    cost.ensure_finite("transport cost")?;
    cfg.validate()?;

    let eps = cfg.epsilon;
    let damping = cfg.lambda / (cfg.lambda + eps);
    let log_mu: Vec<f64> = marg.mu.iter().map(|v| v.ln()).collect();
    let log_nu: Vec<f64> = marg.nu.iter().map(|v| v.ln()).collect();

    let mut g = match warm_g {
        Some(w) if w.len() == m => w.to_vec(),
        _ => vec![0.0; m],
    };
    let mut f = vec![0.0; n];
    let mut row_buf = vec![0.0; m];
    let mut lse = vec![0.0; m];
    update_rows(cost, &log_mu, &g, eps, &mut f, &mut row_buf);

    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.inner_iters {
        column_lse(cost, &f, eps, &mut lse);
        // current column sums against the ones the next update would produce
        let residual = (0..m)
            .map(|j| {
                let now = (g[j] / eps + lse[j]).exp();
                let next = (damping * log_nu[j] + (1.0 - damping) * lse[j]).exp();
                (now - next).abs()
            })
            .fold(0.0, f64::max);
        if residual < cfg.tol {
            converged = true;
            break;
        }
        for j in 0..m {
            g[j] = damping * eps * (log_nu[j] - lse[j]);
        }
        update_rows(cost, &log_mu, &g, eps, &mut f, &mut row_buf);
        iterations += 1;
    }

    let t = DenseMatrix::from_fn(n, m, |i, j| ((f[i] + g[j] - cost[(i, j)]) / eps).exp());
    Ok(ScalingSolution { t, g, converged, iterations })
}

/// `ε Σ T (log T − 1) + λ KL(Tᵀ1 ‖ ν)`.
pub(crate) fn regularization(t: &DenseMatrix, nu: &[f64], cfg: &OtConfig) -> f64 {
    let entropy: f64 = t
        .as_slice()
        .iter()
        .map(|&v| if v > 0.0 { v * (v.ln() - 1.0) } else { 0.0 })
        .sum();
    let kl = kl_divergence(&t.col_sums(), nu).unwrap_or(f64::INFINITY);
    cfg.epsilon * entropy + cfg.lambda * kl
}

/// Entropic transport with exact rows and a KL-penalized column marginal.
///
/// Non-convergence within `inner_iters` is reported through
/// [`Coupling::converged`], not as an error.
pub fn solve_entropic_kot(cost: &DenseMatrix, marg: &Marginals, cfg: &OtConfig) -> Result<Coupling> {
    let sol = scaling_solve(cost, marg, cfg, None)?;
    let objective = cost.frobenius_dot(&sol.t)? + regularization(&sol.t, &marg.nu, cfg);
    Ok(Coupling::from_plan(sol.t, sol.converged, sol.iterations, objective))
}
