//! Adam with decoupled weight decay.

use super::params::{GradientStore, ModelParams};
use crate::error::{dim_err, ClotError, Result};
use crate::numeric::DenseMatrix;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<DenseMatrix>,
    v: Vec<DenseMatrix>,
}

impl AdamState {
    pub fn new(params: &ModelParams, lr: f64, weight_decay: f64) -> Self {
        let zeros = || params.tensors().iter().map(|t| DenseMatrix::zeros(t.rows(), t.cols())).collect();
        Self { lr, weight_decay, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeros(), v: zeros() }
    }

    pub fn first_moments(&self) -> &[DenseMatrix] {
        &self.m
    }

    pub fn second_moments(&self) -> &[DenseMatrix] {
        &self.v
    }

    /// One bias-corrected update; weight decay subtracts `lr·wd·θ`.
    pub fn step(&mut self, params: &mut ModelParams, grads: &GradientStore) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return dim_err("optimizer, gradients and parameters hold different tensor counts");
        }
        for (i, (p, g)) in params.tensors().iter().zip(grads.grads()).enumerate() {
            if p.shape() != g.shape() || self.m[i].shape() != p.shape() {
                return dim_err(format!("tensor {i}: parameter {:?} vs gradient {:?}", p.shape(), g.shape()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, wd, eps) = (self.beta1, self.beta2, self.lr, self.weight_decay, self.eps);
        for (i, p) in params.tensors_mut().iter_mut().enumerate() {
            let g = grads.get(i).as_slice();
            let m = self.m[i].as_mut_slice();
            let v = self.v[i].as_mut_slice();
            for (k, theta) in p.as_mut_slice().iter_mut().enumerate() {
                m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                let update = (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
                *theta -= lr * update + lr * wd * *theta;
            }
        }
        if !params.is_finite() {
            return Err(ClotError::Numerical(format!("non-finite parameters after optimizer step {}", self.step)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::gradcheck::tiny_config;
    use crate::numeric::Rng;

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut p = ModelParams::new(tiny_config(), &mut Rng::new(0)).unwrap();
        let before = p.clone();
        let mut adam = AdamState::new(&p, 1e-3, 0.0);
        let zero = GradientStore::zeros_like(&p);
        adam.step(&mut p, &zero).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        let mut p = ModelParams::new(tiny_config(), &mut Rng::new(0)).unwrap();
        let before = p.clone();
        let mut grads = GradientStore::zeros_like(&p);
        let id = p.layout.queries;
        let g = DenseMatrix::from_fn(3, 4, |i, j| if (i + j) % 2 == 0 { 0.3 } else { -2.0 });
        grads.accumulate(id, &g, 1.0).unwrap();
        let mut adam = AdamState::new(&p, 1e-3, 0.0);
        adam.step(&mut p, &grads).unwrap();
        let delta = p.get(id).sub(before.get(id)).unwrap();
        for (d, gv) in delta.as_slice().iter().zip(g.as_slice()) {
            assert!((d + 1e-3 * gv.signum()).abs() < 1e-9);
        }
    }

    #[test]
    fn weight_decay_is_decoupled() {
        let mut p = ModelParams::new(tiny_config(), &mut Rng::new(0)).unwrap();
        let before = p.clone();
        let mut adam = AdamState::new(&p, 1e-2, 0.5);
        let zero = GradientStore::zeros_like(&p);
        adam.step(&mut p, &zero).unwrap();
        let id = p.layout.enc_w1;
        let expected = before.get(id).scale(1.0 - 1e-2 * 0.5);
        assert!(p.get(id).max_abs_diff(&expected).unwrap() < 1e-15);
    }

    #[test]
    fn deterministic_updates() {
        let run = || {
            let mut p = ModelParams::new(tiny_config(), &mut Rng::new(3)).unwrap();
            let mut adam = AdamState::new(&p, 1e-3, 1e-4);
            let mut grads = GradientStore::zeros_like(&p);
            let id = p.layout.actions;
            grads.accumulate(id, &DenseMatrix::filled(3, 4, 0.7), 1.0).unwrap();
            for _ in 0..3 {
                adam.step(&mut p, &grads).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }
}
