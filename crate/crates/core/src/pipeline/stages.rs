//! The three transport problems solved for every video.

use crate::cost::{frame_kot_cost, refined_kot_cost, segment_kot_cost, structure_matrices, CostBundle};
use crate::error::Result;
use crate::numeric::DenseMatrix;
use crate::ot::{solve_fused, Coupling, Marginals};
use crate::swd::ProjectionSet;

use super::TrainConfig;

/// Frame→action `T`, segment→action `T_S` and refined-frame→action `T_R`.
#[derive(Clone, Debug)]
pub struct StageCouplings {
    pub t: Coupling,
    pub t_s: Coupling,
    pub t_r: Coupling,
}

impl StageCouplings {
    pub fn all_converged(&self) -> bool {
        self.t.converged && self.t_s.converged && self.t_r.converged
    }

    pub fn unconverged(&self) -> usize {
        [&self.t, &self.t_s, &self.t_r].iter().filter(|c| !c.converged).count()
    }
}

fn bundle(cost: DenseMatrix, nr_fraction: f64) -> Result<CostBundle> {
    let (n, k) = cost.shape();
    let (rows, cols) = structure_matrices(n, k, nr_fraction)?;
    CostBundle::new(cost, rows, cols)
}

pub fn solve_frame_stage(f: &DenseMatrix, a: &DenseMatrix, cfg: &TrainConfig, proj: &ProjectionSet) -> Result<Coupling> {
    let b = bundle(frame_kot_cost(f, a, cfg.rho, proj)?, cfg.nr_fraction)?;
    solve_fused(&b, &Marginals::uniform(f.rows(), a.rows()), &cfg.stage1)
}

pub fn solve_segment_stage(s: &DenseMatrix, a: &DenseMatrix, cfg: &TrainConfig) -> Result<Coupling> {
    let b = bundle(segment_kot_cost(s, a, cfg.rho_s)?, cfg.nr_fraction)?;
    solve_fused(&b, &Marginals::uniform(s.rows(), a.rows()), &cfg.stage2)
}

pub fn solve_refined_stage(
    f_r: &DenseMatrix,
    a: &DenseMatrix,
    cfg: &TrainConfig,
    proj: &ProjectionSet,
) -> Result<Coupling> {
    let b = bundle(refined_kot_cost(f_r, a, cfg.rho, Some(proj))?, cfg.nr_fraction)?;
    solve_fused(&b, &Marginals::uniform(f_r.rows(), a.rows()), &cfg.stage3)
}

/// Solves all three problems on detached embeddings.
pub fn solve_stages(
    f: &DenseMatrix,
    s: &DenseMatrix,
    f_r: &DenseMatrix,
    a: &DenseMatrix,
    cfg: &TrainConfig,
    proj: &ProjectionSet,
) -> Result<StageCouplings> {
    Ok(StageCouplings {
        t: solve_frame_stage(f, a, cfg, proj)?,
        t_s: solve_segment_stage(s, a, cfg)?,
        t_r: solve_refined_stage(f_r, a, cfg, proj)?,
    })
}
