use serde::{Deserialize, Serialize};

use crate::error::{ClotError, Result};
use crate::model::ModelConfig;
use crate::ot::OtConfig;

/// Activity level trains one model on every video; video level trains one
/// model per video.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    Activity,
    Video,
}

impl std::str::FromStr for TrainMode {
    type Err = ClotError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "activity" => Ok(Self::Activity),
            "video" => Ok(Self::Video),
            other => Err(ClotError::Config(format!("unknown mode {other:?}; use activity or video"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Videos per optimizer step.
    pub batch_size: usize,
    pub frames_per_video: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub stage1: OtConfig,
    pub stage2: OtConfig,
    pub stage3: OtConfig,
    /// Temporal prior weight for the frame-level stages.
    pub rho: f64,
    /// Temporal prior weight for the segment stage.
    pub rho_s: f64,
    /// Adjacency radius as a fraction of the sequence length.
    pub nr_fraction: f64,
    /// Extra decoder queries beyond K; may be negative.
    pub nseg: i64,
    /// Projections per embedding dimension for the sliced discrepancy.
    pub p_factor: usize,
    pub tau: f64,
    pub seed: u64,
    /// Number of actions K; 0 means "take it from the dataset".
    pub num_actions: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub dec_dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub detach_s_in_refine: bool,
    /// Frames drawn for k-means initialization of the action embeddings.
    pub kmeans_frames: usize,
    pub kmeans_iters: usize,
    /// Independent k-means runs; the lowest-inertia one is kept.
    pub kmeans_restarts: usize,
    pub mode: TrainMode,
    /// Evaluate on midpoint-subsampled sequences instead of full length.
    pub eval_subsampled: bool,
    /// Worker cap for per-video work; 0 uses every available core.
    #[serde(skip)]
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let stage = OtConfig { lambda: 1.0, ..OtConfig::default() };
        Self {
            epochs: 15,
            batch_size: 2,
            frames_per_video: 256,
            lr: 1e-3,
            weight_decay: 1e-4,
            dropout: 0.5,
            stage1: stage.clone(),
            stage2: stage.clone(),
            stage3: stage,
            rho: 0.15,
            rho_s: 0.15,
            nr_fraction: 0.04,
            nseg: 0,
            p_factor: 2,
            tau: 1.0,
            seed: 0,
            num_actions: 0,
            hidden_dim: 128,
            embed_dim: 64,
            dec_dim: 64,
            heads: 8,
            layers: 2,
            detach_s_in_refine: false,
            kmeans_frames: 10_000,
            kmeans_iters: 100,
            kmeans_restarts: 10,
            mode: TrainMode::Activity,
            eval_subsampled: false,
            threads: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(ClotError::Config(msg));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.frames_per_video == 0 {
            return bad("frames_per_video must be positive".into());
        }
        if self.num_actions > 0 && self.frames_per_video < self.num_actions {
            return bad(format!(
                "frames_per_video ({}) must be at least the number of actions ({})",
                self.frames_per_video, self.num_actions
            ));
        }
        if !(self.lr >= 0.0) || !(self.weight_decay >= 0.0) {
            return bad("lr and weight_decay must be nonnegative".into());
        }
        if !(self.rho >= 0.0) || !(self.rho_s >= 0.0) {
            return bad("rho and rho_s must be nonnegative".into());
        }
        if !(self.nr_fraction > 0.0 && self.nr_fraction <= 1.0) {
            return bad(format!("nr_fraction must lie in (0, 1], got {}", self.nr_fraction));
        }
        if self.p_factor == 0 {
            return bad("p_factor must be positive".into());
        }
        if self.kmeans_frames == 0 {
            return bad("kmeans_frames must be positive".into());
        }
        for (name, ot) in [("stage1", &self.stage1), ("stage2", &self.stage2), ("stage3", &self.stage3)] {
            ot.validate().map_err(|e| ClotError::Config(format!("{name}: {e}")))?;
        }
        Ok(())
    }

    /// K′ = K + nseg, at least 1.
    pub fn num_queries(&self, k: usize) -> usize {
        (k as i64 + self.nseg).max(1) as usize
    }

    pub fn model_config(&self, input_dim: usize, k: usize) -> Result<ModelConfig> {
        let cfg = ModelConfig {
            input_dim,
            hidden_dim: self.hidden_dim,
            embed_dim: self.embed_dim,
            dec_dim: self.dec_dim,
            heads: self.heads,
            layers: self.layers,
            num_actions: k,
            num_queries: self.num_queries(k),
            dropout: self.dropout,
            tau: self.tau,
            detach_s_in_refine: self.detach_s_in_refine,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set_all_stages(&mut self, f: impl Fn(&mut OtConfig)) {
        for s in [&mut self.stage1, &mut self.stage2, &mut self.stage3] {
            f(s);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        assert_eq!(c.batch_size, 2);
        assert_eq!(c.frames_per_video, 256);
        assert_eq!((c.lr, c.weight_decay), (1e-3, 1e-4));
        assert_eq!(c.heads, 8);
    }

    #[test]
    fn query_budget_clamps() {
        let mut c = TrainConfig::default();
        assert_eq!(c.num_queries(4), 4);
        c.nseg = 3;
        assert_eq!(c.num_queries(4), 7);
        c.nseg = -10;
        assert_eq!(c.num_queries(4), 1);
    }

    #[test]
    fn invalid_settings_are_config_errors() {
        for c in [
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { frames_per_video: 3, num_actions: 4, ..TrainConfig::default() },
            TrainConfig { nr_fraction: 0.0, ..TrainConfig::default() },
        ] {
            assert!(matches!(c.validate(), Err(ClotError::Config(_))));
        }
        let c = TrainConfig { heads: 7, ..TrainConfig::default() };
        assert!(matches!(c.model_config(16, 4), Err(ClotError::Config(_))));
    }
}
