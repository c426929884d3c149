//! Cyclic self-training: solve the three transport problems on detached
//! embeddings, then fit the prediction heads to the resulting plans.

use std::time::Instant;

use serde::Serialize;

use super::stages::solve_stages;
use super::{parallel_map, subsample, TrainConfig};
use crate::error::{param_err, ClotError, Result};
use crate::model::{encode, AdamState, GradientStore, Graph, ModelParams};
use crate::numeric::{kmeans_best_of, DenseMatrix, Rng};
use crate::swd::{sample_projections, ProjectionSet};

/// Everything needed to segment new videos.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub params: ModelParams,
    pub projections: ProjectionSet,
    pub config: TrainConfig,
}

/// Batch-averaged cross-entropy terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct StepLosses {
    pub loss: f64,
    #[serde(rename = "loss_S")]
    pub loss_s: f64,
    #[serde(rename = "loss_R")]
    pub loss_r: f64,
}

impl StepLosses {
    pub fn total(&self) -> f64 {
        self.loss + self.loss_s + self.loss_r
    }
}

/// One training-log record.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepLog {
    pub epoch: usize,
    pub step: usize,
    #[serde(flatten)]
    pub losses: StepLosses,
    pub wall_ms: u64,
    /// Transport solves that hit their iteration budget in this step.
    pub unconverged: usize,
}

/// k-means over encoder outputs of at most `cfg.kmeans_frames` frames drawn
/// uniformly from all videos.
pub fn init_actions(params: &ModelParams, videos: &[DenseMatrix], k: usize, cfg: &TrainConfig, rng: &mut Rng) -> Result<DenseMatrix> {
    let total: usize = videos.iter().map(DenseMatrix::rows).sum();
    if total < k {
        return param_err(format!("k-means needs at least {k} frames, the videos hold {total}"));
    }
    let chosen = subsample(total, cfg.kmeans_frames, Some(rng));
    let mut rows = Vec::with_capacity(chosen.len());
    let mut offset = 0;
    let mut next = chosen.iter().peekable();
    for v in videos {
        let mut local = Vec::new();
        while let Some(&&g) = next.peek() {
            if g >= offset + v.rows() {
                break;
            }
            local.push(g - offset);
            next.next();
        }
        if !local.is_empty() {
            let emb = encode(&v.select_rows(&local), params, None)?;
            rows.extend(emb.row_iter().map(<[f64]>::to_vec));
        }
        offset += v.rows();
    }
    let points = DenseMatrix::from_rows(&rows)?;
    Ok(kmeans_best_of(&points, k, rng, cfg.kmeans_iters, cfg.kmeans_restarts)?.centroids)
}

/// Seeded parameters, projections and k-means action embeddings.
pub fn init_model(videos: &[DenseMatrix], k: usize, cfg: &TrainConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    let input_dim = match videos.first() {
        Some(v) => v.cols(),
        None => return Err(ClotError::Input("no training videos".into())),
    };
    if let Some(v) = videos.iter().find(|v| v.cols() != input_dim) {
        return Err(ClotError::Input(format!("videos disagree on feature dimension: {input_dim} vs {}", v.cols())));
    }
    for v in videos {
        v.ensure_finite("training features")?;
    }
    let mut root = Rng::new(cfg.seed);
    let mut params = ModelParams::new(cfg.model_config(input_dim, k)?, &mut root.fork(1))?;
    let projections = sample_projections(cfg.embed_dim, cfg.p_factor, &mut root.fork(2))?;
    let actions = init_actions(&params, videos, k, cfg, &mut root.fork(3))?;
    let id = params.layout.actions;
    params.set(id, actions)?;
    Ok(TrainedModel { params, projections, config: cfg.clone() })
}

struct VideoResult {
    grads: GradientStore,
    losses: [f64; 3],
    unconverged: usize,
}

fn video_step(model: &TrainedModel, x: &DenseMatrix, scale: f64, mut rng: Rng) -> Result<VideoResult> {
    let cfg = &model.config;
    let idx = subsample(x.rows(), cfg.frames_per_video, Some(&mut rng));
    let xs = x.select_rows(&idx);
    let mut g = Graph::new(&model.params);
    let out = g.video_forward(&xs, Some(&mut rng))?;
    let a = model.params.actions();
    let stages = solve_stages(g.value(out.f), g.value(out.s), g.value(out.f_r), a, cfg, &model.projections)?;
    let terms = g.video_losses(&out, &stages.t.t, &stages.t_s.t, &stages.t_r.t)?;
    let losses = [0, 1, 2].map(|i| g.value(terms[i])[(0, 0)]);
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(ClotError::Numerical(format!("non-finite loss {losses:?}")));
    }
    let total = g.sum(&terms)?;
    g.set_loss(total)?;
    let mut grads = GradientStore::zeros_like(&model.params);
    g.backward(&mut grads, scale)?;
    Ok(VideoResult { grads, losses, unconverged: stages.unconverged() })
}

/// Forward, three solves and backward for each video of the batch, then one
/// optimizer step. Per-video gradients are summed in batch order.
pub fn train_step(
    model: &mut TrainedModel,
    adam: &mut AdamState,
    batch: &[&DenseMatrix],
    rng: &mut Rng,
) -> Result<(StepLosses, usize)> {
    if batch.is_empty() {
        return param_err("empty batch");
    }
    let scale = 1.0 / batch.len() as f64;
    let rngs: Vec<Rng> = (0..batch.len()).map(|i| rng.fork(i as u64)).collect();
    let shared: &TrainedModel = model;
    let results = parallel_map(batch.len(), shared.config.threads, |i| {
        video_step(shared, batch[i], scale, rngs[i].clone())
    })?;
    let mut grads = GradientStore::zeros_like(&model.params);
    let mut losses = StepLosses::default();
    let mut unconverged = 0;
    for r in &results {
        grads.add_scaled(&r.grads, 1.0)?;
        losses.loss += scale * r.losses[0];
        losses.loss_s += scale * r.losses[1];
        losses.loss_r += scale * r.losses[2];
        unconverged += r.unconverged;
    }
    adam.step(&mut model.params, &grads)?;
    Ok((losses, unconverged))
}

/// Trains one model on all `videos`, calling `on_step` after every step.
pub fn train(videos: &[DenseMatrix], k: usize, cfg: &TrainConfig, mut on_step: impl FnMut(&StepLog)) -> Result<TrainedModel> {
    let mut model = init_model(videos, k, cfg)?;
    let mut adam = AdamState::new(&model.params, cfg.lr, cfg.weight_decay);
    let mut root = Rng::new(cfg.seed);
    let mut order_rng = root.fork(4);
    let mut step_rng = root.fork(5);
    let mut order: Vec<usize> = (0..videos.len()).collect();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order_rng.shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size) {
            let started = Instant::now();
            let batch: Vec<&DenseMatrix> = chunk.iter().map(|&i| &videos[i]).collect();
            let mut rng = step_rng.fork(step as u64);
            let (losses, unconverged) = train_step(&mut model, &mut adam, &batch, &mut rng)?;
            on_step(&StepLog { epoch, step, losses, wall_ms: started.elapsed().as_millis() as u64, unconverged });
            step += 1;
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 1,
            hidden_dim: 8,
            embed_dim: 6,
            dec_dim: 4,
            heads: 2,
            layers: 1,
            dropout: 0.0,
            ..TrainConfig::default()
        }
    }

    fn blocks(n: usize, d: usize, k: usize, seed: u64) -> DenseMatrix {
        let mut rng = Rng::new(seed);
        DenseMatrix::from_fn(n, d, |i, j| if j % k == i * k / n { 1.0 } else { 0.0 } + 0.05 * rng.normal())
    }

    #[test]
    fn losses_are_finite_and_nonnegative() {
        let videos = vec![blocks(20, 6, 3, 1), blocks(24, 6, 3, 2)];
        let mut logs = Vec::new();
        let model = train(&videos, 3, &small_cfg(), |l| logs.push(l.clone())).unwrap();
        assert_eq!(logs.len(), 1);
        for l in &logs {
            assert!(l.losses.loss >= 0.0 && l.losses.loss_s >= 0.0 && l.losses.loss_r >= 0.0);
            assert!(l.losses.total().is_finite());
        }
        assert!(model.params.is_finite());
    }

    #[test]
    fn zero_learning_rate_freezes_losses() {
        let videos = vec![blocks(20, 6, 3, 1), blocks(24, 6, 3, 2)];
        let cfg = TrainConfig { lr: 0.0, epochs: 3, batch_size: 2, ..small_cfg() };
        let mut logs = Vec::new();
        let model = train(&videos, 3, &cfg, |l| logs.push(l.losses)).unwrap();
        assert_eq!(logs.len(), 3);
        assert!(logs.iter().all(|l| (l.total() - logs[0].total()).abs() < 1e-12));
        assert_eq!(model.params, init_model(&videos, 3, &cfg).unwrap().params);
    }

    #[test]
    fn single_action_has_zero_loss() {
        let videos = vec![blocks(15, 6, 1, 3)];
        let mut logs = Vec::new();
        train(&videos, 1, &small_cfg(), |l| logs.push(l.losses)).unwrap();
        assert_eq!(logs[0], StepLosses::default());
    }

    #[test]
    fn runs_are_deterministic_across_thread_counts() {
        let videos = vec![blocks(20, 6, 3, 1), blocks(24, 6, 3, 2), blocks(18, 6, 3, 5)];
        let cfg = TrainConfig { epochs: 2, batch_size: 3, dropout: 0.3, ..small_cfg() };
        let a = train(&videos, 3, &TrainConfig { threads: 1, ..cfg.clone() }, |_| {}).unwrap();
        let b = train(&videos, 3, &TrainConfig { threads: 3, ..cfg }, |_| {}).unwrap();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn init_actions_recovers_prototypes() {
        let k = 3;
        let cfg = small_cfg();
        let params = ModelParams::new(cfg.model_config(6, k).unwrap(), &mut Rng::new(0)).unwrap();
        let videos = vec![blocks(30, 6, k, 0).map(|v| v.round()), blocks(21, 6, k, 9).map(|v| v.round())];
        let a = init_actions(&params, &videos, k, &cfg, &mut Rng::new(1)).unwrap();
        let protos = DenseMatrix::from_fn(k, 6, |i, j| if j % k == i { 1.0 } else { 0.0 });
        let encoded = encode(&protos, &params, None).unwrap();
        for row in encoded.row_iter() {
            let best = a.row_iter().map(|c| c.iter().zip(row).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)).fold(f64::INFINITY, f64::min);
            assert!(best < 1e-9);
        }
        assert!(init_actions(&params, &[DenseMatrix::zeros(2, 6)], 3, &cfg, &mut Rng::new(1)).is_err());
    }
}
