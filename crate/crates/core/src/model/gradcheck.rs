//! Central finite-difference verification of the backward pass.
//!
//! Each component is reduced to a scalar (a fixed random weighting of its
//! output, or the loss itself) and differentiated twice: by the tape and by
//! central differences with step 1e-4. Agreement is measured per tensor as
//! `‖ad − fd‖ / max(‖ad‖, ‖fd‖, 1e-10)`.

use serde::Serialize;

use super::layers::Graph;
use super::params::{GradientStore, ModelConfig, ModelParams};
use super::tape::{Fault, Var};
use crate::error::Result;
use crate::numeric::{DenseMatrix, Rng};

pub const FD_STEP: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-3;
pub const RETRY_STEPS: [f64; 3] = [1e-5, 1e-6, 1e-7];

/// The small model used by the suite: N=7 frames, D=5, d=4, K=3, K′=3, one
/// decoder layer with two heads.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        input_dim: 5,
        hidden_dim: 6,
        embed_dim: 4,
        dec_dim: 4,
        heads: 2,
        layers: 1,
        num_actions: 3,
        num_queries: 3,
        dropout: 0.0,
        tau: 0.5,
        detach_s_in_refine: false,
    }
}

pub const TINY_FRAMES: usize = 7;

#[derive(Clone, Debug, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub rel_error: f64,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ComponentReport {
    pub component: String,
    pub max_rel_error: f64,
    pub passed: bool,
    pub tensors: Vec<TensorCheck>,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub step: f64,
    pub passed: bool,
    pub components: Vec<ComponentReport>,
}

pub fn relative_error(analytic: &DenseMatrix, numeric: &DenseMatrix) -> f64 {
    let diff = analytic.sub(numeric).map_or(f64::INFINITY, |m| m.norm());
    diff / analytic.norm().max(numeric.norm()).max(1e-10)
}

/// A scalar-valued computation over the model parameters and extra inputs.
type Build<'a> = dyn Fn(&mut Graph, &[Var]) -> Result<Var> + 'a;

fn evaluate<'p>(
    params: &'p ModelParams,
    inputs: &[DenseMatrix],
    build: &Build,
    fault: Option<Fault>,
) -> Result<(Graph<'p>, Vec<Var>, Var)> {
    let mut g = Graph::with_fault(params, fault);
    let vars: Vec<Var> = inputs.iter().map(|m| g.tape.leaf(m.clone())).collect();
    let out = build(&mut g, &vars)?;
    Ok((g, vars, out))
}

fn scalar(params: &ModelParams, inputs: &[DenseMatrix], build: &Build) -> Result<f64> {
    let (g, _, out) = evaluate(params, inputs, build, None)?;
    Ok(g.value(out)[(0, 0)])
}

/// Checks every parameter tensor and every named input of one component.
pub fn check_component(
    component: &str,
    params: &ModelParams,
    inputs: &[(&str, DenseMatrix)],
    build: &Build,
    fault: Option<Fault>,
) -> Result<ComponentReport> {
    let values: Vec<DenseMatrix> = inputs.iter().map(|(_, m)| m.clone()).collect();
    let (mut g, vars, out) = evaluate(params, &values, build, fault)?;
    g.set_loss(out)?;
    let mut store = GradientStore::zeros_like(params);
    g.backward(&mut store, 1.0)?;
    let tape_grads = g.tape.backward(out)?;

    let mut tensors = Vec::new();
    for id in 0..params.len() {
        let analytic = store.get(id).clone();
        let base = params.get(id).clone();
        let numeric = best_estimate(&analytic, |k, h| {
            let mut probe = params.clone();
            probe.get_mut(id).as_mut_slice()[k] = base.as_slice()[k] + h;
            let plus = scalar(&probe, &values, build)?;
            probe.get_mut(id).as_mut_slice()[k] = base.as_slice()[k] - h;
            let minus = scalar(&probe, &values, build)?;
            Ok((plus - minus) / (2.0 * h))
        })?;
        tensors.push(TensorCheck {
            name: params.names()[id].clone(),
            rel_error: relative_error(&analytic, &numeric),
            analytic_norm: analytic.norm(),
            numeric_norm: numeric.norm(),
        });
    }
    for (i, (name, m)) in inputs.iter().enumerate() {
        let analytic = tape_grads[vars[i].index()].clone().unwrap_or_else(|| DenseMatrix::zeros(m.rows(), m.cols()));
        let numeric = best_estimate(&analytic, |k, h| {
            let mut probe = values.clone();
            probe[i].as_mut_slice()[k] = m.as_slice()[k] + h;
            let plus = scalar(params, &probe, build)?;
            probe[i].as_mut_slice()[k] = m.as_slice()[k] - h;
            let minus = scalar(params, &probe, build)?;
            Ok((plus - minus) / (2.0 * h))
        })?;
        tensors.push(TensorCheck {
            name: format!("input:{name}"),
            rel_error: relative_error(&analytic, &numeric),
            analytic_norm: analytic.norm(),
            numeric_norm: numeric.norm(),
        });
    }
    let max_rel_error = tensors.iter().map(|t| t.rel_error).fold(0.0, f64::max);
    Ok(ComponentReport { component: component.to_string(), max_rel_error, passed: max_rel_error <= TOLERANCE, tensors })
}

/// Central differences at `FD_STEP`. When those disagree with the tape the
/// estimate is redone at each of `RETRY_STEPS` and the closest one kept: a
/// ReLU input lying within one step of zero spoils a coarse difference but
/// not a finer one, whereas a wrong backward rule disagrees at every step.
fn best_estimate(analytic: &DenseMatrix, diff: impl Fn(usize, f64) -> Result<f64>) -> Result<DenseMatrix> {
    let estimate = |h: f64| -> Result<DenseMatrix> {
        let mut m = DenseMatrix::zeros(analytic.rows(), analytic.cols());
        for k in 0..m.as_slice().len() {
            m.as_mut_slice()[k] = diff(k, h)?;
        }
        Ok(m)
    };
    let mut best = estimate(FD_STEP)?;
    let mut best_err = relative_error(analytic, &best);
    if best_err <= TOLERANCE {
        return Ok(best);
    }
    for h in RETRY_STEPS {
        let m = estimate(h)?;
        let err = relative_error(analytic, &m);
        if err < best_err {
            best = m;
            best_err = err;
        }
    }
    Ok(best)
}

fn random(rows: usize, cols: usize, rng: &mut Rng) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.normal())
}

/// Random nonnegative pseudo-labels with total mass one.
fn random_plan(rows: usize, cols: usize, rng: &mut Rng) -> DenseMatrix {
    let m = DenseMatrix::from_fn(rows, cols, |_, _| rng.uniform() + 0.05);
    let s = m.sum();
    m.scale(1.0 / s)
}

/// Runs every component check plus the end-to-end loss on a random tiny model.
///
/// The encoder is checked in train mode with dropout 0.5 and a fixed mask.
pub fn run_suite(seed: u64, fault: Option<Fault>) -> Result<GradCheckReport> {
    let mut rng = Rng::new(seed);
    let cfg = ModelConfig { dropout: 0.5, ..tiny_config() };
    let mut params = ModelParams::new(cfg, &mut rng)?;
    // move norms, biases and gates away from their symmetric initial values
    for id in 0..params.len() {
        let noise = random(params.get(id).rows(), params.get(id).cols(), &mut rng).scale(0.3);
        params.get_mut(id).add_scaled(&noise, 1.0)?;
    }
    let (n, d, k) = (TINY_FRAMES, params.config.embed_dim, params.config.num_actions);
    let kq = params.config.num_queries;
    let dd = params.config.dec_dim;
    let x = random(n, params.config.input_dim, &mut rng);
    let f = random(n, d, &mut rng);
    let q = random(kq, dd, &mut rng);
    let s = random(kq, d, &mut rng);
    let t = random_plan(n, k, &mut rng);
    let t_s = random_plan(kq, k, &mut rng);
    let t_r = random_plan(n, k, &mut rng);
    let mask_seed = rng.next_u64();

    fn probe(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        random(rows, cols, &mut Rng::new(seed))
    }
    let weigh = |g: &mut Graph, v: Var, seed: u64| {
        let (r, c) = g.value(v).shape();
        g.tape.weighted_sum(v, &probe(r, c, seed))
    };

    let mut components = Vec::new();
    components.push(check_component(
        "encoder",
        &params,
        &[("x", x.clone())],
        &|g, i| {
            let mut mask_rng = Rng::new(mask_seed);
            let out = g.encode(i[0], Some(&mut mask_rng))?;
            weigh(g, out, 1)
        },
        fault,
    )?);
    components.push(check_component(
        "dispatch",
        &params,
        &[("f", f.clone())],
        &|g, i| {
            let a = g.param(g.params().layout.actions);
            let out = g.dispatch(i[0], a)?;
            weigh(g, out, 2)
        },
        fault,
    )?);
    let layer = params.layout.layers[0].clone();
    components.push(check_component(
        "self_attention",
        &params,
        &[("queries", q.clone())],
        &|g, i| {
            let out = g.self_attention_block(i[0], &layer)?;
            weigh(g, out, 3)
        },
        fault,
    )?);
    components.push(check_component(
        "cross_attention",
        &params,
        &[("queries", q.clone()), ("f", f.clone())],
        &|g, i| {
            let out = g.cross_attention_block(i[0], i[1], &layer)?;
            weigh(g, out, 4)
        },
        fault,
    )?);
    components.push(check_component(
        "feed_forward",
        &params,
        &[("queries", q.clone())],
        &|g, i| {
            let out = g.feed_forward_block(i[0], &layer)?;
            weigh(g, out, 5)
        },
        fault,
    )?);
    components.push(check_component(
        "decoder",
        &params,
        &[("f", f.clone())],
        &|g, i| {
            let out = g.decode_segments(i[0])?;
            weigh(g, out, 6)
        },
        fault,
    )?);
    components.push(check_component(
        "refine",
        &params,
        &[("f", f.clone()), ("s", s.clone())],
        &|g, i| {
            let out = g.refine(i[0], i[1])?;
            weigh(g, out, 7)
        },
        fault,
    )?);
    components.push(check_component(
        "predict_loss",
        &params,
        &[("h", f.clone())],
        &|g, i| {
            let a = g.param(g.params().layout.actions);
            let z = g.logits(i[0], a)?;
            g.cross_entropy(z, &t)
        },
        fault,
    )?);
    components.push(check_component(
        "end_to_end",
        &params,
        &[],
        &|g, _| {
            let mut mask_rng = Rng::new(mask_seed);
            let out = g.video_forward(&x, Some(&mut mask_rng))?;
            let terms = g.video_losses(&out, &t, &t_s, &t_r)?;
            g.sum(&terms)
        },
        fault,
    )?);

    let passed = components.iter().all(|c| c.passed);
    Ok(GradCheckReport { tolerance: TOLERANCE, step: FD_STEP, passed, components })
}
