//! Forward computations recorded on a tape.
//!
//! [`Graph`] registers every parameter tensor as a leaf first, so leaf `i`
//! on the tape is parameter `i`. The plain functions at the bottom of the
//! file build a throwaway graph and return values only.

use super::params::{DecoderLayerIds, GradientStore, ModelParams};
use super::tape::{Fault, Tape, Var};
use crate::error::{dim_err, param_err, ClotError, Result};
use crate::numeric::{DenseMatrix, Rng};

/// Per-video forward outputs kept on the tape.
#[derive(Clone, Copy, Debug)]
pub struct VideoOutputs {
    /// Dispatched frame embeddings F.
    pub f: Var,
    /// Segment embeddings S.
    pub s: Var,
    /// Refined frame embeddings F_R.
    pub f_r: Var,
}

pub struct Graph<'p> {
    pub tape: Tape,
    params: &'p ModelParams,
    vars: Vec<Var>,
    loss: Option<Var>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ModelParams) -> Self {
        Self::with_fault(params, None)
    }

    pub fn with_fault(params: &'p ModelParams, fault: Option<Fault>) -> Self {
        let mut tape = Tape::with_fault(fault);
        let vars = params.tensors().iter().map(|t| tape.leaf(t.clone())).collect();
        Self { tape, params, vars, loss: None }
    }

    pub fn params(&self) -> &ModelParams {
        self.params
    }

    pub fn param(&self, id: usize) -> Var {
        self.vars[id]
    }

    pub fn value(&self, v: Var) -> &DenseMatrix {
        self.tape.value(v)
    }

    pub fn input(&mut self, x: &DenseMatrix) -> Result<Var> {
        x.ensure_finite("input features")?;
        Ok(self.tape.leaf(x.clone()))
    }

    /// Single-hidden-layer ReLU MLP with inverted dropout after the hidden
    /// activation in train mode.
    pub fn encode(&mut self, x: Var, rng: Option<&mut Rng>) -> Result<Var> {
        let ids = &self.params.layout;
        let w1 = self.vars[ids.enc_w1];
        if self.value(x).cols() != self.value(w1).rows() {
            return dim_err(format!(
                "encoder expects {} input features, got {}",
                self.value(w1).rows(),
                self.value(x).cols()
            ));
        }
        let h = self.tape.matmul(x, w1)?;
        let h = self.tape.add_row(h, self.vars[ids.enc_b1])?;
        let mut h = self.tape.relu(h);
        let rate = self.params.config.dropout;
        if let Some(rng) = rng {
            if rate > 0.0 {
                let keep = 1.0 / (1.0 - rate);
                let (r, c) = self.value(h).shape();
                let mask = DenseMatrix::from_fn(r, c, |_, _| if rng.uniform() < rate { 0.0 } else { keep });
                h = self.tape.mul_const(h, mask)?;
            }
        }
        let out = self.tape.matmul(h, self.vars[ids.enc_w2])?;
        self.tape.add_row(out, self.vars[ids.enc_b2])
    }

    /// `f_i + (1/K) Σ_k sigmoid(β + α·cos(A_k, f_i)) A_k`.
    pub fn dispatch(&mut self, f: Var, actions: Var) -> Result<Var> {
        let ids = &self.params.layout;
        let (alpha, beta) = (self.vars[ids.dispatch_alpha], self.vars[ids.dispatch_beta]);
        let k = self.value(actions).rows() as f64;
        let fn_ = self.tape.row_normalize(f);
        let an = self.tape.row_normalize(actions);
        let cos = self.tape.matmul_t(fn_, an)?;
        let z = self.tape.scale_var(cos, alpha)?;
        let z = self.tape.add_scalar_var(z, beta)?;
        let phi = self.tape.sigmoid(z);
        let mix = self.tape.matmul(phi, actions)?;
        let mix = self.tape.scale(mix, 1.0 / k);
        self.tape.add(f, mix)
    }

    fn affine_norm(&mut self, x: Var, g: usize, b: usize) -> Result<Var> {
        let y = self.tape.layer_norm(x);
        let y = self.tape.mul_row(y, self.vars[g])?;
        self.tape.add_row(y, self.vars[b])
    }

    /// Multi-head attention without projection biases.
    pub fn attention(&mut self, q_in: Var, kv_in: Var, wq: Var, wk: Var, wv: Var, wo: Var) -> Result<Var> {
        let heads = self.params.config.heads;
        let q = self.tape.matmul(q_in, wq)?;
        let k = self.tape.matmul(kv_in, wk)?;
        let v = self.tape.matmul(kv_in, wv)?;
        let width = self.value(q).cols();
        if width % heads != 0 {
            return Err(ClotError::Config(format!("width {width} not divisible by {heads} heads")));
        }
        let dh = width / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = self.tape.slice_cols(q, h * dh, dh)?;
            let kh = self.tape.slice_cols(k, h * dh, dh)?;
            let vh = self.tape.slice_cols(v, h * dh, dh)?;
            let scores = self.tape.matmul_t(qh, kh)?;
            let scores = self.tape.scale(scores, scale);
            let attn = self.tape.softmax_rows(scores);
            outs.push(self.tape.matmul(attn, vh)?);
        }
        let cat = if heads == 1 { outs[0] } else { self.tape.concat_cols(&outs)? };
        self.tape.matmul(cat, wo)
    }

    pub fn self_attention_block(&mut self, q: Var, ids: &DecoderLayerIds) -> Result<Var> {
        let h = self.affine_norm(q, ids.ln1_g, ids.ln1_b)?;
        let v = &self.vars;
        let (wq, wk, wv, wo) = (v[ids.sa_wq], v[ids.sa_wk], v[ids.sa_wv], v[ids.sa_wo]);
        let a = self.attention(h, h, wq, wk, wv, wo)?;
        self.tape.add(q, a)
    }

    pub fn cross_attention_block(&mut self, q: Var, f: Var, ids: &DecoderLayerIds) -> Result<Var> {
        let h = self.affine_norm(q, ids.ln2_g, ids.ln2_b)?;
        let v = &self.vars;
        let (wq, wk, wv, wo) = (v[ids.ca_wq], v[ids.ca_wk], v[ids.ca_wv], v[ids.ca_wo]);
        let a = self.attention(h, f, wq, wk, wv, wo)?;
        self.tape.add(q, a)
    }

    pub fn feed_forward_block(&mut self, q: Var, ids: &DecoderLayerIds) -> Result<Var> {
        let h = self.affine_norm(q, ids.ln3_g, ids.ln3_b)?;
        let h = self.tape.matmul(h, self.vars[ids.ff_w1])?;
        let h = self.tape.add_row(h, self.vars[ids.ff_b1])?;
        let h = self.tape.relu(h);
        let h = self.tape.matmul(h, self.vars[ids.ff_w2])?;
        let h = self.tape.add_row(h, self.vars[ids.ff_b2])?;
        self.tape.add(q, h)
    }

    /// Parallel query decoder: K′ queries attend to each other and to F.
    pub fn decode_segments(&mut self, f: Var) -> Result<Var> {
        self.value(f).ensure_finite("frame embeddings")?;
        let layout = self.params.layout.clone();
        let mut q = self.vars[layout.queries];
        for ids in &layout.layers {
            q = self.self_attention_block(q, ids)?;
            q = self.cross_attention_block(q, f, ids)?;
            q = self.feed_forward_block(q, ids)?;
        }
        let q = self.affine_norm(q, layout.dec_norm_g, layout.dec_norm_b)?;
        self.tape.matmul(q, self.vars[layout.out_proj])
    }

    /// `F + softmax(F Sᵀ / (τ√d)) S`.
    pub fn refine(&mut self, f: Var, s: Var) -> Result<Var> {
        let cfg = &self.params.config;
        let s = if cfg.detach_s_in_refine { self.tape.leaf(self.value(s).clone()) } else { s };
        let d = self.value(f).cols() as f64;
        let logits = self.tape.matmul_t(f, s)?;
        let logits = self.tape.scale(logits, 1.0 / (cfg.tau * d.sqrt()));
        let attn = self.tape.softmax_rows(logits);
        let mix = self.tape.matmul(attn, s)?;
        self.tape.add(f, mix)
    }

    /// Prediction logits `h Aᵀ / τ`; their row softmax is P.
    pub fn logits(&mut self, h: Var, actions: Var) -> Result<Var> {
        let z = self.tape.matmul_t(h, actions)?;
        Ok(self.tape.scale(z, 1.0 / self.params.config.tau))
    }

    /// `−Σ t log softmax(logits)`; targets are constants.
    pub fn cross_entropy(&mut self, logits: Var, targets: &DenseMatrix) -> Result<Var> {
        if targets.as_slice().iter().any(|&v| !(v >= 0.0)) {
            return param_err("pseudo-label targets must be nonnegative");
        }
        self.tape.softmax_cross_entropy(logits, targets)
    }

    /// F, S and F_R for one video.
    pub fn video_forward(&mut self, x: &DenseMatrix, rng: Option<&mut Rng>) -> Result<VideoOutputs> {
        let x = self.input(x)?;
        let actions = self.vars[self.params.layout.actions];
        let enc = self.encode(x, rng)?;
        let f = self.dispatch(enc, actions)?;
        let s = self.decode_segments(f)?;
        let f_r = self.refine(f, s)?;
        Ok(VideoOutputs { f, s, f_r })
    }

    /// The three cross-entropy terms `(L, L_S, L_R)` for one video.
    pub fn video_losses(
        &mut self,
        out: &VideoOutputs,
        t: &DenseMatrix,
        t_s: &DenseMatrix,
        t_r: &DenseMatrix,
    ) -> Result<[Var; 3]> {
        let actions = self.vars[self.params.layout.actions];
        let mut terms = [out.f; 3];
        for (slot, (h, target)) in terms.iter_mut().zip([(out.f, t), (out.s, t_s), (out.f_r, t_r)]) {
            let z = self.logits(h, actions)?;
            *slot = self.cross_entropy(z, target)?;
        }
        Ok(terms)
    }

    pub fn sum(&mut self, terms: &[Var]) -> Result<Var> {
        let mut acc = terms[0];
        for &t in &terms[1..] {
            acc = self.tape.add(acc, t)?;
        }
        Ok(acc)
    }

    /// Marks the scalar that `backward` differentiates.
    pub fn set_loss(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).shape() != (1, 1) {
            return dim_err("loss must be a scalar");
        }
        self.loss = Some(loss);
        Ok(())
    }

    pub fn loss_value(&self) -> Option<f64> {
        self.loss.map(|l| self.value(l)[(0, 0)])
    }

    /// Adds `scale · ∂loss/∂θ` into `store`.
    pub fn backward(&self, store: &mut GradientStore, scale: f64) -> Result<()> {
        let loss = self.loss.ok_or_else(|| ClotError::State("backward called before a loss was recorded".into()))?;
        let grads = self.tape.backward(loss)?;
        for (id, v) in self.vars.iter().enumerate() {
            if let Some(g) = &grads[v.index()] {
                store.accumulate(id, g, scale)?;
            }
        }
        Ok(())
    }
}

/// Encoder output in eval mode, or with dropout when `rng` is given.
pub fn encode(x: &DenseMatrix, params: &ModelParams, rng: Option<&mut Rng>) -> Result<DenseMatrix> {
    let mut g = Graph::new(params);
    let x = g.input(x)?;
    let out = g.encode(x, rng)?;
    Ok(g.value(out).clone())
}

/// Feature dispatch with explicit gate parameters.
pub fn dispatch(f: &DenseMatrix, actions: &DenseMatrix, alpha: f64, beta: f64) -> Result<DenseMatrix> {
    if f.cols() != actions.cols() {
        return dim_err(format!("dispatch: frames have {} dims, actions {}", f.cols(), actions.cols()));
    }
    let mut tape = Tape::new();
    let fv = tape.leaf(f.clone());
    let av = tape.leaf(actions.clone());
    let al = tape.leaf(DenseMatrix::filled(1, 1, alpha));
    let be = tape.leaf(DenseMatrix::filled(1, 1, beta));
    let fn_ = tape.row_normalize(fv);
    let an = tape.row_normalize(av);
    let cos = tape.matmul_t(fn_, an)?;
    let z = tape.scale_var(cos, al)?;
    let z = tape.add_scalar_var(z, be)?;
    let phi = tape.sigmoid(z);
    let mix = tape.matmul(phi, av)?;
    let mix = tape.scale(mix, 1.0 / actions.rows() as f64);
    let out = tape.add(fv, mix)?;
    Ok(tape.value(out).clone())
}

pub fn decode_segments(f: &DenseMatrix, params: &ModelParams) -> Result<DenseMatrix> {
    let mut g = Graph::new(params);
    let fv = g.input(f)?;
    let s = g.decode_segments(fv)?;
    Ok(g.value(s).clone())
}

pub fn refine(f: &DenseMatrix, s: &DenseMatrix, tau: f64) -> Result<DenseMatrix> {
    if !(tau > 0.0) {
        return param_err(format!("tau must be positive, got {tau}"));
    }
    if f.cols() != s.cols() {
        return dim_err(format!("refine: frames have {} dims, segments {}", f.cols(), s.cols()));
    }
    let d = f.cols() as f64;
    let mut attn = f.matmul_t(s)?.scale(1.0 / (tau * d.sqrt()));
    for r in 0..attn.rows() {
        crate::numeric::softmax_in_place(attn.row_mut(r));
    }
    f.add(&attn.matmul(s)?)
}

/// Row softmax of `h Aᵀ / τ`.
pub fn predict(h: &DenseMatrix, actions: &DenseMatrix, tau: f64) -> Result<DenseMatrix> {
    if h.cols() != actions.cols() {
        return dim_err(format!("predict: embeddings have {} dims, actions {}", h.cols(), actions.cols()));
    }
    crate::numeric::softmax_rows(&h.matmul_t(actions)?, tau)
}

/// `−Σ t log p` with `p` clamped at 1e-12.
pub fn cross_entropy_loss(p: &DenseMatrix, t: &DenseMatrix) -> Result<f64> {
    if p.shape() != t.shape() {
        return dim_err(format!("cross entropy: p {:?} vs t {:?}", p.shape(), t.shape()));
    }
    Ok(-p.as_slice().iter().zip(t.as_slice()).map(|(&p, &t)| if t == 0.0 { 0.0 } else { t * p.max(1e-12).ln() }).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::ModelConfig;

    fn tiny() -> ModelConfig {
        crate::model::gradcheck::tiny_config()
    }

    #[test]
    fn zero_encoder_gives_zero_output() {
        let mut p = ModelParams::new(tiny(), &mut Rng::new(0)).unwrap();
        let l = p.layout.clone();
        for id in [l.enc_w1, l.enc_b1, l.enc_w2, l.enc_b2] {
            p.get_mut(id).as_mut_slice().fill(0.0);
        }
        let x = DenseMatrix::from_fn(7, 5, |i, j| (i * j) as f64 - 3.0);
        assert_eq!(encode(&x, &p, None).unwrap(), DenseMatrix::zeros(7, 4));
    }

    #[test]
    fn no_dropout_means_modes_agree() {
        let p = ModelParams::new(tiny(), &mut Rng::new(1)).unwrap();
        let x = DenseMatrix::from_fn(7, 5, |i, j| ((i + 2 * j) as f64).sin());
        let eval = encode(&x, &p, None).unwrap();
        let train = encode(&x, &p, Some(&mut Rng::new(9))).unwrap();
        assert_eq!(eval, train);
        let dropped = ModelParams::new(ModelConfig { dropout: 0.5, ..tiny() }, &mut Rng::new(1)).unwrap();
        assert_ne!(encode(&x, &dropped, Some(&mut Rng::new(9))).unwrap(), eval);
        assert_eq!(encode(&x, &dropped, None).unwrap(), eval);
    }

    #[test]
    fn encoder_rejects_wrong_width() {
        let p = ModelParams::new(tiny(), &mut Rng::new(1)).unwrap();
        assert!(matches!(encode(&DenseMatrix::zeros(2, 3), &p, None), Err(ClotError::Dimension(_))));
    }

    #[test]
    fn dispatch_examples() {
        let f = DenseMatrix::from_rows(&[[0.3, -0.2]]).unwrap();
        let a = DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let out = dispatch(&f, &a, 0.0, -40.0).unwrap();
        assert!(out.max_abs_diff(&f).unwrap() < 1e-15);

        let a = DenseMatrix::from_rows(&[[0.6, 0.8]]).unwrap();
        let out = dispatch(&a, &a, 1.0, 0.0).unwrap();
        let expected = a.scale(1.0 + 0.731_058_578_630_004_9);
        assert!(out.max_abs_diff(&expected).unwrap() < 1e-12);
    }

    #[test]
    fn refine_examples() {
        let mut rng = Rng::new(2);
        let f = DenseMatrix::from_fn(5, 3, |_, _| rng.normal());
        assert_eq!(refine(&f, &DenseMatrix::zeros(4, 3), 0.1).unwrap(), f);
        let s = DenseMatrix::from_rows(&[[0.5, -1.0, 2.0]]).unwrap();
        let out = refine(&f, &s, 0.1).unwrap();
        for r in 0..5 {
            for c in 0..3 {
                assert!((out[(r, c)] - f[(r, c)] - s[(0, c)]).abs() < 1e-15);
            }
        }
        let s = DenseMatrix::from_fn(3, 3, |_, _| rng.normal());
        let out = refine(&f, &s, 1e12).unwrap();
        let mean: Vec<f64> = s.col_sums().iter().map(|v| v / 3.0).collect();
        for r in 0..5 {
            for c in 0..3 {
                assert!((out[(r, c)] - f[(r, c)] - mean[c]).abs() < 1e-9);
            }
        }
        assert!(refine(&f, &s, 0.0).is_err());
    }

    #[test]
    fn predict_examples() {
        let a = DenseMatrix::from_rows(&[[1.0], [0.0]]).unwrap();
        let h = DenseMatrix::from_rows(&[[2.0]]).unwrap();
        let p = predict(&h, &a, 1.0).unwrap();
        assert!((p[(0, 0)] - 0.880797).abs() < 1e-6 && (p[(0, 1)] - 0.119203).abs() < 1e-6);
        let p = predict(&h, &a, 2.0).unwrap();
        assert!((p[(0, 0)] - 0.731059).abs() < 1e-6 && (p[(0, 1)] - 0.268941).abs() < 1e-6);
        let zero = predict(&DenseMatrix::zeros(2, 1), &a, 0.3).unwrap();
        assert!(zero.as_slice().iter().all(|&v| v == 0.5));
        let mut rng = Rng::new(3);
        let h = DenseMatrix::from_fn(6, 4, |_, _| rng.normal() * 5.0);
        let a = DenseMatrix::from_fn(5, 4, |_, _| rng.normal());
        for s in predict(&h, &a, 0.05).unwrap().row_sums() {
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_examples() {
        let onehot = DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(cross_entropy_loss(&onehot, &onehot).unwrap(), 0.0);
        let u = DenseMatrix::filled(1, 4, 0.25);
        assert!((cross_entropy_loss(&u, &u).unwrap() - 1.386294).abs() < 1e-6);
        assert!(cross_entropy_loss(&u, &onehot).is_err());
    }

    #[test]
    fn zero_frames_with_zero_projections_depend_on_queries_only() {
        let mut p = ModelParams::new(tiny(), &mut Rng::new(5)).unwrap();
        let ids = p.layout.layers[0].clone();
        p.get_mut(ids.ca_wo).as_mut_slice().fill(0.0);
        let a = decode_segments(&DenseMatrix::zeros(7, 4), &p).unwrap();
        let b = decode_segments(&DenseMatrix::zeros(12, 4), &p).unwrap();
        assert_eq!(a, b);
        let mut rng = Rng::new(6);
        let c = decode_segments(&DenseMatrix::from_fn(9, 4, |_, _| rng.normal()), &p).unwrap();
        assert!(a.max_abs_diff(&c).unwrap() < 1e-12);
    }

    #[test]
    fn backward_before_loss_is_state_error() {
        let p = ModelParams::new(tiny(), &mut Rng::new(0)).unwrap();
        let g = Graph::new(&p);
        let mut store = GradientStore::zeros_like(&p);
        assert!(matches!(g.backward(&mut store, 1.0), Err(ClotError::State(_))));
    }

    #[test]
    fn doubling_the_loss_doubles_gradients() {
        let p = ModelParams::new(tiny(), &mut Rng::new(7)).unwrap();
        let mut rng = Rng::new(8);
        let x = DenseMatrix::from_fn(7, 5, |_, _| rng.normal());
        let t = DenseMatrix::filled(7, 3, 1.0 / 21.0);
        let ts = DenseMatrix::filled(3, 3, 1.0 / 9.0);
        let grads = |scale: f64| {
            let mut g = Graph::new(&p);
            let out = g.video_forward(&x, None).unwrap();
            let terms = g.video_losses(&out, &t, &ts, &t).unwrap();
            let total = g.sum(&terms).unwrap();
            let total = g.tape.scale(total, scale);
            g.set_loss(total).unwrap();
            let mut store = GradientStore::zeros_like(&p);
            g.backward(&mut store, 1.0).unwrap();
            store
        };
        let one = grads(1.0);
        let two = grads(2.0);
        for (a, b) in one.grads().iter().zip(two.grads()) {
            assert!(a.scale(2.0).max_abs_diff(b).unwrap() <= 1e-12 * (1.0 + b.norm()));
        }
        assert!(one.norm() > 0.0);
    }

    #[test]
    fn saturated_gate_leaves_beta_without_gradient() {
        let mut p = ModelParams::new(tiny(), &mut Rng::new(7)).unwrap();
        *p.get_mut(p.layout.dispatch_beta) = DenseMatrix::filled(1, 1, -800.0);
        let mut rng = Rng::new(8);
        let x = DenseMatrix::from_fn(7, 5, |_, _| rng.normal());
        let t = DenseMatrix::filled(7, 3, 1.0 / 21.0);
        let ts = DenseMatrix::filled(3, 3, 1.0 / 9.0);
        let mut g = Graph::new(&p);
        let out = g.video_forward(&x, None).unwrap();
        let terms = g.video_losses(&out, &t, &ts, &t).unwrap();
        let total = g.sum(&terms).unwrap();
        g.set_loss(total).unwrap();
        let mut store = GradientStore::zeros_like(&p);
        g.backward(&mut store, 1.0).unwrap();
        assert_eq!(store.get(p.layout.dispatch_beta)[(0, 0)], 0.0);
        assert_eq!(store.get(p.layout.dispatch_alpha)[(0, 0)], 0.0);
    }
}
