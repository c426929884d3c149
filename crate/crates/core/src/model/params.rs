//! Parameter tensors, their layout and gradient buffers.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, ClotError, Result};
use crate::numeric::{DenseMatrix, Rng};

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Input feature dimension D.
    pub input_dim: usize,
    /// Encoder hidden width.
    pub hidden_dim: usize,
    /// Embedding dimension d.
    pub embed_dim: usize,
    /// Decoder width d_dec.
    pub dec_dim: usize,
    pub heads: usize,
    pub layers: usize,
    /// Number of actions K.
    pub num_actions: usize,
    /// Number of segment queries K′.
    pub num_queries: usize,
    pub dropout: f64,
    /// Temperature shared by refinement and prediction.
    pub tau: f64,
    /// Treat S as a constant inside refinement.
    pub detach_s_in_refine: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("input_dim", self.input_dim),
            ("hidden_dim", self.hidden_dim),
            ("embed_dim", self.embed_dim),
            ("dec_dim", self.dec_dim),
            ("heads", self.heads),
            ("num_actions", self.num_actions),
            ("num_queries", self.num_queries),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(ClotError::Config(format!("{name} must be positive")));
            }
        }
        if self.dec_dim % self.heads != 0 {
            return Err(ClotError::Config(format!(
                "decoder width {} is not divisible by {} heads",
                self.dec_dim, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ClotError::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(ClotError::Config(format!("tau must be positive, got {}", self.tau)));
        }
        Ok(())
    }

    pub fn ffn_dim(&self) -> usize {
        4 * self.dec_dim
    }
}

/// Indices of one decoder layer's tensors.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecoderLayerIds {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub sa_wq: usize,
    pub sa_wk: usize,
    pub sa_wv: usize,
    pub sa_wo: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub ca_wq: usize,
    pub ca_wk: usize,
    pub ca_wv: usize,
    pub ca_wo: usize,
    pub ln3_g: usize,
    pub ln3_b: usize,
    pub ff_w1: usize,
    pub ff_b1: usize,
    pub ff_w2: usize,
    pub ff_b2: usize,
}

/// Indices of every parameter tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    pub enc_w1: usize,
    pub enc_b1: usize,
    pub enc_w2: usize,
    pub enc_b2: usize,
    pub dispatch_alpha: usize,
    pub dispatch_beta: usize,
    pub queries: usize,
    pub layers: Vec<DecoderLayerIds>,
    pub dec_norm_g: usize,
    pub dec_norm_b: usize,
    pub out_proj: usize,
    pub actions: usize,
}

#[derive(Clone, Copy)]
enum Init {
    Zeros,
    Ones,
    Constant(f64),
    /// normal with the given standard deviation
    Normal(f64),
}

struct Builder<'a> {
    names: Vec<String>,
    tensors: Vec<DenseMatrix>,
    rng: &'a mut Rng,
}

impl Builder<'_> {
    fn add(&mut self, name: String, rows: usize, cols: usize, init: Init) -> usize {
        let m = match init {
            Init::Zeros => DenseMatrix::zeros(rows, cols),
            Init::Ones => DenseMatrix::filled(rows, cols, 1.0),
            Init::Constant(v) => DenseMatrix::filled(rows, cols, v),
            Init::Normal(std) => DenseMatrix::from_fn(rows, cols, |_, _| std * self.rng.normal()),
        };
        self.names.push(name);
        self.tensors.push(m);
        self.tensors.len() - 1
    }

    fn weight(&mut self, name: String, rows: usize, cols: usize) -> usize {
        self.add(name, rows, cols, Init::Normal((1.0 / rows as f64).sqrt()))
    }
}

/// All learnable tensors plus the configuration that shapes them.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub layout: ParamLayout,
    names: Vec<String>,
    tensors: Vec<DenseMatrix>,
}

impl ModelParams {
    /// Seeded initialization. Queries use a normal with scale 0.02; the
    /// action embeddings start random and are normally replaced by k-means
    /// centroids before training.
    pub fn new(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let (dd, d) = (c.dec_dim, c.embed_dim);
        let mut b = Builder { names: Vec::new(), tensors: Vec::new(), rng };
        let enc_w1 = b.add("enc_w1".into(), c.input_dim, c.hidden_dim, Init::Normal((2.0 / c.input_dim as f64).sqrt()));
        let enc_b1 = b.add("enc_b1".into(), 1, c.hidden_dim, Init::Zeros);
        let enc_w2 = b.weight("enc_w2".into(), c.hidden_dim, d);
        let enc_b2 = b.add("enc_b2".into(), 1, d, Init::Zeros);
        let dispatch_alpha = b.add("dispatch_alpha".into(), 1, 1, Init::Constant(1.0));
        let dispatch_beta = b.add("dispatch_beta".into(), 1, 1, Init::Zeros);
        let queries = b.add("queries".into(), c.num_queries, dd, Init::Normal(0.02));
        let mut layers = Vec::with_capacity(c.layers);
        for l in 0..c.layers {
            let p = |s: &str| format!("dec{l}.{s}");
            layers.push(DecoderLayerIds {
                ln1_g: b.add(p("ln1_g"), 1, dd, Init::Ones),
                ln1_b: b.add(p("ln1_b"), 1, dd, Init::Zeros),
                sa_wq: b.weight(p("sa_wq"), dd, dd),
                sa_wk: b.weight(p("sa_wk"), dd, dd),
                sa_wv: b.weight(p("sa_wv"), dd, dd),
                sa_wo: b.weight(p("sa_wo"), dd, dd),
                ln2_g: b.add(p("ln2_g"), 1, dd, Init::Ones),
                ln2_b: b.add(p("ln2_b"), 1, dd, Init::Zeros),
                ca_wq: b.weight(p("ca_wq"), dd, dd),
                ca_wk: b.weight(p("ca_wk"), d, dd),
                ca_wv: b.weight(p("ca_wv"), d, dd),
                ca_wo: b.weight(p("ca_wo"), dd, dd),
                ln3_g: b.add(p("ln3_g"), 1, dd, Init::Ones),
                ln3_b: b.add(p("ln3_b"), 1, dd, Init::Zeros),
                ff_w1: b.weight(p("ff_w1"), dd, c.ffn_dim()),
                ff_b1: b.add(p("ff_b1"), 1, c.ffn_dim(), Init::Zeros),
                ff_w2: b.weight(p("ff_w2"), c.ffn_dim(), dd),
                ff_b2: b.add(p("ff_b2"), 1, dd, Init::Zeros),
            });
        }
        let dec_norm_g = b.add("dec_norm_g".into(), 1, dd, Init::Ones);
        let dec_norm_b = b.add("dec_norm_b".into(), 1, dd, Init::Zeros);
        let out_proj = b.weight("out_proj".into(), dd, d);
        let actions = b.add("actions".into(), c.num_actions, d, Init::Normal(1.0));
        let layout = ParamLayout {
            enc_w1,
            enc_b1,
            enc_w2,
            enc_b2,
            dispatch_alpha,
            dispatch_beta,
            queries,
            layers,
            dec_norm_g,
            dec_norm_b,
            out_proj,
            actions,
        };
        Ok(Self { config, layout, names: b.names, tensors: b.tensors })
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[DenseMatrix] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [DenseMatrix] {
        &mut self.tensors
    }

    pub fn get(&self, id: usize) -> &DenseMatrix {
        &self.tensors[id]
    }

    pub fn get_mut(&mut self, id: usize) -> &mut DenseMatrix {
        &mut self.tensors[id]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Replaces one tensor, keeping its shape.
    pub fn set(&mut self, id: usize, value: DenseMatrix) -> Result<()> {
        if value.shape() != self.tensors[id].shape() {
            return dim_err(format!(
                "{}: expected shape {:?}, got {:?}",
                self.names[id],
                self.tensors[id].shape(),
                value.shape()
            ));
        }
        self.tensors[id] = value;
        Ok(())
    }

    pub fn actions(&self) -> &DenseMatrix {
        &self.tensors[self.layout.actions]
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(|t| t.as_slice().len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(DenseMatrix::is_finite)
    }
}

/// One gradient buffer per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientStore {
    grads: Vec<DenseMatrix>,
}

impl GradientStore {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self { grads: params.tensors().iter().map(|t| DenseMatrix::zeros(t.rows(), t.cols())).collect() }
    }

    pub fn zero(&mut self) {
        for g in &mut self.grads {
            g.as_mut_slice().fill(0.0);
        }
    }

    pub fn get(&self, id: usize) -> &DenseMatrix {
        &self.grads[id]
    }

    pub fn grads(&self) -> &[DenseMatrix] {
        &self.grads
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub(crate) fn accumulate(&mut self, id: usize, g: &DenseMatrix, scale: f64) -> Result<()> {
        self.grads[id].add_scaled(g, scale)
    }

    /// Adds another store's buffers, scaled.
    pub fn add_scaled(&mut self, other: &GradientStore, scale: f64) -> Result<()> {
        if other.len() != self.len() {
            return dim_err("gradient stores hold different tensor counts");
        }
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            a.add_scaled(b, scale)?;
        }
        Ok(())
    }

    pub fn norm(&self) -> f64 {
        self.grads.iter().map(|g| g.norm().powi(2)).sum::<f64>().sqrt()
    }
}
