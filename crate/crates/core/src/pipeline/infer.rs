//! Full-video segmentation with a trained model.

use serde::{Deserialize, Serialize};

use super::stages::{solve_frame_stage, solve_stages};
use super::{subsample, TrainedModel};
use crate::error::{ClotError, Result};
use crate::eval::{run_length_encode, Segment};
use crate::model::Graph;
use crate::numeric::DenseMatrix;
use crate::ot::decode_labels;

/// Which quantity the frame labels are read from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecodeSource {
    /// the frame→action plan
    T,
    /// the prediction head, no transport at inference
    P,
    /// the refined-frame→action plan
    TR,
}

impl std::str::FromStr for DecodeSource {
    type Err = ClotError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "T" => Ok(Self::T),
            "P" => Ok(Self::P),
            "TR" => Ok(Self::TR),
            other => Err(ClotError::Input(format!("unknown decode source {other:?}; use T, P or TR"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentationResult {
    /// One action index per input frame.
    pub labels: Vec<usize>,
    pub segments: Vec<Segment>,
    pub source_stage: DecodeSource,
    /// Every transport solve used for the labels converged.
    pub converged: bool,
}

impl SegmentationResult {
    pub fn from_labels(labels: Vec<usize>, source_stage: DecodeSource, converged: bool) -> Self {
        Self { segments: run_length_encode(&labels), labels, source_stage, converged }
    }
}

/// Segments one video in eval mode.
///
/// Runs at full length unless the model was configured for subsampled
/// evaluation, in which case labels of the midpoint frames are spread back
/// over their intervals.
pub fn infer(x: &DenseMatrix, model: &TrainedModel, source: DecodeSource) -> Result<SegmentationResult> {
    let cfg = &model.config;
    let n = x.rows();
    if n == 0 {
        return Err(ClotError::Input("cannot segment an empty video".into()));
    }
    let idx = if cfg.eval_subsampled { subsample(n, cfg.frames_per_video, None) } else { (0..n).collect() };
    let xs = if idx.len() == n { x.clone() } else { x.select_rows(&idx) };

    let mut g = Graph::new(&model.params);
    let out = g.video_forward(&xs, None)?;
    let a = model.params.actions();
    let (labels, converged) = match source {
        DecodeSource::P => {
            let z = g.logits(out.f, g.param(model.params.layout.actions))?;
            (g.value(z).argmax_rows(), true)
        }
        DecodeSource::T => {
            let t = solve_frame_stage(g.value(out.f), a, cfg, &model.projections)?;
            (decode_labels(&t), t.converged)
        }
        DecodeSource::TR => {
            let st = solve_stages(g.value(out.f), g.value(out.s), g.value(out.f_r), a, cfg, &model.projections)?;
            (decode_labels(&st.t_r), st.all_converged())
        }
    };
    let full = if idx.len() == n { labels } else { spread(&labels, n) };
    Ok(SegmentationResult::from_labels(full, source, converged))
}

/// Gives every frame the label of the subsampling interval it falls in.
fn spread(labels: &[usize], n: usize) -> Vec<usize> {
    let m = labels.len();
    let mut out = Vec::with_capacity(n);
    let mut k = 0;
    for frame in 0..n {
        while k + 1 < m && (k + 1) * n / m <= frame {
            k += 1;
        }
        out.push(labels[k]);
    }
    out
}
