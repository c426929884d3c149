//! Cluster-to-class matching and segmentation metrics.

use serde::{Deserialize, Serialize};

use super::hungarian::hungarian;
use crate::error::{ClotError, Result};
use crate::numeric::DenseMatrix;

/// Where the Hungarian matching pools its counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchLevel {
    /// one assignment per video
    Video,
    /// one assignment over all videos of the activity
    Activity,
}

impl std::str::FromStr for MatchLevel {
    type Err = ClotError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "video" => Ok(Self::Video),
            "activity" => Ok(Self::Activity),
            other => Err(ClotError::Input(format!("unknown matching level {other:?}; use video or activity"))),
        }
    }
}

/// Frame co-occurrence counts, `counts[p][g]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(k_pred: usize, k_gt: usize) -> Self {
        Self { counts: vec![vec![0; k_gt]; k_pred] }
    }

    pub fn k_pred(&self) -> usize {
        self.counts.len()
    }

    pub fn k_gt(&self) -> usize {
        self.counts.first().map_or(0, Vec::len)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Adds one video; frames whose ground truth equals `ignore` are skipped.
    pub fn add(&mut self, pred: &[usize], gt: &[usize], ignore: Option<usize>) {
        for (&p, &g) in pred.iter().zip(gt) {
            if Some(g) != ignore {
                self.counts[p][g] += 1;
            }
        }
    }

    /// Predicted label → ground-truth label maximizing total overlap.
    ///
    /// The matrix is zero-padded to square; a prediction matched to a padding
    /// column receives a label `≥ k_gt` that no ground truth uses.
    pub fn best_mapping(&self) -> Result<Vec<usize>> {
        let k = self.k_pred().max(self.k_gt());
        let cost = DenseMatrix::from_fn(k, k, |p, g| {
            if p < self.k_pred() && g < self.k_gt() {
                -(self.counts[p][g] as f64)
            } else {
                0.0
            }
        });
        let perm = hungarian(&cost)?;
        Ok(perm[..self.k_pred()].to_vec())
    }
}

fn check_lengths(pred: &[Vec<usize>], gt: &[Vec<usize>]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(ClotError::Input(format!("{} predicted videos vs {} ground-truth videos", pred.len(), gt.len())));
    }
    for (i, (p, g)) in pred.iter().zip(gt).enumerate() {
        if p.len() != g.len() {
            return Err(ClotError::Input(format!(
                "video {i}: {} predicted frames vs {} ground-truth frames",
                p.len(),
                g.len()
            )));
        }
    }
    Ok(())
}

fn label_bound(seqs: &[Vec<usize>]) -> usize {
    seqs.iter().flatten().max().map_or(0, |m| m + 1)
}

/// Relabels predictions through the overlap-maximizing assignment.
pub fn match_labels(
    pred: &[Vec<usize>],
    gt: &[Vec<usize>],
    level: MatchLevel,
    ignore: Option<usize>,
) -> Result<Vec<Vec<usize>>> {
    check_lengths(pred, gt)?;
    let (kp, kg) = (label_bound(pred), label_bound(gt));
    let relabel = |seq: &[usize], map: &[usize]| seq.iter().map(|&p| map[p]).collect::<Vec<_>>();
    match level {
        MatchLevel::Activity => {
            let mut cm = ConfusionMatrix::new(kp, kg);
            for (p, g) in pred.iter().zip(gt) {
                cm.add(p, g, ignore);
            }
            let map = cm.best_mapping()?;
            Ok(pred.iter().map(|p| relabel(p, &map)).collect())
        }
        MatchLevel::Video => pred
            .iter()
            .zip(gt)
            .map(|(p, g)| {
                let mut cm = ConfusionMatrix::new(kp, kg);
                cm.add(p, g, ignore);
                Ok(relabel(p, &cm.best_mapping()?))
            })
            .collect(),
    }
}

/// A maximal run `[start, end)` of one label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub label: usize,
}

pub fn run_length_encode(labels: &[usize]) -> Vec<Segment> {
    let mut out: Vec<Segment> = Vec::new();
    for (i, &l) in labels.iter().enumerate() {
        match out.last_mut() {
            Some(s) if s.label == l => s.end = i + 1,
            _ => out.push(Segment { start: i, end: i + 1, label: l }),
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassIou {
    pub label: usize,
    pub iou: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mof: f64,
    pub f1: f64,
    pub miou: f64,
    /// IoU of every class present in the ground truth.
    pub per_class_iou: Vec<ClassIou>,
    pub frames: usize,
}

/// Segment-level F1 of one video under the majority-overlap rule.
fn video_f1(pred: &[usize], gt: &[usize], ignore: Option<usize>) -> f64 {
    let gt_segs: Vec<Segment> = run_length_encode(gt).into_iter().filter(|s| Some(s.label) != ignore).collect();
    let pred_segs = run_length_encode(pred);
    let majority = |s: &Segment, other: &[usize]| {
        let hits = other[s.start..s.end].iter().filter(|&&l| l == s.label).count();
        2 * hits > s.end - s.start
    };
    let recalled = gt_segs.iter().filter(|s| majority(s, pred)).count();
    let precise = pred_segs.iter().filter(|s| majority(s, gt)).count();
    let recall = if gt_segs.is_empty() { 0.0 } else { recalled as f64 / gt_segs.len() as f64 };
    let precision = if pred_segs.is_empty() { 0.0 } else { precise as f64 / pred_segs.len() as f64 };
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// MoF and mIoU pooled over all frames; F1 averaged over videos.
pub fn compute_metrics(pred: &[Vec<usize>], gt: &[Vec<usize>], ignore: Option<usize>) -> Result<MetricsReport> {
    check_lengths(pred, gt)?;
    let k = label_bound(pred).max(label_bound(gt));
    let mut inter = vec![0u64; k];
    let mut pred_count = vec![0u64; k];
    let mut gt_count = vec![0u64; k];
    let mut correct = 0u64;
    let mut frames = 0u64;
    for (p, g) in pred.iter().zip(gt) {
        for (&pl, &gl) in p.iter().zip(g) {
            if Some(gl) == ignore {
                continue;
            }
            frames += 1;
            pred_count[pl] += 1;
            gt_count[gl] += 1;
            if pl == gl {
                correct += 1;
                inter[pl] += 1;
            }
        }
    }
    if frames == 0 {
        return Err(ClotError::Input("no frames to evaluate".into()));
    }
    let per_class_iou: Vec<ClassIou> = (0..k)
        .filter(|&c| gt_count[c] > 0)
        .map(|c| ClassIou { label: c, iou: inter[c] as f64 / (pred_count[c] + gt_count[c] - inter[c]) as f64 })
        .collect();
    let miou = per_class_iou.iter().map(|c| c.iou).sum::<f64>() / per_class_iou.len() as f64;
    let scored: Vec<f64> = pred
        .iter()
        .zip(gt)
        .filter(|(_, g)| g.iter().any(|&l| Some(l) != ignore))
        .map(|(p, g)| video_f1(p, g, ignore))
        .collect();
    let f1 = scored.iter().sum::<f64>() / scored.len() as f64;
    Ok(MetricsReport { mof: correct as f64 / frames as f64, f1, miou, per_class_iou, frames: frames as usize })
}
