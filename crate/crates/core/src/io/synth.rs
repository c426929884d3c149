//! Synthetic segmentation datasets with known ground truth.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ClotError, Result};
use crate::eval::{run_length_encode, Segment};
use crate::numeric::{dot, DenseMatrix, Rng};

pub const MAX_PROTOTYPE_TRIES: usize = 100_000;
pub const MAX_PROTOTYPE_COSINE: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ordering {
    /// Every video performs the actions in one shared order.
    Fixed,
    /// Each video performs every action once, in its own random order.
    Permuted,
    /// Actions follow a shared random transition matrix without self-loops.
    Markov,
}

impl FromStr for Ordering {
    type Err = ClotError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(Self::Fixed),
            "permuted" => Ok(Self::Permuted),
            "markov" => Ok(Self::Markov),
            other => Err(ClotError::Config(format!("unknown ordering {other:?}; use fixed, permuted or markov"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub k_actions: usize,
    pub n_videos: usize,
    pub frames_per_video: usize,
    pub feature_dim: usize,
    pub noise_sigma: f64,
    pub min_segment: usize,
    /// 0 means no upper bound.
    pub max_segment: usize,
    pub ordering: Ordering,
    /// Share of each video covered by background (label `k_actions`).
    pub background_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            k_actions: 4,
            n_videos: 10,
            frames_per_video: 120,
            feature_dim: 16,
            noise_sigma: 0.1,
            min_segment: 8,
            max_segment: 0,
            ordering: Ordering::Permuted,
            background_fraction: 0.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ClotError::Config(m));
        if self.k_actions == 0 || self.n_videos == 0 || self.feature_dim == 0 {
            return bad("k_actions, n_videos and feature_dim must be positive".into());
        }
        if self.min_segment == 0 {
            return bad("min_segment must be at least 1".into());
        }
        if self.max_segment != 0 && self.max_segment < self.min_segment {
            return bad(format!("max_segment {} is below min_segment {}", self.max_segment, self.min_segment));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma must be a nonnegative number, got {}", self.noise_sigma));
        }
        if !(0.0..1.0).contains(&self.background_fraction) {
            return bad(format!("background_fraction must lie in [0, 1), got {}", self.background_fraction));
        }
        let action_frames = self.action_frames();
        let min_needed = match self.ordering {
            Ordering::Markov => self.min_segment,
            _ => self.k_actions * self.min_segment,
        };
        if action_frames < min_needed {
            return bad(format!(
                "{action_frames} action frames per video cannot hold segments of at least {} frames",
                self.min_segment
            ));
        }
        if self.max_segment != 0 && self.ordering != Ordering::Markov && action_frames > self.k_actions * self.max_segment {
            return bad(format!("{action_frames} action frames per video exceed {} actions × max_segment", self.k_actions));
        }
        Ok(())
    }

    fn background_frames(&self) -> usize {
        (self.background_fraction * self.frames_per_video as f64).round() as usize
    }

    fn action_frames(&self) -> usize {
        self.frames_per_video - self.background_frames()
    }

    /// Number of distinct labels, counting background.
    pub fn label_count(&self) -> usize {
        self.k_actions + usize::from(self.background_frames() > 0)
    }

    /// Parses `key = value` lines; keys are the field names.
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |m: String| ClotError::Config(format!("line {}: {m}", i + 1));
            let (key, raw) = line.split_once('=').ok_or_else(|| err(format!("expected key = value, found {line:?}")))?;
            let (key, raw) = (key.trim(), raw.trim());
            let count = || raw.parse::<usize>().map_err(|_| err(format!("{key}: expected a count, found {raw:?}")));
            let real = || raw.parse::<f64>().map_err(|_| err(format!("{key}: expected a number, found {raw:?}")));
            match key {
                "k_actions" => spec.k_actions = count()?,
                "n_videos" => spec.n_videos = count()?,
                "frames_per_video" => spec.frames_per_video = count()?,
                "feature_dim" => spec.feature_dim = count()?,
                "noise_sigma" => spec.noise_sigma = real()?,
                "min_segment" => spec.min_segment = count()?,
                "max_segment" => spec.max_segment = count()?,
                "ordering" => spec.ordering = raw.parse()?,
                "background_fraction" => spec.background_fraction = real()?,
                "seed" => spec.seed = raw.parse().map_err(|_| err(format!("seed: expected an integer, found {raw:?}")))?,
                other => return Err(err(format!("unknown key {other}"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticVideo {
    pub name: String,
    pub features: DenseMatrix,
    pub labels: Vec<usize>,
    /// The segment plan.
    pub segments: Vec<Segment>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDataset {
    pub spec: SyntheticSpec,
    /// One unit vector per label (background last), rounded to single
    /// precision so noise-free frames match them exactly on disk.
    pub prototypes: Vec<Vec<f64>>,
    pub videos: Vec<SyntheticVideo>,
}

/// What `manifest.json` records about a generated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: SyntheticSpec,
    pub prototypes: Vec<Vec<f64>>,
    pub videos: Vec<ManifestVideo>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestVideo {
    pub name: String,
    pub frames: usize,
    pub segments: Vec<Segment>,
}

impl SyntheticDataset {
    pub fn manifest(&self) -> Manifest {
        Manifest {
            spec: self.spec.clone(),
            prototypes: self.prototypes.clone(),
            videos: self
                .videos
                .iter()
                .map(|v| ManifestVideo { name: v.name.clone(), frames: v.labels.len(), segments: v.segments.clone() })
                .collect(),
        }
    }
}

pub fn video_name(i: usize) -> String {
    format!("video_{i:03}")
}

fn unit_vector(d: usize, rng: &mut Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-12 {
            return v.iter().map(|x| f64::from((x / norm) as f32)).collect();
        }
    }
}

/// Rejection-samples `k` unit vectors whose pairwise cosine is at most
/// [`MAX_PROTOTYPE_COSINE`].
pub fn sample_prototypes(k: usize, d: usize, rng: &mut Rng) -> Result<Vec<Vec<f64>>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut tries = 0;
    while out.len() < k {
        if tries == MAX_PROTOTYPE_TRIES {
            return Err(ClotError::Generation(format!(
                "could not place {k} prototypes in {d} dimensions with cosine <= {MAX_PROTOTYPE_COSINE} after {MAX_PROTOTYPE_TRIES} tries"
            )));
        }
        tries += 1;
        let v = unit_vector(d, rng);
        if out.iter().all(|p| dot(p, &v) / (dot(p, p) * dot(&v, &v)).sqrt() <= MAX_PROTOTYPE_COSINE) {
            out.push(v);
        }
    }
    Ok(out)
}

/// Splits `total` into `parts` lengths within `[lo, hi]` (`hi = 0` is
/// unbounded), handing out the surplus one frame at a time.
fn split_lengths(total: usize, parts: usize, lo: usize, hi: usize, rng: &mut Rng) -> Vec<usize> {
    let mut lens = vec![lo; parts];
    for _ in 0..total - lo * parts {
        let open: Vec<usize> = (0..parts).filter(|&i| hi == 0 || lens[i] < hi).collect();
        lens[open[rng.below(open.len())]] += 1;
    }
    lens
}

fn markov_plan(spec: &SyntheticSpec, transitions: &[Vec<f64>], rng: &mut Rng) -> Vec<(usize, usize)> {
    let total = spec.action_frames();
    let hi = if spec.max_segment == 0 { (2 * total / spec.k_actions).max(spec.min_segment) } else { spec.max_segment };
    let mut plan: Vec<(usize, usize)> = Vec::new();
    let mut used = 0;
    let mut action = rng.below(spec.k_actions);
    while used < total {
        let len = rng.range_inclusive(spec.min_segment, hi).min(total - used);
        match plan.last_mut() {
            // a short tail is folded into the previous segment
            Some(last) if len < spec.min_segment => last.1 += len,
            _ => plan.push((action, len)),
        }
        used += len;
        let u = rng.uniform();
        let mut acc = 0.0;
        let row = &transitions[action];
        action = row.iter().position(|&p| {
            acc += p;
            u < acc
        })
        .unwrap_or(row.iter().rposition(|&p| p > 0.0).unwrap_or(0));
    }
    plan
}

fn transition_matrix(k: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    (0..k)
        .map(|i| {
            let mut row: Vec<f64> = (0..k).map(|j| if i == j && k > 1 { 0.0 } else { rng.uniform() + 0.1 }).collect();
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= s);
            row
        })
        .collect()
}

/// Inserts `frames` of background (label `bg`) into the gaps around the
/// action segments.
fn add_background(plan: Vec<(usize, usize)>, frames: usize, bg: usize, rng: &mut Rng) -> Vec<(usize, usize)> {
    if frames == 0 {
        return plan;
    }
    let gaps = split_lengths(frames, plan.len() + 1, 0, 0, rng);
    let mut out = Vec::with_capacity(2 * plan.len() + 1);
    for (i, seg) in plan.into_iter().enumerate() {
        if gaps[i] > 0 {
            out.push((bg, gaps[i]));
        }
        out.push(seg);
    }
    if let Some(&g) = gaps.last().filter(|&&g| g > 0) {
        out.push((bg, g));
    }
    out
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let mut root = Rng::new(spec.seed);
    let labels_total = spec.label_count();
    let prototypes = sample_prototypes(labels_total, spec.feature_dim, &mut root.fork(1))?;
    let mut shared = root.fork(2);
    let mut fixed_order: Vec<usize> = (0..spec.k_actions).collect();
    shared.shuffle(&mut fixed_order);
    let transitions = transition_matrix(spec.k_actions, &mut shared);

    let mut videos = Vec::with_capacity(spec.n_videos);
    for v in 0..spec.n_videos {
        let mut rng = root.fork(100 + v as u64);
        let plan = match spec.ordering {
            Ordering::Markov => markov_plan(spec, &transitions, &mut rng),
            Ordering::Fixed | Ordering::Permuted => {
                let mut order = fixed_order.clone();
                if spec.ordering == Ordering::Permuted {
                    rng.shuffle(&mut order);
                }
                let lens = split_lengths(spec.action_frames(), spec.k_actions, spec.min_segment, spec.max_segment, &mut rng);
                order.into_iter().zip(lens).collect()
            }
        };
        let plan = add_background(plan, spec.background_frames(), spec.k_actions, &mut rng);
        let labels: Vec<usize> = plan.iter().flat_map(|&(l, n)| std::iter::repeat_n(l, n)).collect();
        debug_assert_eq!(labels.len(), spec.frames_per_video);
        let features = DenseMatrix::from_fn(labels.len(), spec.feature_dim, |i, j| {
            let base = prototypes[labels[i]][j];
            if spec.noise_sigma == 0.0 {
                base
            } else {
                base + spec.noise_sigma * rng.normal()
            }
        });
        videos.push(SyntheticVideo {
            name: video_name(v),
            segments: run_length_encode(&labels),
            features,
            labels,
        });
    }
    Ok(SyntheticDataset { spec: spec.clone(), prototypes, videos })
}
