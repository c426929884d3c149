//! Lloyd's k-means with k-means++ seeding.

use super::matrix::DenseMatrix;
use super::rng::Rng;
use crate::error::{param_err, Result};

#[derive(Clone, Debug)]
pub struct KMeansResult {
    pub centroids: DenseMatrix,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    /// Inertia after every assignment pass, starting with the seeding.
    pub history: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn seed_plus_plus(points: &DenseMatrix, k: usize, rng: &mut Rng) -> DenseMatrix {
    let n = points.rows();
    let mut centroids = DenseMatrix::zeros(k, points.cols());
    let first = rng.below(n);
    centroids.row_mut(0).copy_from_slice(points.row(first));
    let mut nearest: Vec<f64> = points.row_iter().map(|p| sq_dist(p, points.row(first))).collect();
    for c in 1..k {
        let total: f64 = nearest.iter().sum();
        let pick = if total <= 0.0 {
            // every point coincides with a chosen centroid
            rng.below(n)
        } else {
            let mut target = rng.uniform() * total;
            let mut pick = n - 1;
            for (i, &d) in nearest.iter().enumerate() {
                if target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        };
        centroids.row_mut(c).copy_from_slice(points.row(pick));
        for (i, p) in points.row_iter().enumerate() {
            nearest[i] = nearest[i].min(sq_dist(p, centroids.row(c)));
        }
    }
    centroids
}

/// Assigns every point to its nearest centroid. Returns (changed, inertia).
fn assign(points: &DenseMatrix, centroids: &DenseMatrix, labels: &mut [usize], dists: &mut [f64]) -> (bool, f64) {
    let mut changed = false;
    let mut inertia = 0.0;
    for (i, p) in points.row_iter().enumerate() {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (c, centroid) in centroids.row_iter().enumerate() {
            let d = sq_dist(p, centroid);
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        if labels[i] != best {
            changed = true;
            labels[i] = best;
        }
        dists[i] = best_d;
        inertia += best_d;
    }
    (changed, inertia)
}

pub fn kmeans(points: &DenseMatrix, k: usize, rng: &mut Rng, max_iter: usize) -> Result<KMeansResult> {
    let n = points.rows();
    if k == 0 {
        return param_err("k-means needs k >= 1");
    }
    if n < k {
        return param_err(format!("k-means with k={k} needs at least {k} points, got {n}"));
    }
    let d = points.cols();
    let mut centroids = seed_plus_plus(points, k, rng);
    let mut labels = vec![usize::MAX; n];
    let mut dists = vec![0.0; n];
    let (_, inertia) = assign(points, &centroids, &mut labels, &mut dists);
    let mut history = vec![inertia];

    for _ in 0..max_iter {
        let mut sums = DenseMatrix::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (i, p) in points.row_iter().enumerate() {
            counts[labels[i]] += 1;
            for (s, &v) in sums.row_mut(labels[i]).iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut taken: Vec<usize> = Vec::new();
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for (dst, &s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s * inv;
                }
            } else {
                // empty cluster: move it onto the worst-served point
                let far = (0..n)
                    .filter(|i| !taken.contains(i))
                    .fold(None, |best: Option<usize>, i| match best {
                        Some(b) if dists[b] >= dists[i] => Some(b),
                        _ => Some(i),
                    })
                    .unwrap_or(0);
                taken.push(far);
                centroids.row_mut(c).copy_from_slice(points.row(far));
                dists[far] = 0.0;
            }
        }
        let (changed, inertia) = assign(points, &centroids, &mut labels, &mut dists);
        history.push(inertia);
        if !changed {
            break;
        }
    }

    Ok(KMeansResult { centroids, assignments: labels, inertia: *history.last().unwrap(), history })
}

/// Best of `restarts` independent runs by final inertia (earliest run wins
/// ties).
pub fn kmeans_best_of(points: &DenseMatrix, k: usize, rng: &mut Rng, max_iter: usize, restarts: usize) -> Result<KMeansResult> {
    let mut best = kmeans(points, k, &mut rng.fork(0), max_iter)?;
    for r in 1..restarts.max(1) {
        let run = kmeans(points, k, &mut rng.fork(r as u64), max_iter)?;
        if run.inertia < best.inertia {
            best = run;
        }
    }
    Ok(best)
}
