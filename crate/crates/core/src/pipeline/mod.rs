//! Training and inference: the closed loop of encoder, transport solves and
//! prediction heads.

mod config;
mod infer;
mod persist;
mod stages;
mod train;

pub use config::{TrainConfig, TrainMode};
pub use infer::{infer, DecodeSource, SegmentationResult};
pub use persist::{get_trained, load_models, model_prefixes, models_from_checkpoint, models_to_checkpoint, put_trained, save_models};
pub use stages::{solve_frame_stage, solve_refined_stage, solve_segment_stage, solve_stages, StageCouplings};
pub use train::{init_actions, init_model, train, train_step, StepLog, StepLosses, TrainedModel};

use crate::error::Result;
use crate::numeric::Rng;

/// Picks `n_target` frames out of `n`, one per equal-width interval.
///
/// With an rng the frame is drawn uniformly inside its interval, otherwise
/// the interval midpoint `⌊(2k+1)·n/(2·n_target)⌋` is used. Short videos
/// (`n <= n_target`) keep every frame.
pub fn subsample(n: usize, n_target: usize, rng: Option<&mut Rng>) -> Vec<usize> {
    if n <= n_target || n_target == 0 {
        return (0..n).collect();
    }
    match rng {
        None => (0..n_target).map(|k| (2 * k + 1) * n / (2 * n_target)).collect(),
        Some(rng) => (0..n_target)
            .map(|k| {
                let lo = k * n / n_target;
                let hi = (k + 1) * n / n_target;
                lo + rng.below(hi - lo)
            })
            .collect(),
    }
}

/// Number of worker threads for a `threads` setting; 0 means all cores.
pub fn worker_count(threads: usize) -> usize {
    if threads > 0 {
        return threads;
    }
    std::thread::available_parallelism().map_or(1, usize::from)
}

/// Evaluates `f(0..n)` on up to `threads` scoped workers and returns the
/// results in index order, so the outcome never depends on scheduling.
pub fn parallel_map<T, F>(n: usize, threads: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let workers = worker_count(threads).min(n);
    if workers <= 1 {
        return (0..n).map(&f).collect();
    }
    let mut slots: Vec<Option<Result<T>>> = (0..n).map(|_| None).collect();
    let chunk = n.div_ceil(workers);
    std::thread::scope(|scope| {
        for (w, part) in slots.chunks_mut(chunk).enumerate() {
            let f = &f;
            scope.spawn(move || {
                for (j, slot) in part.iter_mut().enumerate() {
                    *slot = Some(f(w * chunk + j));
                }
            });
        }
    });
    slots.into_iter().map(|s| s.expect("every slot is filled")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Rng;
    use proptest::prelude::*;

    #[test]
    fn midpoint_rule() {
        assert_eq!(subsample(10, 5, None), vec![1, 3, 5, 7, 9]);
        assert_eq!(subsample(7, 7, None), (0..7).collect::<Vec<_>>());
        assert_eq!(subsample(3, 256, Some(&mut Rng::new(0))), vec![0, 1, 2]);
    }

    proptest! {
        #[test]
        fn random_picks_stay_in_their_interval(n in 1usize..400, m in 1usize..64, seed in any::<u64>()) {
            let idx = subsample(n, m, Some(&mut Rng::new(seed)));
            prop_assert_eq!(idx.len(), n.min(m));
            prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(idx.iter().all(|&i| i < n));
            if n > m {
                for (k, &i) in idx.iter().enumerate() {
                    prop_assert!(i >= k * n / m && i < (k + 1) * n / m);
                }
            }
        }
    }

    #[test]
    fn parallel_map_keeps_order_and_errors() {
        let out = parallel_map(10, 3, |i| Ok(i * i)).unwrap();
        assert_eq!(out, (0..10).map(|i| i * i).collect::<Vec<_>>());
        let err = parallel_map(5, 2, |i| if i == 3 { crate::error::param_err("boom") } else { Ok(i) });
        assert!(err.is_err());
    }
}
