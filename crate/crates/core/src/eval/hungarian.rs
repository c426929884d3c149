//! Linear assignment by the shortest augmenting path method with potentials.

use crate::error::{dim_err, ClotError, Result};
use crate::numeric::DenseMatrix;

/// Minimum-cost perfect matching on a square cost matrix.
///
/// Returns `perm` with `perm[row] = column`. Runs in O(k³).
pub fn hungarian(cost: &DenseMatrix) -> Result<Vec<usize>> {
    let (n, m) = cost.shape();
    if n != m {
        return dim_err(format!("assignment needs a square cost matrix, got {n}x{m}"));
    }
    if !cost.is_finite() {
        return Err(ClotError::Input("assignment cost contains non-finite entries".into()));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    // 1-based arrays; index 0 is the virtual source column
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut col0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let i0 = owner[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = col0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    col1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            col0 = col1;
            if owner[col0] == 0 {
                break;
            }
        }
        loop {
            let prev = way[col0];
            owner[col0] = owner[prev];
            col0 = prev;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0; n];
    for j in 1..=n {
        perm[owner[j] - 1] = j - 1;
    }
    Ok(perm)
}

pub fn assignment_cost(cost: &DenseMatrix, perm: &[usize]) -> f64 {
    perm.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Rng;
    use proptest::prelude::*;

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![Vec::new()];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    fn brute_force(cost: &DenseMatrix) -> f64 {
        permutations(cost.rows()).iter().map(|p| assignment_cost(cost, p)).fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn identity_dominant() {
        let c = DenseMatrix::from_fn(5, 5, |i, j| if i == j { 0.0 } else { 10.0 + (i * j) as f64 });
        assert_eq!(hungarian(&c).unwrap(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn matches_exhaustive_search_on_4x4() {
        let mut rng = Rng::new(77);
        for _ in 0..100 {
            let c = DenseMatrix::from_fn(4, 4, |_, _| rng.below(20) as f64);
            let p = hungarian(&c).unwrap();
            assert_eq!(assignment_cost(&c, &p), brute_force(&c));
        }
    }

    #[test]
    fn rejects_rectangular_and_nan() {
        assert!(matches!(hungarian(&DenseMatrix::zeros(2, 3)), Err(ClotError::Dimension(_))));
        let mut c = DenseMatrix::zeros(2, 2);
        c[(0, 1)] = f64::NAN;
        assert!(matches!(hungarian(&c), Err(ClotError::Input(_))));
        assert!(hungarian(&DenseMatrix::zeros(0, 0)).unwrap().is_empty());
    }

    proptest! {
        #[test]
        fn row_shift_keeps_the_optimum(seed in 0u64..10_000, n in 1usize..7) {
            let mut rng = Rng::new(seed);
            let c = DenseMatrix::from_fn(n, n, |_, _| rng.below(50) as f64);
            let shifts: Vec<f64> = (0..n).map(|_| rng.below(100) as f64).collect();
            let shifted = DenseMatrix::from_fn(n, n, |i, j| c[(i, j)] + shifts[i]);
            let p = hungarian(&c).unwrap();
            let q = hungarian(&shifted).unwrap();
            prop_assert_eq!(assignment_cost(&c, &p), assignment_cost(&c, &q));
            prop_assert_eq!(assignment_cost(&c, &p), brute_force(&c));
            let mut sorted = p.clone();
            sorted.sort();
            prop_assert_eq!(sorted, (0..n).collect::<Vec<_>>());
        }
    }
}
