use rand::seq::index;
use rand::Rng as _;
use serde::Serialize;

use super::{
    brute_force_max_min, brute_force_select, dispersion_objective, furthest_select,
    generate_mask_count, min_pairwise_distance, token_count, DistanceMatrix, GridShape, SelectionVector,
};
use crate::error::Result;
use crate::exec::Exec;
use crate::rng;

/// Greedy furthest sampling against exhaustive and random baselines on
/// one small instance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleRow {
    pub instance: usize,
    pub rows: usize,
    pub cols: usize,
    pub n_masked: usize,
    pub retain: usize,
    pub feasible: bool,
    pub greedy_objective: f64,
    pub optimal_objective: f64,
    pub random_median: f64,
    pub greedy_min_dist: f64,
    pub optimal_min_dist: f64,
}

impl OracleRow {
    pub fn beats_random_median(&self) -> bool {
        self.greedy_objective >= self.random_median
    }

    /// Greedy min pairwise distance over the exhaustive max-min optimum.
    pub fn min_dist_ratio(&self) -> f64 {
        self.greedy_min_dist / self.optimal_min_dist
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Masking ratio and throw ratios that set the retained fraction of the
/// oracle instances.
const MASK_RATIO: f64 = 0.75;
const THROW_RATIOS: [f64; 3] = [0.25, 0.5, 0.65];

/// Random instances with at most `max_masked` masked tokens on grids from
/// 3×3 to 6×6.
///
/// Each instance retains the share of its masked tokens that a throw
/// ratio drawn from `THROW_RATIOS` would keep at `MASK_RATIO`, clamped so
/// that at least two tokens are retained and one is thrown.
pub fn oracle_suite(
    instances: usize,
    max_masked: usize,
    random_draws: usize,
    seed: u64,
    exec: Exec,
) -> Result<Vec<OracleRow>> {
    exec.try_map(instances, |k| {
        let mut r = rng::rng(rng::derive(seed, &[k as u64]));
        let rows = r.random_range(3..=6);
        let cols = r.random_range(3..=6);
        let grid = GridShape::new(rows, cols)?;
        let n_masked = r.random_range(3..=max_masked.max(3).min(grid.n_tokens()));
        let rho_d = THROW_RATIOS[r.random_range(0..THROW_RATIOS.len())];
        let retain = token_count(n_masked, (MASK_RATIO - rho_d) / MASK_RATIO).clamp(2, n_masked - 1);
        let plan = generate_mask_count(grid, n_masked, r.random())?;
        let d = DistanceMatrix::from_plan(&plan)?;

        let first = r.random_range(0..n_masked);
        let greedy = furthest_select(&d, retain, first)?;
        let feasible = greedy.retained_count() == retain;
        let greedy_objective = dispersion_objective(&d, &greedy, retain)?;
        let (_, optimal_objective) = brute_force_select(&d, retain)?;
        let (_, optimal_min_dist) = brute_force_max_min(&d, retain)?;

        let draws: Vec<f64> = (0..random_draws)
            .map(|_| {
                let pick: Vec<usize> = index::sample(&mut r, n_masked, retain).into_vec();
                let s = SelectionVector::from_indices(n_masked, &pick);
                dispersion_objective(&d, &s, retain)
            })
            .collect::<Result<_>>()?;

        Ok(OracleRow {
            instance: k,
            rows,
            cols,
            n_masked,
            retain,
            feasible,
            greedy_objective,
            optimal_objective,
            random_median: median(draws),
            greedy_min_dist: min_pairwise_distance(&d, &greedy).unwrap_or(0.0),
            optimal_min_dist,
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn rows_are_consistent() {
        let rows = oracle_suite(10, 12, 50, 1, Exec::Parallel).unwrap();
        for row in rows {
            assert!(row.feasible);
            assert!(row.n_masked <= 12);
            assert!(row.optimal_objective >= row.greedy_objective);
            assert!(row.optimal_min_dist >= row.greedy_min_dist);
        }
    }
}
