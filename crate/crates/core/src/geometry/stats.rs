use serde::Serialize;

use super::{
    dispersion_objective, generate_mask, isolation_rate, min_pairwise_distance, throw_with,
    DistanceMatrix, GridShape, SelectionVector, Strategy,
};
use crate::error::Result;
use crate::exec::Exec;
use crate::rng;

/// Dispersion and isolation of one masked-and-thrown plan.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleStat {
    pub strategy: Strategy,
    pub seed: u64,
    pub objective: f64,
    pub min_dist: Option<f64>,
    pub isolation_rate: f64,
}

/// Masks and throws one plan per seed in `seeds` and measures it.
///
/// Seed `s` drives the mask through stream `derive(s, [0])` and the throw
/// through `derive(s, [1])`, so both strategies see the same masks.
pub fn sample_stats(
    grid: GridShape,
    rho_e: f64,
    rho_d: f64,
    strategy: Strategy,
    seeds: &[u64],
    window: usize,
    exec: Exec,
) -> Result<Vec<SampleStat>> {
    exec.try_map(seeds.len(), |k| {
        let seed = seeds[k];
        let mask = generate_mask(grid, rho_e, rng::derive(seed, &[0]))?;
        let plan = throw_with(strategy, &mask, rho_d, rng::derive(seed, &[1]))?;
        let d = DistanceMatrix::from_plan(&plan)?;
        let s = SelectionVector::from_plan(&plan);
        Ok(SampleStat {
            strategy,
            seed,
            objective: dispersion_objective(&d, &s, s.retained_count())?,
            min_dist: min_pairwise_distance(&d, &s),
            isolation_rate: isolation_rate(&plan, window)?,
        })
    })
}
