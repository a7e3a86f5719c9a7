use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{check_ratio, token_count, DistanceMatrix, GridShape, MaskPlan, SelectionVector, TokenLabel};
use crate::error::{Error, Result};
use crate::rng;

/// How masked tokens are chosen for throwing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Random,
    Furthest,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::Furthest => "furthest",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Strategy::Random),
            "furthest" => Ok(Strategy::Furthest),
            other => Err(Error::Param(format!("unknown sampling strategy {other:?}"))),
        }
    }
}

/// Masks `round(N * rho_e)` tokens uniformly without replacement.
/// Every masked token starts out retained.
pub fn generate_mask(grid: GridShape, rho_e: f64, seed: u64) -> Result<MaskPlan> {
    check_ratio("rho_e", rho_e)?;
    let n_masked = token_count(grid.n_tokens(), rho_e);
    let mut plan = generate_mask_count(grid, n_masked, seed)?;
    plan.rho_e = rho_e;
    Ok(plan)
}

/// Masks exactly `n_masked` tokens uniformly without replacement.
pub fn generate_mask_count(grid: GridShape, n_masked: usize, seed: u64) -> Result<MaskPlan> {
    let n = grid.n_tokens();
    if n_masked > n {
        return Err(Error::Param(format!("cannot mask {n_masked} of {n} tokens")));
    }
    let mut rng = rng::rng(seed);
    let mut labels = vec![TokenLabel::Unmasked; n];
    for i in index::sample(&mut rng, n, n_masked) {
        labels[i] = TokenLabel::Retained;
    }
    Ok(MaskPlan::with_ratios(grid, labels, n_masked as f64 / n as f64, 0.0))
}

fn throw_count(plan: &MaskPlan, rho_d: f64) -> Result<usize> {
    check_ratio("rho_d", rho_d)?;
    if rho_d > plan.rho_e() + 1e-12 {
        return Err(Error::Param(format!(
            "throwing ratio rho_d = {rho_d} exceeds masking ratio rho_e = {}",
            plan.rho_e()
        )));
    }
    let n_thrown = token_count(plan.grid().n_tokens(), rho_d);
    Ok(n_thrown.min(plan.masked().len()))
}

fn apply_selection(plan: &MaskPlan, masked: &[usize], s: &SelectionVector, rho_d: f64) -> MaskPlan {
    let mut labels = plan.without_throwing().labels().to_vec();
    for (k, &tok) in masked.iter().enumerate() {
        labels[tok] = if s.is_retained(k) { TokenLabel::Retained } else { TokenLabel::Thrown };
    }
    MaskPlan::with_ratios(plan.grid(), labels, plan.rho_e(), rho_d)
}

/// Throws `round(N * rho_d)` masked tokens chosen uniformly at random.
///
/// Any previous throwing in `plan` is discarded first.
pub fn throw_random(plan: &MaskPlan, rho_d: f64, seed: u64) -> Result<MaskPlan> {
    let n_thrown = throw_count(plan, rho_d)?;
    let masked = plan.masked();
    let mut rng = rng::rng(seed);
    let mut keep = vec![true; masked.len()];
    for k in index::sample(&mut rng, masked.len(), n_thrown) {
        keep[k] = false;
    }
    Ok(apply_selection(plan, &masked, &SelectionVector::new(keep), rho_d))
}

/// Throws `round(N * rho_d)` masked tokens, retaining the rest by greedy
/// farthest-point selection started from a uniformly random masked token.
pub fn throw_furthest(plan: &MaskPlan, rho_d: f64, seed: u64) -> Result<MaskPlan> {
    let masked = plan.masked();
    if masked.is_empty() {
        return throw_furthest_from(plan, rho_d, 0);
    }
    let first = rng::rng(seed).random_range(0..masked.len());
    throw_furthest_from(plan, rho_d, first)
}

/// [`throw_furthest`] with the first retained token fixed to position
/// `first` in the ascending list of masked tokens.
pub fn throw_furthest_from(plan: &MaskPlan, rho_d: f64, first: usize) -> Result<MaskPlan> {
    let n_thrown = throw_count(plan, rho_d)?;
    let masked = plan.masked();
    if masked.is_empty() {
        return Ok(apply_selection(plan, &masked, &SelectionVector::new(vec![]), rho_d));
    }
    let d = DistanceMatrix::from_plan(plan)?;
    let s = furthest_select(&d, masked.len() - n_thrown, first)?;
    Ok(apply_selection(plan, &masked, &s, rho_d))
}

/// Dispatches to [`throw_random`] or [`throw_furthest`].
pub fn throw_with(strategy: Strategy, plan: &MaskPlan, rho_d: f64, seed: u64) -> Result<MaskPlan> {
    match strategy {
        Strategy::Random => throw_random(plan, rho_d, seed),
        Strategy::Furthest => throw_furthest(plan, rho_d, seed),
    }
}

/// Greedy farthest-point selection of `retain` tokens.
///
/// Starts from `first`, then repeatedly retains the token whose distance
/// to the nearest retained token is largest. Ties go to the lowest index.
pub fn furthest_select(d: &DistanceMatrix, retain: usize, first: usize) -> Result<SelectionVector> {
    let n = d.len();
    if retain > n {
        return Err(Error::Param(format!("cannot retain {retain} of {n} tokens")));
    }
    let mut keep = vec![false; n];
    if retain == 0 {
        return Ok(SelectionVector::new(keep));
    }
    if first >= n {
        return Err(Error::Param(format!("first pick {first} out of range for {n} tokens")));
    }
    keep[first] = true;
    let mut nearest: Vec<f64> = (0..n).map(|j| d.get(first, j)).collect();
    for _ in 1..retain {
        let mut best: Option<usize> = None;
        for j in 0..n {
            if keep[j] {
                continue;
            }
            if best.is_none_or(|b| nearest[j] > nearest[b]) {
                best = Some(j);
            }
        }
        let pick = best.expect("retain <= n leaves a candidate");
        keep[pick] = true;
        for j in 0..n {
            nearest[j] = nearest[j].min(d.get(pick, j));
        }
    }
    Ok(SelectionVector::new(keep))
}

#[cfg(test)]
mod tests {
    use super::*;
    use TokenLabel::*;

    #[test]
    fn mask_counts_and_determinism() {
        let g = GridShape::square(14).unwrap();
        let p = generate_mask(g, 0.75, 3).unwrap();
        assert_eq!(p.masked().len(), 147);
        assert_eq!(p.count(Thrown), 0);
        assert_eq!(p, generate_mask(g, 0.75, 3).unwrap());
        assert_ne!(p, generate_mask(g, 0.75, 4).unwrap());

        let g = GridShape::square(2).unwrap();
        assert_eq!(generate_mask(g, 0.5, 0).unwrap().masked().len(), 2);
        assert!(generate_mask(g, 1.5, 0).is_err());
    }

    #[test]
    fn throw_random_counts() {
        let g = GridShape::square(14).unwrap();
        let p = generate_mask(g, 0.75, 1).unwrap();
        assert_eq!(throw_random(&p, 0.0, 9).unwrap(), p);
        let t = throw_random(&p, 0.5, 9).unwrap();
        assert_eq!(t.thrown().len(), 98);
        assert_eq!(t.retained().len(), 49);
        assert_eq!(t.unmasked(), p.unmasked());
        assert!(matches!(throw_random(&p, 0.8, 9), Err(Error::Param(_))));
    }

    #[test]
    fn throw_counts_hold_over_seeds() {
        let g = GridShape::new(7, 9).unwrap();
        for seed in 0..100 {
            let p = generate_mask(g, 0.6, seed).unwrap();
            for strategy in [Strategy::Random, Strategy::Furthest] {
                let t = throw_with(strategy, &p, 0.4, seed + 1000).unwrap();
                assert_eq!(t.count(Retained) + t.count(Thrown), token_count(63, 0.6));
                assert_eq!(t.count(Thrown), token_count(63, 0.4));
                assert_eq!(t.unmasked(), p.unmasked());
            }
        }
    }

    #[test]
    fn furthest_collinear_picks_endpoints() {
        let g = GridShape::new(1, 4).unwrap();
        let p = MaskPlan::from_labels(g, vec![Retained; 4]).unwrap();
        let t = throw_furthest_from(&p, 0.5, 0).unwrap();
        assert_eq!(t.retained(), vec![0, 3]);
    }

    #[test]
    fn furthest_square_picks_diagonal() {
        let g = GridShape::square(2).unwrap();
        let p = MaskPlan::from_labels(g, vec![Retained; 4]).unwrap();
        let t = throw_furthest_from(&p, 0.5, 0).unwrap();
        assert_eq!(t.retained(), vec![0, 3]);
    }

    #[test]
    fn furthest_ties_go_to_lowest_index() {
        // From the centre of a 3x3 grid all four corners tie.
        let g = GridShape::square(3).unwrap();
        let p = MaskPlan::from_labels(g, vec![Retained; 9]).unwrap();
        let t = throw_furthest_from(&p, 7.0 / 9.0, 4).unwrap();
        assert_eq!(t.retained(), vec![0, 4]);
    }

    #[test]
    fn throwing_everything_and_nothing() {
        let g = GridShape::square(4).unwrap();
        let p = generate_mask(g, 0.5, 2).unwrap();
        let all = throw_furthest(&p, 0.5, 1).unwrap();
        assert_eq!(all.count(Retained), 0);
        assert_eq!(all.count(Thrown), 8);
        let none = throw_furthest(&p, 0.0, 1).unwrap();
        assert_eq!(none.count(Retained), 8);
    }
}
