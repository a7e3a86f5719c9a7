use itertools::Itertools;

use super::{MaskPlan, TokenLabel};
use crate::error::{Error, Result};

/// Largest number of subsets the exhaustive searches will enumerate.
pub const BRUTE_FORCE_LIMIT: u128 = 1_000_000;

/// Pairwise Euclidean distances between masked tokens on the integer grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    coords: Vec<(usize, usize)>,
    d: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_coords(coords: Vec<(usize, usize)>) -> Self {
        let n = coords.len();
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let dr = coords[i].0 as f64 - coords[j].0 as f64;
                let dc = coords[i].1 as f64 - coords[j].1 as f64;
                d[i * n + j] = (dr * dr + dc * dc).sqrt();
            }
        }
        DistanceMatrix { coords, d }
    }

    /// Distances over the plan's masked tokens in ascending token order.
    pub fn from_plan(plan: &MaskPlan) -> Result<Self> {
        let masked = plan.masked();
        if masked.is_empty() {
            return Err(Error::Param("distance matrix needs at least one masked token".into()));
        }
        Ok(Self::from_coords(masked.iter().map(|&t| plan.grid().coord(t)).collect()))
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.coords.len() + j]
    }

    pub fn coords(&self) -> &[(usize, usize)] {
        &self.coords
    }
}

/// Retain/throw decision per masked token (`true` = retained in `x_d`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionVector(Vec<bool>);

impl SelectionVector {
    pub fn new(retained: Vec<bool>) -> Self {
        SelectionVector(retained)
    }

    pub fn from_indices(len: usize, retained: &[usize]) -> Self {
        let mut s = vec![false; len];
        for &i in retained {
            s[i] = true;
        }
        SelectionVector(s)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_retained(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn retained_count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn retained_indices(&self) -> Vec<usize> {
        (0..self.0.len()).filter(|&i| self.0[i]).collect()
    }

    /// Selection induced by a plan's masked tokens.
    pub fn from_plan(plan: &MaskPlan) -> Self {
        SelectionVector(
            plan.masked()
                .into_iter()
                .map(|t| plan.label(t) == TokenLabel::Retained)
                .collect(),
        )
    }
}

fn pair_sum(d: &DistanceMatrix, idx: &[usize]) -> f64 {
    let mut total = 0.0;
    for &i in idx {
        for &j in idx {
            total += d.get(i, j);
        }
    }
    total
}

/// Sum of `D_ij` over ordered pairs of retained tokens (each unordered
/// pair counts twice). `s` must retain exactly `retain` tokens.
pub fn dispersion_objective(d: &DistanceMatrix, s: &SelectionVector, retain: usize) -> Result<f64> {
    if s.len() != d.len() {
        return Err(Error::Constraint(format!(
            "selection has {} entries for {} masked tokens",
            s.len(),
            d.len()
        )));
    }
    if s.retained_count() != retain {
        return Err(Error::Constraint(format!(
            "selection retains {} tokens, expected {retain}",
            s.retained_count()
        )));
    }
    Ok(pair_sum(d, &s.retained_indices()))
}

/// Smallest distance between two retained tokens; `None` with fewer than two.
pub fn min_pairwise_distance(d: &DistanceMatrix, s: &SelectionVector) -> Option<f64> {
    s.retained_indices()
        .into_iter()
        .tuple_combinations()
        .map(|(i, j)| d.get(i, j))
        .reduce(f64::min)
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

fn exhaustive(
    d: &DistanceMatrix,
    retain: usize,
    score: impl Fn(&[usize]) -> f64,
) -> Result<(SelectionVector, f64)> {
    let n = d.len();
    if retain > n {
        return Err(Error::Param(format!("cannot retain {retain} of {n} tokens")));
    }
    let count = binomial(n, retain);
    if count > BRUTE_FORCE_LIMIT {
        return Err(Error::Size(format!(
            "C({n}, {retain}) = {count} subsets exceeds the limit of {BRUTE_FORCE_LIMIT}"
        )));
    }
    // Lexicographic enumeration with a strict improvement test keeps the
    // lexicographically smallest optimum.
    let mut best: Option<(Vec<usize>, f64)> = None;
    for combo in (0..n).combinations(retain) {
        let v = score(&combo);
        if best.as_ref().is_none_or(|(_, b)| v > *b) {
            best = Some((combo, v));
        }
    }
    let (idx, v) = best.expect("at least one subset");
    Ok((SelectionVector::from_indices(n, &idx), v))
}

/// Exhaustive maximiser of [`dispersion_objective`].
pub fn brute_force_select(d: &DistanceMatrix, retain: usize) -> Result<(SelectionVector, f64)> {
    exhaustive(d, retain, |idx| pair_sum(d, idx))
}

/// Exhaustive maximiser of the minimum pairwise retained distance.
pub fn brute_force_max_min(d: &DistanceMatrix, retain: usize) -> Result<(SelectionVector, f64)> {
    if retain < 2 {
        return Err(Error::Param("max-min dispersion needs at least two retained tokens".into()));
    }
    exhaustive(d, retain, |idx| {
        idx.iter()
            .tuple_combinations()
            .map(|(&i, &j)| d.get(i, j))
            .fold(f64::INFINITY, f64::min)
    })
}

/// Fraction of thrown tokens with no unmasked or retained token in their
/// `window×window` neighbourhood (centre excluded, clipped at the border).
pub fn isolation_rate(plan: &MaskPlan, window: usize) -> Result<f64> {
    if window < 3 || window.is_multiple_of(2) {
        return Err(Error::Param(format!("isolation window must be odd and >= 3, got {window}")));
    }
    let grid = plan.grid();
    let thrown = plan.thrown();
    if thrown.is_empty() {
        return Ok(0.0);
    }
    let half = window / 2;
    let isolated = thrown
        .iter()
        .filter(|&&t| {
            let (r, c) = grid.coord(t);
            let rows = r.saturating_sub(half)..=(r + half).min(grid.rows - 1);
            !rows.into_iter().any(|rr| {
                let cols = c.saturating_sub(half)..=(c + half).min(grid.cols - 1);
                cols.into_iter().any(|cc| {
                    (rr, cc) != (r, c) && plan.label(grid.index(rr, cc)) != TokenLabel::Thrown
                })
            })
        })
        .count();
    Ok(isolated as f64 / thrown.len() as f64)
}
