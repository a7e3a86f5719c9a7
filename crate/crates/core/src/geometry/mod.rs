//! Token grids, mask plans and token-throwing strategies.

mod dispersion;
mod oracle;
mod sampling;
mod stats;

pub use dispersion::{
    brute_force_max_min, brute_force_select, dispersion_objective, isolation_rate,
    min_pairwise_distance, DistanceMatrix, SelectionVector, BRUTE_FORCE_LIMIT,
};
pub use oracle::{oracle_suite, OracleRow};
pub use sampling::{
    furthest_select, generate_mask, generate_mask_count, throw_furthest, throw_furthest_from,
    throw_random, throw_with, Strategy,
};
pub use stats::{sample_stats, SampleStat};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rectangular token grid; token `i` sits at `(i / cols, i % cols)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridShape {
    pub rows: usize,
    pub cols: usize,
}

impl GridShape {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Param(format!("grid must be non-empty, got {rows}x{cols}")));
        }
        Ok(GridShape { rows, cols })
    }

    pub fn square(side: usize) -> Result<Self> {
        Self::new(side, side)
    }

    pub fn n_tokens(&self) -> usize {
        self.rows * self.cols
    }

    pub fn coord(&self, token: usize) -> (usize, usize) {
        (token / self.cols, token % self.cols)
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }
}

/// Role of a token after masking and throwing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TokenLabel {
    /// Visible to the encoder (`x_u`).
    Unmasked,
    /// Masked and kept in the decoder sequence (`x_d`).
    Retained,
    /// Masked and dropped from the decoder sequence (`x_t`).
    Thrown,
}

/// Round-half-up token count for a ratio.
///
/// A tolerance of `1e-9` absorbs binary representation error, so that
/// e.g. `10 * 0.35` counts as the exact half `3.5` and rounds to 4.
pub fn token_count(n: usize, ratio: f64) -> usize {
    ((n as f64 * ratio) + 0.5 + 1e-9).floor() as usize
}

pub(crate) fn check_ratio(name: &str, value: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&value) {
        return Err(Error::Param(format!("{name} must lie in [0, 1], got {value}")));
    }
    Ok(())
}

/// Partition of a grid into unmasked, retained and thrown tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPlan {
    grid: GridShape,
    labels: Vec<TokenLabel>,
    rho_e: f64,
    rho_d: f64,
}

impl MaskPlan {
    /// Builds a plan from explicit labels; the ratios are recomputed from
    /// the label counts.
    pub fn from_labels(grid: GridShape, labels: Vec<TokenLabel>) -> Result<Self> {
        if labels.len() != grid.n_tokens() {
            return Err(Error::shape("mask plan", &[grid.rows, grid.cols], &[labels.len()]));
        }
        let n = grid.n_tokens() as f64;
        let masked = labels.iter().filter(|l| **l != TokenLabel::Unmasked).count() as f64;
        let thrown = labels.iter().filter(|l| **l == TokenLabel::Thrown).count() as f64;
        Ok(MaskPlan {
            grid,
            labels,
            rho_e: masked / n,
            rho_d: thrown / n,
        })
    }

    pub(crate) fn with_ratios(grid: GridShape, labels: Vec<TokenLabel>, rho_e: f64, rho_d: f64) -> Self {
        MaskPlan { grid, labels, rho_e, rho_d }
    }

    pub fn grid(&self) -> GridShape {
        self.grid
    }

    pub fn labels(&self) -> &[TokenLabel] {
        &self.labels
    }

    pub fn label(&self, token: usize) -> TokenLabel {
        self.labels[token]
    }

    pub fn rho_e(&self) -> f64 {
        self.rho_e
    }

    pub fn rho_d(&self) -> f64 {
        self.rho_d
    }

    fn indices(&self, pred: impl Fn(TokenLabel) -> bool) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| pred(self.labels[i])).collect()
    }

    /// `x_u`, ascending.
    pub fn unmasked(&self) -> Vec<usize> {
        self.indices(|l| l == TokenLabel::Unmasked)
    }

    /// `x_d`, ascending.
    pub fn retained(&self) -> Vec<usize> {
        self.indices(|l| l == TokenLabel::Retained)
    }

    /// `x_t`, ascending.
    pub fn thrown(&self) -> Vec<usize> {
        self.indices(|l| l == TokenLabel::Thrown)
    }

    /// `x_d ∪ x_t`, ascending.
    pub fn masked(&self) -> Vec<usize> {
        self.indices(|l| l != TokenLabel::Unmasked)
    }

    /// `x_u ∪ x_d`, ascending: the tokens present in the decoder sequence.
    pub fn kept(&self) -> Vec<usize> {
        self.indices(|l| l != TokenLabel::Thrown)
    }

    pub fn count(&self, label: TokenLabel) -> usize {
        self.labels.iter().filter(|l| **l == label).count()
    }

    /// The same mask with every thrown token returned to the decoder.
    pub fn without_throwing(&self) -> MaskPlan {
        let labels = self
            .labels
            .iter()
            .map(|l| match l {
                TokenLabel::Thrown => TokenLabel::Retained,
                other => *other,
            })
            .collect();
        MaskPlan::with_ratios(self.grid, labels, self.rho_e, 0.0)
    }
}
