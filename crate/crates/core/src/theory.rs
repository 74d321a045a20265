//! Plug-in information estimators and the prediction-error bound check.
//!
//! Counts over `(question class, plan class, predicted answer, true answer)`
//! tuples yield plug-in estimates of `H(y)` and the conditional mutual
//! information `I(yhat; y | q, t)`, all in bits. The checked bound is
//!
//! ```text
//! p_error <= 1/2 [ H(y) - I(yhat; y | t, q) ]
//! ```
//!
//! which rests on the m-class inequality `1 - p_max <= H/2`. That inequality
//! is a bits-only fact: for the uniform binary distribution both sides equal
//! 1/2 in bits, while in nats the right side is ~0.347 and the inequality
//! fails. Entropy base 2 is therefore load-bearing, not cosmetic.

use crate::error::{CoreError, Result};
use crate::vocab::TokenId;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Observed answer class: a decoded value or a missing/undecodable answer.
pub type AnswerClass = Option<u64>;

/// Count table over `(q-class, t-class, yhat, y)`. Classes are the exact
/// token sequences, which are enumerable at this scale, so the plug-in
/// estimators need no binning.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct JointCounts {
    counts: BTreeMap<(Vec<TokenId>, Vec<TokenId>, AnswerClass, u64), u64>,
    total: u64,
}

impl JointCounts {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, question: &[TokenId], plan: &[TokenId], yhat: AnswerClass, y: u64) {
        *self
            .counts
            .entry((question.to_vec(), plan.to_vec(), yhat, y))
            .or_insert(0) += 1;
        self.total += 1;
    }

    /// Merges another table into this one; supports concurrent partial
    /// accumulation followed by a deterministic reduce.
    pub fn merge(&mut self, other: &JointCounts) {
        for (key, &c) in &other.counts {
            *self.counts.entry(key.clone()).or_insert(0) += c;
        }
        self.total += other.total;
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// Marginal distribution of the true answer y.
    pub fn y_marginal(&self) -> Vec<f64> {
        let mut by_y: BTreeMap<u64, u64> = BTreeMap::new();
        for ((_, _, _, y), &c) in &self.counts {
            *by_y.entry(*y).or_insert(0) += c;
        }
        by_y.values()
            .map(|&c| c as f64 / self.total as f64)
            .collect()
    }

    /// Empirical error fraction `P(yhat != y)`; an absent yhat counts as an
    /// error.
    pub fn p_error(&self) -> f64 {
        let wrong: u64 = self
            .counts
            .iter()
            .filter(|((_, _, yhat, y), _)| *yhat != Some(*y))
            .map(|(_, &c)| c)
            .sum();
        wrong as f64 / self.total as f64
    }
}

/// Shannon entropy in bits with `0 log 0 = 0`. Rejects negative entries and
/// distributions whose mass is not 1 within 1e-9.
pub fn entropy_bits(distribution: &[f64]) -> Result<f64> {
    let mut sum = 0.0;
    for &p in distribution {
        if p < 0.0 {
            return Err(CoreError::InvalidDistribution(format!(
                "negative probability {p}"
            )));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > 1e-9 {
        return Err(CoreError::InvalidDistribution(format!(
            "probabilities sum to {sum}, not 1"
        )));
    }
    Ok(-distribution
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.log2())
        .sum::<f64>())
}

/// Plug-in conditional mutual information `I(yhat; y | q, t)` in bits.
pub fn conditional_mutual_information(counts: &JointCounts) -> f64 {
    assert!(counts.total > 0, "empty count table");
    let n = counts.total as f64;

    // Group by (q, t) class and compute the inner MI of each class.
    type ClassCells<'a> = BTreeMap<(&'a [TokenId], &'a [TokenId]), Vec<(AnswerClass, u64, u64)>>;
    let mut classes: ClassCells = BTreeMap::new();
    for ((q, t, yhat, y), &c) in &counts.counts {
        classes
            .entry((q.as_slice(), t.as_slice()))
            .or_default()
            .push((*yhat, *y, c));
    }

    let mut cmi = 0.0;
    for cells in classes.values() {
        let class_total: u64 = cells.iter().map(|(_, _, c)| c).sum();
        let ct = class_total as f64;
        let mut yhat_marg: BTreeMap<AnswerClass, u64> = BTreeMap::new();
        let mut y_marg: BTreeMap<u64, u64> = BTreeMap::new();
        for (yhat, y, c) in cells {
            *yhat_marg.entry(*yhat).or_insert(0) += c;
            *y_marg.entry(*y).or_insert(0) += c;
        }
        let mut inner = 0.0;
        for (yhat, y, c) in cells {
            let p_xy = *c as f64 / ct;
            let p_x = yhat_marg[yhat] as f64 / ct;
            let p_y = y_marg[y] as f64 / ct;
            inner += p_xy * (p_xy / (p_x * p_y)).log2();
        }
        cmi += (ct / n) * inner;
    }
    cmi.max(0.0)
}

/// Verdict of the error-bound check on one evaluation snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FanoReport {
    pub p_error: f64,
    pub h_y: f64,
    pub mutual_information: f64,
    pub bound: f64,
    /// Three standard errors of the empirical p_error; the finite-sample
    /// slack granted to the verdict.
    pub slack: f64,
    pub holds: bool,
    pub total: u64,
}

/// Checks `p_error <= 1/2 [H(y) - I(yhat; y | q, t)]` with a 3-standard-error
/// slack on the empirical error.
pub fn fano_check(counts: &JointCounts) -> FanoReport {
    assert!(counts.total() > 0, "empty count table");
    let p_error = counts.p_error();
    let h_y = entropy_bits(&counts.y_marginal()).expect("marginal is a distribution");
    let mi = conditional_mutual_information(counts);
    let bound = 0.5 * (h_y - mi);
    let n = counts.total() as f64;
    let slack = 3.0 * (p_error * (1.0 - p_error) / n).sqrt();
    FanoReport {
        p_error,
        h_y,
        mutual_information: mi,
        bound,
        slack,
        holds: p_error <= bound + slack,
        total: counts.total(),
    }
}

/// Both sides of the m-class inequality `1 - p_max <= H/2` (bits).
pub fn miss_mass_and_half_entropy(distribution: &[f64]) -> Result<(f64, f64)> {
    let h = entropy_bits(distribution)?;
    let p_max = distribution.iter().copied().fold(f64::MIN, f64::max);
    Ok((1.0 - p_max, 0.5 * h))
}
