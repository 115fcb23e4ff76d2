//! Data-driven choice of factor counts and off-diagonal ranks.
//!
//! All selectors maximise a criterion over `i = 1..=cap` and break ties by the
//! smallest index. Values at or below `ZERO_TOLERANCE * max` are treated as
//! zero and shorten the admissible range.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance below which an eigen/singular value counts as zero.
pub const ZERO_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionResult {
    pub chosen: usize,
    /// Criterion value for `i = 1..=cap` (ratios or gaps).
    pub criterion_values: Vec<f64>,
    /// The cap actually used after any reduction.
    pub cap: usize,
    pub diagnostics: Vec<String>,
}

/// Which criterion to apply to a descending spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Selector {
    /// `argmax lambda_i / lambda_{i+1}` on eigenvalues.
    #[default]
    EigenvalueRatio,
    /// `argmax xi_i - xi_{i+1}` on singular values.
    SingularGap,
    /// `argmax xi_i / xi_{i+1}` on singular values.
    SingularRatio,
}

impl Selector {
    pub fn select(self, values: &[f64], cap: usize) -> Result<SelectionResult> {
        match self {
            Selector::EigenvalueRatio => eigenvalue_ratio_select(values, cap),
            Selector::SingularGap => singular_gap_rank(values, cap),
            Selector::SingularRatio => singular_ratio_rank(values, cap),
        }
    }
}

fn check_descending(values: &[f64]) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "spectrum has non-finite values".into(),
        ));
    }
    if values.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::InvalidArgument(
            "spectrum must be sorted in descending order".into(),
        ));
    }
    Ok(())
}

fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best + 1
}

/// Shared logic of the two ratio criteria.
fn ratio_select(values: &[f64], cap: usize, what: &str) -> Result<SelectionResult> {
    check_descending(values)?;
    if cap == 0 {
        return Err(Error::InvalidArgument(
            "selection cap must be at least 1".into(),
        ));
    }
    let top = values.first().copied().unwrap_or(0.0);
    let zero = ZERO_TOLERANCE * top.abs();
    let positive = values
        .iter()
        .take_while(|v| **v > zero && **v > 0.0)
        .count();
    let mut diagnostics = Vec::new();
    match positive {
        0 => {
            return Ok(SelectionResult {
                chosen: 0,
                criterion_values: Vec::new(),
                cap: 0,
                diagnostics: vec![format!("no positive {what}; nothing to select")],
            })
        }
        1 => {
            if cap > 1 {
                diagnostics.push(format!(
                    "only one positive {what}; cap reduced from {cap} to 1"
                ));
            }
            return Ok(SelectionResult {
                chosen: 1,
                criterion_values: vec![f64::INFINITY],
                cap: 1,
                diagnostics,
            });
        }
        _ => {}
    }
    let effective = cap.min(positive - 1);
    if effective < cap {
        diagnostics.push(format!(
            "only {positive} positive {what}; cap reduced from {cap} to {effective}"
        ));
    }
    let ratios: Vec<f64> = (0..effective).map(|i| values[i] / values[i + 1]).collect();
    Ok(SelectionResult {
        chosen: argmax_first(&ratios),
        criterion_values: ratios,
        cap: effective,
        diagnostics,
    })
}

/// Eigenvalue-ratio estimator of the number of factors.
pub fn eigenvalue_ratio_select(eigenvalues: &[f64], cap: usize) -> Result<SelectionResult> {
    ratio_select(eigenvalues, cap, "eigenvalues")
}

/// Rank at the largest consecutive singular-value gap.
pub fn singular_gap_rank(singular_values: &[f64], cap: usize) -> Result<SelectionResult> {
    check_descending(singular_values)?;
    if cap == 0 {
        return Err(Error::InvalidArgument(
            "selection cap must be at least 1".into(),
        ));
    }
    if singular_values.iter().any(|v| *v < 0.0) {
        return Err(Error::InvalidArgument(
            "singular values must be nonnegative".into(),
        ));
    }
    if singular_values.len() < 2 {
        return Err(Error::InvalidArgument(
            "gap selection needs at least two values".into(),
        ));
    }
    let mut diagnostics = Vec::new();
    let effective = cap.min(singular_values.len() - 1);
    if effective < cap {
        diagnostics.push(format!(
            "cap reduced from {cap} to {effective} (spectrum length)"
        ));
    }
    let gaps: Vec<f64> = (0..effective)
        .map(|i| singular_values[i] - singular_values[i + 1])
        .collect();
    Ok(SelectionResult {
        chosen: argmax_first(&gaps),
        criterion_values: gaps,
        cap: effective,
        diagnostics,
    })
}

/// Rank at the largest consecutive singular-value ratio.
pub fn singular_ratio_rank(singular_values: &[f64], cap: usize) -> Result<SelectionResult> {
    if singular_values.iter().any(|v| *v < 0.0) {
        return Err(Error::InvalidArgument(
            "singular values must be nonnegative".into(),
        ));
    }
    ratio_select(singular_values, cap, "singular values")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_ratio_examples() {
        let r = eigenvalue_ratio_select(&[100.0, 50.0, 2.0, 1.0, 0.5], 4).unwrap();
        assert_eq!(r.criterion_values, vec![2.0, 25.0, 2.0, 2.0]);
        assert_eq!(r.chosen, 2);
        let tie = eigenvalue_ratio_select(&[9.0, 3.0, 1.0], 2).unwrap();
        assert_eq!(tie.criterion_values, vec![3.0, 3.0]);
        assert_eq!(tie.chosen, 1);
        let geometric: Vec<f64> = (0..8).map(|i| 0.5f64.powi(i)).collect();
        assert_eq!(eigenvalue_ratio_select(&geometric, 6).unwrap().chosen, 1);
    }

    #[test]
    fn eigen_ratio_reduces_cap_on_zero_tail() {
        let r = eigenvalue_ratio_select(&[5.0, 4.0, 0.0, 0.0], 3).unwrap();
        assert_eq!(r.cap, 1);
        assert_eq!(r.chosen, 1);
        assert_eq!(r.diagnostics.len(), 1);
        assert_eq!(eigenvalue_ratio_select(&[0.0, 0.0], 1).unwrap().chosen, 0);
        assert!(eigenvalue_ratio_select(&[1.0, 2.0], 1).is_err());
        assert!(eigenvalue_ratio_select(&[2.0, 1.0], 0).is_err());
    }

    #[test]
    fn gap_examples() {
        let r = singular_gap_rank(&[5.0, 4.9, 1.0, 0.9], 3).unwrap();
        assert_eq!(r.chosen, 2);
        assert!((r.criterion_values[1] - 3.9).abs() < 1e-12);
        assert_eq!(singular_gap_rank(&[3.0, 1.0], 1).unwrap().chosen, 1);
        assert_eq!(singular_gap_rank(&[2.0; 5], 4).unwrap().chosen, 1);
        assert!(singular_gap_rank(&[3.0, 1.0], 0).is_err());
        let clipped = singular_gap_rank(&[3.0, 2.0, 0.0], 5).unwrap();
        assert_eq!(clipped.cap, 2);
    }

    #[test]
    fn singular_ratio_examples() {
        let r = singular_ratio_rank(&[8.0, 2.0, 1.9], 2).unwrap();
        assert_eq!(r.chosen, 1);
        assert!((r.criterion_values[0] - 4.0).abs() < 1e-15);
        assert!((r.criterion_values[1] - 2.0 / 1.9).abs() < 1e-15);
        assert_eq!(singular_ratio_rank(&[6.0, 3.0, 1.0], 2).unwrap().chosen, 2);
        let rank_one = singular_ratio_rank(&[3.0, 1e-17], 1).unwrap();
        assert_eq!(rank_one.chosen, 1);
        assert!(rank_one.criterion_values[0].is_infinite());
        let truncated = singular_ratio_rank(&[3.0, 1e-17, 0.0], 2).unwrap();
        assert_eq!(truncated.chosen, 1);
        assert!(!truncated.diagnostics.is_empty());
    }

    proptest::proptest! {
        #[test]
        fn selectors_are_scale_invariant(
            raw in proptest::collection::vec(0.01f64..100.0, 3..12),
            scale_exp in -6i32..6,
        ) {
            let mut values = raw.clone();
            values.sort_by(|a, b| b.total_cmp(a));
            let scale = 10f64.powi(scale_exp);
            let scaled: Vec<f64> = values.iter().map(|v| v * scale).collect();
            let cap = values.len() - 1;
            for sel in [Selector::EigenvalueRatio, Selector::SingularGap, Selector::SingularRatio] {
                let a = sel.select(&values, cap).unwrap();
                let b = sel.select(&scaled, cap).unwrap();
                // allow for rounding when two criterion values are within 1e-9
                let ok = a.chosen == b.chosen || {
                    let ca = a.criterion_values[a.chosen - 1];
                    let cb = a.criterion_values[b.chosen - 1];
                    (ca - cb).abs() <= 1e-9 * ca.abs()
                };
                proptest::prop_assert!(ok);
            }
        }
    }
}
