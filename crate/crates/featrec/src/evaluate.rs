//! Rule evaluation: inverse-propensity value estimates, misclassification
//! against known optimal arms, and the value gap under a known simulation
//! truth.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Dataset, Label};
use crate::error::{Error, Result};
use crate::simbench::Scenario;

/// Self-normalized inverse-propensity value of a rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueEstimate {
    pub value: f64,
    /// Rows where the rule agrees with the observed assignment.
    pub n_matched: usize,
}

fn check_propensity(a: &[Label], propensity: &BTreeMap<Label, f64>) -> Result<()> {
    for label in a {
        match propensity.get(label) {
            Some(&p) if p > 0.0 && p.is_finite() => {}
            Some(&p) => {
                return Err(Error::InvalidParameter(format!(
                    "propensity for arm {label:?} must be positive and finite, got {p}"
                )))
            }
            None => {
                return Err(Error::InvalidParameter(format!(
                    "no propensity for observed arm {label:?}"
                )))
            }
        }
    }
    Ok(())
}

/// Self-normalized estimate
/// `sum(y_i m_i / pi(a_i)) / sum(m_i / pi(a_i))` where
/// `m_i = 1{rule_i == a_i}`. Errors when the rule never matches.
pub fn empirical_value_parts(
    y: &[f64],
    a: &[Label],
    rule: &[Label],
    propensity: &BTreeMap<Label, f64>,
) -> Result<ValueEstimate> {
    if a.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: y.len(),
            got: a.len(),
        });
    }
    if rule.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: y.len(),
            got: rule.len(),
        });
    }
    check_propensity(a, propensity)?;
    let mut num = 0.0;
    let mut den = 0.0;
    let mut n_matched = 0usize;
    for i in 0..y.len() {
        if rule[i] == a[i] {
            let w = 1.0 / propensity[&a[i]];
            num += y[i] * w;
            den += w;
            n_matched += 1;
        }
    }
    if n_matched == 0 || den == 0.0 {
        return Err(Error::NoOverlap);
    }
    Ok(ValueEstimate {
        value: num / den,
        n_matched,
    })
}

/// [`empirical_value_parts`] over a full dataset.
pub fn empirical_value(
    d: &Dataset,
    rule: &[Label],
    propensity: &BTreeMap<Label, f64>,
) -> Result<ValueEstimate> {
    empirical_value_parts(d.y(), d.arms(), rule, propensity)
}

/// Unnormalized variant: `mean(y_i m_i / pi(a_i))`. Defined even when the
/// rule never matches (the estimate is then 0).
pub fn empirical_value_unnormalized_parts(
    y: &[f64],
    a: &[Label],
    rule: &[Label],
    propensity: &BTreeMap<Label, f64>,
) -> Result<ValueEstimate> {
    if a.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: y.len(),
            got: a.len(),
        });
    }
    if rule.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: y.len(),
            got: rule.len(),
        });
    }
    if y.is_empty() {
        return Err(Error::InvalidData("no observations".into()));
    }
    check_propensity(a, propensity)?;
    let mut num = 0.0;
    let mut n_matched = 0usize;
    for i in 0..y.len() {
        if rule[i] == a[i] {
            num += y[i] / propensity[&a[i]];
            n_matched += 1;
        }
    }
    Ok(ValueEstimate {
        value: num / y.len() as f64,
        n_matched,
    })
}

/// Unnormalized variant over a full dataset.
pub fn empirical_value_unnormalized(
    d: &Dataset,
    rule: &[Label],
    propensity: &BTreeMap<Label, f64>,
) -> Result<ValueEstimate> {
    empirical_value_unnormalized_parts(d.y(), d.arms(), rule, propensity)
}

/// Misclassification of recommendations against per-row optimal arm sets.
#[derive(Debug, Clone, PartialEq)]
pub struct MisclassReport {
    pub misclassified: usize,
    pub n: usize,
    /// `misclassified / n` (exact integer ratio).
    pub rate: f64,
}

/// Count recommendations outside the optimal set. Rows whose optimal set
/// contains several arms (ties in the truth) accept any of them.
pub fn misclassification(optimal: &[Vec<Label>], recommended: &[Label]) -> Result<MisclassReport> {
    if optimal.len() != recommended.len() {
        return Err(Error::DimensionMismatch {
            expected: optimal.len(),
            got: recommended.len(),
        });
    }
    if optimal.is_empty() {
        return Err(Error::InvalidData("no observations".into()));
    }
    if optimal.iter().any(Vec::is_empty) {
        return Err(Error::InvalidData("empty optimal arm set".into()));
    }
    let misclassified = optimal
        .iter()
        .zip(recommended)
        .filter(|(opt, rec)| !opt.contains(rec))
        .count();
    Ok(MisclassReport {
        misclassified,
        n: optimal.len(),
        rate: misclassified as f64 / optimal.len() as f64,
    })
}

/// Monte-Carlo value gap of a rule under a known scenario truth:
/// `E[max_a Q0(X, a) - Q0(X, rule(X))]` over `n_test` fresh covariate
/// draws. Zero if and only if the rule is optimal almost everywhere on the
/// draws.
pub fn value_gap(
    scenario: &Scenario,
    p: usize,
    rule: &dyn Fn(&[f64]) -> Label,
    n_test: usize,
    seed: u64,
) -> Result<f64> {
    if n_test == 0 {
        return Err(Error::InvalidParameter("n_test must be positive".into()));
    }
    if p < Scenario::MIN_COVARIATES {
        return Err(Error::InvalidParameter(format!(
            "scenarios need at least {} covariates, got {p}",
            Scenario::MIN_COVARIATES
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = vec![0.0f64; p];
    let mut total = 0.0;
    for _ in 0..n_test {
        for v in x.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let best = scenario.max_mean(&x)?;
        let got = scenario.mean_response(&x, &rule(&x))?;
        total += best - got;
    }
    Ok(total / n_test as f64)
}
