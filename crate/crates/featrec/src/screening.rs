//! Covariate screening: marginal association tests, the Cauchy combination
//! global test, Benjamini-Hochberg selection, and a smoother-based
//! goodness-of-fit screen.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg;
use crate::loess::{fit_loess, DEFAULT_DEGREE, DEFAULT_SPAN};

/// P-values are clamped into `[CLAMP, 1 - CLAMP]` before the Cauchy
/// transform to keep `tan` finite.
pub const PVALUE_CLAMP: f64 = 1e-15;

/// Which screening statistic produced a [`ScreenResult`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScreenMethod {
    /// Benjamini-Hochberg on marginal p-values.
    Fdr,
    /// Per-arm univariate smoother residual screen.
    Loess,
}

impl std::fmt::Display for ScreenMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ScreenMethod::Fdr => "fdr",
            ScreenMethod::Loess => "loess",
        })
    }
}

/// Outcome of a screening pass over all covariate columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenResult {
    pub method: ScreenMethod,
    /// Per-column statistic: p-values for FDR, pooled SSE for the smoother
    /// screen (`+inf` marks degenerate columns).
    pub scores: Vec<f64>,
    /// Selected column indices, ascending.
    pub selected: Vec<usize>,
    /// Cutoff actually applied (largest selected p-value / SSE).
    pub threshold: f64,
}

/// Marginal p-values for every covariate column.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalPvalues {
    /// Two-sided p-value of the covariate coefficient in
    /// `y ~ 1 + x_j + arm`, one per column.
    pub values: Vec<f64>,
    /// Columns whose design was rank-deficient (p-value forced to 1).
    pub degenerate: Vec<usize>,
}

/// Fit `y ~ 1 + x_j + arm dummies` for each column `j` and return the
/// two-sided t-test p-value of the `x_j` coefficient.
pub fn marginal_pvalues(d: &Dataset) -> Result<MarginalPvalues> {
    let n = d.n();
    let views = d.split_by_arm();
    let n_arms = views.len();
    let m_cols = 2 + (n_arms - 1);
    if n <= m_cols {
        return Err(Error::InvalidData(format!(
            "need more than {m_cols} observations for the marginal model, got {n}"
        )));
    }
    let df = (n - m_cols) as f64;

    // Arm dummy columns (reference = smallest label), shared across fits.
    let mut dummies = vec![vec![0.0f64; n]; n_arms - 1];
    for (g, view) in views.iter().enumerate().skip(1) {
        for &i in &view.rows {
            dummies[g - 1][i] = 1.0;
        }
    }
    let x = d.x();
    let y = DVector::from_iterator(n, d.y().iter().copied());

    let dist = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| Error::InvalidData(format!("t distribution setup failed: {e}")))?;

    let per_column: Vec<Option<f64>> = (0..d.p())
        .into_par_iter()
        .map(|j| {
            let design = DMatrix::from_fn(n, m_cols, |i, c| match c {
                0 => 1.0,
                1 => x[[i, j]],
                _ => dummies[c - 2][i],
            });
            let fit = linalg::ols(&design, &y)?;
            let sigma2 = fit.rss / df;
            let se = (sigma2 * fit.xtx_inv_diag[1]).sqrt();
            let beta = fit.beta[1];
            let p = if se > 0.0 && se.is_finite() {
                let t = (beta / se).abs();
                (2.0 * (1.0 - dist.cdf(t))).clamp(0.0, 1.0)
            } else if beta != 0.0 {
                0.0
            } else {
                1.0
            };
            Some(p)
        })
        .collect();

    let mut values = Vec::with_capacity(d.p());
    let mut degenerate = Vec::new();
    for (j, v) in per_column.into_iter().enumerate() {
        match v {
            Some(p) => values.push(p),
            None => {
                values.push(1.0);
                degenerate.push(j);
            }
        }
    }
    Ok(MarginalPvalues { values, degenerate })
}

/// Cauchy combination of p-values:
/// `T = mean(tan((0.5 - p_j) * pi))`, combined p-value
/// `0.5 - atan(T) / pi`. Inputs are clamped to `[1e-15, 1 - 1e-15]`.
pub fn cauchy_combination(pvals: &[f64]) -> Result<f64> {
    if pvals.is_empty() {
        return Err(Error::InvalidParameter(
            "cannot combine an empty p-value list".into(),
        ));
    }
    if pvals.iter().any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0) {
        return Err(Error::InvalidData("p-values must lie in [0, 1]".into()));
    }
    let mut t = 0.0;
    for &p in pvals {
        let clamped = p.clamp(PVALUE_CLAMP, 1.0 - PVALUE_CLAMP);
        t += ((0.5 - clamped) * std::f64::consts::PI).tan();
    }
    t /= pvals.len() as f64;
    Ok(0.5 - t.atan() / std::f64::consts::PI)
}

/// Benjamini-Hochberg step-up selection at FDR level `q`: find the largest
/// rank `j` with `p_(j) <= j * q / p` and keep every p-value at or below
/// that order statistic.
pub fn bh_select(pvals: &[f64], q: f64) -> Result<ScreenResult> {
    if pvals.is_empty() {
        return Err(Error::InvalidParameter("no p-values to select from".into()));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "FDR level must be in (0, 1), got {q}"
        )));
    }
    if pvals.iter().any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0) {
        return Err(Error::InvalidData("p-values must lie in [0, 1]".into()));
    }
    let p = pvals.len();
    let mut sorted: Vec<f64> = pvals.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut cutoff = None;
    for j in (1..=p).rev() {
        if sorted[j - 1] <= j as f64 * q / p as f64 {
            cutoff = Some(sorted[j - 1]);
            break;
        }
    }
    let (selected, threshold) = match cutoff {
        Some(c) => ((0..p).filter(|&i| pvals[i] <= c).collect(), c),
        None => (Vec::new(), 0.0),
    };
    Ok(ScreenResult {
        method: ScreenMethod::Fdr,
        scores: pvals.to_vec(),
        selected,
        threshold,
    })
}

/// Residual screen: for each column, fit a univariate default smoother of
/// `y` on `x_j` within every arm, pool the in-sample squared residuals by
/// summing over arms, and keep the `ceil(fraction * p)` columns with the
/// smallest pooled SSE. A column constant within any arm gets SSE `+inf`
/// and is never selected.
pub fn loess_screen(d: &Dataset, fraction: f64) -> Result<ScreenResult> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "selection fraction must be in (0, 1], got {fraction}"
        )));
    }
    let views = d.split_by_arm();
    let arms: Vec<(ndarray::Array2<f64>, Vec<f64>)> =
        views.iter().map(|v| (d.arm_x(v), d.arm_y(v))).collect();

    let scores: Vec<f64> = (0..d.p())
        .into_par_iter()
        .map(|j| {
            let mut total = 0.0;
            for (x_arm, y_arm) in &arms {
                let n_a = y_arm.len();
                let col = x_arm.column(j);
                let first = col[0];
                if col.iter().all(|&v| v == first) {
                    return f64::INFINITY;
                }
                let mut u = ndarray::Array2::zeros((n_a, 1));
                for (i, &v) in col.iter().enumerate() {
                    u[[i, 0]] = v;
                }
                let model = match fit_loess(u, y_arm.clone(), DEFAULT_SPAN, DEFAULT_DEGREE) {
                    Ok(m) => m,
                    Err(_) => return f64::INFINITY,
                };
                for i in 0..n_a {
                    let pred = match model.predict(&[col[i]]) {
                        Ok(v) => v,
                        Err(_) => return f64::INFINITY,
                    };
                    let r = y_arm[i] - pred;
                    total += r * r;
                }
            }
            total
        })
        .collect();

    let count = (fraction * d.p() as f64).ceil() as usize;
    let mut order: Vec<usize> = (0..d.p()).collect();
    order.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]).then(i.cmp(&j)));
    let mut selected: Vec<usize> = order
        .into_iter()
        .filter(|&i| scores[i].is_finite())
        .take(count)
        .collect();
    selected.sort_unstable();
    let threshold = selected
        .iter()
        .map(|&i| scores[i])
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(ScreenResult {
        method: ScreenMethod::Loess,
        scores,
        selected,
        threshold,
    })
}

/// Global association gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateResult {
    /// Cauchy-combined p-value over all marginal tests.
    pub pvalue: f64,
    /// `pvalue <= alpha`.
    pub pass: bool,
}

/// Combine all marginal p-values into one global test of any
/// covariate-response association.
pub fn global_gate(d: &Dataset, alpha: f64) -> Result<GateResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha must be in (0, 1), got {alpha}"
        )));
    }
    let marginal = marginal_pvalues(d)?;
    let pvalue = cauchy_combination(&marginal.values)?;
    Ok(GateResult {
        pvalue,
        pass: pvalue <= alpha,
    })
}
