//! Sliced inverse regression (SIR).
//!
//! Given covariates `x` and a response `y` within one treatment arm, SIR
//! estimates a small number of directions `b_1..b_k` such that `y` depends
//! on `x` (approximately) only through the scores `b_j' x`:
//!
//! 1. center and whiten: `z = W (x - mean)` with `W = (Cov + eps I)^{-1/2}`,
//! 2. slice observations by sorted response and average `z` within slices,
//! 3. eigendecompose `M = sum_h p_h m_h m_h'` over slice means `m_h`,
//! 4. map the top-k eigenvectors back: `b_j = W v_j`.
//!
//! Covariance uses the `1/n` normalization, which keeps every eigenvalue of
//! `M` in `[0, 1]`. A scaled ridge `eps` stabilizes the whitening; it is
//! escalated when the covariance is badly conditioned.

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::linalg;

/// Default number of response slices.
pub const DEFAULT_SLICES: usize = 10;
/// Condition-number threshold above which the whitening ridge escalates.
const COND_LIMIT: f64 = 1e10;
/// Base and escalated ridge factors (times `trace(Cov)/p`).
const RIDGE_BASE: f64 = 1e-8;
const RIDGE_ESCALATED: f64 = 1e-4;

/// How observations are grouped into slices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "n_slices")]
pub enum SliceSpec {
    /// Sort by response and cut into `n_slices` nearly equal groups
    /// (the first `n mod n_slices` groups get one extra row).
    EqualCount(usize),
    /// One slice per distinct response value (for discrete responses).
    ByLevel,
}

/// A fitted SIR basis for one treatment arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SirFit {
    /// `k x p`; row `j` is direction `b_j`, sign-normalized so its
    /// largest-magnitude entry is positive.
    #[serde(with = "crate::serde_mat")]
    directions: Array2<f64>,
    /// All `p` eigenvalues of `M`, descending, clipped to `[0, 1]`.
    eigenvalues: Vec<f64>,
    /// Covariate means used for whitening.
    center: Vec<f64>,
    /// Number of slices actually used.
    n_slices: usize,
    /// Number of observations the fit used.
    n_used: usize,
    /// Ridge added to the covariance before whitening.
    ridge: f64,
}

/// Slice sizes for `n` observations in `h` groups.
pub(crate) fn slice_sizes(n: usize, h: usize) -> Vec<usize> {
    let base = n / h;
    let rem = n % h;
    (0..h).map(|i| base + usize::from(i < rem)).collect()
}

/// Fit SIR with `k` directions on one arm's data.
pub fn fit_sir(x: ArrayView2<'_, f64>, y: &[f64], k: usize, spec: &SliceSpec) -> Result<SirFit> {
    let n = x.nrows();
    let p = x.ncols();
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: y.len(),
        });
    }
    if n < 2 {
        return Err(Error::InvalidData(format!(
            "need at least 2 observations, got {n}"
        )));
    }
    if p == 0 {
        return Err(Error::InvalidData("no covariates".into()));
    }
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    if k > p {
        return Err(Error::InvalidParameter(format!(
            "k = {k} exceeds the number of covariates ({p})"
        )));
    }
    if !x.iter().all(|v| v.is_finite()) || !y.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidData("non-finite value in SIR input".into()));
    }

    // Sort rows by (response, original index). All later reductions run in
    // this order, which makes the fit independent of the input row order.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| y[i].total_cmp(&y[j]).then(i.cmp(&j)));
    let mut xs = Array2::zeros((n, p));
    for (r, &i) in order.iter().enumerate() {
        xs.row_mut(r).assign(&x.row(i));
    }
    let ys: Vec<f64> = order.iter().map(|&i| y[i]).collect();

    // Slice boundaries on the sorted response.
    let counts: Vec<usize> = match spec {
        SliceSpec::EqualCount(h) => {
            let h = *h;
            if h < 2 {
                return Err(Error::InvalidParameter(format!(
                    "need at least 2 slices, got {h}"
                )));
            }
            if n < h {
                return Err(Error::InvalidData(format!(
                    "cannot cut {n} observations into {h} slices"
                )));
            }
            slice_sizes(n, h)
        }
        SliceSpec::ByLevel => {
            let mut counts = Vec::new();
            let mut run = 1usize;
            for w in ys.windows(2) {
                if w[1] == w[0] {
                    run += 1;
                } else {
                    counts.push(run);
                    run = 1;
                }
            }
            counts.push(run);
            counts
        }
    };
    let h = counts.len();
    if h < 2 {
        return Err(Error::InvalidData(
            "response has fewer than 2 distinct values".into(),
        ));
    }
    if k >= h {
        return Err(Error::InvalidParameter(format!(
            "k = {k} must be smaller than the slice count ({h})"
        )));
    }

    // Center.
    let mut center = vec![0.0f64; p];
    for r in 0..n {
        for j in 0..p {
            center[j] += xs[[r, j]];
        }
    }
    for c in center.iter_mut() {
        *c /= n as f64;
    }
    let mut centered = xs;
    for r in 0..n {
        for j in 0..p {
            centered[[r, j]] -= center[j];
        }
    }

    // Covariance (1/n normalization) and whitening.
    let cov = centered.t().dot(&centered) / n as f64;
    let trace: f64 = (0..p).map(|j| cov[[j, j]]).sum();
    if trace <= 0.0 {
        return Err(Error::InvalidData(
            "covariates have zero total variance".into(),
        ));
    }
    let (vals, vecs) = linalg::sym_eigen_desc(cov.view());
    let lam_max = vals[0].max(0.0);
    let lam_min = vals[p - 1];
    let cond = if lam_min > 0.0 {
        lam_max / lam_min
    } else {
        f64::INFINITY
    };
    let ridge = if cond > COND_LIMIT {
        RIDGE_ESCALATED * trace / p as f64
    } else {
        RIDGE_BASE * trace / p as f64
    };
    let whitener = linalg::sym_apply(&vals, &vecs, |v| 1.0 / (v.max(0.0) + ridge).sqrt());
    let z = centered.dot(&whitener);

    // Weighted outer products of slice means.
    let mut m = Array2::<f64>::zeros((p, p));
    let mut start = 0usize;
    for &count in &counts {
        let end = start + count;
        let mut mean = Array1::<f64>::zeros(p);
        for r in start..end {
            for j in 0..p {
                mean[j] += z[[r, j]];
            }
        }
        mean /= count as f64;
        let weight = count as f64 / n as f64;
        for a in 0..p {
            let wa = weight * mean[a];
            for b in 0..p {
                m[[a, b]] += wa * mean[b];
            }
        }
        start = end;
    }

    let (m_vals, m_vecs) = linalg::sym_eigen_desc(m.view());
    let eigenvalues: Vec<f64> = m_vals.iter().map(|v| v.clamp(0.0, 1.0)).collect();

    // Map eigenvectors back through the whitener and fix signs.
    let mut directions = Array2::zeros((k, p));
    for j in 0..k {
        let mut row = vec![0.0f64; p];
        for a in 0..p {
            let mut s = 0.0;
            for b in 0..p {
                s += whitener[[a, b]] * m_vecs[[b, j]];
            }
            row[a] = s;
        }
        let mut lead = 0usize;
        for (i, v) in row.iter().enumerate() {
            if v.abs() > row[lead].abs() {
                lead = i;
            }
        }
        if row[lead] < 0.0 {
            for v in row.iter_mut() {
                *v = -*v;
            }
        }
        for (a, v) in row.into_iter().enumerate() {
            directions[[j, a]] = v;
        }
    }

    Ok(SirFit {
        directions,
        eigenvalues,
        center,
        n_slices: h,
        n_used: n,
        ridge,
    })
}

impl SirFit {
    pub fn k(&self) -> usize {
        self.directions.nrows()
    }

    pub fn p(&self) -> usize {
        self.directions.ncols()
    }

    pub fn directions(&self) -> &Array2<f64> {
        &self.directions
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn n_slices(&self) -> usize {
        self.n_slices
    }

    pub fn n_used(&self) -> usize {
        self.n_used
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    /// Feature scores `u_j = b_j' x` for one raw (uncentered) covariate row.
    pub fn score_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.p() {
            return Err(Error::DimensionMismatch {
                expected: self.p(),
                got: x.len(),
            });
        }
        Ok((0..self.k())
            .map(|j| {
                let mut s = 0.0;
                for (l, &v) in x.iter().enumerate() {
                    s += self.directions[[j, l]] * v;
                }
                s
            })
            .collect())
    }
}

/// Feature-score matrix (`n x k`) for raw covariate rows.
pub fn feature_scores(fit: &SirFit, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if x.ncols() != fit.p() {
        return Err(Error::DimensionMismatch {
            expected: fit.p(),
            got: x.ncols(),
        });
    }
    let mut out = Array2::zeros((x.nrows(), fit.k()));
    let mut row = vec![0.0f64; fit.p()];
    for i in 0..x.nrows() {
        for (l, v) in x.row(i).iter().enumerate() {
            row[l] = *v;
        }
        let scores = fit.score_one(&row)?;
        for (j, s) in scores.into_iter().enumerate() {
            out[[i, j]] = s;
        }
    }
    Ok(out)
}

/// One step of the sequential dimension test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionStep {
    pub m: usize,
    pub statistic: f64,
    pub df: usize,
    pub pvalue: f64,
}

/// Result of the sequential chi-squared dimension test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionTest {
    /// Smallest `m` whose tail statistic is not significant.
    pub k_hat: usize,
    pub steps: Vec<DimensionStep>,
    /// The test ran out of testable dimensions before accepting; `k_hat`
    /// was truncated to `n_slices - 2`.
    pub truncated: bool,
}

/// Sequential test for the number of informative directions. For each
/// `m = 0, 1, ...` the statistic `n * sum_{j>m} lambda_j` is compared to a
/// chi-squared with `(p - m)(H - m - 1)` degrees of freedom; `k_hat` is the
/// first `m` that is not rejected at `level`.
pub fn chi2_dimension_test(fit: &SirFit, level: f64) -> Result<DimensionTest> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "significance level must be in (0, 1), got {level}"
        )));
    }
    let p = fit.p();
    let h = fit.n_slices;
    let n = fit.n_used as f64;
    let mut steps = Vec::new();
    let mut m = 0usize;
    loop {
        if m >= p || h < m + 2 {
            // Every testable dimension was rejected.
            let k_hat = h.saturating_sub(2).min(p);
            return Ok(DimensionTest {
                k_hat,
                steps,
                truncated: true,
            });
        }
        let tail: f64 = fit.eigenvalues[m..].iter().sum();
        let statistic = n * tail;
        let df = (p - m) * (h - m - 1);
        let dist = ChiSquared::new(df as f64)
            .map_err(|e| Error::InvalidData(format!("chi-squared setup failed: {e}")))?;
        let pvalue = if statistic <= 0.0 {
            1.0
        } else {
            1.0 - dist.cdf(statistic)
        };
        steps.push(DimensionStep {
            m,
            statistic,
            df,
            pvalue,
        });
        if pvalue > level {
            return Ok(DimensionTest {
                k_hat: m,
                steps,
                truncated: false,
            });
        }
        m += 1;
    }
}
