//! Local polynomial regression (LOESS) with a tricube kernel and a
//! nearest-neighbor bandwidth.
//!
//! The smoother fits `y ~ poly(u - u_q, degree)` by weighted least squares
//! in a neighborhood of each query point `u_q`. Neighborhood size is
//! `q = ceil(span * n)` points; distances are Euclidean after scaling each
//! score dimension by its sample standard deviation; weights are
//! `K(d / d_max)` with the tricube kernel `K(t) = (1 - |t|^3)^3` for
//! `|t| < 1`. Queries outside the training range are clamped to the range
//! boundary before smoothing.

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Default nearest-neighbor span (fraction of training points per fit).
pub const DEFAULT_SPAN: f64 = 0.75;
/// Default local polynomial degree.
pub const DEFAULT_DEGREE: usize = 1;

/// Tricube kernel: `(1 - |t|^3)^3` for `|t| < 1`, else 0.
pub fn tricube(t: f64) -> f64 {
    let a = t.abs();
    if a < 1.0 {
        let c = 1.0 - a * a * a;
        c * c * c
    } else {
        0.0
    }
}

/// Number of monomials of degree <= `degree` in `k` variables
/// (degree is capped at 2).
fn basis_size(k: usize, degree: usize) -> usize {
    match degree {
        0 => 1,
        1 => 1 + k,
        _ => 1 + k + k * (k + 1) / 2,
    }
}

/// Evaluate the polynomial basis at `v` into `out`: intercept, linear
/// terms, then (for degree 2) products `v_a * v_b` with `a <= b`.
fn poly_basis(v: &[f64], degree: usize, out: &mut Vec<f64>) {
    out.clear();
    out.push(1.0);
    if degree >= 1 {
        out.extend_from_slice(v);
    }
    if degree >= 2 {
        for a in 0..v.len() {
            for b in a..v.len() {
                out.push(v[a] * v[b]);
            }
        }
    }
}

fn sample_std(col: &[f64]) -> f64 {
    let n = col.len();
    if n < 2 {
        return 0.0;
    }
    let mean = col.iter().sum::<f64>() / n as f64;
    let ss = col.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>();
    (ss / (n - 1) as f64).sqrt()
}

/// A fitted local-polynomial smoother over feature scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoessModel {
    #[serde(with = "crate::serde_mat")]
    u_train: Array2<f64>,
    y_train: Vec<f64>,
    span: f64,
    degree: usize,
    /// Per-dimension distance scale (sample std, or 1 for constant columns).
    scale: Vec<f64>,
}

/// One smoothed prediction plus diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoessPrediction {
    pub value: f64,
    /// The query was outside the training range and was clamped.
    pub clamped: bool,
    /// The local design was singular (or all weights vanished) and a
    /// lower-degree / mean fallback was used.
    pub degenerate: bool,
}

/// Fit a smoother on training scores `u` (rows = observations) and
/// responses `y`.
pub fn fit_loess(u: Array2<f64>, y: Vec<f64>, span: f64, degree: usize) -> Result<LoessModel> {
    let n = u.nrows();
    let k = u.ncols();
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: y.len(),
        });
    }
    if k == 0 {
        return Err(Error::InvalidData("score matrix has no columns".into()));
    }
    if degree > 2 {
        return Err(Error::InvalidParameter(format!(
            "degree must be 0, 1 or 2, got {degree}"
        )));
    }
    if !(span > 0.0 && span <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "span must be in (0, 1], got {span}"
        )));
    }
    if !u.iter().all(|v| v.is_finite()) || !y.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidData(
            "non-finite value in smoother input".into(),
        ));
    }
    let needed = degree * k + 2;
    if n < needed {
        return Err(Error::InvalidData(format!(
            "need at least {needed} observations for degree {degree} in {k} dimension(s), got {n}"
        )));
    }
    let q = neighborhood_size(span, n);
    if q < needed {
        let min_span = needed as f64 / n as f64;
        return Err(Error::InvalidParameter(format!(
            "span {span} keeps only {q} of {n} points but degree {degree} in {k} dimension(s) \
             needs {needed}; smallest feasible span is {min_span}"
        )));
    }
    let scale = (0..k)
        .map(|j| {
            let col: Vec<f64> = u.column(j).to_vec();
            let s = sample_std(&col);
            if s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .collect();
    Ok(LoessModel {
        u_train: u,
        y_train: y,
        span,
        degree,
        scale,
    })
}

fn neighborhood_size(span: f64, n: usize) -> usize {
    ((span * n as f64).ceil() as usize).clamp(1, n)
}

impl LoessModel {
    pub fn n(&self) -> usize {
        self.u_train.nrows()
    }

    pub fn k(&self) -> usize {
        self.u_train.ncols()
    }

    pub fn span(&self) -> f64 {
        self.span
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn u_train(&self) -> &Array2<f64> {
        &self.u_train
    }

    pub fn y_train(&self) -> &[f64] {
        &self.y_train
    }

    /// Per-dimension training range `(min, max)`.
    pub fn range(&self, dim: usize) -> (f64, f64) {
        let col = self.u_train.column(dim);
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in col {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }

    /// Smoothed value at `query` together with diagnostics.
    pub fn predict_detailed(&self, query: &[f64]) -> Result<LoessPrediction> {
        let n = self.n();
        let k = self.k();
        if query.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: query.len(),
            });
        }
        if !query.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidData("non-finite query point".into()));
        }

        // Clamp to the training hull (per dimension).
        let mut q = query.to_vec();
        let mut clamped = false;
        for (j, qj) in q.iter_mut().enumerate() {
            let (lo, hi) = self.range(j);
            if *qj < lo {
                *qj = lo;
                clamped = true;
            } else if *qj > hi {
                *qj = hi;
                clamped = true;
            }
        }

        let dist: Vec<f64> = (0..n)
            .map(|i| {
                let mut s = 0.0;
                for (j, (qj, sj)) in q.iter().zip(&self.scale).enumerate() {
                    let d = (self.u_train[[i, j]] - qj) / sj;
                    s += d * d;
                }
                s.sqrt()
            })
            .collect();
        let m = neighborhood_size(self.span, n);
        let mut scratch = dist.clone();
        let (_, &mut d_max, _) = scratch.select_nth_unstable_by(m - 1, f64::total_cmp);

        let weights: Vec<f64> = if d_max == 0.0 {
            dist.iter()
                .map(|&d| if d == 0.0 { 1.0 } else { 0.0 })
                .collect()
        } else {
            dist.iter().map(|&d| tricube(d / d_max)).collect()
        };

        let active: Vec<usize> = (0..n).filter(|&i| weights[i] > 0.0).collect();
        if active.is_empty() {
            // All kernel weights vanished (e.g. every neighbor sits exactly
            // at d_max): average the candidate neighborhood instead.
            let nbrs: Vec<usize> = (0..n).filter(|&i| dist[i] <= d_max).collect();
            let mean = nbrs.iter().map(|&i| self.y_train[i]).sum::<f64>() / nbrs.len() as f64;
            return Ok(LoessPrediction {
                value: mean,
                clamped,
                degenerate: true,
            });
        }

        let mut basis = Vec::new();
        let mut degenerate = false;
        let mut value = None;
        let mut deg = self.degree;
        loop {
            let m_cols = basis_size(k, deg);
            let mut xmat = DMatrix::zeros(active.len(), m_cols);
            let mut yvec = DVector::zeros(active.len());
            let mut wvec = Vec::with_capacity(active.len());
            let mut v = vec![0.0; k];
            for (r, &i) in active.iter().enumerate() {
                for j in 0..k {
                    v[j] = self.u_train[[i, j]] - q[j];
                }
                poly_basis(&v, deg, &mut basis);
                for (c, &b) in basis.iter().enumerate() {
                    xmat[(r, c)] = b;
                }
                yvec[r] = self.y_train[i];
                wvec.push(weights[i]);
            }
            match linalg::wls(&xmat, &yvec, &wvec) {
                Some(beta) => {
                    value = Some(beta[0]);
                    break;
                }
                None => {
                    degenerate = true;
                    if deg == 0 {
                        break;
                    }
                    deg -= 1;
                }
            }
        }
        let value = value.unwrap_or_else(|| {
            // Intercept-only WLS cannot fail with positive weights, but fall
            // back to the weighted mean just in case.
            let (mut num, mut den) = (0.0, 0.0);
            for &i in &active {
                num += weights[i] * self.y_train[i];
                den += weights[i];
            }
            num / den
        });
        Ok(LoessPrediction {
            value,
            clamped,
            degenerate,
        })
    }

    /// Smoothed value at `query`.
    pub fn predict(&self, query: &[f64]) -> Result<f64> {
        Ok(self.predict_detailed(query)?.value)
    }

    /// Evaluate the smoother on an evenly spaced grid over the training
    /// range. Only defined for one-dimensional scores.
    pub fn curve(&self, grid_size: usize) -> Result<Vec<(f64, f64)>> {
        if self.k() != 1 {
            return Err(Error::InvalidParameter(format!(
                "response curves need 1-dimensional scores, model has {}",
                self.k()
            )));
        }
        if grid_size < 2 {
            return Err(Error::InvalidParameter(format!(
                "grid size must be at least 2, got {grid_size}"
            )));
        }
        let (lo, hi) = self.range(0);
        let mut out = Vec::with_capacity(grid_size);
        for i in 0..grid_size {
            let u = if i == grid_size - 1 {
                hi
            } else {
                lo + (hi - lo) * (i as f64) / ((grid_size - 1) as f64)
            };
            out.push((u, self.predict(&[u])?));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent reference implementation: full sort for the bandwidth,
    /// normal equations accumulated by hand, Gauss-Jordan elimination.
    #[allow(clippy::needless_range_loop)] // index-heavy elimination kernel
    fn oracle_predict(u: &Array2<f64>, y: &[f64], span: f64, degree: usize, query: &[f64]) -> f64 {
        let n = u.nrows();
        let k = u.ncols();
        let scale: Vec<f64> = (0..k)
            .map(|j| {
                let col: Vec<f64> = u.column(j).to_vec();
                let mean = col.iter().sum::<f64>() / n as f64;
                let ss: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum();
                let s = (ss / (n - 1) as f64).sqrt();
                if s > 0.0 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        let mut dist: Vec<f64> = (0..n)
            .map(|i| {
                (0..k)
                    .map(|j| ((u[[i, j]] - query[j]) / scale[j]).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        let m = ((span * n as f64).ceil() as usize).clamp(1, n);
        let mut sorted = dist.clone();
        sorted.sort_by(f64::total_cmp);
        let d_max = sorted[m - 1];
        let w: Vec<f64> = dist
            .drain(..)
            .map(|d| {
                if d_max == 0.0 {
                    if d == 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    let t = d / d_max;
                    if t < 1.0 {
                        (1.0 - t.powi(3)).powi(3)
                    } else {
                        0.0
                    }
                }
            })
            .collect();
        // Accumulate normal equations for the centered polynomial basis.
        let mut terms: Vec<Vec<f64>> = Vec::new();
        for i in 0..n {
            if w[i] == 0.0 {
                continue;
            }
            let v: Vec<f64> = (0..k).map(|j| u[[i, j]] - query[j]).collect();
            let mut row = vec![1.0];
            if degree >= 1 {
                row.extend_from_slice(&v);
            }
            if degree >= 2 {
                for a in 0..k {
                    for b in a..k {
                        row.push(v[a] * v[b]);
                    }
                }
            }
            row.push(w[i]);
            row.push(y[i]);
            terms.push(row);
        }
        let m_cols = terms[0].len() - 2;
        let mut aug = vec![vec![0.0f64; m_cols + 1]; m_cols];
        for row in &terms {
            let wi = row[m_cols];
            let yi = row[m_cols + 1];
            for r in 0..m_cols {
                for c in 0..m_cols {
                    aug[r][c] += wi * row[r] * row[c];
                }
                aug[r][m_cols] += wi * row[r] * yi;
            }
        }
        // Gauss-Jordan with partial pivoting.
        for col in 0..m_cols {
            let pivot = (col..m_cols)
                .max_by(|&a, &b| aug[a][col].abs().total_cmp(&aug[b][col].abs()))
                .unwrap();
            aug.swap(col, pivot);
            let pv = aug[col][col];
            assert!(pv.abs() > 1e-12, "oracle hit a singular system");
            for c in col..=m_cols {
                aug[col][c] /= pv;
            }
            for r in 0..m_cols {
                if r != col {
                    let f = aug[r][col];
                    for c in col..=m_cols {
                        aug[r][c] -= f * aug[col][c];
                    }
                }
            }
        }
        aug[0][m_cols]
    }

    fn sine_data(n: usize, seed: u64) -> (Array2<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u = Array2::zeros((n, 1));
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let t: f64 = rng.gen_range(-3.0..3.0);
            u[[i, 0]] = t;
            y.push(t.sin() + 0.05 * rng.gen_range(-1.0..1.0));
        }
        (u, y)
    }

    #[test]
    fn tricube_shape() {
        assert_eq!(tricube(0.0), 1.0);
        assert_eq!(tricube(1.0), 0.0);
        assert_eq!(tricube(-1.0), 0.0);
        assert_eq!(tricube(2.0), 0.0);
        let v = tricube(0.5);
        assert_abs_diff_eq!(v, (1.0 - 0.125f64).powi(3), epsilon = 1e-15);
        assert!(v > 0.0 && v < 1.0);
    }

    #[test]
    fn constant_response_is_reproduced() {
        let u = Array2::from_shape_fn((20, 1), |(i, _)| i as f64);
        let y = vec![4.25; 20];
        let m = fit_loess(u, y, 0.5, 1).unwrap();
        for q in [-5.0, 0.0, 3.7, 19.0, 40.0] {
            assert_abs_diff_eq!(m.predict(&[q]).unwrap(), 4.25, epsilon = 1e-10);
        }
    }

    #[test]
    fn exact_line_is_reproduced_inside_range() {
        let u = Array2::from_shape_fn((30, 1), |(i, _)| i as f64 * 0.3);
        let y: Vec<f64> = (0..30).map(|i| 2.0 - 1.5 * (i as f64 * 0.3)).collect();
        let m = fit_loess(u, y, 0.4, 1).unwrap();
        for q in [0.0, 1.0, 4.05, 8.7] {
            assert_abs_diff_eq!(m.predict(&[q]).unwrap(), 2.0 - 1.5 * q, epsilon = 1e-9);
        }
    }

    #[test]
    fn queries_beyond_range_are_clamped() {
        let u = Array2::from_shape_fn((25, 1), |(i, _)| i as f64);
        let y: Vec<f64> = (0..25).map(|i| (i as f64).powi(2)).collect();
        let m = fit_loess(u, y, 0.5, 1).unwrap();
        let at_max = m.predict_detailed(&[24.0]).unwrap();
        let beyond = m.predict_detailed(&[1000.0]).unwrap();
        assert!(!at_max.clamped);
        assert!(beyond.clamped);
        assert_eq!(at_max.value, beyond.value);
        let below = m.predict_detailed(&[-3.0]).unwrap();
        assert_eq!(below.value, m.predict(&[0.0]).unwrap());
        assert!(below.clamped);
    }

    #[test]
    fn smooths_a_sine_curve() {
        let (u, y) = sine_data(200, 7);
        let m = fit_loess(u, y, 0.3, 2).unwrap();
        for q in [-2.5f64, -1.0, 0.0, 0.8, 2.2] {
            let got = m.predict(&[q]).unwrap();
            assert!(
                (got - q.sin()).abs() < 0.1,
                "predict({q}) = {got}, want ~{}",
                q.sin()
            );
        }
    }

    #[test]
    fn matches_oracle_on_random_queries() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for &(k, degree) in &[(1usize, 0usize), (1, 1), (1, 2), (2, 1), (3, 1), (2, 2)] {
            let n = 60;
            let mut u = Array2::zeros((n, k));
            let mut y = Vec::with_capacity(n);
            for i in 0..n {
                let mut s = 0.0;
                for j in 0..k {
                    let v = rng.gen_range(-2.0..2.0);
                    u[[i, j]] = v;
                    s += v * (j + 1) as f64;
                }
                y.push(s.sin() + 0.1 * rng.gen_range(-1.0..1.0));
            }
            let m = fit_loess(u.clone(), y.clone(), 0.6, degree).unwrap();
            for _ in 0..8 {
                // Keep queries inside the observed range so the model's
                // boundary clamp is a no-op and both sides see the same point.
                let q: Vec<f64> = (0..k)
                    .map(|j| {
                        let lo = u.column(j).iter().cloned().fold(f64::INFINITY, f64::min);
                        let hi = u
                            .column(j)
                            .iter()
                            .cloned()
                            .fold(f64::NEG_INFINITY, f64::max);
                        rng.gen_range(-1.9..1.9f64).clamp(lo, hi)
                    })
                    .collect();
                let got = m.predict(&q).unwrap();
                let want = oracle_predict(&u, &y, 0.6, degree, &q);
                let rel = (got - want).abs() / want.abs().max(1.0);
                assert!(rel < 1e-8, "k={k} degree={degree}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn duplicate_training_points_collapse_bandwidth() {
        // 10 points all at u = 1 plus 10 spread out; querying u = 1 with a
        // small span hits d_max = 0.
        let mut u = Array2::zeros((20, 1));
        let mut y = Vec::new();
        for i in 0..20 {
            if i < 10 {
                u[[i, 0]] = 1.0;
                y.push(5.0);
            } else {
                u[[i, 0]] = i as f64;
                y.push(0.0);
            }
        }
        let m = fit_loess(u, y, 0.25, 0).unwrap();
        let pred = m.predict_detailed(&[1.0]).unwrap();
        assert_abs_diff_eq!(pred.value, 5.0, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_local_design_falls_back() {
        // Duplicated abscissas everywhere: degree-1 local design is singular
        // when the neighborhood has a single distinct u.
        let mut u = Array2::zeros((12, 1));
        let mut y = Vec::new();
        for i in 0..12 {
            u[[i, 0]] = (i / 6) as f64; // only two distinct values
            y.push(if i / 6 == 0 { 1.0 } else { 3.0 });
        }
        let m = fit_loess(u, y, 0.5, 1).unwrap();
        let pred = m.predict_detailed(&[0.0]).unwrap();
        assert!(pred.degenerate);
        assert_abs_diff_eq!(pred.value, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn span_too_small_reports_feasible_span() {
        let u = Array2::from_shape_fn((20, 1), |(i, _)| i as f64);
        let y: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let err = fit_loess(u, y, 0.05, 1).unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("0.15"),
            "message should name the minimal span: {msg}"
        );
    }

    #[test]
    fn curve_spans_training_range() {
        let (u, y) = sine_data(100, 3);
        let m = fit_loess(u, y, 0.4, 1).unwrap();
        let (lo, hi) = m.range(0);
        let curve = m.curve(33).unwrap();
        assert_eq!(curve.len(), 33);
        assert_eq!(curve[0].0, lo);
        assert_eq!(curve[32].0, hi);
        for pair in &curve {
            assert_eq!(pair.1, m.predict(&[pair.0]).unwrap());
        }
        assert!(m.curve(1).is_err());
    }

    #[test]
    fn curve_requires_one_dimension() {
        let u = Array2::from_shape_fn((30, 2), |(i, j)| (i + j) as f64);
        let y: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let m = fit_loess(u, y, 0.5, 1).unwrap();
        assert!(matches!(m.curve(10), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn serialization_round_trip() {
        let (u, y) = sine_data(40, 11);
        let m = fit_loess(u, y, 0.5, 2).unwrap();
        let json = serde_json::to_string(&m).unwrap();
        let back: LoessModel = serde_json::from_str(&json).unwrap();
        assert_eq!(m, back);
        assert_eq!(m.predict(&[0.25]).unwrap(), back.predict(&[0.25]).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn prop_prediction_within_response_hull(seed in 0u64..500, q in -4.0f64..4.0) {
            let (u, y) = sine_data(50, seed);
            let lo = y.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let m = fit_loess(u, y, 0.7, 0).unwrap();
            // Degree-0 smoothing is a weighted mean: stays inside [lo, hi].
            let v = m.predict(&[q]).unwrap();
            prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
        }

        #[test]
        fn prop_translation_equivariance(shift in -100.0f64..100.0) {
            let (u, y) = sine_data(60, 17);
            let m0 = fit_loess(u.clone(), y.clone(), 0.5, 1).unwrap();
            let shifted = y.iter().map(|v| v + shift).collect::<Vec<_>>();
            let m1 = fit_loess(u, shifted, 0.5, 1).unwrap();
            let q = [0.43];
            let a = m0.predict(&q).unwrap();
            let b = m1.predict(&q).unwrap();
            prop_assert!((b - (a + shift)).abs() < 1e-8 * (1.0 + shift.abs()));
        }

        #[test]
        fn prop_permutation_invariance(seed in 0u64..200) {
            let (u, y) = sine_data(40, seed);
            let m0 = fit_loess(u.clone(), y.clone(), 0.6, 1).unwrap();
            let mut idx: Vec<usize> = (0..40).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
            idx.shuffle(&mut rng);
            let mut u2 = Array2::zeros((40, 1));
            let mut y2 = Vec::with_capacity(40);
            for (r, &i) in idx.iter().enumerate() {
                u2[[r, 0]] = u[[i, 0]];
                y2.push(y[i]);
            }
            let m1 = fit_loess(u2, y2, 0.6, 1).unwrap();
            let q = [0.77];
            let a = m0.predict(&q).unwrap();
            let b = m1.predict(&q).unwrap();
            prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }
}
