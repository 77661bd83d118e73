//! Simulation scenarios with known optimal rules, a parametric least
//! squares baseline, and replicated benchmark/split-evaluation harnesses.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::{Dataset, Label};
use crate::error::{Error, Result};
use crate::evaluate::{empirical_value_parts, misclassification, value_gap};
use crate::linalg;
use crate::recommend::{fit_recommender, FitConfig, Recommender};

/// Deterministic per-replicate seed stream (splitmix64 mixing).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    fn splitmix64(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    splitmix64(seed.wrapping_add(splitmix64(index.wrapping_add(1))))
}

const GAP_SEED_TAG: u64 = 0xFEED_5EED;

/// One of four synthetic treatment scenarios over `X ~ U[-1, 1]^p` with two
/// arms labeled `1` and `-1` and `Y ~ N(Q0(X, A), 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Scenario(u8);

impl Scenario {
    /// All scenarios read at most the first four covariates.
    pub const MIN_COVARIATES: usize = 4;

    pub fn new(id: u8) -> Result<Scenario> {
        if (1..=4).contains(&id) {
            Ok(Scenario(id))
        } else {
            Err(Error::InvalidParameter(format!(
                "scenario must be 1..=4, got {id}"
            )))
        }
    }

    pub fn id(&self) -> u8 {
        self.0
    }

    /// Arm labels in ascending order.
    pub fn arm_labels() -> [Label; 2] {
        [Label::new("-1"), Label::new("1")]
    }

    fn arm_sign(arm: &Label) -> Result<f64> {
        match arm.as_str() {
            "1" => Ok(1.0),
            "-1" => Ok(-1.0),
            other => Err(Error::InvalidParameter(format!(
                "unknown scenario arm {other:?}"
            ))),
        }
    }

    fn check_x(&self, x: &[f64]) -> Result<()> {
        if x.len() < Self::MIN_COVARIATES {
            return Err(Error::DimensionMismatch {
                expected: Self::MIN_COVARIATES,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Interaction effect `t0(x)` for scenarios 2-4.
    fn interaction(&self, x: &[f64]) -> f64 {
        match self.0 {
            2 | 3 => 1.3 * (x[1] - 2.0 * x[0] * x[0] + 0.3),
            _ => 3.8 * (0.8 - x[0] * x[0] - x[1] * x[1]),
        }
    }

    /// Main effect `mu(x)` for scenarios 2-4.
    fn main_effect(&self, x: &[f64]) -> f64 {
        match self.0 {
            2 => 2.0 + 2.0 * x[0] + 2.0 * x[1] + 4.0 * x[2] + 4.0 * x[3],
            _ => 10.0 * x[0] / (0.5 + (x[1] + 1.5) * (x[1] + 1.5)),
        }
    }

    /// True mean response `Q0(x, arm)`.
    pub fn mean_response(&self, x: &[f64], arm: &Label) -> Result<f64> {
        self.check_x(x)?;
        let sign = Self::arm_sign(arm)?;
        Ok(match self.0 {
            1 => {
                let linear = 2.0 + 4.0 * x[0] + 4.0 * x[1] + 4.0 * x[2];
                if sign > 0.0 {
                    linear
                } else {
                    linear * linear
                }
            }
            _ => self.main_effect(x) + sign * self.interaction(x),
        })
    }

    /// Arms attaining the maximum of `Q0(x, .)`, ascending; two labels on
    /// exact ties.
    pub fn optimal_arms(&self, x: &[f64]) -> Result<Vec<Label>> {
        self.check_x(x)?;
        let [neg, pos] = Self::arm_labels();
        let q_neg = self.mean_response(x, &neg)?;
        let q_pos = self.mean_response(x, &pos)?;
        Ok(if q_neg > q_pos {
            vec![neg]
        } else if q_pos > q_neg {
            vec![pos]
        } else {
            vec![neg, pos]
        })
    }

    /// `max_a Q0(x, a)`.
    pub fn max_mean(&self, x: &[f64]) -> Result<f64> {
        self.check_x(x)?;
        let [neg, pos] = Self::arm_labels();
        Ok(self
            .mean_response(x, &neg)?
            .max(self.mean_response(x, &pos)?))
    }
}

/// Draw a dataset from a scenario: `X ~ U[-1, 1]^(n x p)` filled row by
/// row, arms `1`/`-1` split half and half (the extra row, if any, goes to
/// arm `1`), `Y ~ N(Q0(X, A), 1)`, then the rows are shuffled by the same
/// seeded generator. Columns are named `x1..xp`.
pub fn generate(scenario: &Scenario, n: usize, p: usize, seed: u64) -> Result<Dataset> {
    if p < Scenario::MIN_COVARIATES {
        return Err(Error::InvalidParameter(format!(
            "scenarios need at least {} covariates, got {p}",
            Scenario::MIN_COVARIATES
        )));
    }
    if n < 10 {
        return Err(Error::InvalidParameter(format!(
            "need at least 10 observations to satisfy arm minimums, got {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Array2::zeros((n, p));
    for i in 0..n {
        for j in 0..p {
            x[[i, j]] = rng.gen_range(-1.0..1.0);
        }
    }
    let n_pos = n - n / 2;
    let [neg, pos] = Scenario::arm_labels();
    let a: Vec<Label> = (0..n)
        .map(|i| if i < n_pos { pos.clone() } else { neg.clone() })
        .collect();
    let mut y = Vec::with_capacity(n);
    for (i, arm) in a.iter().enumerate() {
        let row: Vec<f64> = x.row(i).to_vec();
        let mean = scenario.mean_response(&row, arm)?;
        let eps: f64 = rng.sample(StandardNormal);
        y.push(mean + eps);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut xs = Array2::zeros((n, p));
    let mut ys = Vec::with_capacity(n);
    let mut arms = Vec::with_capacity(n);
    for (r, &i) in order.iter().enumerate() {
        xs.row_mut(r).assign(&x.row(i));
        ys.push(y[i]);
        arms.push(a[i].clone());
    }
    let names = (1..=p).map(|j| format!("x{j}")).collect();
    Dataset::new(ys, arms, xs, names)
}

/// Parametric baseline: one least squares fit of
/// `y ~ 1 + x + arm + x:arm` (dummy coding, reference = smallest label),
/// recommending the arm with the highest fitted mean.
#[derive(Debug, Clone, PartialEq)]
pub struct OlsRule {
    labels: Vec<Label>,
    beta: Vec<f64>,
    p: usize,
}

/// Fit the baseline on a dataset. Singular designs fall back to a small
/// ridge (1e-8) on the normal equations.
pub fn ols_baseline(d: &Dataset) -> Result<OlsRule> {
    let n = d.n();
    let p = d.p();
    let views = d.split_by_arm();
    let n_arms = views.len();
    if n <= p + n_arms {
        return Err(Error::InvalidData(format!(
            "need more than {} observations for the baseline, got {n}",
            p + n_arms
        )));
    }
    let m_cols = (1 + p) * n_arms;
    let mut group = vec![0usize; n];
    for (g, view) in views.iter().enumerate() {
        for &i in &view.rows {
            group[i] = g;
        }
    }
    let x = d.x();
    let design = DMatrix::from_fn(n, m_cols, |i, c| {
        if c == 0 {
            1.0
        } else if c <= p {
            x[[i, c - 1]]
        } else {
            let g = (c - (p + 1)) / (p + 1) + 1;
            let within = (c - (p + 1)) % (p + 1);
            if group[i] != g {
                0.0
            } else if within == 0 {
                1.0
            } else {
                x[[i, within - 1]]
            }
        }
    });
    let y = DVector::from_iterator(n, d.y().iter().copied());
    let beta = linalg::ols_with_ridge_fallback(&design, &y, 1e-8)
        .ok_or_else(|| Error::InvalidData("baseline design is singular".into()))?;
    Ok(OlsRule {
        labels: views.into_iter().map(|v| v.label).collect(),
        beta: beta.iter().copied().collect(),
        p,
    })
}

impl OlsRule {
    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    /// Fitted mean response for one covariate vector under `arm`.
    pub fn predicted(&self, x: &[f64], arm: &Label) -> Result<f64> {
        if x.len() != self.p {
            return Err(Error::DimensionMismatch {
                expected: self.p,
                got: x.len(),
            });
        }
        let g = self
            .labels
            .iter()
            .position(|l| l == arm)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown arm {arm:?}")))?;
        let mut v = self.beta[0];
        for (b, xv) in self.beta[1..1 + self.p].iter().zip(x) {
            v += b * xv;
        }
        if g > 0 {
            let offset = (1 + self.p) * g;
            v += self.beta[offset];
            for (b, xv) in self.beta[offset + 1..offset + 1 + self.p].iter().zip(x) {
                v += b * xv;
            }
        }
        Ok(v)
    }

    /// Arm with the highest fitted mean (ties toward the smaller label).
    pub fn recommend(&self, x: &[f64]) -> Result<Label> {
        let mut best: Option<(&Label, f64)> = None;
        for label in &self.labels {
            let v = self.predicted(x, label)?;
            match best {
                None => best = Some((label, v)),
                Some((_, bv)) if v > bv => best = Some((label, v)),
                Some(_) => {}
            }
        }
        Ok(best.expect("baseline has arms").0.clone())
    }
}

/// Rules compared by the harnesses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// SIR + smoother recommender.
    Sir,
    /// Parametric least squares baseline.
    Ols,
    /// True optimal rule (simulation only).
    Oracle,
    /// Worst arm everywhere (simulation only).
    Anti,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Sir => "sir",
            Method::Ols => "ols",
            Method::Oracle => "oracle",
            Method::Anti => "anti",
        })
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "sir" => Ok(Method::Sir),
            "ols" => Ok(Method::Ols),
            "oracle" => Ok(Method::Oracle),
            "anti" => Ok(Method::Anti),
            other => Err(format!(
                "unknown method {other:?} (expected sir, ols, oracle or anti)"
            )),
        }
    }
}

/// Benchmark configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: u8,
    pub n: usize,
    pub p: usize,
    pub replicates: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    /// Settings for the SIR method (including optional screening).
    pub fit: FitConfig,
    /// Leave-one-out refits for in-sample recommendations (exact, slow).
    pub loo: bool,
    /// Monte-Carlo draws for the value gap; 0 disables gap evaluation.
    pub gap_samples: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scenario: 1,
            n: 100,
            p: 4,
            replicates: 10,
            seed: 0,
            methods: vec![Method::Sir, Method::Ols],
            fit: FitConfig::default(),
            loo: false,
            gap_samples: 0,
        }
    }
}

/// One method x replicate outcome. Failed replicates keep their row with
/// an error message instead of metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub scenario: u8,
    pub n: usize,
    pub p: usize,
    pub method: Method,
    pub replicate: usize,
    pub misclass_rate: Option<f64>,
    pub value_gap: Option<f64>,
    pub error: Option<String>,
}

/// Per-method aggregate over successful replicates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchSummary {
    pub method: Method,
    pub n_ok: usize,
    pub n_failed: usize,
    pub mean_misclass: Option<f64>,
    pub std_misclass: Option<f64>,
    pub mean_gap: Option<f64>,
    pub std_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub summaries: Vec<BenchSummary>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

impl BenchReport {
    /// Long-format CSV of all replicate rows.
    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "scenario",
            "n",
            "p",
            "method",
            "replicate",
            "misclass_rate",
            "value_gap",
            "error",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.scenario.to_string(),
                r.n.to_string(),
                r.p.to_string(),
                r.method.to_string(),
                r.replicate.to_string(),
                r.misclass_rate.map(|v| v.to_string()).unwrap_or_default(),
                r.value_gap.map(|v| v.to_string()).unwrap_or_default(),
                r.error.clone().unwrap_or_default(),
            ])?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::InvalidData(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::InvalidData(e.to_string()))
    }
}

/// Per-replicate evaluation of one method on one generated dataset.
fn eval_method(
    scenario: &Scenario,
    data: &Dataset,
    optimal: &[Vec<Label>],
    method: Method,
    cfg: &RunConfig,
    gap_seed: u64,
) -> Result<(f64, Option<f64>)> {
    let n = data.n();
    let x = data.x();
    let row_vec = |i: usize| -> Vec<f64> { x.row(i).to_vec() };

    let (recs, gap): (Vec<Label>, Option<f64>) = match method {
        Method::Oracle => {
            let recs = optimal.iter().map(|set| set[0].clone()).collect();
            let gap = if cfg.gap_samples > 0 {
                let rule = |xq: &[f64]| {
                    scenario.optimal_arms(xq).expect("scenario draws are valid")[0].clone()
                };
                Some(value_gap(
                    scenario,
                    cfg.p,
                    &rule,
                    cfg.gap_samples,
                    gap_seed,
                )?)
            } else {
                None
            };
            (recs, gap)
        }
        Method::Anti => {
            let worst = |set: &[Label]| -> Label {
                Scenario::arm_labels()
                    .into_iter()
                    .find(|l| !set.contains(l))
                    .unwrap_or_else(|| set[0].clone())
            };
            let recs = optimal.iter().map(|set| worst(set)).collect();
            let gap = if cfg.gap_samples > 0 {
                let rule = |xq: &[f64]| {
                    let set = scenario.optimal_arms(xq).expect("scenario draws are valid");
                    worst(&set)
                };
                Some(value_gap(
                    scenario,
                    cfg.p,
                    &rule,
                    cfg.gap_samples,
                    gap_seed,
                )?)
            } else {
                None
            };
            (recs, gap)
        }
        Method::Ols => {
            let full = ols_baseline(data)?;
            let recs: Vec<Label> = if cfg.loo {
                let keep: Vec<Vec<usize>> = (0..n)
                    .map(|i| (0..n).filter(|&r| r != i).collect())
                    .collect();
                keep.par_iter()
                    .enumerate()
                    .map(|(i, rows)| {
                        let sub = data.subset_rows(rows)?;
                        ols_baseline(&sub)?.recommend(&row_vec(i))
                    })
                    .collect::<Result<_>>()?
            } else {
                (0..n)
                    .map(|i| full.recommend(&row_vec(i)))
                    .collect::<Result<_>>()?
            };
            let gap = if cfg.gap_samples > 0 {
                let rule = |xq: &[f64]| full.recommend(xq).expect("baseline scoring cannot fail");
                Some(value_gap(
                    scenario,
                    cfg.p,
                    &rule,
                    cfg.gap_samples,
                    gap_seed,
                )?)
            } else {
                None
            };
            (recs, gap)
        }
        Method::Sir => {
            let full = fit_recommender(data, &cfg.fit)?;
            let col_idx: Vec<usize> = full
                .selected_columns()
                .iter()
                .map(|name| {
                    data.column_names()
                        .iter()
                        .position(|c| c == name)
                        .expect("selected columns come from this dataset")
                })
                .collect();
            let pick = |xq: &[f64], model: &Recommender| -> Result<Label> {
                let idx: Vec<usize> = model
                    .selected_columns()
                    .iter()
                    .map(|name| {
                        data.column_names()
                            .iter()
                            .position(|c| c == name)
                            .expect("selected columns come from this dataset")
                    })
                    .collect();
                let sub: Vec<f64> = idx.iter().map(|&j| xq[j]).collect();
                Ok(model.recommend(&sub)?.best)
            };
            let recs: Vec<Label> = if cfg.loo {
                let keep: Vec<Vec<usize>> = (0..n)
                    .map(|i| (0..n).filter(|&r| r != i).collect())
                    .collect();
                keep.par_iter()
                    .enumerate()
                    .map(|(i, rows)| {
                        let sub = data.subset_rows(rows)?;
                        let model = fit_recommender(&sub, &cfg.fit)?;
                        pick(&row_vec(i), &model)
                    })
                    .collect::<Result<_>>()?
            } else {
                (0..n)
                    .map(|i| pick(&row_vec(i), &full))
                    .collect::<Result<_>>()?
            };
            let gap = if cfg.gap_samples > 0 {
                let rule = |xq: &[f64]| {
                    let sub: Vec<f64> = col_idx.iter().map(|&j| xq[j]).collect();
                    full.recommend(&sub)
                        .expect("scoring fresh draws cannot fail")
                        .best
                };
                Some(value_gap(
                    scenario,
                    cfg.p,
                    &rule,
                    cfg.gap_samples,
                    gap_seed,
                )?)
            } else {
                None
            };
            (recs, gap)
        }
    };

    let miss = misclassification(optimal, &recs)?;
    Ok((miss.rate, gap))
}

/// Run the replicated benchmark. Output has exactly
/// `replicates * methods.len()` rows in (replicate, method) order; failed
/// replicates are recorded, not dropped. Results are independent of the
/// worker thread count.
pub fn run_benchmark(cfg: &RunConfig) -> Result<BenchReport> {
    let scenario = Scenario::new(cfg.scenario)?;
    if cfg.replicates == 0 {
        return Err(Error::InvalidParameter("need at least 1 replicate".into()));
    }
    if cfg.methods.is_empty() {
        return Err(Error::InvalidParameter("no methods requested".into()));
    }

    let per_rep: Vec<Vec<BenchRow>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|rep| {
            let rep_seed = derive_seed(cfg.seed, rep as u64);
            let gap_seed = derive_seed(rep_seed, GAP_SEED_TAG);
            let mut rows = Vec::with_capacity(cfg.methods.len());
            let base_row = |method: Method| BenchRow {
                scenario: cfg.scenario,
                n: cfg.n,
                p: cfg.p,
                method,
                replicate: rep,
                misclass_rate: None,
                value_gap: None,
                error: None,
            };
            match generate(&scenario, cfg.n, cfg.p, rep_seed) {
                Err(e) => {
                    for &method in &cfg.methods {
                        let mut row = base_row(method);
                        row.error = Some(e.to_string());
                        rows.push(row);
                    }
                }
                Ok(data) => {
                    let optimal: Result<Vec<Vec<Label>>> = (0..data.n())
                        .map(|i| {
                            let row: Vec<f64> = data.x().row(i).to_vec();
                            scenario.optimal_arms(&row)
                        })
                        .collect();
                    match optimal {
                        Err(e) => {
                            for &method in &cfg.methods {
                                let mut row = base_row(method);
                                row.error = Some(e.to_string());
                                rows.push(row);
                            }
                        }
                        Ok(optimal) => {
                            for &method in &cfg.methods {
                                let mut row = base_row(method);
                                match eval_method(&scenario, &data, &optimal, method, cfg, gap_seed)
                                {
                                    Ok((miss, gap)) => {
                                        row.misclass_rate = Some(miss);
                                        row.value_gap = gap;
                                    }
                                    Err(e) => row.error = Some(e.to_string()),
                                }
                                rows.push(row);
                            }
                        }
                    }
                }
            }
            rows
        })
        .collect();

    let rows: Vec<BenchRow> = per_rep.into_iter().flatten().collect();

    let mut summaries = Vec::new();
    for &method in &cfg.methods {
        let ok: Vec<&BenchRow> = rows
            .iter()
            .filter(|r| r.method == method && r.error.is_none())
            .collect();
        let n_failed = rows
            .iter()
            .filter(|r| r.method == method && r.error.is_some())
            .count();
        let miss: Vec<f64> = ok.iter().filter_map(|r| r.misclass_rate).collect();
        let gaps: Vec<f64> = ok.iter().filter_map(|r| r.value_gap).collect();
        let (mean_misclass, std_misclass) = if miss.is_empty() {
            (None, None)
        } else {
            let (m, s) = mean_std(&miss);
            (Some(m), Some(s))
        };
        let (mean_gap, std_gap) = if gaps.is_empty() {
            (None, None)
        } else {
            let (m, s) = mean_std(&gaps);
            (Some(m), Some(s))
        };
        summaries.push(BenchSummary {
            method,
            n_ok: ok.len(),
            n_failed,
            mean_misclass,
            std_misclass,
            mean_gap,
            std_gap,
        });
    }

    Ok(BenchReport { rows, summaries })
}

/// Split-evaluation configuration (cross-validated value on real data).
#[derive(Debug, Clone, PartialEq)]
pub struct SplitConfig {
    pub folds: usize,
    pub replicates: usize,
    pub seed: u64,
    /// Fitted methods to compare; the observed-assignment baseline is
    /// always included. Only `Sir` and `Ols` are allowed here.
    pub methods: Vec<Method>,
    pub fit: FitConfig,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            folds: 5,
            replicates: 100,
            seed: 0,
            methods: vec![Method::Sir],
            fit: FitConfig::default(),
        }
    }
}

/// One method x split-replicate outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitRow {
    /// `observed`, `sir` or `ols`.
    pub method: String,
    pub replicate: usize,
    pub value: Option<f64>,
    pub n_matched: Option<usize>,
    pub error: Option<String>,
}

/// Per-method aggregate of held-out values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitSummary {
    pub method: String,
    pub n_ok: usize,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    /// `"mean (std)"` to three decimals.
    pub formatted: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitReport {
    pub rows: Vec<SplitRow>,
    pub summaries: Vec<SplitSummary>,
}

impl SplitReport {
    /// Summary CSV: `method,mean,std,n_ok,formatted`.
    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["method", "mean", "std", "n_ok", "formatted"])?;
        for s in &self.summaries {
            w.write_record([
                s.method.clone(),
                s.mean.map(|v| v.to_string()).unwrap_or_default(),
                s.std.map(|v| v.to_string()).unwrap_or_default(),
                s.n_ok.to_string(),
                s.formatted.clone(),
            ])?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::InvalidData(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::InvalidData(e.to_string()))
    }

    /// Replicate-level CSV: `method,replicate,value,n_matched,error`.
    pub fn rows_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["method", "replicate", "value", "n_matched", "error"])?;
        for r in &self.rows {
            w.write_record([
                r.method.clone(),
                r.replicate.to_string(),
                r.value.map(|v| v.to_string()).unwrap_or_default(),
                r.n_matched.map(|v| v.to_string()).unwrap_or_default(),
                r.error.clone().unwrap_or_default(),
            ])?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::InvalidData(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::InvalidData(e.to_string()))
    }
}

/// Repeated stratified splits: each replicate shuffles every arm, deals
/// rows round-robin into `folds` folds, trains all methods on folds
/// `1..folds`, and estimates each rule's value on fold 0 with the training
/// propensity. The observed-assignment baseline is always reported.
pub fn split_evaluate(d: &Dataset, cfg: &SplitConfig) -> Result<SplitReport> {
    if cfg.folds < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 folds, got {}",
            cfg.folds
        )));
    }
    if cfg.replicates == 0 {
        return Err(Error::InvalidParameter("need at least 1 replicate".into()));
    }
    for m in &cfg.methods {
        if !matches!(m, Method::Sir | Method::Ols) {
            return Err(Error::InvalidParameter(format!(
                "method {m} needs a known truth and cannot be split-evaluated"
            )));
        }
    }
    let views = d.split_by_arm();
    for v in &views {
        if v.n() < cfg.folds {
            return Err(Error::InvalidData(format!(
                "arm {:?} has {} rows, fewer than {} folds",
                v.label.as_str(),
                v.n(),
                cfg.folds
            )));
        }
    }

    let method_names: Vec<String> = std::iter::once("observed".to_owned())
        .chain(cfg.methods.iter().map(|m| m.to_string()))
        .collect();

    let per_rep: Vec<Vec<SplitRow>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|rep| {
            let rep_seed = derive_seed(cfg.seed, rep as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(rep_seed);
            // Stratified round-robin deal; fold 0 is the test fold.
            let mut test: Vec<usize> = Vec::new();
            let mut train: Vec<usize> = Vec::new();
            for view in &views {
                let mut rows = view.rows.clone();
                rows.shuffle(&mut rng);
                for (pos, &row) in rows.iter().enumerate() {
                    if pos % cfg.folds == 0 {
                        test.push(row);
                    } else {
                        train.push(row);
                    }
                }
            }
            test.sort_unstable();
            train.sort_unstable();

            let y_test: Vec<f64> = test.iter().map(|&i| d.y()[i]).collect();
            let a_test: Vec<Label> = test.iter().map(|&i| d.arms()[i].clone()).collect();

            let mut rows_out = Vec::with_capacity(method_names.len());
            let fail_all = |msg: &str, rows_out: &mut Vec<SplitRow>| {
                for name in &method_names {
                    rows_out.push(SplitRow {
                        method: name.clone(),
                        replicate: rep,
                        value: None,
                        n_matched: None,
                        error: Some(msg.to_owned()),
                    });
                }
            };

            let d_train = match d.subset_rows(&train) {
                Ok(t) => t,
                Err(e) => {
                    fail_all(&e.to_string(), &mut rows_out);
                    return rows_out;
                }
            };
            let propensity = d_train.empirical_propensity();

            for name in &method_names {
                let result: Result<Vec<Label>> = match name.as_str() {
                    "observed" => Ok(a_test.clone()),
                    "sir" => (|| {
                        let model = fit_recommender(&d_train, &cfg.fit)?;
                        let x_all = model.gather_columns(d)?;
                        test.iter()
                            .map(|&i| {
                                let row: Vec<f64> = x_all.row(i).to_vec();
                                Ok(model.recommend(&row)?.best)
                            })
                            .collect()
                    })(),
                    "ols" => (|| {
                        let rule = ols_baseline(&d_train)?;
                        test.iter()
                            .map(|&i| {
                                let row: Vec<f64> = d.x().row(i).to_vec();
                                rule.recommend(&row)
                            })
                            .collect()
                    })(),
                    _ => unreachable!(),
                };
                let row = match result
                    .and_then(|recs| empirical_value_parts(&y_test, &a_test, &recs, &propensity))
                {
                    Ok(est) => SplitRow {
                        method: name.clone(),
                        replicate: rep,
                        value: Some(est.value),
                        n_matched: Some(est.n_matched),
                        error: None,
                    },
                    Err(e) => SplitRow {
                        method: name.clone(),
                        replicate: rep,
                        value: None,
                        n_matched: None,
                        error: Some(e.to_string()),
                    },
                };
                rows_out.push(row);
            }
            rows_out
        })
        .collect();

    let rows: Vec<SplitRow> = per_rep.into_iter().flatten().collect();

    let mut summaries = Vec::new();
    for name in &method_names {
        let values: Vec<f64> = rows
            .iter()
            .filter(|r| &r.method == name && r.error.is_none())
            .filter_map(|r| r.value)
            .collect();
        let (mean, std, formatted) = if values.is_empty() {
            (None, None, "n/a".to_owned())
        } else {
            let (m, s) = mean_std(&values);
            (Some(m), Some(s), format!("{m:.3} ({s:.3})"))
        };
        summaries.push(SplitSummary {
            method: name.clone(),
            n_ok: values.len(),
            mean,
            std,
            formatted,
        });
    }

    Ok(SplitReport { rows, summaries })
}
