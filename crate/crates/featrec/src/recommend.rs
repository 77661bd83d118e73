//! Per-arm model fitting and treatment recommendation.
//!
//! For each treatment arm the pipeline fits a SIR basis on that arm's data,
//! projects covariates onto feature scores `u = B x`, and smooths the
//! response over the scores. A new patient is recommended the arm whose
//! smoothed response at the patient's scores is highest (ties broken toward
//! the smallest arm label).

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Label};
use crate::error::{Error, Result};
use crate::loess::{fit_loess, LoessModel, DEFAULT_DEGREE, DEFAULT_SPAN};
use crate::screening::{bh_select, loess_screen, marginal_pvalues, ScreenMethod, ScreenResult};
use crate::sir::{feature_scores, fit_sir, SirFit, SliceSpec, DEFAULT_SLICES};

/// Version tag written into model files.
pub const SCHEMA_VERSION: u32 = 1;

/// How the response is sliced during SIR fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SliceMode {
    /// One slice per level when the response takes at most `n_slices`
    /// distinct values, equal-count slices otherwise.
    Auto,
    EqualCount,
    ByLevel,
}

impl std::fmt::Display for SliceMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SliceMode::Auto => "auto",
            SliceMode::EqualCount => "equal-count",
            SliceMode::ByLevel => "by-level",
        })
    }
}

/// Optional covariate screening applied before fitting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScreenConfig {
    /// Benjamini-Hochberg on marginal p-values at FDR level `q`.
    Fdr { q: f64 },
    /// Keep the `ceil(fraction * p)` columns with the smallest pooled
    /// smoother SSE.
    Loess { fraction: f64 },
}

/// Fitting configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Number of SIR directions per arm.
    pub k: usize,
    /// Slice count for equal-count slicing.
    pub n_slices: usize,
    pub slice_mode: SliceMode,
    /// Smoother span (fraction of each arm's observations).
    pub span: f64,
    /// Replace `span` with the rate-optimal schedule
    /// `n_a^(-1 / (k + 3))` per arm.
    pub span_schedule: bool,
    /// Local polynomial degree.
    pub degree: usize,
    pub screening: Option<ScreenConfig>,
    /// Recorded in provenance; the fit itself is deterministic.
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            k: 1,
            n_slices: DEFAULT_SLICES,
            slice_mode: SliceMode::Auto,
            span: DEFAULT_SPAN,
            span_schedule: false,
            degree: DEFAULT_DEGREE,
            screening: None,
            seed: 0,
        }
    }
}

/// Screening summary stored in provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningInfo {
    pub method: ScreenMethod,
    /// FDR level `q` or selection fraction, depending on the method.
    pub level: f64,
    /// Cutoff actually applied.
    pub threshold: f64,
}

/// Reproducibility record stored with every model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub k: usize,
    pub n_slices: usize,
    pub slice_mode: SliceMode,
    pub span: f64,
    pub span_schedule: bool,
    pub degree: usize,
    pub screening: Option<ScreeningInfo>,
    pub seed: u64,
}

/// Fitted models for one treatment arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmModel {
    pub sir: SirFit,
    pub loess: LoessModel,
}

/// The complete fitted recommendation rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommender {
    schema_version: u32,
    arms: BTreeMap<Label, ArmModel>,
    propensity: BTreeMap<Label, f64>,
    selected_columns: Vec<String>,
    provenance: Provenance,
}

/// Prediction details for a single arm at one covariate vector.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArmPrediction {
    /// Feature scores `u = B x`.
    pub scores: Vec<f64>,
    /// Smoothed response at the scores.
    pub predicted: f64,
    /// Scores fell outside the arm's training range and were clamped.
    pub clamped: bool,
}

/// Recommendation for one covariate vector.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Recommendation {
    pub best: Label,
    /// Best predicted response minus the runner-up.
    pub margin: f64,
    pub per_arm: BTreeMap<Label, ArmPrediction>,
}

/// Run screening (when configured) and fit all per-arm models.
///
/// The global association gate is *not* run here; callers decide whether to
/// gate fitting on it.
pub fn fit_recommender(d: &Dataset, config: &FitConfig) -> Result<Recommender> {
    if config.k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    if config.n_slices < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 slices, got {}",
            config.n_slices
        )));
    }

    // Screening.
    let (d_work, screening_info): (Dataset, Option<ScreeningInfo>) = match &config.screening {
        None => (d.clone(), None),
        Some(cfg) => {
            let result: ScreenResult = match cfg {
                ScreenConfig::Fdr { q } => {
                    let marginal = marginal_pvalues(d)?;
                    bh_select(&marginal.values, *q)?
                }
                ScreenConfig::Loess { fraction } => loess_screen(d, *fraction)?,
            };
            if result.selected.is_empty() {
                return Err(Error::InvalidData(
                    "screening selected no covariates; relax the threshold or skip screening"
                        .into(),
                ));
            }
            let names: Vec<String> = result
                .selected
                .iter()
                .map(|&j| d.column_names()[j].clone())
                .collect();
            let info = ScreeningInfo {
                method: result.method,
                level: match cfg {
                    ScreenConfig::Fdr { q } => *q,
                    ScreenConfig::Loess { fraction } => *fraction,
                },
                threshold: result.threshold,
            };
            (d.select_columns(&names)?, Some(info))
        }
    };

    // Slicing mode.
    let spec = match config.slice_mode {
        SliceMode::EqualCount => SliceSpec::EqualCount(config.n_slices),
        SliceMode::ByLevel => SliceSpec::ByLevel,
        SliceMode::Auto => {
            if d_work.distinct_y_count() <= config.n_slices {
                SliceSpec::ByLevel
            } else {
                SliceSpec::EqualCount(config.n_slices)
            }
        }
    };

    // Per-arm fits.
    let views = d_work.split_by_arm();
    let fitted: Vec<Result<(Label, ArmModel)>> = views
        .par_iter()
        .map(|view| {
            let label = view.label.clone();
            let arm_err = |message: String| Error::ArmFit {
                label: label.as_str().to_owned(),
                message,
            };
            let n_a = view.n();
            if n_a < config.k + 2 {
                return Err(arm_err(format!(
                    "{} observations cannot support k = {}",
                    n_a, config.k
                )));
            }
            let x_arm = d_work.arm_x(view);
            let y_arm = d_work.arm_y(view);
            let span = if config.span_schedule {
                (n_a as f64).powf(-1.0 / (config.k as f64 + 3.0))
            } else {
                config.span
            };
            let sir = fit_sir(x_arm.view(), &y_arm, config.k, &spec)
                .map_err(|e| arm_err(e.to_string()))?;
            let u = feature_scores(&sir, x_arm.view())?;
            let loess =
                fit_loess(u, y_arm, span, config.degree).map_err(|e| arm_err(e.to_string()))?;
            Ok((label, ArmModel { sir, loess }))
        })
        .collect();

    let mut arms = BTreeMap::new();
    for item in fitted {
        let (label, model) = item?;
        arms.insert(label, model);
    }

    Ok(Recommender {
        schema_version: SCHEMA_VERSION,
        arms,
        propensity: d.empirical_propensity(),
        selected_columns: d_work.column_names().to_vec(),
        provenance: Provenance {
            k: config.k,
            n_slices: config.n_slices,
            slice_mode: config.slice_mode,
            span: config.span,
            span_schedule: config.span_schedule,
            degree: config.degree,
            screening: screening_info,
            seed: config.seed,
        },
    })
}

impl Recommender {
    pub fn arms(&self) -> &BTreeMap<Label, ArmModel> {
        &self.arms
    }

    pub fn propensity(&self) -> &BTreeMap<Label, f64> {
        &self.propensity
    }

    pub fn selected_columns(&self) -> &[String] {
        &self.selected_columns
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn k(&self) -> usize {
        self.provenance.k
    }

    fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Model(format!(
                "unsupported schema version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.arms.len() < 2 {
            return Err(Error::Model("model needs at least 2 arms".into()));
        }
        if self.selected_columns.is_empty() {
            return Err(Error::Model("model has no covariate columns".into()));
        }
        let p = self.selected_columns.len();
        for (label, arm) in &self.arms {
            if arm.sir.p() != p {
                return Err(Error::Model(format!(
                    "arm {label:?}: directions have {} columns, model selects {p}",
                    arm.sir.p()
                )));
            }
            if arm.loess.k() != arm.sir.k() {
                return Err(Error::Model(format!(
                    "arm {label:?}: smoother dimension {} does not match k = {}",
                    arm.loess.k(),
                    arm.sir.k()
                )));
            }
        }
        Ok(())
    }

    /// Recommend an arm for one covariate vector (ordered as
    /// [`Recommender::selected_columns`]).
    pub fn recommend(&self, x: &[f64]) -> Result<Recommendation> {
        let p = self.selected_columns.len();
        if x.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: x.len(),
            });
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidData("non-finite covariate value".into()));
        }
        let mut per_arm = BTreeMap::new();
        for (label, arm) in &self.arms {
            let scores = arm.sir.score_one(x)?;
            let pred = arm.loess.predict_detailed(&scores)?;
            per_arm.insert(
                label.clone(),
                ArmPrediction {
                    scores,
                    predicted: pred.value,
                    clamped: pred.clamped,
                },
            );
        }
        // Ascending label order with a strict comparison: on exact ties the
        // smallest label wins.
        let mut best: Option<(&Label, f64)> = None;
        let mut runner_up = f64::NEG_INFINITY;
        for (label, pred) in &per_arm {
            match best {
                None => best = Some((label, pred.predicted)),
                Some((_, bv)) if pred.predicted > bv => {
                    runner_up = bv;
                    best = Some((label, pred.predicted));
                }
                Some(_) => runner_up = runner_up.max(pred.predicted),
            }
        }
        let (best, best_value) = best.expect("validated models have arms");
        Ok(Recommendation {
            best: best.clone(),
            margin: best_value - runner_up,
            per_arm,
        })
    }

    /// Recommendations for every row of a covariate matrix.
    pub fn recommend_matrix(&self, x: ArrayView2<'_, f64>) -> Result<Vec<Recommendation>> {
        if x.ncols() != self.selected_columns.len() {
            return Err(Error::DimensionMismatch {
                expected: self.selected_columns.len(),
                got: x.ncols(),
            });
        }
        let rows: Vec<Vec<f64>> = (0..x.nrows()).map(|i| x.row(i).to_vec()).collect();
        rows.par_iter().map(|row| self.recommend(row)).collect()
    }

    /// Gather the model's covariate columns out of a dataset, in model
    /// order.
    pub fn gather_columns(&self, d: &Dataset) -> Result<Array2<f64>> {
        let mut idx = Vec::with_capacity(self.selected_columns.len());
        let mut missing = Vec::new();
        for name in &self.selected_columns {
            match d.column_names().iter().position(|c| c == name) {
                Some(j) => idx.push(j),
                None => missing.push(name.as_str()),
            }
        }
        if !missing.is_empty() {
            return Err(Error::Model(format!(
                "dataset is missing model columns: {}",
                missing.join(", ")
            )));
        }
        let x = d.x();
        let mut out = Array2::zeros((d.n(), idx.len()));
        for (c, &j) in idx.iter().enumerate() {
            out.column_mut(c).assign(&x.column(j));
        }
        Ok(out)
    }

    /// Serialize to pretty JSON (stable field order, round-trip exact
    /// floats).
    pub fn to_json_string(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json_str(s: &str) -> Result<Recommender> {
        let model: Recommender = serde_json::from_str(s)?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json_string()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Recommender> {
        let text = std::fs::read_to_string(path)?;
        Recommender::from_json_str(&text)
    }
}

/// One visualization row.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotRow {
    pub arm: Label,
    pub kind: PlotKind,
    /// Feature scores (length k).
    pub u: Vec<f64>,
    pub y: f64,
    /// 1-based training row, set for marker rows.
    pub patient: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    /// Observed (score, response) pair.
    Scatter,
    /// Smoothed curve sample.
    Curve,
    /// Highlighted patient prediction.
    Marker,
}

impl PlotKind {
    fn as_str(self) -> &'static str {
        match self {
            PlotKind::Scatter => "scatter",
            PlotKind::Curve => "curve",
            PlotKind::Marker => "marker",
        }
    }
}

/// Long-format plotting data for per-arm response curves.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotData {
    pub k: usize,
    pub rows: Vec<PlotRow>,
}

impl PlotData {
    /// Render as CSV: `arm,kind,u,y,patient_id` for one-dimensional scores,
    /// `u1..uk` columns otherwise. Curve rows exist only for `k = 1`.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        out.push_str("arm,kind,");
        if self.k == 1 {
            out.push_str("u,");
        } else {
            for j in 1..=self.k {
                out.push_str(&format!("u{j},"));
            }
        }
        out.push_str("y,patient_id\n");
        for row in &self.rows {
            out.push_str(row.arm.as_str());
            out.push(',');
            out.push_str(row.kind.as_str());
            out.push(',');
            for v in &row.u {
                out.push_str(&v.to_string());
                out.push(',');
            }
            out.push_str(&row.y.to_string());
            out.push(',');
            if let Some(id) = row.patient {
                out.push_str(&id.to_string());
            }
            out.push('\n');
        }
        out
    }
}

/// Build plotting data from a fitted model and its training dataset:
/// per-arm score/response scatter, the smoothed curve on a `grid_size`
/// grid (one-dimensional scores only), and optional per-patient markers
/// giving each listed training row's predicted position on every arm's
/// curve. `markers` are 1-based row numbers.
pub fn plot_data(
    model: &Recommender,
    d: &Dataset,
    grid_size: usize,
    markers: &[usize],
) -> Result<PlotData> {
    let x = model.gather_columns(d)?;
    let k = model.arms.values().next().map(|a| a.sir.k()).unwrap_or(1);
    for label in d.split_by_arm().iter().map(|v| &v.label) {
        if !model.arms.contains_key(label) {
            return Err(Error::Model(format!(
                "dataset arm {label:?} is not in the model"
            )));
        }
    }
    for &id in markers {
        if id == 0 || id > d.n() {
            return Err(Error::Model(format!(
                "patient id {id} out of range 1..={}",
                d.n()
            )));
        }
    }

    let mut rows = Vec::new();
    for (label, arm) in &model.arms {
        // Scatter: this arm's own training points.
        for (i, row_label) in d.arms().iter().enumerate() {
            if row_label != label {
                continue;
            }
            let xr: Vec<f64> = x.row(i).to_vec();
            rows.push(PlotRow {
                arm: label.clone(),
                kind: PlotKind::Scatter,
                u: arm.sir.score_one(&xr)?,
                y: d.y()[i],
                patient: None,
            });
        }
        // Smoothed curve over the score range.
        if k == 1 {
            for (u, y) in arm.loess.curve(grid_size)? {
                rows.push(PlotRow {
                    arm: label.clone(),
                    kind: PlotKind::Curve,
                    u: vec![u],
                    y,
                    patient: None,
                });
            }
        }
        // Markers: listed patients positioned on this arm's curve.
        for &id in markers {
            let xr: Vec<f64> = x.row(id - 1).to_vec();
            let scores = arm.sir.score_one(&xr)?;
            let pred = arm.loess.predict_detailed(&scores)?;
            rows.push(PlotRow {
                arm: label.clone(),
                kind: PlotKind::Marker,
                u: scores,
                y: pred.value,
                patient: Some(id),
            });
        }
    }
    Ok(PlotData { k, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    /// Two arms with opposite linear response in x0; other columns noise.
    fn crossing_data(n: usize, p: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Array2::zeros((n, p));
        let mut y = Vec::with_capacity(n);
        let mut a = Vec::with_capacity(n);
        for i in 0..n {
            for j in 0..p {
                x[[i, j]] = rng.gen_range(-1.0..1.0);
            }
            let arm_pos = i % 2 == 0;
            a.push(Label::new(if arm_pos { "1" } else { "-1" }));
            let slope = if arm_pos { 3.0 } else { -3.0 };
            y.push(slope * x[[i, 0]] + 0.1 * rng.gen_range(-1.0..1.0));
        }
        let names = (0..p).map(|j| format!("x{}", j + 1)).collect();
        Dataset::new(y, a, x, names).unwrap()
    }

    #[test]
    fn recommends_the_better_arm() {
        let d = crossing_data(300, 4, 1);
        let model = fit_recommender(&d, &FitConfig::default()).unwrap();
        let mut probe = vec![0.0; 4];
        probe[0] = 0.8;
        let rec = model.recommend(&probe).unwrap();
        assert_eq!(rec.best.as_str(), "1");
        assert!(rec.margin > 1.0, "margin {}", rec.margin);
        probe[0] = -0.8;
        let rec = model.recommend(&probe).unwrap();
        assert_eq!(rec.best.as_str(), "-1");
        assert_eq!(rec.per_arm.len(), 2);
    }

    #[test]
    fn exact_tie_picks_smallest_label() {
        // Identical data in both arms: identical fits, identical
        // predictions, tie broken toward the smaller label.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let half = 30;
        let mut x = Array2::zeros((2 * half, 2));
        let mut y = Vec::new();
        let mut a = Vec::new();
        let base: Vec<(f64, f64, f64)> = (0..half)
            .map(|_| {
                (
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                )
            })
            .collect();
        for (i, &(x1, x2, noise)) in base.iter().enumerate() {
            x[[i, 0]] = x1;
            x[[i, 1]] = x2;
            x[[i + half, 0]] = x1;
            x[[i + half, 1]] = x2;
            y.push(x1 + 0.2 * noise);
            a.push(Label::new("b"));
        }
        for &(x1, _, noise) in base.iter() {
            y.push(x1 + 0.2 * noise);
            a.push(Label::new("a"));
        }
        let d = Dataset::new(y, a, x, vec!["x1".into(), "x2".into()]).unwrap();
        let model = fit_recommender(&d, &FitConfig::default()).unwrap();
        let rec = model.recommend(&[0.3, -0.1]).unwrap();
        assert_eq!(rec.best.as_str(), "a");
        assert_eq!(rec.margin, 0.0);
        let pa = &rec.per_arm[&Label::new("a")];
        let pb = &rec.per_arm[&Label::new("b")];
        assert_eq!(pa.predicted, pb.predicted);
    }

    /// Two arms whose responses share a strong x0 main effect (detectable
    /// by marginal screening) but differ in slope.
    fn main_effect_data(n: usize, p: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Array2::zeros((n, p));
        let mut y = Vec::with_capacity(n);
        let mut a = Vec::with_capacity(n);
        for i in 0..n {
            for j in 0..p {
                x[[i, j]] = rng.gen_range(-1.0..1.0);
            }
            let arm_pos = i % 2 == 0;
            a.push(Label::new(if arm_pos { "1" } else { "-1" }));
            let slope = if arm_pos { 5.0 } else { 1.0 };
            y.push(slope * x[[i, 0]] + 0.1 * rng.gen_range(-1.0..1.0));
        }
        let names = (0..p).map(|j| format!("x{}", j + 1)).collect();
        Dataset::new(y, a, x, names).unwrap()
    }

    #[test]
    fn screening_shrinks_the_model() {
        let d = main_effect_data(200, 8, 5);
        let config = FitConfig {
            screening: Some(ScreenConfig::Fdr { q: 0.05 }),
            ..FitConfig::default()
        };
        let model = fit_recommender(&d, &config).unwrap();
        assert!(model.selected_columns().contains(&"x1".to_string()));
        assert!(model.selected_columns().len() < 8);
        let rec = model
            .recommend(&vec![0.5; model.selected_columns().len()])
            .unwrap();
        assert!(rec.per_arm.len() == 2);
        let info = model.provenance().screening.as_ref().unwrap();
        assert_eq!(info.method, ScreenMethod::Fdr);
        assert_eq!(info.level, 0.05);
    }

    #[test]
    fn auto_mode_slices_discrete_response_by_level() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 200;
        let mut x = Array2::zeros((n, 3));
        let mut y = Vec::new();
        let mut a = Vec::new();
        for i in 0..n {
            for j in 0..3 {
                x[[i, j]] = rng.gen_range(-1.0..1.0);
            }
            a.push(Label::new(if i % 2 == 0 { "1" } else { "-1" }));
            // 5-level discretized response.
            let t: f64 = x[[i, 0]] + 0.3 * rng.gen_range(-1.0..1.0);
            y.push((t * 2.0).round().clamp(-2.0, 2.0));
        }
        let names = (0..3).map(|j| format!("x{}", j + 1)).collect();
        let d = Dataset::new(y, a, x, names).unwrap();
        let model = fit_recommender(&d, &FitConfig::default()).unwrap();
        for arm in model.arms().values() {
            assert!(arm.sir.n_slices() <= 5);
            assert!(arm.sir.n_slices() >= 2);
        }
    }

    #[test]
    fn span_schedule_uses_arm_size() {
        let d = crossing_data(200, 3, 21);
        let config = FitConfig {
            span_schedule: true,
            ..FitConfig::default()
        };
        let model = fit_recommender(&d, &config).unwrap();
        for arm in model.arms().values() {
            let n_a = arm.loess.n() as f64;
            let want = n_a.powf(-0.25);
            assert_eq!(arm.loess.span(), want);
        }
        assert!(model.provenance().span_schedule);
    }

    #[test]
    fn serialization_round_trip_preserves_predictions() {
        let d = crossing_data(150, 4, 7);
        let model = fit_recommender(&d, &FitConfig::default()).unwrap();
        let json = model.to_json_string().unwrap();
        let back = Recommender::from_json_str(&json).unwrap();
        assert_eq!(model, back);
        let probe = [0.4, -0.2, 0.9, 0.0];
        let r0 = model.recommend(&probe).unwrap();
        let r1 = back.recommend(&probe).unwrap();
        assert_eq!(r0.best, r1.best);
        assert_eq!(
            r0.per_arm[&Label::new("1")].predicted,
            r1.per_arm[&Label::new("1")].predicted
        );
    }

    #[test]
    fn refit_is_byte_identical() {
        let d = crossing_data(150, 4, 7);
        let m1 = fit_recommender(&d, &FitConfig::default()).unwrap();
        let m2 = fit_recommender(&d, &FitConfig::default()).unwrap();
        assert_eq!(m1.to_json_string().unwrap(), m2.to_json_string().unwrap());
    }

    #[test]
    fn model_file_validation() {
        let d = crossing_data(100, 3, 2);
        let model = fit_recommender(&d, &FitConfig::default()).unwrap();
        let json = model.to_json_string().unwrap();
        let tampered = json.replace("\"schema_version\": 1", "\"schema_version\": 99");
        assert!(matches!(
            Recommender::from_json_str(&tampered),
            Err(Error::Model(_))
        ));
    }

    #[test]
    fn recommend_checks_dimensions() {
        let d = crossing_data(100, 3, 2);
        let model = fit_recommender(&d, &FitConfig::default()).unwrap();
        assert!(matches!(
            model.recommend(&[1.0, 2.0]),
            Err(Error::DimensionMismatch {
                expected: 3,
                got: 2
            })
        ));
        assert!(model.recommend(&[1.0, 2.0, f64::NAN]).is_err());
    }

    #[test]
    fn plot_data_layout() {
        let d = crossing_data(80, 3, 3);
        let model = fit_recommender(&d, &FitConfig::default()).unwrap();
        let plot = plot_data(&model, &d, 25, &[1, 40]).unwrap();
        assert_eq!(plot.k, 1);
        let scatter = plot
            .rows
            .iter()
            .filter(|r| r.kind == PlotKind::Scatter)
            .count();
        let curve = plot
            .rows
            .iter()
            .filter(|r| r.kind == PlotKind::Curve)
            .count();
        let marker = plot
            .rows
            .iter()
            .filter(|r| r.kind == PlotKind::Marker)
            .count();
        assert_eq!(scatter, 80);
        assert_eq!(curve, 2 * 25);
        assert_eq!(marker, 2 * 2);
        let csv = plot.to_csv_string();
        assert!(csv.starts_with("arm,kind,u,y,patient_id\n"));
        // Markers carry their 1-based id.
        assert!(csv.lines().any(|l| l.ends_with(",40")));

        assert!(matches!(
            plot_data(&model, &d, 25, &[81]),
            Err(Error::Model(_))
        ));
        assert!(matches!(
            plot_data(&model, &d, 25, &[0]),
            Err(Error::Model(_))
        ));
    }

    #[test]
    fn plot_csv_deterministic_across_refits() {
        let d = crossing_data(80, 3, 3);
        let m1 = fit_recommender(&d, &FitConfig::default()).unwrap();
        let m2 = fit_recommender(&d, &FitConfig::default()).unwrap();
        let p1 = plot_data(&m1, &d, 40, &[5]).unwrap().to_csv_string();
        let p2 = plot_data(&m2, &d, 40, &[5]).unwrap().to_csv_string();
        assert_eq!(p1, p2);
    }

    #[test]
    fn training_scores_match_recommend_scores() {
        // The scores the smoother was trained on must be reproduced exactly
        // by scoring the training rows again.
        let d = crossing_data(100, 4, 17);
        let model = fit_recommender(&d, &FitConfig::default()).unwrap();
        let x = model.gather_columns(&d).unwrap();
        for (label, arm) in model.arms() {
            let mut row_idx = 0usize;
            for (i, row_label) in d.arms().iter().enumerate() {
                if row_label != label {
                    continue;
                }
                let xr: Vec<f64> = x.row(i).to_vec();
                let scores = arm.sir.score_one(&xr).unwrap();
                assert_eq!(scores[0], arm.loess.u_train()[[row_idx, 0]]);
                row_idx += 1;
            }
            assert_eq!(row_idx, arm.loess.n());
        }
    }
}
