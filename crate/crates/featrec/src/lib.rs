//! Treatment recommendation from per-arm feature scores.
//!
//! The pipeline in brief: load a tabular dataset of (response, arm, covariates),
//! optionally screen covariates down to a relevant subset, fit a per-arm
//! sliced-inverse-regression projection whose coordinates we call *feature
//! scores*, smooth the response over those scores with a local polynomial
//! ([`loess`]), and recommend for each patient the arm whose smoothed response
//! is highest. [`evaluate`] estimates the population value of any such rule
//! from observational data by inverse-propensity weighting, and [`simbench`]
//! reproduces a four-scenario simulation study comparing the fitted rule
//! against oracle, worst-case, and linear-model baselines.
//!
//! Most programs only need [`load_csv`], [`fit_recommender`], and
//! [`Recommender::recommend`]:
//!
//! ```no_run
//! use featrec::{load_csv, fit_recommender, CsvSchema, FitConfig};
//!
//! let schema = CsvSchema::new("y", "treatment", vec!["x*".into()]);
//! let data = load_csv("trial.csv", &schema)?;
//! let model = fit_recommender(&data, &FitConfig::default())?;
//! let rec = model.recommend(&[0.3, -1.2, 0.8, 0.0])?;
//! println!("{} (margin {:.3})", rec.best, rec.margin);
//! # Ok::<(), featrec::Error>(())
//! ```

pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod loess;
pub mod recommend;
pub mod screening;
pub mod simbench;
pub mod sir;

mod linalg;
mod serde_mat;

pub use dataset::{load_csv, load_matrix_csv, ArmView, CsvSchema, Dataset, Label, MIN_ARM_SIZE};
pub use error::{Error, Result};
pub use evaluate::{
    empirical_value, empirical_value_unnormalized, misclassification, value_gap, MisclassReport,
    ValueEstimate,
};
pub use loess::{fit_loess, LoessModel, LoessPrediction, DEFAULT_DEGREE, DEFAULT_SPAN};
pub use recommend::{
    fit_recommender, ArmPrediction, FitConfig, PlotData, Recommendation, Recommender, ScreenConfig,
    SliceMode,
};
pub use screening::{
    bh_select, cauchy_combination, global_gate, loess_screen, marginal_pvalues, GateResult,
    ScreenMethod, ScreenResult,
};
pub use simbench::{
    derive_seed, ols_baseline, run_benchmark, split_evaluate, BenchReport, Method, RunConfig,
    Scenario, SplitConfig, SplitReport,
};
pub use sir::{
    chi2_dimension_test, feature_scores, fit_sir, DimensionTest, SirFit, SliceSpec, DEFAULT_SLICES,
};
