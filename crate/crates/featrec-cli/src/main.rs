//! `featrec` — fit treatment-recommendation models from tabular trial data
//! and evaluate them.
//!
//! Exit codes: 0 success, 1 usage or data error, 3 statistical gate alert.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use featrec::recommend::plot_data;
use featrec::{
    chi2_dimension_test, empirical_value, fit_recommender, global_gate, load_csv, load_matrix_csv,
    run_benchmark, split_evaluate, CsvSchema, Dataset, FitConfig, Method, Recommender, RunConfig,
    Scenario, ScreenConfig, SliceMode, SplitConfig,
};

/// Exit status when a statistical gate (global association test) fires.
const GATE_ALERT: u8 = 3;

#[derive(Parser)]
#[command(
    name = "featrec",
    version,
    about = "Treatment recommendation from per-arm feature scores",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Test whether any covariate is associated with the response at all.
    ///
    /// Combines per-covariate p-values into one global p-value. Exits 0
    /// when the test passes (small p-value), 3 when it alerts.
    GlobalTest(GlobalTestArgs),
    /// Rank covariates and report which ones a screening rule keeps.
    Screen(ScreenArgs),
    /// Fit a recommendation model and write it to a JSON file.
    Fit(FitArgs),
    /// Recommend a treatment for each row of a covariate CSV.
    Recommend(RecommendArgs),
    /// Emit scatter/curve/marker plotting data for a fitted model.
    Plotdata(PlotdataArgs),
    /// Estimate the empirical value of a model's rule on a dataset.
    Value(ValueArgs),
    /// Run the simulation benchmark on a built-in scenario.
    Simulate(SimulateArgs),
    /// Cross-validated value comparison on a real dataset.
    SplitEval(SplitEvalArgs),
}

/// Where and how to read a dataset CSV.
#[derive(Args)]
struct SchemaArgs {
    /// Input CSV file.
    #[arg(long)]
    input: PathBuf,
    /// Response column.
    #[arg(long, default_value = "y")]
    y_col: String,
    /// Treatment/arm column.
    #[arg(long, default_value = "a")]
    a_col: String,
    /// Covariate columns: comma-separated names and/or `*` glob patterns.
    /// The default takes every column other than the response and arm.
    #[arg(long, value_delimiter = ',', default_value = "*")]
    x_cols: Vec<String>,
}

impl SchemaArgs {
    fn load(&self) -> Result<Dataset> {
        let schema = CsvSchema::new(&self.y_col, &self.a_col, self.x_cols.clone());
        load_csv(&self.input, &schema).with_context(|| format!("reading {}", self.input.display()))
    }
}

/// Model hyperparameters shared by fit, simulate and split-eval.
#[derive(Args)]
struct FitFlags {
    /// Number of projection directions per arm.
    #[arg(long, default_value_t = 1)]
    k: usize,
    /// Slice count for the per-arm projection fit.
    #[arg(long, default_value_t = 10)]
    slices: usize,
    /// Slicing mode: auto, equal-count or by-level.
    #[arg(long, default_value = "auto", value_parser = parse_slice_mode)]
    slice_mode: SliceMode,
    /// Smoother span (fraction of each arm's observations).
    #[arg(long, default_value_t = 0.75)]
    span: f64,
    /// Replace --span with the sample-size schedule n^(-1/(k+3)) per arm.
    #[arg(long)]
    span_schedule: bool,
    /// Local polynomial degree (0, 1 or 2).
    #[arg(long, default_value_t = 1)]
    degree: usize,
    /// Screen covariates before fitting: fdr or loess.
    #[arg(long, value_parser = ["fdr", "loess"])]
    screen: Option<String>,
    /// False-discovery-rate level for --screen fdr.
    #[arg(long, default_value_t = 0.05)]
    screen_q: f64,
    /// Fraction of covariates kept by --screen loess.
    #[arg(long, default_value_t = 0.05)]
    screen_fraction: f64,
}

impl FitFlags {
    fn to_config(&self, seed: u64) -> FitConfig {
        FitConfig {
            k: self.k,
            n_slices: self.slices,
            slice_mode: self.slice_mode,
            span: self.span,
            span_schedule: self.span_schedule,
            degree: self.degree,
            screening: self.screen.as_deref().map(|m| match m {
                "fdr" => ScreenConfig::Fdr { q: self.screen_q },
                _ => ScreenConfig::Loess {
                    fraction: self.screen_fraction,
                },
            }),
            seed,
        }
    }
}

fn parse_slice_mode(s: &str) -> std::result::Result<SliceMode, String> {
    match s {
        "auto" => Ok(SliceMode::Auto),
        "equal-count" => Ok(SliceMode::EqualCount),
        "by-level" => Ok(SliceMode::ByLevel),
        other => Err(format!(
            "unknown slice mode {other:?} (expected auto, equal-count or by-level)"
        )),
    }
}

fn parse_methods(raw: &[String]) -> Result<Vec<Method>> {
    raw.iter()
        .map(|s| s.parse::<Method>().map_err(anyhow::Error::msg))
        .collect()
}

#[derive(Args)]
struct GlobalTestArgs {
    #[command(flatten)]
    data: SchemaArgs,
    /// Alert when the combined p-value is at or above this level.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
}

#[derive(Args)]
struct ScreenArgs {
    #[command(flatten)]
    data: SchemaArgs,
    /// Screening method: fdr or loess.
    #[arg(long, default_value = "fdr", value_parser = ["fdr", "loess"])]
    method: String,
    /// False-discovery-rate level for fdr.
    #[arg(long, default_value_t = 0.05)]
    q: f64,
    /// Fraction of covariates kept by loess.
    #[arg(long, default_value_t = 0.05)]
    fraction: f64,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: SchemaArgs,
    /// Where to write the fitted model (JSON).
    #[arg(long, short)]
    output: PathBuf,
    #[command(flatten)]
    fit: FitFlags,
    /// Significance level for the pre-fit global association gate.
    #[arg(long, default_value_t = 0.05)]
    gate_alpha: f64,
    /// Fit even when the global association gate alerts.
    #[arg(long)]
    force: bool,
    /// Seed recorded in the model provenance.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Print the sequential chi-squared direction-count table per arm.
    #[arg(long)]
    test_dim: bool,
}

#[derive(Args)]
struct RecommendArgs {
    /// Fitted model JSON.
    #[arg(long)]
    model: PathBuf,
    /// CSV of patients; must contain every model covariate column.
    #[arg(long)]
    input: PathBuf,
    /// Write the JSON here instead of stdout.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct PlotdataArgs {
    /// Fitted model JSON.
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: SchemaArgs,
    /// Curve resolution (points per arm).
    #[arg(long, default_value_t = 100)]
    grid: usize,
    /// 1-based dataset row numbers to highlight on every arm's curve.
    #[arg(long, value_delimiter = ',')]
    markers: Vec<usize>,
    /// Write the CSV here instead of stdout.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ValueArgs {
    /// Fitted model JSON.
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: SchemaArgs,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario number (1-4).
    #[arg(long)]
    scenario: u8,
    /// Observations per replicate.
    #[arg(long, default_value_t = 400)]
    n: usize,
    /// Covariates per replicate.
    #[arg(long, default_value_t = 8)]
    p: usize,
    /// Number of replicates.
    #[arg(long, default_value_t = 100)]
    reps: usize,
    /// Master seed; replicate r uses an independent stream derived from it.
    #[arg(long)]
    seed: u64,
    /// Methods to compare.
    #[arg(long, value_delimiter = ',', default_values_t = ["sir".to_string(), "ols".to_string(), "oracle".to_string(), "anti".to_string()])]
    methods: Vec<String>,
    #[command(flatten)]
    fit: FitFlags,
    /// Refit without each patient before recommending for them
    /// (leave-one-out; slow).
    #[arg(long)]
    loo: bool,
    /// Monte Carlo draws for the value-gap estimate (0 disables it).
    #[arg(long, default_value_t = 0)]
    gap_samples: usize,
    /// Write per-replicate rows as CSV here.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SplitEvalArgs {
    #[command(flatten)]
    data: SchemaArgs,
    /// Number of folds; one fold is held out per replicate.
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Number of random split replicates.
    #[arg(long, default_value_t = 100)]
    reps: usize,
    /// Master seed for the random splits.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Methods to compare (sir and/or ols); the observed assignment is
    /// always included as the baseline.
    #[arg(long, value_delimiter = ',', default_values_t = ["sir".to_string(), "ols".to_string()])]
    methods: Vec<String>,
    #[command(flatten)]
    fit: FitFlags,
    /// Write per-replicate rows as CSV here.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // --help and --version land here too and must exit 0.
            let code = u8::from(err.use_stderr());
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Ok(raw) = std::env::var("FEATREC_THREADS") {
        let threads: usize = raw
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .with_context(|| format!("FEATREC_THREADS={raw:?} is not a positive integer"))?;
        // Ignore the error when a pool already exists (e.g. under tests).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    match cli.command {
        Command::GlobalTest(args) => cmd_global_test(args),
        Command::Screen(args) => cmd_screen(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Recommend(args) => cmd_recommend(args),
        Command::Plotdata(args) => cmd_plotdata(args),
        Command::Value(args) => cmd_value(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::SplitEval(args) => cmd_split_eval(args),
    }
}

fn emit(path: &Option<PathBuf>, content: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, content).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{content}"),
    }
    Ok(())
}

fn cmd_global_test(args: GlobalTestArgs) -> Result<ExitCode> {
    let d = args.data.load()?;
    let gate = global_gate(&d, args.alpha)?;
    println!(
        "{}",
        serde_json::json!({ "pvalue": gate.pvalue, "pass": gate.pass })
    );
    Ok(if gate.pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(GATE_ALERT)
    })
}

fn cmd_screen(args: ScreenArgs) -> Result<ExitCode> {
    let d = args.data.load()?;
    let result = match args.method.as_str() {
        "fdr" => {
            let pv = featrec::marginal_pvalues(&d)?;
            featrec::bh_select(&pv.values, args.q)?
        }
        _ => featrec::loess_screen(&d, args.fraction)?,
    };
    let scores: serde_json::Map<String, serde_json::Value> = d
        .column_names()
        .iter()
        .zip(&result.scores)
        .map(|(name, score)| (name.clone(), (*score).into()))
        .collect();
    let selected: Vec<&String> = result
        .selected
        .iter()
        .map(|&j| &d.column_names()[j])
        .collect();
    let out = serde_json::json!({
        "method": result.method.to_string(),
        "scores": scores,
        "selected": selected,
        "threshold": result.threshold,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(ExitCode::SUCCESS)
}

fn cmd_fit(args: FitArgs) -> Result<ExitCode> {
    let d = args.data.load()?;
    let gate = global_gate(&d, args.gate_alpha)?;
    if !gate.pass {
        if args.force {
            eprintln!(
                "warning: global association test p-value {:.6} >= {} (proceeding under --force)",
                gate.pvalue, args.gate_alpha
            );
        } else {
            eprintln!(
                "global association test p-value {:.6} >= {}; no covariate signal detected. \
                 Pass --force to fit anyway.",
                gate.pvalue, args.gate_alpha
            );
            return Ok(ExitCode::from(GATE_ALERT));
        }
    }
    let config = args.fit.to_config(args.seed);
    let model = fit_recommender(&d, &config)?;
    model.save(&args.output)?;
    println!("gate p-value: {:.6} (pass: {})", gate.pvalue, gate.pass);
    println!(
        "columns: {} of {} kept: {}",
        model.selected_columns().len(),
        d.p(),
        model.selected_columns().join(", ")
    );
    for (label, arm) in model.arms() {
        let eig = arm
            .sir
            .eigenvalues()
            .iter()
            .take(5)
            .map(|v| format!("{v:.4}"))
            .collect::<Vec<_>>()
            .join(", ");
        println!(
            "arm {label}: n={}, slices={}, leading eigenvalues [{eig}]",
            arm.sir.n_used(),
            arm.sir.n_slices()
        );
        if args.test_dim {
            let test = chi2_dimension_test(&arm.sir, 0.05)?;
            println!("  directions  statistic      df   p-value");
            for step in &test.steps {
                println!(
                    "  {:>10}  {:>9.3}  {:>6}   {:.6}",
                    step.m, step.statistic, step.df, step.pvalue
                );
            }
            println!(
                "  estimated direction count: {}{}",
                test.k_hat,
                if test.truncated { " (truncated)" } else { "" }
            );
        }
    }
    println!("model written to {}", args.output.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_recommend(args: RecommendArgs) -> Result<ExitCode> {
    let model = Recommender::load(&args.model)
        .with_context(|| format!("loading model {}", args.model.display()))?;
    let x = load_matrix_csv(&args.input, model.selected_columns())
        .with_context(|| format!("reading {}", args.input.display()))?;
    let recs = model.recommend_matrix(x.view())?;
    let mut json = serde_json::to_string_pretty(&recs)?;
    json.push('\n');
    emit(&args.output, &json)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_plotdata(args: PlotdataArgs) -> Result<ExitCode> {
    let model = Recommender::load(&args.model)
        .with_context(|| format!("loading model {}", args.model.display()))?;
    let d = args.data.load()?;
    let data = plot_data(&model, &d, args.grid, &args.markers)?;
    emit(&args.output, &data.to_csv_string())?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_value(args: ValueArgs) -> Result<ExitCode> {
    let model = Recommender::load(&args.model)
        .with_context(|| format!("loading model {}", args.model.display()))?;
    let d = args.data.load()?;
    let x = model.gather_columns(&d)?;
    let recs = model.recommend_matrix(x.view())?;
    let rule: Vec<_> = recs.into_iter().map(|r| r.best).collect();
    let estimate = empirical_value(&d, &rule, &d.empirical_propensity())?;
    println!(
        "{}",
        serde_json::json!({ "value": estimate.value, "n_matched": estimate.n_matched })
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_simulate(args: SimulateArgs) -> Result<ExitCode> {
    Scenario::new(args.scenario)?;
    let cfg = RunConfig {
        scenario: args.scenario,
        n: args.n,
        p: args.p,
        replicates: args.reps,
        seed: args.seed,
        methods: parse_methods(&args.methods)?,
        fit: args.fit.to_config(args.seed),
        loo: args.loo,
        gap_samples: args.gap_samples,
    };
    let report = run_benchmark(&cfg)?;
    if let Some(path) = &args.output {
        fs::write(path, report.to_csv_string()?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    println!("{}", serde_json::to_string_pretty(&report.summaries)?);
    Ok(ExitCode::SUCCESS)
}

fn cmd_split_eval(args: SplitEvalArgs) -> Result<ExitCode> {
    let d = args.data.load()?;
    let methods = parse_methods(&args.methods)?;
    for m in &methods {
        if !matches!(m, Method::Sir | Method::Ols) {
            bail!("split-eval supports only the sir and ols methods, got {m}");
        }
    }
    let cfg = SplitConfig {
        folds: args.folds,
        replicates: args.reps,
        seed: args.seed,
        methods,
        fit: args.fit.to_config(args.seed),
    };
    let report = split_evaluate(&d, &cfg)?;
    if let Some(path) = &args.output {
        fs::write(path, report.rows_csv_string()?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    print!("{}", report.to_csv_string()?);
    Ok(ExitCode::SUCCESS)
}
