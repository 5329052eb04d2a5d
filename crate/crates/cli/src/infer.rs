use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;
use std::str::FromStr;

use poolsel::em::default_init;
use poolsel::io::read_dataset;
use poolsel::simulation::{lambda_range, log_grid};
use poolsel::{
    aic_bic, e_step_group, em_fit, lambda_max, naive_ci, post_selection, selective_intervals, split_inference, Dataset,
    IntervalEstimate, Method, PenalizedFit,
};
use serde::Serialize;

use crate::manifest::RunManifest;
use crate::{write_json, CliError, CliResult, Info};

pub const SCHEMA: &str = "poolsel.infer/1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Penalty {
    Value(f64),
    Aic,
    Bic,
}

impl FromStr for Penalty {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "aic" => Ok(Penalty::Aic),
            "bic" => Ok(Penalty::Bic),
            v => match v.parse::<f64>() {
                Ok(x) if x >= 0.0 && x.is_finite() => Ok(Penalty::Value(x)),
                _ => Err(format!("expected a non-negative number, `aic` or `bic`, got `{s}`")),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodArg {
    Selective,
    Naive,
    Split,
    All,
}

impl MethodArg {
    fn methods(self) -> Vec<Method> {
        match self {
            MethodArg::Selective => vec![Method::Selective],
            MethodArg::Naive => vec![Method::Naive],
            MethodArg::Split => vec![Method::Split],
            MethodArg::All => vec![Method::Selective, Method::Naive, Method::Split],
        }
    }
}

#[derive(Debug, Clone, clap::Args, Serialize)]
pub struct Args {
    /// Dataset CSV with header `pool_id,z,x1,...,xp`.
    #[arg(long)]
    pub data: PathBuf,
    /// Penalty value, or `aic` / `bic` to choose it over a grid.
    #[arg(long, default_value = "aic")]
    pub lambda: Penalty,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long, value_enum, default_value_t = MethodArg::All)]
    pub method: MethodArg,
    /// Assay sensitivity assumed by the analysis.
    #[arg(long, default_value_t = 0.95)]
    pub se: f64,
    /// Assay specificity assumed by the analysis.
    #[arg(long, default_value_t = 0.97)]
    pub sp: f64,
    /// Seed for the sample split.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Info::Louis)]
    pub info: Info,
    /// Grid bounds for `aic` / `bic`; the default depends on n.
    #[arg(long)]
    pub lambda_min: Option<f64>,
    #[arg(long)]
    pub lambda_max: Option<f64>,
    #[arg(long, default_value_t = poolsel::simulation::DEFAULT_GRID_POINTS)]
    pub grid_points: usize,
    /// Report path (JSON).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
pub struct GridPoint {
    pub lambda: f64,
    pub model_size: usize,
    pub aic: f64,
    pub bic: f64,
    pub converged: bool,
}

#[derive(Debug, Serialize)]
pub struct PenaltyChoice {
    pub criterion: &'static str,
    pub chosen: f64,
    pub grid: Vec<GridPoint>,
}

#[derive(Debug, Serialize)]
pub struct CoefficientRow {
    /// 1-based covariate index.
    pub covariate: usize,
    pub name: String,
    pub point: f64,
    pub std_error: f64,
    pub lower: f64,
    pub upper: f64,
    pub odds_lower: f64,
    pub odds_upper: f64,
    pub v_minus: Option<f64>,
    pub v_plus: Option<f64>,
    pub pivot_at_point: Option<f64>,
    pub pivot_at_zero: Option<f64>,
    pub degenerate: bool,
}

impl From<&IntervalEstimate> for CoefficientRow {
    fn from(ci: &IntervalEstimate) -> Self {
        let j = ci.coefficient.map(|j| j + 1).unwrap_or(0);
        Self {
            covariate: j,
            name: format!("x{j}"),
            point: ci.point,
            std_error: ci.std_error,
            lower: ci.lower,
            upper: ci.upper,
            odds_lower: ci.odds_lower,
            odds_upper: ci.odds_upper,
            v_minus: ci.v_minus,
            v_plus: ci.v_plus,
            pivot_at_point: ci.pivot_at_point,
            pivot_at_zero: ci.pivot_at_zero,
            degenerate: ci.degenerate,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct MethodReport {
    pub method: Method,
    /// Present when the method failed on this dataset.
    pub error: Option<String>,
    /// Model used for the intervals (differs from `selected` for splitting).
    pub model: Vec<usize>,
    pub coefficients: Vec<CoefficientRow>,
}

#[derive(Debug, Serialize)]
pub struct Coef {
    pub alpha: f64,
    /// Keyed by 1-based covariate index.
    pub beta: Vec<(usize, f64)>,
}

#[derive(Debug, Serialize)]
pub struct InferReport {
    pub schema: &'static str,
    pub n: usize,
    pub pools: usize,
    pub p: usize,
    pub se: f64,
    pub sp: f64,
    pub level: f64,
    pub lambda: f64,
    pub penalty_choice: Option<PenaltyChoice>,
    pub converged: bool,
    pub em_iterations: usize,
    /// 1-based selected covariates.
    pub selected: Vec<usize>,
    pub signs: Vec<f64>,
    pub theta_hat: Coef,
    pub theta_bar: Option<Coef>,
    pub information: Info,
    pub methods: Vec<MethodReport>,
}

/// Default grid: the reference range for n = 1000 / 2000, otherwise
/// log-spaced between 2% and 90% of the penalty that empties the model at
/// the moment-matched start.
pub fn penalty_grid(data: &Dataset, args: &Args) -> CliResult<Vec<f64>> {
    let (lo, hi) = match (args.lambda_min, args.lambda_max) {
        (Some(lo), Some(hi)) => (lo, hi),
        (None, None) => match lambda_range(data.n()) {
            Ok(r) => r,
            Err(_) => {
                let top = lambda_max(&e_step_group(&default_init(data), data), data);
                (0.02 * top, 0.9 * top)
            }
        },
        _ => return Err(CliError::usage("--lambda-min and --lambda-max go together")),
    };
    Ok(log_grid(lo, hi, args.grid_points)?)
}

fn coef(model: &[usize], alpha: f64, beta: &[f64]) -> Coef {
    Coef { alpha, beta: model.iter().zip(beta).map(|(&j, &b)| (j + 1, b)).collect() }
}

/// Fits every grid value from the default start and returns the criterion minimizer.
fn choose_penalty(data: &Dataset, grid: &[f64], bic: bool) -> CliResult<(PenaltyChoice, PenalizedFit)> {
    let mut points = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, PenalizedFit)> = None;
    for &lambda in grid {
        let fit = em_fit(data, lambda, None)?;
        let model = fit.selected();
        let ic = aic_bic(&fit.theta_hat.restrict(&model), data);
        let score = if bic { ic.bic } else { ic.aic };
        points.push(GridPoint { lambda, model_size: model.len(), aic: ic.aic, bic: ic.bic, converged: fit.converged });
        if best.as_ref().map_or(true, |(s, _)| score < *s) {
            best = Some((score, fit));
        }
    }
    let (_, fit) = best.ok_or_else(|| CliError::usage("penalty grid is empty"))?;
    let choice = PenaltyChoice { criterion: if bic { "bic" } else { "aic" }, chosen: fit.lambda, grid: points };
    Ok((choice, fit))
}

fn method_report(method: Method, data: &Dataset, fit: &PenalizedFit, args: &Args) -> (MethodReport, Option<Coef>) {
    let selected = fit.selected();
    let mut theta_bar = None;
    let result = match method {
        Method::Selective if selected.is_empty() => Ok((selected.clone(), Vec::new())),
        Method::Selective => post_selection(fit, data, args.info.into()).and_then(|est| {
            theta_bar = Some(coef(&selected, est.theta_bar.alpha(), est.theta_bar.beta()));
            selective_intervals(&est, args.level).map(|cis| (selected.clone(), cis))
        }),
        Method::Naive => naive_ci(fit, data, args.level).map(|cis| (selected.clone(), cis)),
        Method::Split => split_inference(data, fit.lambda, args.level, args.seed).map(|s| (s.model, s.intervals)),
    };
    let report = match result {
        Ok((model, cis)) => MethodReport {
            method,
            error: None,
            model: model.iter().map(|j| j + 1).collect(),
            coefficients: cis.iter().map(CoefficientRow::from).collect(),
        },
        Err(e) => {
            log::warn!("{} inference failed: {e}", method.as_str());
            MethodReport { method, error: Some(e.to_string()), model: Vec::new(), coefficients: Vec::new() }
        }
    };
    (report, theta_bar)
}

pub fn infer(data: &Dataset, args: &Args) -> CliResult<InferReport> {
    if !(args.level > 0.0 && args.level < 1.0) {
        return Err(CliError::usage("--level must lie in (0, 1)"));
    }
    let (choice, fit) = match args.lambda {
        Penalty::Value(l) => (None, em_fit(data, l, None)?),
        Penalty::Aic | Penalty::Bic => {
            let grid = penalty_grid(data, args)?;
            let (choice, fit) = choose_penalty(data, &grid, args.lambda == Penalty::Bic)?;
            (Some(choice), fit)
        }
    };
    if !fit.converged {
        log::warn!("EM stopped after {} iterations without converging", fit.iterations);
    }
    let selected = fit.selected();
    let mut theta_bar = None;
    let mut methods = Vec::new();
    for method in args.method.methods() {
        let (report, bar) = method_report(method, data, &fit, args);
        theta_bar = theta_bar.or(bar);
        methods.push(report);
    }
    Ok(InferReport {
        schema: SCHEMA,
        n: data.n(),
        pools: data.num_pools(),
        p: data.p(),
        se: data.se(),
        sp: data.sp(),
        level: args.level,
        lambda: fit.lambda,
        penalty_choice: choice,
        converged: fit.converged,
        em_iterations: fit.iterations,
        selected: selected.iter().map(|j| j + 1).collect(),
        signs: fit.signs(),
        theta_hat: coef(&selected, fit.theta_hat.alpha(), &selected.iter().map(|&j| fit.theta_hat.beta()[j]).collect::<Vec<_>>()),
        theta_bar,
        information: args.info,
        methods,
    })
}

fn print_summary(report: &InferReport) {
    println!(
        "lambda {:.4}{}; selected {:?}",
        report.lambda,
        report.penalty_choice.as_ref().map(|c| format!(" (by {})", c.criterion)).unwrap_or_default(),
        report.selected
    );
    for m in &report.methods {
        if let Some(e) = &m.error {
            println!("  {:<9} failed: {e}", m.method.as_str());
            continue;
        }
        for c in &m.coefficients {
            println!(
                "  {:<9} {:<5} {:>9.4}  [{:>9.4}, {:>9.4}]  OR [{:.3}, {:.3}]",
                m.method.as_str(),
                c.name,
                c.point,
                c.lower,
                c.upper,
                c.odds_lower,
                c.odds_upper
            );
        }
    }
}

pub fn run(args: &Args) -> CliResult<()> {
    let file = File::open(&args.data).map_err(|e| CliError::io(&args.data, e))?;
    let data = read_dataset(BufReader::new(file), args.se, args.sp).map_err(|e| match e {
        poolsel::Error::Io(err) => CliError::io(&args.data, err),
        other => CliError::usage(format!("{}: {other}", args.data.display())),
    })?;
    let report = infer(&data, args)?;
    write_json(&args.out, &report)?;
    let mut manifest = RunManifest::new("infer", Some(args.seed), args);
    manifest.input(&args.data)?;
    manifest.output(&args.out)?;
    manifest.write_beside(&args.out)?;
    print_summary(&report);
    Ok(())
}
