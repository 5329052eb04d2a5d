use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use poolsel::simulation::benchmarks::*;
use poolsel::simulation::{lambda_grid, log_grid, lambda_range, run_study, DgpConfig, StudyConfig, StudyReport};
use poolsel::Method;
use serde::Serialize;

use crate::manifest::RunManifest;
use crate::{write_json, CliError, CliResult, Info};

pub const SCHEMA: &str = "poolsel.study/1";

/// Share of replicates with a failure above which the run exits with code 4.
const MAX_FAILED_SHARE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Coverage and width at the median-AIC penalty.
    Table1,
    /// Type I error across the penalty grid with AIC/BIC choice histograms.
    Figure1,
    /// Table1 with data generated at Se = 0.90, Sp = 0.92 but analysed at 0.95/0.97.
    Table2,
    /// Table1 with the sample-splitting baseline added.
    #[value(name = "appendixC", alias = "appendixc")]
    #[serde(rename = "appendixC")]
    AppendixC,
}

impl Preset {
    fn name(self) -> &'static str {
        match self {
            Preset::Table1 => "table1",
            Preset::Figure1 => "figure1",
            Preset::Table2 => "table2",
            Preset::AppendixC => "appendixC",
        }
    }
}

#[derive(Debug, Clone, clap::Args, Serialize)]
pub struct Args {
    #[arg(long, value_enum)]
    pub preset: Preset,
    #[arg(long, default_value_t = 500)]
    pub replicates: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
    pub pool_sizes: Vec<usize>,
    #[arg(long, default_value_t = poolsel::simulation::DEFAULT_GRID_POINTS)]
    pub grid_points: usize,
    #[arg(long, value_enum, default_value_t = Info::Louis)]
    pub info: Info,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Serialize)]
pub struct ChoiceBin {
    pub lambda: f64,
    pub aic: usize,
    pub bic: usize,
}

#[derive(Debug, Serialize)]
pub struct StudyOutput<'a> {
    pub schema: &'static str,
    pub preset: Preset,
    pub pool_size: usize,
    /// Generating accuracy when it differs from the analysis accuracy.
    pub true_accuracy: Option<(f64, f64)>,
    pub median_aic_lambda: Option<f64>,
    pub median_bic_lambda: Option<f64>,
    /// AIC/BIC choices over the grid (from the pilot pass for fixed-penalty presets).
    pub lambda_choice: Vec<ChoiceBin>,
    pub report: &'a StudyReport,
}

fn histogram(report: &StudyReport) -> Vec<ChoiceBin> {
    report
        .config
        .grid
        .iter()
        .map(|&l| ChoiceBin {
            lambda: l,
            aic: report.aic_choice.iter().filter(|c| **c == Some(l)).count(),
            bic: report.bic_choice.iter().filter(|c| **c == Some(l)).count(),
        })
        .collect()
}

fn failed_share(report: &StudyReport) -> f64 {
    let failed: BTreeSet<usize> = report.failures.iter().map(|f| f.replicate).collect();
    failed.len() as f64 / report.replicates.max(1) as f64
}

fn methods(preset: Preset) -> Vec<Method> {
    match preset {
        Preset::AppendixC => vec![Method::Selective, Method::Naive, Method::Split],
        _ => vec![Method::Selective, Method::Naive],
    }
}

fn configure(args: &Args, m: usize, grid: Vec<f64>, methods: Vec<Method>) -> StudyConfig {
    let dgp = DgpConfig { n: args.n, ..DgpConfig::default() }.with_pool_size(m);
    let mut cfg = StudyConfig::new(dgp, grid, args.replicates, methods, args.seed);
    cfg.info = args.info.into();
    if args.preset == Preset::Table2 {
        cfg.dgp.se = 0.90;
        cfg.dgp.sp = 0.92;
        cfg.analysis_se = 0.95;
        cfg.analysis_sp = 0.97;
    }
    cfg
}

/// Runs one pool size; fixed-penalty presets first fit the grid on the same
/// replicates to find the median AIC choice.
fn run_pool_size(args: &Args, m: usize, grid: &[f64]) -> CliResult<(StudyReport, Vec<ChoiceBin>)> {
    if args.preset == Preset::Figure1 {
        let report = run_study(&configure(args, m, grid.to_vec(), methods(args.preset)))?;
        let bins = histogram(&report);
        return Ok((report, bins));
    }
    let pilot = run_study(&configure(args, m, grid.to_vec(), Vec::new()))?;
    let lambda = pilot
        .median_aic_lambda
        .ok_or_else(|| CliError::numerical(format!("m={m}: no replicate produced an AIC choice")))?;
    let mut report = run_study(&configure(args, m, vec![lambda], methods(args.preset)))?;
    report.aic_choice = pilot.aic_choice.clone();
    report.bic_choice = pilot.bic_choice.clone();
    report.median_aic_lambda = pilot.median_aic_lambda;
    report.median_bic_lambda = pilot.median_bic_lambda;
    report.runtime_secs += pilot.runtime_secs;
    Ok((report, histogram(&pilot)))
}

/// Reference comparisons for the default design at n = 1000.
fn reference_checks(preset: Preset, m: usize, report: &StudyReport) -> Vec<Check> {
    let Some(i) = POOL_SIZES.iter().position(|&s| s == m) else { return Vec::new() };
    let coef = |method, j| {
        let s = &report.per_lambda[0];
        s.methods.iter().find(|x| x.method == method)?.coefficients.iter().find(|c| c.coefficient == j).cloned()
    };
    let mut checks = Vec::new();
    match preset {
        Preset::Table1 | Preset::AppendixC => {
            for j in [3, 5] {
                if let (Some(sel), Some(naive)) = (coef(Method::Selective, j), coef(Method::Naive, j)) {
                    checks.push(Check::new(format!("beta{} selective coverage", j + 1), sel.coverage, SELECTIVE_NULL_COVERAGE[i], Band::Absolute(COVERAGE_TOL)));
                    checks.push(Check::new(format!("beta{} naive coverage", j + 1), naive.coverage, NAIVE_NULL_COVERAGE[i], Band::Absolute(COVERAGE_TOL)));
                }
            }
            if let (Some(sel), Some(naive)) = (coef(Method::Selective, 3), coef(Method::Naive, 3)) {
                checks.push(Check::new("beta4 selective mean width", sel.mean_width, SELECTIVE_NULL_WIDTH[i], Band::Relative(WIDTH_TOL)));
                checks.push(Check::new("beta4 naive mean width", naive.mean_width, NAIVE_NULL_WIDTH[i], Band::Relative(WIDTH_TOL)));
            }
            if preset == Preset::AppendixC && m == 2 {
                if let (Some(b2), Some(b4)) = (coef(Method::Split, 1), coef(Method::Split, 3)) {
                    checks.push(Check::new("beta2 split coverage", b2.coverage, SPLIT_SIGNAL_COVERAGE, Band::Absolute(COVERAGE_TOL)));
                    checks.push(Check::new("beta4 split mean width", b4.mean_width, SPLIT_NULL_WIDTH, Band::Relative(WIDTH_TOL)));
                }
            }
        }
        Preset::Table2 if m == 1 => {
            if let (Some(b2), Some(b4)) = (coef(Method::Selective, 1), coef(Method::Selective, 3)) {
                checks.push(Check::new("beta2 selective coverage", b2.coverage, MISSPEC_SIGNAL_COVERAGE_BOUND, Band::Below));
                checks.push(Check::new("beta4 selective coverage", b4.coverage, MISSPEC_NULL_COVERAGE, Band::Absolute(COVERAGE_TOL)));
            }
        }
        Preset::Table2 => {}
        Preset::Figure1 => {
            let (lo, hi) = SELECTIVE_TYPE_I_BAND;
            let top = report.per_lambda.len() - report.per_lambda.len().div_ceil(4);
            for (k, s) in report.per_lambda.iter().enumerate() {
                for ms in &s.methods {
                    if ms.method == Method::Selective {
                        checks.push(Check::new(format!("selective Type I at {:.3}", s.lambda), ms.type_i_error, 0.0, Band::Within(lo, hi)));
                    } else if ms.method == Method::Naive && m == 4 && k >= top {
                        checks.push(Check::new(format!("naive Type I at {:.3} (above)", s.lambda), ms.type_i_error, NAIVE_TYPE_I_FLOOR, Band::Within(NAIVE_TYPE_I_FLOOR, 1.0)));
                    }
                }
            }
        }
    }
    checks
}

fn print_summary(args: &Args, m: usize, report: &StudyReport) {
    println!(
        "{} m={m}: {} replicates, {} failure records, {:.1}s, median AIC penalty {}",
        args.preset.name(),
        report.replicates,
        report.failures.len(),
        report.runtime_secs,
        report.median_aic_lambda.map(|l| format!("{l:.4}")).unwrap_or_else(|| "-".into())
    );
    if args.preset == Preset::Figure1 {
        for s in &report.per_lambda {
            let rate = |method| s.methods.iter().find(|x| x.method == method).map(|x| x.type_i_error).unwrap_or(f64::NAN);
            println!("  penalty {:>7.3}  Type I selective {:.3}  naive {:.3}", s.lambda, rate(Method::Selective), rate(Method::Naive));
        }
    } else {
        for ms in &report.per_lambda[0].methods {
            for c in ms.coefficients.iter().filter(|c| [1, 3, 5].contains(&c.coefficient)) {
                println!(
                    "  {:<9} beta{}  CI [{:>7.3}, {:>7.3}]  width {:>7.3} (median {:.3})  coverage {:.3}  estimate {:>6.3}  (n={})",
                    ms.method.as_str(),
                    c.coefficient + 1,
                    c.mean_lower,
                    c.mean_upper,
                    c.mean_width,
                    c.median_width,
                    c.coverage,
                    c.mean_point,
                    c.intervals
                );
            }
        }
    }
    if args.n == 1000 {
        for c in reference_checks(args.preset, m, report) {
            println!(
                "  check {:<36} {:>8.4}  reference {:<16} {}",
                c.label,
                c.achieved,
                c.describe_target(),
                if c.passed() { "pass" } else { "FAIL" }
            );
        }
    }
}

fn write_csv(path: &Path, report: &StudyReport) -> CliResult<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    report.write_tidy_csv(BufWriter::new(file)).map_err(|e| CliError::io(path, e))
}

fn write_choices(path: &Path, bins: &[ChoiceBin]) -> CliResult<()> {
    let mut out = BufWriter::new(File::create(path).map_err(|e| CliError::io(path, e))?);
    let mut text = String::from("lambda,aic_count,bic_count\n");
    for b in bins {
        text.push_str(&format!("{},{},{}\n", b.lambda, b.aic, b.bic));
    }
    out.write_all(text.as_bytes()).and_then(|_| out.flush()).map_err(|e| CliError::io(path, e))
}

pub fn run(args: &Args, threads: Option<usize>) -> CliResult<()> {
    if args.replicates == 0 {
        return Err(CliError::usage("--replicates must be at least 1"));
    }
    if args.pool_sizes.iter().any(|&m| m == 0) {
        return Err(CliError::usage("pool sizes must be positive"));
    }
    let grid = match lambda_range(args.n) {
        Ok(_) if args.grid_points == poolsel::simulation::DEFAULT_GRID_POINTS => lambda_grid(args.n)?,
        Ok((lo, hi)) => log_grid(lo, hi, args.grid_points)?,
        Err(_) => return Err(CliError::usage(format!("no reference penalty grid for n = {}; use 1000 or 2000", args.n))),
    };
    std::fs::create_dir_all(&args.out_dir).map_err(|e| CliError::io(&args.out_dir, e))?;
    #[derive(Serialize)]
    struct Config<'a> {
        #[serde(flatten)]
        args: &'a Args,
        threads: Option<usize>,
        grid: &'a [f64],
    }
    let mut manifest = RunManifest::new("study", Some(args.seed), &Config { args, threads, grid: &grid });
    let mut worst_share: f64 = 0.0;
    for &m in &args.pool_sizes {
        let (report, bins) = run_pool_size(args, m, &grid)?;
        let stem = format!("{}_m{m}", args.preset.name());
        let json = args.out_dir.join(format!("{stem}.json"));
        let csv = args.out_dir.join(format!("{stem}.csv"));
        let choices = args.out_dir.join(format!("{stem}_lambda_choice.csv"));
        let true_accuracy = (args.preset == Preset::Table2).then_some((report.config.dgp.se, report.config.dgp.sp));
        let output = StudyOutput {
            schema: SCHEMA,
            preset: args.preset,
            pool_size: m,
            true_accuracy,
            median_aic_lambda: report.median_aic_lambda,
            median_bic_lambda: report.median_bic_lambda,
            lambda_choice: bins,
            report: &report,
        };
        write_json(&json, &output)?;
        write_csv(&csv, &report)?;
        write_choices(&choices, &output.lambda_choice)?;
        for path in [&json, &csv, &choices] {
            manifest.output(path)?;
        }
        print_summary(args, m, &report);
        worst_share = worst_share.max(failed_share(&report));
    }
    manifest.write_beside(&args.out_dir.join(format!("{}.json", args.preset.name())))?;
    if worst_share > MAX_FAILED_SHARE {
        return Err(CliError::numerical(format!(
            "{:.1}% of replicates had failures (limit {:.0}%)",
            100.0 * worst_share,
            100.0 * MAX_FAILED_SHARE
        )));
    }
    Ok(())
}
