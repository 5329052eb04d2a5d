//! Data-generating process, λ grids, and the Monte Carlo harness for
//! coverage, interval width and Type I error studies.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::em::em_fit;
use crate::error::{Error, Result};
use crate::inference::{naive_ci, selective_intervals, split_inference, IntervalEstimate, Method};
use crate::information::InfoMethod;
use crate::model::{aic_bic, logistic_mean, Coefficients, Dataset};
use crate::selection::post_selection;

pub mod benchmarks;

/// Simulation design: X ~ N(0, I_p), Y ~ Bernoulli(π(θ)), consecutive pools
/// of size m (the last may be smaller), Z_j ~ Bernoulli(Se·Y*_j + (1 − Sp)(1 − Y*_j)).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub n: usize,
    pub p: usize,
    pub theta_true: Coefficients,
    pub pool_size: usize,
    pub se: f64,
    pub sp: f64,
    pub seed: u64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        let mut beta = vec![0.0; 10];
        beta[..3].copy_from_slice(&[2.0, 1.0, 1.0]);
        Self {
            n: 1000,
            p: 10,
            theta_true: Coefficients { alpha: -5.0, beta },
            pool_size: 1,
            se: 0.95,
            sp: 0.97,
            seed: 0,
        }
    }
}

impl DgpConfig {
    pub fn with_pool_size(mut self, m: usize) -> Self {
        self.pool_size = m;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.pool_size == 0 {
            return Err(Error::InvalidArgument("n and pool size must be positive".into()));
        }
        if self.theta_true.p() != self.p {
            return Err(Error::InvalidArgument(format!(
                "theta has {} slopes but p = {}",
                self.theta_true.p(),
                self.p
            )));
        }
        if !(self.se > 0.0 && self.se <= 1.0 && self.sp > 0.0 && self.sp <= 1.0) {
            return Err(Error::InvalidArgument("sensitivity and specificity must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// A simulated dataset with its latent truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedData {
    pub dataset: Dataset,
    pub y_true: Vec<bool>,
    /// Y*_j = max over the pool of Y_i.
    pub pool_truth: Vec<bool>,
}

/// Draws one dataset; identical seeds give bitwise-identical output.
pub fn simulate_dataset(cfg: &DgpConfig) -> Result<SimulatedData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut x = DMatrix::zeros(cfg.n, cfg.p);
    for i in 0..cfg.n {
        for j in 0..cfg.p {
            x[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let y_true: Vec<bool> = (0..cfg.n)
        .map(|i| {
            let xi: Vec<f64> = x.row(i).iter().copied().collect();
            rng.random_bool(logistic_mean(&cfg.theta_true, &xi))
        })
        .collect();
    let pools: Vec<Vec<usize>> =
        (0..cfg.n).step_by(cfg.pool_size).map(|s| (s..(s + cfg.pool_size).min(cfg.n)).collect()).collect();
    let pool_truth: Vec<bool> = pools.iter().map(|m| m.iter().any(|&i| y_true[i])).collect();
    let z = pool_truth
        .iter()
        .map(|&t| rng.random_bool(if t { cfg.se } else { 1.0 - cfg.sp }))
        .collect();
    let dataset = Dataset::new(x, pools, z, cfg.se, cfg.sp)?;
    Ok(SimulatedData { dataset, y_true, pool_truth })
}

/// `points` values equally spaced on the log scale from `lo` to `hi`.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) || points == 0 {
        return Err(Error::InvalidArgument(format!("invalid grid [{lo}, {hi}] with {points} points")));
    }
    if points == 1 {
        return Ok(vec![lo]);
    }
    let (a, b) = (lo.ln(), hi.ln());
    let mut grid: Vec<f64> = (0..points).map(|k| (a + (b - a) * k as f64 / (points - 1) as f64).exp()).collect();
    grid[0] = lo;
    grid[points - 1] = hi;
    Ok(grid)
}

pub const DEFAULT_GRID_POINTS: usize = 25;

/// Default range for the penalty: 1–7 for n = 1000, 0.5–10 for n = 2000.
pub fn lambda_range(n: usize) -> Result<(f64, f64)> {
    match n {
        1000 => Ok((1.0, 7.0)),
        2000 => Ok((0.5, 10.0)),
        _ => Err(Error::InvalidArgument(format!("no default penalty range for n = {n}; supply bounds"))),
    }
}

pub fn lambda_grid(n: usize) -> Result<Vec<f64>> {
    let (lo, hi) = lambda_range(n)?;
    log_grid(lo, hi, DEFAULT_GRID_POINTS)
}

/// Share of selected null coefficients whose interval excludes zero; zero
/// when no null coefficient was selected.
pub fn type_i_error_rate(intervals: &[IntervalEstimate], theta_true: &Coefficients) -> f64 {
    let nulls: Vec<&IntervalEstimate> = intervals
        .iter()
        .filter(|ci| ci.coefficient.is_some_and(|j| theta_true.beta().get(j) == Some(&0.0)))
        .collect();
    if nulls.is_empty() {
        return 0.0;
    }
    nulls.iter().filter(|ci| !ci.contains(0.0)).count() as f64 / nulls.len() as f64
}

/// Seed for stream `index` derived from `master` (SplitMix64 finalizer).
pub fn child_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Everything a study run depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub dgp: DgpConfig,
    /// Accuracy assumed by the analysis; differs from `dgp` under misspecification.
    pub analysis_se: f64,
    pub analysis_sp: f64,
    pub grid: Vec<f64>,
    pub replicates: usize,
    pub methods: Vec<Method>,
    pub level: f64,
    pub info: InfoMethod,
    pub seed: u64,
    /// Covariates (0-based) whose intervals are summarized.
    pub tracked: Vec<usize>,
}

impl StudyConfig {
    pub fn new(dgp: DgpConfig, grid: Vec<f64>, replicates: usize, methods: Vec<Method>, seed: u64) -> Self {
        Self {
            analysis_se: dgp.se,
            analysis_sp: dgp.sp,
            tracked: (0..dgp.p).collect(),
            dgp,
            grid,
            replicates,
            methods,
            level: 0.95,
            info: InfoMethod::Louis,
            seed,
        }
    }

    /// Analyse under an assumed accuracy that differs from the generating one.
    pub fn with_assumed_accuracy(mut self, se: f64, sp: f64) -> Self {
        self.analysis_se = se;
        self.analysis_sp = sp;
        self
    }
}

/// Per-replicate result at one λ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaOutcome {
    pub lambda: f64,
    pub model: Vec<usize>,
    pub aic: f64,
    pub bic: f64,
    pub intervals: BTreeMap<Method, std::result::Result<Vec<IntervalEstimate>, String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub replicate: usize,
    pub seed: u64,
    /// One entry per grid value, or the reason the fit failed.
    pub per_lambda: Vec<std::result::Result<LambdaOutcome, String>>,
}

impl ReplicateOutcome {
    /// Grid value minimizing the criterion among successful fits (first on ties).
    fn argmin(&self, key: impl Fn(&LambdaOutcome) -> f64) -> Option<f64> {
        self.per_lambda
            .iter()
            .filter_map(|o| o.as_ref().ok())
            .fold(None::<(f64, f64)>, |best, o| match best {
                Some((v, _)) if v <= key(o) => best,
                _ => Some((key(o), o.lambda)),
            })
            .map(|(_, l)| l)
    }
}

fn method_intervals(
    method: Method,
    data: &Dataset,
    fit: &crate::em::PenalizedFit,
    cfg: &StudyConfig,
    split_seed: u64,
) -> Result<Vec<IntervalEstimate>> {
    match method {
        Method::Selective => {
            if fit.selected().is_empty() {
                return Ok(Vec::new());
            }
            let est = post_selection(fit, data, cfg.info)?;
            selective_intervals(&est, cfg.level)
        }
        Method::Naive => naive_ci(fit, data, cfg.level),
        Method::Split => split_inference(data, fit.lambda, cfg.level, split_seed).map(|s| s.intervals),
    }
}

/// Simulates and analyses replicate `r` over the whole grid.
pub fn run_replicate(cfg: &StudyConfig, r: usize) -> ReplicateOutcome {
    let seed = child_seed(cfg.seed, r as u64);
    let split_seed = child_seed(seed, u64::MAX);
    let analysed = simulate_dataset(&cfg.dgp.clone().with_seed(seed))
        .and_then(|sim| sim.dataset.with_accuracy(cfg.analysis_se, cfg.analysis_sp));
    let data = match analysed {
        Ok(d) => d,
        Err(e) => {
            return ReplicateOutcome { replicate: r, seed, per_lambda: vec![Err(e.to_string()); cfg.grid.len()] };
        }
    };
    let per_lambda = cfg
        .grid
        .iter()
        .map(|&lambda| {
            let fit = em_fit(&data, lambda, None).map_err(|e| e.to_string())?;
            if !fit.converged {
                return Err(format!("EM did not converge in {} iterations", fit.iterations));
            }
            let model = fit.selected();
            let crit = aic_bic(&fit.theta_hat.restrict(&model), &data);
            let intervals = cfg
                .methods
                .iter()
                .map(|&m| (m, method_intervals(m, &data, &fit, cfg, split_seed).map_err(|e| e.to_string())))
                .collect();
            Ok(LambdaOutcome { lambda, model, aic: crit.aic, bic: crit.bic, intervals })
        })
        .collect();
    ReplicateOutcome { replicate: r, seed, per_lambda }
}

/// Interval summary for one covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefSummary {
    pub coefficient: usize,
    pub truth: f64,
    /// Replicates where an interval for this covariate was produced.
    pub intervals: usize,
    pub coverage: f64,
    pub mean_lower: f64,
    pub mean_upper: f64,
    pub mean_width: f64,
    /// Lower median; unlike the mean it is stable under the heavy-tailed
    /// length of selective intervals.
    pub median_width: f64,
    pub mean_point: f64,
    pub mean_odds_lower: f64,
    pub mean_odds_upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    /// Replicates with a successful fit at this λ.
    pub attempted: usize,
    pub failed: usize,
    pub type_i_error: f64,
    pub coefficients: Vec<CoefSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaSummary {
    pub lambda: f64,
    pub fits: usize,
    pub fit_failures: usize,
    pub mean_model_size: f64,
    /// Share of fits selecting each covariate.
    pub selection_rate: Vec<f64>,
    pub methods: Vec<MethodSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub replicate: usize,
    pub lambda: f64,
    pub method: Option<Method>,
    pub reason: String,
}

/// Aggregated study output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub config: StudyConfig,
    pub replicates: usize,
    pub per_lambda: Vec<LambdaSummary>,
    /// AIC- and BIC-minimizing grid value per replicate (None if every fit failed).
    pub aic_choice: Vec<Option<f64>>,
    pub bic_choice: Vec<Option<f64>>,
    pub median_aic_lambda: Option<f64>,
    pub median_bic_lambda: Option<f64>,
    pub failures: Vec<FailureRecord>,
    pub runtime_secs: f64,
}

/// Lower median of the values present.
pub fn median(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    Some(v[(v.len() - 1) / 2])
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        f64::NAN
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

fn summarize_coefficient(j: usize, truth: f64, cis: &[&IntervalEstimate]) -> CoefSummary {
    let pick = |f: fn(&IntervalEstimate) -> f64| mean(&cis.iter().map(|c| f(c)).collect::<Vec<_>>());
    CoefSummary {
        coefficient: j,
        truth,
        intervals: cis.len(),
        coverage: cis.iter().filter(|c| c.contains(truth)).count() as f64 / cis.len() as f64,
        mean_lower: pick(|c| c.lower),
        mean_upper: pick(|c| c.upper),
        mean_width: pick(|c| c.width()),
        median_width: {
            let mut w: Vec<f64> = cis.iter().map(|c| c.width()).collect();
            w.sort_by(f64::total_cmp);
            w.get(w.len().saturating_sub(1) / 2).copied().unwrap_or(f64::NAN)
        },
        mean_point: pick(|c| c.point),
        mean_odds_lower: pick(|c| c.odds_lower),
        mean_odds_upper: pick(|c| c.odds_upper),
    }
}

/// Ordered reduction of replicate outcomes into a report.
pub fn aggregate(cfg: &StudyConfig, outcomes: &[ReplicateOutcome], runtime_secs: f64) -> StudyReport {
    let truth = cfg.dgp.theta_true.beta();
    let mut failures = Vec::new();
    let mut per_lambda = Vec::with_capacity(cfg.grid.len());
    for (g, &lambda) in cfg.grid.iter().enumerate() {
        let ok: Vec<&LambdaOutcome> = outcomes.iter().filter_map(|o| o.per_lambda[g].as_ref().ok()).collect();
        for o in outcomes {
            if let Err(reason) = &o.per_lambda[g] {
                failures.push(FailureRecord { replicate: o.replicate, lambda, method: None, reason: reason.clone() });
            }
        }
        let mut selection_rate = vec![0.0; cfg.dgp.p];
        for o in &ok {
            for &j in &o.model {
                selection_rate[j] += 1.0 / ok.len() as f64;
            }
        }
        let methods = cfg
            .methods
            .iter()
            .map(|&method| {
                let mut errors = Vec::new();
                let mut successes: Vec<&Vec<IntervalEstimate>> = Vec::new();
                for o in outcomes {
                    if let Ok(lo) = &o.per_lambda[g] {
                        match &lo.intervals[&method] {
                            Ok(cis) => successes.push(cis),
                            Err(reason) => {
                                errors.push(FailureRecord {
                                    replicate: o.replicate,
                                    lambda,
                                    method: Some(method),
                                    reason: reason.clone(),
                                });
                            }
                        }
                    }
                }
                let type_i: Vec<f64> =
                    successes.iter().map(|cis| type_i_error_rate(cis, &cfg.dgp.theta_true)).collect();
                let coefficients = cfg
                    .tracked
                    .iter()
                    .map(|&j| {
                        let cis: Vec<&IntervalEstimate> =
                            successes.iter().flat_map(|v| v.iter()).filter(|c| c.coefficient == Some(j)).collect();
                        summarize_coefficient(j, truth[j], &cis)
                    })
                    .collect();
                let failed = errors.len();
                failures.extend(errors);
                MethodSummary { method, attempted: ok.len(), failed, type_i_error: mean(&type_i), coefficients }
            })
            .collect();
        per_lambda.push(LambdaSummary {
            lambda,
            fits: ok.len(),
            fit_failures: outcomes.len() - ok.len(),
            mean_model_size: mean(&ok.iter().map(|o| o.model.len() as f64).collect::<Vec<_>>()),
            selection_rate,
            methods,
        });
    }
    for f in &failures {
        log::debug!("replicate {} at lambda {} excluded: {}", f.replicate, f.lambda, f.reason);
    }
    let aic_choice: Vec<Option<f64>> = outcomes.iter().map(|o| o.argmin(|l| l.aic)).collect();
    let bic_choice: Vec<Option<f64>> = outcomes.iter().map(|o| o.argmin(|l| l.bic)).collect();
    StudyReport {
        config: cfg.clone(),
        replicates: outcomes.len(),
        per_lambda,
        median_aic_lambda: median(aic_choice.iter().flatten().copied()),
        median_bic_lambda: median(bic_choice.iter().flatten().copied()),
        aic_choice,
        bic_choice,
        failures,
        runtime_secs,
    }
}

/// Runs every replicate (in parallel on the current rayon pool) and aggregates.
pub fn run_study(cfg: &StudyConfig) -> Result<StudyReport> {
    if cfg.replicates == 0 {
        return Err(Error::InvalidArgument("at least one replicate is required".into()));
    }
    if cfg.grid.is_empty() || cfg.grid.iter().any(|l| !(*l >= 0.0)) {
        return Err(Error::InvalidArgument("penalty grid must be non-empty and non-negative".into()));
    }
    if cfg.tracked.iter().any(|&j| j >= cfg.dgp.p) {
        return Err(Error::InvalidArgument("tracked covariate out of range".into()));
    }
    cfg.dgp.validate()?;
    let start = Instant::now();
    let outcomes: Vec<ReplicateOutcome> = (0..cfg.replicates).into_par_iter().map(|r| run_replicate(cfg, r)).collect();
    Ok(aggregate(cfg, &outcomes, start.elapsed().as_secs_f64()))
}

/// The same pipeline with data generated under (`true_se`, `true_sp`) and
/// analysed under the accuracy in `cfg.dgp`.
pub fn misspecification_study(cfg: &StudyConfig, true_se: f64, true_sp: f64) -> Result<StudyReport> {
    let mut mis = cfg.clone();
    mis.analysis_se = cfg.dgp.se;
    mis.analysis_sp = cfg.dgp.sp;
    mis.dgp.se = true_se;
    mis.dgp.sp = true_sp;
    run_study(&mis)
}

/// One row of the tidy CSV export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TidyRow {
    pub lambda: f64,
    pub method: String,
    pub metric: String,
    pub coef: Option<usize>,
    pub value: f64,
}

impl StudyReport {
    pub fn summary_at(&self, lambda: f64) -> Option<&LambdaSummary> {
        self.per_lambda.iter().find(|s| s.lambda == lambda)
    }

    pub fn method_at(&self, lambda: f64, method: Method) -> Option<&MethodSummary> {
        self.summary_at(lambda)?.methods.iter().find(|m| m.method == method)
    }

    /// Rows `lambda,method,metric,coef,value`; coefficients are 1-based.
    pub fn tidy_rows(&self) -> Vec<TidyRow> {
        let mut rows = Vec::new();
        let row = |lambda, method: &str, metric: &str, coef: Option<usize>, value| TidyRow {
            lambda,
            method: method.to_string(),
            metric: metric.to_string(),
            coef: coef.map(|j| j + 1),
            value,
        };
        for s in &self.per_lambda {
            rows.push(row(s.lambda, "fit", "mean_model_size", None, s.mean_model_size));
            rows.push(row(s.lambda, "fit", "fit_failures", None, s.fit_failures as f64));
            for (j, rate) in s.selection_rate.iter().enumerate() {
                rows.push(row(s.lambda, "fit", "selection_rate", Some(j), *rate));
            }
            let aic = self.aic_choice.iter().filter(|c| **c == Some(s.lambda)).count();
            let bic = self.bic_choice.iter().filter(|c| **c == Some(s.lambda)).count();
            rows.push(row(s.lambda, "fit", "aic_chosen", None, aic as f64));
            rows.push(row(s.lambda, "fit", "bic_chosen", None, bic as f64));
            for m in &s.methods {
                let name = m.method.as_str();
                rows.push(row(s.lambda, name, "type_i_error", None, m.type_i_error));
                rows.push(row(s.lambda, name, "failures", None, m.failed as f64));
                for c in &m.coefficients {
                    let j = Some(c.coefficient);
                    rows.push(row(s.lambda, name, "intervals", j, c.intervals as f64));
                    rows.push(row(s.lambda, name, "coverage", j, c.coverage));
                    rows.push(row(s.lambda, name, "mean_lower", j, c.mean_lower));
                    rows.push(row(s.lambda, name, "mean_upper", j, c.mean_upper));
                    rows.push(row(s.lambda, name, "mean_width", j, c.mean_width));
                    rows.push(row(s.lambda, name, "median_width", j, c.median_width));
                    rows.push(row(s.lambda, name, "mean_point", j, c.mean_point));
                    rows.push(row(s.lambda, name, "mean_odds_lower", j, c.mean_odds_lower));
                    rows.push(row(s.lambda, name, "mean_odds_upper", j, c.mean_odds_upper));
                }
            }
        }
        rows
    }

    /// Writes [`StudyReport::tidy_rows`] as CSV.
    pub fn write_tidy_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["lambda", "method", "metric", "coef", "value"]).map_err(csv_io)?;
        for r in self.tidy_rows() {
            let coef = r.coef.map(|c| c.to_string()).unwrap_or_default();
            wtr.write_record([r.lambda.to_string(), r.method, r.metric, coef, r.value.to_string()]).map_err(csv_io)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn csv_io(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::Csv { line: 0, message: format!("{other:?}") },
    }
}

/// Pivots at the true value for replicates whose selected model contains the
/// true support, taken for the first selected null coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PivotCalibration {
    pub lambda: f64,
    pub pivots: Vec<f64>,
    pub attempted: usize,
    /// Replicates skipped because the support was missed or no null was selected.
    pub skipped: usize,
    pub failures: usize,
}

pub fn pivot_calibration(
    dgp: &DgpConfig,
    lambda: f64,
    target: usize,
    max_attempts: usize,
    seed: u64,
    info: InfoMethod,
) -> Result<PivotCalibration> {
    let support = dgp.theta_true.support();
    let one = |r: usize| -> std::result::Result<Option<f64>, String> {
        let sim = simulate_dataset(&dgp.clone().with_seed(child_seed(seed, r as u64))).map_err(|e| e.to_string())?;
        let data = &sim.dataset;
        let fit = em_fit(data, lambda, None).map_err(|e| e.to_string())?;
        let model = fit.selected();
        if !support.iter().all(|j| model.contains(j)) {
            return Ok(None);
        }
        let Some(k) = model.iter().position(|j| !support.contains(j)) else {
            return Ok(None);
        };
        let est = post_selection(&fit, data, info).map_err(|e| e.to_string())?;
        let trunc = est.coordinate_truncation(k).map_err(|e| e.to_string())?;
        crate::inference::selective_pivot(&est, &trunc, 0.0).map(Some).map_err(|e| e.to_string())
    };
    let mut pivots = Vec::with_capacity(target);
    let (mut attempted, mut skipped, mut failures) = (0, 0, 0);
    // batches keep the result independent of thread scheduling
    let batch = rayon::current_num_threads().max(1) * 8;
    while pivots.len() < target && attempted < max_attempts {
        let end = (attempted + batch).min(max_attempts);
        let results: Vec<_> = (attempted..end).into_par_iter().map(one).collect();
        for res in results {
            attempted += 1;
            if pivots.len() >= target {
                continue;
            }
            match res {
                Ok(Some(v)) => pivots.push(v),
                Ok(None) => skipped += 1,
                Err(reason) => {
                    log::debug!("pivot replicate failed: {reason}");
                    failures += 1;
                }
            }
        }
    }
    Ok(PivotCalibration { lambda, pivots, attempted, skipped, failures })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_design() {
        let cfg = DgpConfig::default();
        assert_eq!(cfg.theta_true.beta()[..4], [2.0, 1.0, 1.0, 0.0]);
        let at_zero = logistic_mean(&cfg.theta_true, &[0.0; 10]);
        assert!((at_zero - 1.0 / (1.0 + 5f64.exp())).abs() < 1e-15);
        assert!((at_zero - 0.006693).abs() < 1e-6);
    }

    #[test]
    fn grids() {
        let g = lambda_grid(1000).unwrap();
        assert_eq!((g[0], g[24]), (1.0, 7.0));
        let g2 = lambda_grid(2000).unwrap();
        assert_eq!((g2[0], g2[24]), (0.5, 10.0));
        let ratio = g[1] / g[0];
        assert!(g.windows(2).all(|w| (w[1] / w[0] - ratio).abs() < 1e-12));
        assert!(lambda_grid(1500).is_err());
    }

    #[test]
    fn perfect_assay_reveals_pool_truth() {
        let cfg = DgpConfig { n: 60, se: 1.0, sp: 1.0, pool_size: 3, ..DgpConfig::default() };
        let sim = simulate_dataset(&cfg).unwrap();
        assert_eq!(sim.dataset.num_pools(), 20);
        assert_eq!(sim.dataset.z(), sim.pool_truth.as_slice());
        assert_eq!(simulate_dataset(&cfg).unwrap(), sim);
    }

    fn ci(j: usize, lo: f64, hi: f64) -> IntervalEstimate {
        let mut c = crate::inference::wald_interval(0.5 * (lo + hi), 1.0, 0.95, Method::Naive).unwrap();
        c.coefficient = Some(j);
        c.lower = lo;
        c.upper = hi;
        c
    }

    #[test]
    fn type_i_error_convention() {
        let theta = DgpConfig::default().theta_true;
        assert_eq!(type_i_error_rate(&[ci(1, 0.2, 1.0)], &theta), 0.0);
        assert_eq!(type_i_error_rate(&[ci(1, 0.2, 1.0), ci(3, 0.1, 0.5)], &theta), 1.0);
        assert_eq!(type_i_error_rate(&[ci(3, -0.1, 0.5), ci(5, 0.1, 0.5)], &theta), 0.5);
        assert_eq!(type_i_error_rate(&[], &theta), 0.0);
    }

    #[test]
    fn child_seeds_are_distinct() {
        let seeds: std::collections::BTreeSet<u64> = (0..1000).map(|r| child_seed(7, r)).collect();
        assert_eq!(seeds.len(), 1000);
    }

    #[test]
    fn median_is_lower_median() {
        assert_eq!(median([3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median([4.0, 1.0, 2.0, 3.0]), Some(2.0));
        assert_eq!(median(std::iter::empty()), None);
    }
}
