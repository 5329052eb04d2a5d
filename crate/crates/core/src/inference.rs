//! Truncated-Gaussian pivots, selective intervals by pivot inversion, and
//! the naive and data-splitting baselines.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::em::{em_fit, PenalizedFit};
use crate::error::{Error, Result};
use crate::information::{estimate_information, InfoMethod};
use crate::model::{Coefficients, Dataset, SubmodelCoefficients};
use crate::normal::{log_interval_mass, quantile};
use crate::selection::{PostSelectionEstimate, TruncationInterval};

const BISECTION_ITERS: usize = 200;
const BISECTION_TOL: f64 = 1e-8;
const BRACKET_WIDTHS: f64 = 10.0;
const MAX_EXPANSIONS: usize = 60;

/// TN(μ, σ², a, b).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncatedGaussian {
    pub mu: f64,
    pub sigma2: f64,
    pub a: f64,
    pub b: f64,
}

impl TruncatedGaussian {
    pub fn new(mu: f64, sigma2: f64, a: f64, b: f64) -> Result<Self> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) || !mu.is_finite() || !(a < b) || a.is_nan() || b.is_nan() {
            return Err(Error::InvalidArgument(format!("invalid truncated normal N({mu}, {sigma2}) on [{a}, {b}]")));
        }
        Ok(Self { mu, sigma2, a, b })
    }

    /// Distribution function at `x`.
    pub fn cdf(&self, x: f64) -> Result<f64> {
        truncated_normal_cdf(self, x)
    }
}

/// F^{[a,b]}_{μ,σ²}(x).
///
/// Both pieces P(a ≤ X ≤ x) and P(x ≤ X ≤ b) are taken in log space, so
/// the ratio keeps its relative precision when [a, b] lies far in a tail.
pub fn truncated_normal_cdf(law: &TruncatedGaussian, x: f64) -> Result<f64> {
    if x <= law.a {
        return Ok(0.0);
    }
    if x >= law.b {
        return Ok(1.0);
    }
    let sigma = law.sigma2.sqrt();
    let (a, x_std, b) = ((law.a - law.mu) / sigma, (x - law.mu) / sigma, (law.b - law.mu) / sigma);
    let below = log_interval_mass(a, x_std);
    let above = log_interval_mass(x_std, b);
    if below == f64::NEG_INFINITY && above == f64::NEG_INFINITY {
        return Err(Error::TailDegeneracy { lower: law.a, upper: law.b });
    }
    // below / (below + above) as a logistic function of the log ratio
    let d = above - below;
    Ok(if d > 0.0 { (-d).exp() / (1.0 + (-d).exp()) } else { 1.0 / (1.0 + d.exp()) })
}

/// Which procedure produced an interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Selective,
    Naive,
    Split,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Selective => "selective",
            Method::Naive => "naive",
            Method::Split => "split",
        }
    }
}

/// A confidence interval for one coefficient (or contrast) of the selected model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalEstimate {
    /// 0-based covariate index, when the target is a single coefficient.
    pub coefficient: Option<usize>,
    /// Contrast over the selected coefficients.
    pub contrast: Vec<f64>,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub method: Method,
    pub point: f64,
    pub std_error: f64,
    /// Pivot evaluated at μ₀ = point (selective only).
    pub pivot_at_point: Option<f64>,
    /// Pivot evaluated at μ₀ = 0 (selective only).
    pub pivot_at_zero: Option<f64>,
    pub odds_lower: f64,
    pub odds_upper: f64,
    pub v_minus: Option<f64>,
    pub v_plus: Option<f64>,
    /// An endpoint hit the bracket limit because the pivot was numerically flat.
    pub degenerate: bool,
}

impl IntervalEstimate {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }
}

fn check_level(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!("confidence level must lie in (0, 1), got {level}")));
    }
    Ok(1.0 - level)
}

/// point ± z_{1−a/2}·se.
pub fn wald_interval(point: f64, std_error: f64, level: f64, method: Method) -> Result<IntervalEstimate> {
    let alpha = check_level(level)?;
    let half = quantile(1.0 - alpha / 2.0) * std_error;
    Ok(IntervalEstimate {
        coefficient: None,
        contrast: Vec::new(),
        lower: point - half,
        upper: point + half,
        level,
        method,
        point,
        std_error,
        pivot_at_point: None,
        pivot_at_zero: None,
        odds_lower: (point - half).exp(),
        odds_upper: (point + half).exp(),
        v_minus: None,
        v_plus: None,
        degenerate: false,
    })
}

/// The truncated law of ξᵀβ̄_M together with its observed value.
fn contrast_law(est: &PostSelectionEstimate, trunc: &TruncationInterval) -> Result<(f64, f64)> {
    if trunc.contrast.len() != est.event.model.len() {
        return Err(Error::InvalidContrast);
    }
    let xi = DVector::from_column_slice(&trunc.contrast);
    let sigma2 = xi.dot(&(&est.covariance * &xi));
    let observed = xi.dot(&est.beta_bar());
    if !trunc.v_zero_ok || observed < trunc.v_minus || observed > trunc.v_plus {
        // tiny overshoots from round-off are pulled back onto the boundary
        let band = 1e-9 * (1.0 + observed.abs());
        if trunc.v_zero_ok && observed >= trunc.v_minus - band && observed <= trunc.v_plus + band {
            return Ok((observed.clamp(trunc.v_minus, trunc.v_plus), sigma2));
        }
        return Err(Error::InconsistentEvent { observed, lower: trunc.v_minus, upper: trunc.v_plus });
    }
    Ok((observed, sigma2))
}

fn pivot_value(observed: f64, sigma2: f64, trunc: &TruncationInterval, mu0: f64) -> Result<f64> {
    let law = TruncatedGaussian::new(mu0, sigma2, trunc.v_minus, trunc.v_plus)?;
    truncated_normal_cdf(&law, observed)
}

/// F^{[v⁻,v⁺]}_{μ₀, ξᵀÎ⁻¹ξ}(ξᵀβ̄_M).
pub fn selective_pivot(est: &PostSelectionEstimate, trunc: &TruncationInterval, mu0: f64) -> Result<f64> {
    let (observed, sigma2) = contrast_law(est, trunc)?;
    pivot_value(observed, sigma2, trunc, mu0)
}

/// Solves F_μ(observed) = target for μ; F is decreasing in μ.
/// Returns the root and whether the bracket had to be abandoned.
fn invert_pivot(observed: f64, sigma2: f64, trunc: &TruncationInterval, target: f64, step: f64) -> (f64, bool) {
    // f(μ) = F_μ − target; errors mean the mass has vanished, which only
    // happens when μ is far outside [v⁻, v⁺]
    let f = |mu: f64| -> Option<f64> { pivot_value(observed, sigma2, trunc, mu).ok().map(|v| v - target) };
    let mut lo = observed - step;
    let mut hi = observed + step;
    let mut width = step;
    let mut expansions = 0;
    loop {
        match f(lo) {
            Some(v) if v > 0.0 => break,
            _ if expansions >= MAX_EXPANSIONS => return (lo, true),
            _ => {
                width *= 2.0;
                lo = observed - width;
                expansions += 1;
            }
        }
    }
    let mut width = step;
    expansions = 0;
    loop {
        match f(hi) {
            Some(v) if v < 0.0 => break,
            _ if expansions >= MAX_EXPANSIONS => return (hi, true),
            _ => {
                width *= 2.0;
                hi = observed + width;
                expansions += 1;
            }
        }
    }
    for _ in 0..BISECTION_ITERS {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= BISECTION_TOL * (1.0 + mid.abs()) {
            break;
        }
        match f(mid) {
            Some(v) if v > 0.0 => lo = mid,
            Some(_) => hi = mid,
            // flat region: move toward the side with information
            None => {
                if mid < observed {
                    lo = mid
                } else {
                    hi = mid
                }
            }
        }
    }
    (0.5 * (lo + hi), false)
}

/// {μ : a/2 ≤ F_μ(ξᵀβ̄_M) ≤ 1 − a/2}.
pub fn selective_ci(est: &PostSelectionEstimate, trunc: &TruncationInterval, level: f64) -> Result<IntervalEstimate> {
    let alpha = check_level(level)?;
    let (observed, sigma2) = contrast_law(est, trunc)?;
    let sd = sigma2.sqrt();
    let step = BRACKET_WIDTHS * quantile(1.0 - alpha / 2.0) * sd;
    let (lower, lo_flat) = invert_pivot(observed, sigma2, trunc, 1.0 - alpha / 2.0, step);
    let (upper, hi_flat) = invert_pivot(observed, sigma2, trunc, alpha / 2.0, step);
    let coefficient = match trunc.contrast.iter().filter(|v| **v != 0.0).count() {
        1 => trunc
            .contrast
            .iter()
            .position(|v| *v == 1.0)
            .map(|k| est.event.model[k]),
        _ => None,
    };
    Ok(IntervalEstimate {
        coefficient,
        contrast: trunc.contrast.clone(),
        lower,
        upper,
        level,
        method: Method::Selective,
        point: observed,
        std_error: sd,
        pivot_at_point: pivot_value(observed, sigma2, trunc, observed).ok(),
        pivot_at_zero: pivot_value(observed, sigma2, trunc, 0.0).ok(),
        odds_lower: lower.exp(),
        odds_upper: upper.exp(),
        v_minus: Some(trunc.v_minus),
        v_plus: Some(trunc.v_plus),
        degenerate: lo_flat || hi_flat,
    })
}

/// Selective intervals for every selected coefficient.
pub fn selective_intervals(est: &PostSelectionEstimate, level: f64) -> Result<Vec<IntervalEstimate>> {
    (0..est.event.model.len())
        .map(|k| {
            let trunc = est.coordinate_truncation(k)?;
            selective_ci(est, &trunc, level)
        })
        .collect()
}

/// Unpenalized EM fit of the submodel on `model`, with Wald intervals from
/// the chosen information estimate. Indices in the output refer to `data`.
pub fn classical_intervals(
    data: &Dataset,
    model: &[usize],
    level: f64,
    warm_start: Option<&SubmodelCoefficients>,
    info: InfoMethod,
    method: Method,
) -> Result<(SubmodelCoefficients, Vec<IntervalEstimate>)> {
    check_level(level)?;
    if model.is_empty() {
        return Err(Error::EmptyModel);
    }
    let sub = data.select_columns(model)?;
    let init = warm_start.map(|t| Coefficients::new(t.alpha(), t.beta().to_vec())).transpose()?;
    let refit = em_fit(&sub, 0.0, init.as_ref())?;
    if !refit.converged {
        return Err(Error::NotConverged { what: "unpenalized EM refit", iterations: refit.iterations });
    }
    let local: Vec<usize> = (0..model.len()).collect();
    let theta_local = refit.theta_hat.restrict(&local);
    let cov = estimate_information(info, &theta_local, &sub)?.covariance()?;
    let mut out = Vec::with_capacity(model.len());
    for (k, &j) in model.iter().enumerate() {
        let var = cov[(k + 1, k + 1)];
        if !(var > 0.0) {
            return Err(Error::DegenerateDesign(format!("non-positive variance for coefficient {j}")));
        }
        let mut ci = wald_interval(theta_local.beta()[k], var.sqrt(), level, method)?;
        ci.coefficient = Some(j);
        let mut contrast = vec![0.0; model.len()];
        contrast[k] = 1.0;
        ci.contrast = contrast;
        out.push(ci);
    }
    let refit_m = SubmodelCoefficients::new(model.to_vec(), theta_local.alpha(), theta_local.beta().to_vec())?;
    Ok((refit_m, out))
}

/// Classical Wald intervals for the selected model, as if M had been fixed in advance.
pub fn naive_ci(fit: &PenalizedFit, data: &Dataset, level: f64) -> Result<Vec<IntervalEstimate>> {
    let model = fit.selected();
    if model.is_empty() {
        return Ok(Vec::new());
    }
    let warm = fit.theta_hat.restrict(&model);
    classical_intervals(data, &model, level, Some(&warm), InfoMethod::Louis, Method::Naive).map(|(_, cis)| cis)
}

/// Pool indices of the two halves: ⌈J/2⌉ training pools then ⌊J/2⌋ testing pools.
pub fn split_pools(num_pools: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut ids: Vec<usize> = (0..num_pools).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = ids.split_off(num_pools.div_ceil(2));
    (ids, test)
}

/// Selection on a random half of the pools, classical inference on the other half.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitResult {
    pub train_pools: Vec<usize>,
    pub test_pools: Vec<usize>,
    pub model: Vec<usize>,
    pub intervals: Vec<IntervalEstimate>,
}

pub fn split_inference(data: &Dataset, lambda: f64, level: f64, seed: u64) -> Result<SplitResult> {
    check_level(level)?;
    if data.num_pools() < 2 {
        return Err(Error::InvalidArgument("data splitting needs at least two pools".into()));
    }
    let (mut train_pools, mut test_pools) = split_pools(data.num_pools(), seed);
    train_pools.sort_unstable();
    test_pools.sort_unstable();
    let train = data.subset_pools(&train_pools)?;
    let test = data.subset_pools(&test_pools)?;
    let fit = em_fit(&train, lambda, None)?;
    let model = fit.selected();
    let intervals = if model.is_empty() {
        Vec::new()
    } else {
        let warm = fit.theta_hat.restrict(&model);
        classical_intervals(&test, &model, level, Some(&warm), InfoMethod::Louis, Method::Split)?.1
    };
    Ok(SplitResult { train_pools, test_pools, model, intervals })
}
