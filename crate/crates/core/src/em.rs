//! EM algorithm with LASSO-penalized M-steps for individual and pooled
//! test outcomes, plus stationarity diagnostics of the final M-step.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    fitted_probs, linear_predictor, loglik_from_probs, negative_prob_from, Coefficients, Dataset, PROB_EPS,
};

/// Floor applied to IRLS weights π(1 − π) before they are inverted.
pub const WEIGHT_FLOOR: f64 = 1e-10;

/// EM gives up once some |x_iᵀθ| exceeds this: the fitted probabilities
/// are saturated in double precision and the iterates are diverging.
pub const MAX_LINEAR_PREDICTOR: f64 = 40.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MStepOptions {
    /// Convergence threshold on the largest coefficient change.
    pub tol: f64,
    /// Cap on coordinate-descent sweeps across all IRLS rounds.
    pub max_sweeps: usize,
}

impl Default for MStepOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_sweeps: 10_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmOptions {
    /// Threshold on n^{-1/2}‖Ŷ^{(k+1)} − Ŷ^{(k)}‖₂.
    pub tol: f64,
    pub max_iter: usize,
    pub m_step: MStepOptions,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self { tol: 1e-6, max_iter: 500, m_step: MStepOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MStepResult {
    pub coefficients: Coefficients,
    pub converged: bool,
    pub sweeps: usize,
}

/// Output of [`em_fit`].
///
/// `theta_hat` is the exact penalized maximizer against `y_hat`, so the
/// stationarity conditions hold for `(weights, working_response)` up to the
/// M-step tolerance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenalizedFit {
    pub theta_hat: Coefficients,
    pub y_hat: Vec<f64>,
    pub weights: Vec<f64>,
    pub working_response: Vec<f64>,
    pub lambda: f64,
    pub iterations: usize,
    pub converged: bool,
    pub m_step_converged: bool,
    /// Penalized observed-data log-likelihood after each M-step (entry 0 is
    /// the starting value).
    pub em_trace: Vec<f64>,
}

impl PenalizedFit {
    /// Selected covariates M (0-based, ascending).
    pub fn selected(&self) -> Vec<usize> {
        self.theta_hat.support()
    }

    /// sign(β̂_j) for j in M.
    pub fn signs(&self) -> Vec<f64> {
        self.selected().iter().map(|&j| self.theta_hat.beta[j].signum()).collect()
    }
}

/// Stationarity residuals of the final weighted least-squares problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    /// X_jᵀŴ(residual) for j in M; equals −λ·sign(β̂_j) at a stationary point.
    pub active_residuals: BTreeMap<usize, f64>,
    /// |X_jᵀŴ(residual)| for j outside M; at most λ at a stationary point.
    pub inactive_bounds: BTreeMap<usize, f64>,
    pub intercept_residual: f64,
    pub tolerance: f64,
    pub lambda: f64,
    pub signs: BTreeMap<usize, f64>,
}

impl KktReport {
    pub fn max_active_violation(&self) -> f64 {
        self.active_residuals
            .iter()
            .map(|(j, g)| (g + self.lambda * self.signs[j]).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_inactive_bound(&self) -> f64 {
        self.inactive_bounds.values().copied().fold(0.0, f64::max)
    }

    pub fn satisfied(&self) -> bool {
        self.intercept_residual.abs() <= self.tolerance
            && self.max_active_violation() <= self.tolerance
            && self.max_inactive_bound() <= self.lambda * (1.0 + 1e-6) + 1e-8
    }
}

/// Per-pool factor Se^z(1 − Se)^{1−z} / P_θ(Z_j = z_j); Ŷ_i is this times π_i.
pub(crate) fn posterior_scales(probs: &[f64], data: &Dataset) -> Vec<f64> {
    let (se, sp) = (data.se(), data.sp());
    data.pools()
        .iter()
        .zip(data.z())
        .map(|(members, &zj)| {
            let p0 = negative_prob_from(members.iter().map(|&i| probs[i]), se, sp);
            if zj {
                se / (1.0 - p0)
            } else {
                (1.0 - se) / p0
            }
        })
        .collect()
}

pub(crate) fn e_step_from_probs(probs: &[f64], data: &Dataset) -> Vec<f64> {
    let scales = posterior_scales(probs, data);
    let mut y = vec![0.0; data.n()];
    for (members, c) in data.pools().iter().zip(scales) {
        for &i in members {
            y[i] = (c * probs[i]).clamp(0.0, 1.0);
        }
    }
    y
}

/// E_θ[Y_i | Z_j] for every individual, i in pool j.
pub fn e_step_group(theta: &Coefficients, data: &Dataset) -> Vec<f64> {
    e_step_from_probs(&fitted_probs(theta, data), data)
}

/// E_θ[Y_i | Z_i] under individual testing; the singleton-pool case of
/// [`e_step_group`].
pub fn e_step_individual(theta: &Coefficients, data: &Dataset) -> Result<Vec<f64>> {
    if let Some((pool, members)) = data.pools().iter().enumerate().find(|(_, m)| m.len() > 1) {
        return Err(Error::NotIndividualTesting { pool, size: members.len() });
    }
    Ok(e_step_group(theta, data))
}

/// ‖Xᵀ(ŷ − ȳ𝟙)‖_∞: the smallest λ at which every slope is zero.
pub fn lambda_max(y_hat: &[f64], data: &Dataset) -> f64 {
    let mean = y_hat.iter().sum::<f64>() / y_hat.len() as f64;
    (0..data.p())
        .map(|j| data.column(j).iter().zip(y_hat).map(|(x, y)| x * (y - mean)).sum::<f64>().abs())
        .fold(0.0, f64::max)
}

/// −Q(θ) + λ‖β‖₁ for fractional responses; also stores π(η) in `probs`
/// so each evaluation costs one exponential per individual.
fn penalized_objective(y: &[f64], eta: &[f64], theta: &Coefficients, lambda: f64, probs: &mut [f64]) -> f64 {
    let mut nll = 0.0;
    for ((&yi, &e), p) in y.iter().zip(eta).zip(probs.iter_mut()) {
        let t = (-e.abs()).exp();
        nll += e.max(0.0) + t.ln_1p() - yi * e;
        *p = if e >= 0.0 { 1.0 / (1.0 + t) } else { t / (1.0 + t) };
    }
    nll + lambda * theta.l1_norm()
}

#[inline]
fn soft_threshold(u: f64, lambda: f64) -> f64 {
    if u > lambda {
        u - lambda
    } else if u < -lambda {
        u + lambda
    } else {
        0.0
    }
}

/// Coordinate descent on the weighted least-squares surrogate
/// ½Σ w_i(r_i − Δη_i)² + λ‖β‖₁, where `resid` holds the working residual
/// z̃ − η and is updated in place.
struct Surrogate<'a> {
    data: &'a Dataset,
    w: &'a [f64],
    resid: &'a mut [f64],
    curvature: Vec<f64>,
    sum_w: f64,
    lambda: f64,
}

impl Surrogate<'_> {
    fn curvature(&mut self, j: usize) -> f64 {
        if self.curvature[j].is_nan() {
            self.curvature[j] = self.data.column(j).iter().zip(self.w).map(|(x, w)| w * x * x).sum();
        }
        self.curvature[j]
    }

    /// One pass over the intercept and the given slopes; returns the largest
    /// coefficient change and whether any zero slope became non-zero.
    fn sweep(&mut self, theta: &mut Coefficients, cols: impl Iterator<Item = usize>) -> (f64, bool) {
        let shift = self.w.iter().zip(self.resid.iter()).map(|(w, r)| w * r).sum::<f64>() / self.sum_w;
        theta.alpha += shift;
        for r in self.resid.iter_mut() {
            *r -= shift;
        }
        let mut max_change = shift.abs();
        let mut entered = false;
        for j in cols {
            let h = self.curvature(j);
            if h <= 0.0 {
                continue;
            }
            let x = self.data.column(j);
            let g: f64 = x.iter().zip(self.w).zip(self.resid.iter()).map(|((x, w), r)| x * w * r).sum();
            let old = theta.beta[j];
            let new = soft_threshold(g + h * old, self.lambda) / h;
            if new != old {
                let d = new - old;
                for (r, xi) in self.resid.iter_mut().zip(x) {
                    *r -= d * xi;
                }
                theta.beta[j] = new;
                max_change = max_change.max(d.abs());
                entered |= old == 0.0;
            }
        }
        (max_change, entered)
    }
}

impl Surrogate<'_> {
    /// Solves the surrogate exactly on a fixed active set with fixed signs:
    /// [𝟙,X_A]ᵀW[𝟙,X_A]θ_A = [𝟙,X_A]ᵀW(r + η_A) − [0, λs_A].
    ///
    /// The step is taken only if every active slope keeps its sign. Returns
    /// true when the result also satisfies the inactive bounds, i.e. it is the
    /// surrogate minimizer.
    fn active_solve(&mut self, theta: &mut Coefficients, active: &[usize]) -> bool {
        let q = active.len() + 1;
        let cols: Vec<&[f64]> = active.iter().map(|&j| self.data.column(j)).collect();
        let mut gram = DMatrix::<f64>::zeros(q, q);
        let mut rhs = DVector::<f64>::zeros(q);
        let mut row = vec![0.0; q];
        for i in 0..self.resid.len() {
            row[0] = 1.0;
            let mut eta = theta.alpha;
            for (k, (c, &j)) in cols.iter().zip(active).enumerate() {
                row[k + 1] = c[i];
                eta += c[i] * theta.beta[j];
            }
            let w = self.w[i];
            let u = w * (self.resid[i] + eta);
            for a in 0..q {
                rhs[a] += u * row[a];
                let wa = w * row[a];
                for b in 0..=a {
                    gram[(a, b)] += wa * row[b];
                }
            }
        }
        for (k, &j) in active.iter().enumerate() {
            rhs[k + 1] -= self.lambda * theta.beta[j].signum();
        }
        gram.fill_upper_triangle_with_lower_triangle();
        let Some(chol) = gram.cholesky() else {
            return false;
        };
        let sol = chol.solve(&rhs);
        if active.iter().enumerate().any(|(k, &j)| sol[k + 1] == 0.0 || sol[k + 1].signum() != theta.beta[j].signum()) {
            return false;
        }
        let d_alpha = sol[0] - theta.alpha;
        let deltas: Vec<f64> = active.iter().enumerate().map(|(k, &j)| sol[k + 1] - theta.beta[j]).collect();
        for i in 0..self.resid.len() {
            let mut d = d_alpha;
            for (c, dk) in cols.iter().zip(&deltas) {
                d += c[i] * dk;
            }
            self.resid[i] -= d;
        }
        theta.alpha = sol[0];
        for (k, &j) in active.iter().enumerate() {
            theta.beta[j] = sol[k + 1];
        }
        (0..self.data.p()).filter(|j| theta.beta[*j] == 0.0).all(|j| {
            let g: f64 = self.data.column(j).iter().zip(self.w).zip(self.resid.iter()).map(|((x, w), r)| x * w * r).sum();
            g.abs() <= self.lambda
        })
    }
}

/// Maximizes Σ{ŷ_i log π_i + (1 − ŷ_i) log(1 − π_i)} − λ‖β‖₁ with the
/// intercept unpenalized, starting from `warm_start`.
pub fn m_step_penalized(
    y_hat: &[f64],
    data: &Dataset,
    lambda: f64,
    warm_start: &Coefficients,
) -> Result<MStepResult> {
    m_step_with(y_hat, data, lambda, warm_start, &MStepOptions::default())
}

pub fn m_step_with(
    y_hat: &[f64],
    data: &Dataset,
    lambda: f64,
    warm_start: &Coefficients,
    opts: &MStepOptions,
) -> Result<MStepResult> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("penalty must be finite and non-negative, got {lambda}")));
    }
    if y_hat.len() != data.n() || y_hat.iter().any(|y| !(0.0..=1.0).contains(y)) {
        return Err(Error::InvalidArgument("responses must be n values in [0, 1]".into()));
    }
    if warm_start.p() != data.p() {
        return Err(Error::InvalidArgument("warm start has the wrong number of slopes".into()));
    }

    const MAX_HALVINGS: usize = 40;
    let n = data.n();
    let p = data.p();
    let mut inner_tol;
    let mut last_step = f64::INFINITY;
    let mut theta = warm_start.clone();
    let mut probs = vec![0.0; n];
    let mut objective = penalized_objective(y_hat, &linear_predictor(&theta, data), &theta, lambda, &mut probs);
    let mut new_probs = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut resid = vec![0.0; n];
    let mut sweeps = 0;
    let mut converged = false;

    while sweeps < opts.max_sweeps {
        // early IRLS rounds only need a rough surrogate minimizer
        inner_tol = (1e-2 * last_step).clamp(0.1 * opts.tol, 1e-4);
        for i in 0..n {
            let pi = probs[i].clamp(PROB_EPS, 1.0 - PROB_EPS);
            w[i] = (pi * (1.0 - pi)).max(WEIGHT_FLOOR);
            resid[i] = (y_hat[i] - pi) / w[i];
        }
        let start = theta.clone();
        let mut surrogate = Surrogate {
            data,
            sum_w: w.iter().sum(),
            w: &w,
            resid: &mut resid,
            curvature: vec![f64::NAN; p],
            lambda,
        };
        loop {
            let (change, _) = surrogate.sweep(&mut theta, 0..p);
            sweeps += 1;
            if change < inner_tol || sweeps >= opts.max_sweeps {
                break;
            }
            let active: Vec<usize> = (0..p).filter(|&j| theta.beta[j] != 0.0).collect();
            if surrogate.active_solve(&mut theta, &active) {
                break;
            }
            loop {
                let (change, _) = surrogate.sweep(&mut theta, active.iter().copied());
                sweeps += 1;
                if change < inner_tol || sweeps >= opts.max_sweeps {
                    break;
                }
            }
        }

        // Damped step if the surrogate minimizer does not decrease the objective.
        let mut new_eta = linear_predictor(&theta, data);
        let mut new_objective = penalized_objective(y_hat, &new_eta, &theta, lambda, &mut new_probs);
        let mut halvings = 0;
        while new_objective > objective + 1e-12 * objective.abs().max(1.0) && halvings < MAX_HALVINGS {
            theta.alpha = 0.5 * (theta.alpha + start.alpha);
            for (b, b0) in theta.beta.iter_mut().zip(&start.beta) {
                *b = 0.5 * (*b + b0);
            }
            new_eta = linear_predictor(&theta, data);
            new_objective = penalized_objective(y_hat, &new_eta, &theta, lambda, &mut new_probs);
            halvings += 1;
        }
        if halvings == MAX_HALVINGS {
            theta = start;
            break;
        }
        let step = std::iter::once((theta.alpha - start.alpha).abs())
            .chain(theta.beta.iter().zip(&start.beta).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        std::mem::swap(&mut probs, &mut new_probs);
        objective = new_objective;
        last_step = step;
        if step < opts.tol && inner_tol <= 0.1 * opts.tol {
            converged = true;
            break;
        }
    }
    Ok(MStepResult { coefficients: theta, converged, sweeps })
}

/// Moment-matched start: α₀ = logit of the assay-corrected individual
/// prevalence implied by the pooled positive rate, β₀ = 0.
pub fn default_init(data: &Dataset) -> Coefficients {
    let pooled = data.z().iter().filter(|&&z| z).count() as f64 / data.num_pools() as f64;
    let youden = data.se() + data.sp() - 1.0;
    // an uninformative assay carries no prevalence signal to correct for
    let adjusted = if youden > 1e-12 { (pooled + data.sp() - 1.0) / youden } else { pooled };
    let adjusted = adjusted.clamp(0.001, 0.999);
    let individual = (1.0 - (1.0 - adjusted).powf(1.0 / data.mean_pool_size())).clamp(0.01, 0.99);
    Coefficients { alpha: (individual / (1.0 - individual)).ln(), beta: vec![0.0; data.p()] }
}

/// Fits the penalized model by EM with exact penalized M-steps.
pub fn em_fit(data: &Dataset, lambda: f64, init: Option<&Coefficients>) -> Result<PenalizedFit> {
    em_fit_with(data, lambda, init, &EmOptions::default())
}

pub fn em_fit_with(
    data: &Dataset,
    lambda: f64,
    init: Option<&Coefficients>,
    opts: &EmOptions,
) -> Result<PenalizedFit> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("penalty must be finite and non-negative, got {lambda}")));
    }
    let mut theta = match init {
        Some(t) if t.p() != data.p() => {
            return Err(Error::InvalidArgument("initial coefficients have the wrong length".into()))
        }
        Some(t) => t.clone(),
        None => default_init(data),
    };
    let n = data.n();
    let mut probs = fitted_probs(&theta, data);
    let mut y = e_step_from_probs(&probs, data);
    let mut trace = vec![loglik_from_probs(&probs, data) - lambda * theta.l1_norm()];
    let mut m_ok = true;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        iterations += 1;
        let step = m_step_with(&y, data, lambda, &theta, &opts.m_step)?;
        m_ok &= step.converged;
        theta = step.coefficients;
        probs = fitted_probs(&theta, data);
        trace.push(loglik_from_probs(&probs, data) - lambda * theta.l1_norm());
        let y_next = e_step_from_probs(&probs, data);
        let delta = y_next.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() / (n as f64).sqrt();
        y = y_next;
        if delta < opts.tol {
            converged = true;
            break;
        }
        if linear_predictor(&theta, data).iter().any(|e| e.abs() > MAX_LINEAR_PREDICTOR) {
            log::debug!("EM iterates diverge after {iterations} iterations (lambda = {lambda})");
            break;
        }
    }

    // Final M-step against the returned Ŷ so the stationarity conditions are exact.
    let step = m_step_with(&y, data, lambda, &theta, &opts.m_step)?;
    m_ok &= step.converged;
    theta = step.coefficients;
    probs = fitted_probs(&theta, data);
    trace.push(loglik_from_probs(&probs, data) - lambda * theta.l1_norm());

    let eta = linear_predictor(&theta, data);
    let weights: Vec<f64> = probs.iter().map(|p| (p * (1.0 - p)).max(WEIGHT_FLOOR)).collect();
    let working_response = (0..n).map(|i| eta[i] + (y[i] - probs[i]) / weights[i]).collect();
    if !converged {
        log::debug!("EM stopped after {iterations} iterations without meeting the tolerance (lambda = {lambda})");
    }
    Ok(PenalizedFit {
        theta_hat: theta,
        y_hat: y,
        weights,
        working_response,
        lambda,
        iterations,
        converged,
        m_step_converged: m_ok,
        em_trace: trace,
    })
}

/// Evaluates the stationarity conditions of the final weighted
/// least-squares problem with the fit's stored Ŵ and ẑ.
pub fn kkt_check(fit: &PenalizedFit, data: &Dataset) -> KktReport {
    let eta = linear_predictor(&fit.theta_hat, data);
    let weighted: Vec<f64> =
        (0..data.n()).map(|i| fit.weights[i] * (eta[i] - fit.working_response[i])).collect();
    let intercept_residual = weighted.iter().sum();
    let mut active_residuals = BTreeMap::new();
    let mut inactive_bounds = BTreeMap::new();
    let mut signs = BTreeMap::new();
    for j in 0..data.p() {
        let g: f64 = data.column(j).iter().zip(&weighted).map(|(x, r)| x * r).sum();
        let b = fit.theta_hat.beta[j];
        if b != 0.0 {
            active_residuals.insert(j, g);
            signs.insert(j, b.signum());
        } else {
            inactive_bounds.insert(j, g.abs());
        }
    }
    KktReport {
        active_residuals,
        inactive_bounds,
        intercept_residual,
        tolerance: 1e-6 * data.n() as f64,
        lambda: fit.lambda,
        signs,
    }
}
