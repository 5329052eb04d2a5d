//! The one-step estimator θ̄_M, the sign-conditioned selection event, and
//! polyhedral truncation limits for a linear contrast.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::em::PenalizedFit;
use crate::error::{Error, Result};
use crate::information::{estimate_information, InfoMethod, InformationEstimate};
use crate::model::{Dataset, SubmodelCoefficients};

/// Relative agreement required between the two forms of θ̄_M.
const DUAL_PATH_TOL: f64 = 1e-6;

/// The event {M selected, sign(β̂_M) = s_M} as A₁β̄_M ≤ b₁.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionEvent {
    pub model: Vec<usize>,
    pub signs: Vec<f64>,
    pub a1: DMatrix<f64>,
    pub b1: DVector<f64>,
}

impl SelectionEvent {
    /// Largest violation of A₁β ≤ b₁ (non-positive inside the polyhedron).
    pub fn max_violation(&self, beta: &DVector<f64>) -> f64 {
        (&self.a1 * beta - &self.b1).max()
    }
}

/// Solves [𝟙, X_M]ᵀŴ[𝟙, X_M] via Cholesky.
struct WeightedGram {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl WeightedGram {
    fn new(weights: &[f64], data: &Dataset, model: &[usize]) -> Result<Self> {
        let q = model.len() + 1;
        let mut j = DMatrix::zeros(q, q);
        let cols: Vec<&[f64]> = model.iter().map(|&c| data.column(c)).collect();
        for (i, &w) in weights.iter().enumerate() {
            let row = |k: usize| if k == 0 { 1.0 } else { cols[k - 1][i] };
            for a in 0..q {
                let wa = w * row(a);
                for b in 0..=a {
                    j[(a, b)] += wa * row(b);
                }
            }
        }
        j.fill_upper_triangle_with_lower_triangle();
        let chol = j
            .cholesky()
            .ok_or_else(|| Error::DegenerateDesign(format!("weighted Gram matrix of columns {model:?} is singular")))?;
        Ok(Self { chol })
    }

    fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(rhs)
    }
}

/// J⁻¹(θ̂_M)[0, λs_Mᵀ]ᵀ.
fn shrinkage_offset(gram: &WeightedGram, lambda: f64, signs: &[f64]) -> DVector<f64> {
    let mut rhs = DVector::zeros(signs.len() + 1);
    for (k, s) in signs.iter().enumerate() {
        rhs[k + 1] = lambda * s;
    }
    gram.solve(&rhs)
}

/// θ̄_M = ([𝟙,X_M]ᵀŴ[𝟙,X_M])⁻¹[𝟙,X_M]ᵀŴẑ.
///
/// The one-step form θ̂_M + J⁻¹[0, λs_M] is computed as well and the two must
/// agree; a disagreement means the fit's stationarity conditions do not hold.
pub fn post_selection_estimator(fit: &PenalizedFit, data: &Dataset) -> Result<SubmodelCoefficients> {
    let model = fit.selected();
    let gram = WeightedGram::new(&fit.weights, data, &model)?;
    let mut rhs = DVector::zeros(model.len() + 1);
    for i in 0..data.n() {
        let wz = fit.weights[i] * fit.working_response[i];
        rhs[0] += wz;
        for (k, &c) in model.iter().enumerate() {
            rhs[k + 1] += wz * data.column(c)[i];
        }
    }
    let wls = gram.solve(&rhs);

    let theta_m = fit.theta_hat.restrict(&model);
    let one_step = DVector::from_vec(theta_m.as_vector()) + shrinkage_offset(&gram, fit.lambda, &fit.signs());
    let scale = wls.amax().max(1.0);
    let gap = (&wls - &one_step).amax();
    if gap > DUAL_PATH_TOL * scale {
        return Err(Error::Numerical(format!(
            "weighted least-squares and one-step forms of the estimator differ by {gap:.3e}"
        )));
    }
    SubmodelCoefficients::new(model, wls[0], wls.as_slice()[1..].to_vec())
}

/// A₁ = −diag(s_M), b₁ = −diag(s_M)[0 I]J⁻¹[0, λs_M].
pub fn selection_constraints(fit: &PenalizedFit, data: &Dataset) -> Result<SelectionEvent> {
    let model = fit.selected();
    if model.is_empty() {
        return Err(Error::EmptyModel);
    }
    let signs = fit.signs();
    let gram = WeightedGram::new(&fit.weights, data, &model)?;
    let offset = shrinkage_offset(&gram, fit.lambda, &signs);
    let k = model.len();
    let a1 = DMatrix::from_diagonal(&DVector::from_iterator(k, signs.iter().map(|s| -s)));
    let b1 = DVector::from_iterator(k, signs.iter().enumerate().map(|(j, s)| -s * offset[j + 1]));
    Ok(SelectionEvent { model, signs, a1, b1 })
}

/// Truncation limits of ξᵀβ given the rest of β, from the polyhedral lemma.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationInterval {
    pub v_minus: f64,
    pub v_plus: f64,
    /// v⁰(r); +∞ when no row is orthogonal to c.
    pub v_zero: f64,
    pub v_zero_ok: bool,
    pub contrast: Vec<f64>,
    /// ξᵀβ at the point the limits were computed for.
    pub observed: f64,
}

impl TruncationInterval {
    /// Whether `value` lies in [v⁻, v⁺] and v⁰ ≥ 0.
    pub fn contains(&self, value: f64) -> bool {
        self.v_zero_ok && self.v_minus <= value && value <= self.v_plus
    }
}

/// Polyhedral-lemma limits for {Aβ ≤ b} along ξ, where β has covariance
/// proportional to `cov`, evaluated at `point`.
pub fn polyhedral_limits(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    cov: &DMatrix<f64>,
    xi: &DVector<f64>,
    point: &DVector<f64>,
) -> Result<TruncationInterval> {
    if xi.iter().all(|v| *v == 0.0) || !xi.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidContrast);
    }
    let sigma_xi = cov * xi;
    let var = xi.dot(&sigma_xi);
    if !(var > 0.0) {
        return Err(Error::DegenerateDesign("contrast has non-positive variance".into()));
    }
    let c = sigma_xi / var;
    let observed = xi.dot(point);
    let r = point - &c * observed;
    let ac = a * &c;
    let slack = b - a * &r;
    let tol = 1e-12 * ac.amax();

    let mut v_minus = f64::NEG_INFINITY;
    let mut v_plus = f64::INFINITY;
    let mut v_zero = f64::INFINITY;
    for (k, &acj) in ac.iter().enumerate() {
        if acj < -tol {
            v_minus = v_minus.max(slack[k] / acj);
        } else if acj > tol {
            v_plus = v_plus.min(slack[k] / acj);
        } else {
            v_zero = v_zero.min(slack[k]);
        }
    }
    Ok(TruncationInterval {
        v_minus,
        v_plus,
        v_zero,
        v_zero_ok: v_zero >= 0.0,
        contrast: xi.iter().copied().collect(),
        observed,
    })
}

/// θ̄_M with its information estimate and selection event.
#[derive(Debug, Clone, PartialEq)]
pub struct PostSelectionEstimate {
    pub theta_bar: SubmodelCoefficients,
    pub information: InformationEstimate,
    /// Î for β̄_M.
    pub info_hat: DMatrix<f64>,
    /// Î⁻¹, the covariance plugged into the truncated Gaussian.
    pub covariance: DMatrix<f64>,
    pub event: SelectionEvent,
    pub degenerate: bool,
}

impl PostSelectionEstimate {
    pub fn beta_bar(&self) -> DVector<f64> {
        DVector::from_column_slice(self.theta_bar.beta())
    }

    /// Limits for ξᵀβ̄_M; the observed value must lie inside them.
    pub fn truncation_interval(&self, xi: &[f64]) -> Result<TruncationInterval> {
        if xi.len() != self.event.model.len() {
            return Err(Error::InvalidContrast);
        }
        let xi = DVector::from_column_slice(xi);
        let t = polyhedral_limits(&self.event.a1, &self.event.b1, &self.covariance, &xi, &self.beta_bar())?;
        let band = 1e-9 * (1.0 + t.observed.abs());
        if !t.v_zero_ok || t.observed < t.v_minus - band || t.observed > t.v_plus + band {
            return Err(Error::InconsistentEvent { observed: t.observed, lower: t.v_minus, upper: t.v_plus });
        }
        Ok(t)
    }

    /// Limits for the coefficient at position `k` of the selected model.
    pub fn coordinate_truncation(&self, k: usize) -> Result<TruncationInterval> {
        let mut xi = vec![0.0; self.event.model.len()];
        *xi.get_mut(k).ok_or(Error::InvalidContrast)? = 1.0;
        self.truncation_interval(&xi)
    }
}

/// Builds θ̄_M, Î and the selection event from a converged fit; Î is
/// evaluated at θ̂_M.
pub fn post_selection(fit: &PenalizedFit, data: &Dataset, method: InfoMethod) -> Result<PostSelectionEstimate> {
    let event = selection_constraints(fit, data)?;
    let theta_bar = post_selection_estimator(fit, data)?;
    let violation = event.max_violation(&DVector::from_column_slice(theta_bar.beta()));
    let scale = 1e-9 * (1.0 + event.b1.amax());
    if violation > scale {
        return Err(Error::InconsistentEvent { observed: violation, lower: f64::NEG_INFINITY, upper: 0.0 });
    }
    let theta_hat_m = fit.theta_hat.restrict(&event.model);
    let information = estimate_information(method, &theta_hat_m, data)?;
    let info_hat = information.beta_information()?;
    let asym = (&info_hat - info_hat.transpose()).amax();
    let covariance = info_hat.clone().cholesky().map(|c| c.inverse());
    let degenerate = !information.positive_definite || asym > 1e-10 * info_hat.amax().max(1.0);
    let covariance = covariance
        .ok_or_else(|| Error::DegenerateDesign("estimated information for the selected slopes is not positive definite".into()))?;
    Ok(PostSelectionEstimate { theta_bar, information, info_hat, covariance, event, degenerate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::em::em_fit;
    use crate::model::{logistic_mean, Coefficients};

    fn toy(n: usize, pool: usize, seed: u64) -> Dataset {
        let mut state = seed.max(1);
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let p = 4;
        let x = DMatrix::from_fn(n, p, |_, _| 2.0 * next() - 1.0);
        let pools: Vec<Vec<usize>> = (0..n).step_by(pool).map(|s| (s..(s + pool).min(n)).collect()).collect();
        let theta = Coefficients::new(-1.0, vec![2.0, -1.5, 0.0, 0.3]).unwrap();
        let z = pools
            .iter()
            .map(|m| m.iter().any(|&i| next() < logistic_mean(&theta, x.row(i).transpose().as_slice())))
            .collect();
        Dataset::new(x, pools, z, 0.95, 0.97).unwrap()
    }

    #[test]
    fn zero_penalty_leaves_estimate_unchanged() {
        let data = toy(300, 1, 3);
        let fit = em_fit(&data, 0.0, None).unwrap();
        let bar = post_selection_estimator(&fit, &data).unwrap();
        let hat = fit.theta_hat.restrict(&fit.selected());
        for (a, b) in bar.as_vector().iter().zip(hat.as_vector()) {
            assert!((a - b).abs() < 1e-8);
        }
        let event = selection_constraints(&fit, &data).unwrap();
        assert!(event.b1.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn empty_model_is_weighted_mean() {
        let data = toy(200, 2, 4);
        let fit = em_fit(&data, 1e4, None).unwrap();
        assert!(fit.selected().is_empty());
        let bar = post_selection_estimator(&fit, &data).unwrap();
        let sw: f64 = fit.weights.iter().sum();
        let mean = fit.weights.iter().zip(&fit.working_response).map(|(w, z)| w * z).sum::<f64>() / sw;
        assert!((bar.alpha() - mean).abs() < 1e-10);
        assert!(matches!(selection_constraints(&fit, &data), Err(Error::EmptyModel)));
    }

    #[test]
    fn event_holds_and_one_step_agrees() {
        for &(pool, lambda) in &[(1, 1.0), (2, 1.5), (4, 2.0)] {
            let data = toy(400, pool, 10 + pool as u64);
            let fit = em_fit(&data, lambda, None).unwrap();
            let est = post_selection(&fit, &data, InfoMethod::Louis).unwrap();
            assert!(est.event.max_violation(&est.beta_bar()) <= 1e-12);
            let shrink = est.event.b1.iter().zip(&est.event.signs).map(|(b, s)| -b * s);
            for ((bar, hat), off) in est.theta_bar.beta().iter().zip(fit.theta_hat.restrict(&est.event.model).beta()).zip(shrink) {
                assert!((bar - hat - off).abs() < 1e-8 * (1.0 + bar.abs()));
            }
            for k in 0..est.event.model.len() {
                let t = est.coordinate_truncation(k).unwrap();
                assert!(t.v_minus <= t.observed && t.observed <= t.v_plus);
            }
        }
    }

    #[test]
    fn offset_is_linear_in_lambda() {
        let data = toy(300, 2, 21);
        let fit = em_fit(&data, 3.0, None).unwrap();
        let e1 = selection_constraints(&fit, &data).unwrap();
        let mut doubled = fit.clone();
        doubled.lambda *= 2.0;
        let e2 = selection_constraints(&doubled, &data).unwrap();
        assert!((e2.b1 - 2.0 * e1.b1).amax() < 1e-12);
    }

    #[test]
    fn one_dimensional_limits() {
        let a = DMatrix::from_element(1, 1, -1.0);
        let b = DVector::from_element(1, 0.4);
        let cov = DMatrix::from_element(1, 1, 2.0);
        let xi = DVector::from_element(1, 1.0);
        let t = polyhedral_limits(&a, &b, &cov, &xi, &DVector::from_element(1, 1.0)).unwrap();
        assert_eq!(t.v_minus, -0.4);
        assert_eq!(t.v_plus, f64::INFINITY);
        assert!(t.v_zero_ok);
        let zero = DVector::from_element(1, 0.0);
        assert!(matches!(polyhedral_limits(&a, &b, &cov, &zero, &xi), Err(Error::InvalidContrast)));
    }
}
