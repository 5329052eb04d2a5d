//! Observed-information estimators for a selected submodel: Louis' method
//! for individual and pooled outcomes, and the sandwich covariance.
//!
//! The conditional second moments E[(Y − π)(Y − π)ᵀ | Z] are never formed
//! as an n × n matrix. Across pools they factor as an outer product of
//! Ŷ − π; within a pool the conditional covariance of Y is a diagonal plus
//! two rank-one terms. Quadratic forms against [𝟙, X_M] therefore cost
//! O(n·|M|²).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::em::posterior_scales;
use crate::error::{Error, Result};
use crate::model::{fitted_probs, Dataset, SubmodelCoefficients};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InfoMethod {
    Louis,
    Sandwich,
}

impl std::str::FromStr for InfoMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "louis" => Ok(Self::Louis),
            "sandwich" => Ok(Self::Sandwich),
            other => Err(Error::InvalidArgument(format!("unknown information method `{other}`"))),
        }
    }
}

/// A `(|M|+1) × (|M|+1)` matrix over (α, β_M) and its β_M block.
///
/// For [`InfoMethod::Louis`] `full` is the observed information; for
/// [`InfoMethod::Sandwich`] it is a covariance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct InformationEstimate {
    pub method: InfoMethod,
    pub full: DMatrix<f64>,
    /// The β_M block of `full`.
    pub beta_block: DMatrix<f64>,
    pub positive_definite: bool,
}

impl InformationEstimate {
    fn new(method: InfoMethod, full: DMatrix<f64>) -> Self {
        let q = full.nrows();
        let beta_block = full.view((1, 1), (q - 1, q - 1)).into_owned();
        let positive_definite = full.clone().cholesky().is_some();
        Self { method, full, beta_block, positive_definite }
    }

    /// The information Î used for β̄_M: the inverse of the β block of
    /// [`covariance`](Self::covariance), so the intercept is profiled out
    /// rather than held at its estimate.
    pub fn beta_information(&self) -> Result<DMatrix<f64>> {
        let cov = self.covariance()?;
        let q = cov.nrows();
        cov.view((1, 1), (q - 1, q - 1))
            .into_owned()
            .cholesky()
            .map(|c| c.inverse())
            .ok_or_else(|| Error::DegenerateDesign("β covariance block is not positive definite".into()))
    }

    /// Covariance of (α̂, β̂_M): the inverse information or the sandwich itself.
    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        match self.method {
            InfoMethod::Sandwich => Ok(self.full.clone()),
            InfoMethod::Louis => self
                .full
                .clone()
                .cholesky()
                .map(|c| c.inverse())
                .ok_or_else(|| Error::DegenerateDesign("observed information is not positive definite".into())),
        }
    }
}

/// Row i of [𝟙, X_M].
#[inline]
fn design_row(data: &Dataset, model: &[usize], i: usize, out: &mut [f64]) {
    out[0] = 1.0;
    for (slot, &j) in out[1..].iter_mut().zip(model) {
        *slot = data.column(j)[i];
    }
}

/// Σ_i w_i [1 x_i; x_i x_iᵀ] over the selected columns.
fn weighted_gram(data: &Dataset, model: &[usize], weight: impl Fn(usize) -> f64) -> DMatrix<f64> {
    let q = model.len() + 1;
    let mut out = DMatrix::zeros(q, q);
    let mut row = vec![0.0; q];
    for i in 0..data.n() {
        let w = weight(i);
        if w == 0.0 {
            continue;
        }
        design_row(data, model, i, &mut row);
        for a in 0..q {
            let wa = w * row[a];
            for b in 0..=a {
                out[(a, b)] += wa * row[b];
            }
        }
    }
    out.fill_upper_triangle_with_lower_triangle();
    out
}

/// [𝟙, X_M]ᵀ v.
fn design_transpose_times(data: &Dataset, model: &[usize], v: &[f64]) -> DVector<f64> {
    let mut out = DVector::zeros(model.len() + 1);
    out[0] = v.iter().sum();
    for (k, &j) in model.iter().enumerate() {
        out[k + 1] = data.column(j).iter().zip(v).map(|(x, v)| x * v).sum();
    }
    out
}

/// I_c(θ_M) = Σ π_i(1 − π_i)[1 x_i; x_i x_iᵀ].
pub fn complete_data_information(theta_m: &SubmodelCoefficients, data: &Dataset) -> DMatrix<f64> {
    let probs = fitted_probs(&theta_m.to_full(data.p()), data);
    weighted_gram(data, theta_m.model(), |i| probs[i] * (1.0 - probs[i]))
}

/// E_θ[D(θ; Y) | Z] with D = (Y − π)(Y − π)ᵀ, stored in factored form.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossMoments {
    probs: Vec<f64>,
    y_hat: Vec<f64>,
    pool_of: Vec<usize>,
    /// Se^z(1 − Se)^{1−z}/P(Z_j = z_j) per pool, so E[Y_iY_k | Z_j] = c_j π_i π_k.
    scales: Vec<f64>,
}

/// Conditional second moments at θ_M, with Ŷ recomputed by the E-step at θ_M.
pub fn conditional_cross_moments(theta_m: &SubmodelCoefficients, data: &Dataset) -> CrossMoments {
    let probs = fitted_probs(&theta_m.to_full(data.p()), data);
    let scales = posterior_scales(&probs, data);
    let mut y_hat = vec![0.0; data.n()];
    let mut pool_of = vec![0; data.n()];
    for (j, members) in data.pools().iter().enumerate() {
        for &i in members {
            y_hat[i] = (scales[j] * probs[i]).clamp(0.0, 1.0);
            pool_of[i] = j;
        }
    }
    CrossMoments { probs, y_hat, pool_of, scales }
}

impl CrossMoments {
    pub fn n(&self) -> usize {
        self.probs.len()
    }

    pub fn y_hat(&self) -> &[f64] {
        &self.y_hat
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Entry [i, k] of E[D | Z].
    pub fn entry(&self, i: usize, k: usize) -> f64 {
        let (pi, pk) = (self.probs[i], self.probs[k]);
        let (yi, yk) = (self.y_hat[i], self.y_hat[k]);
        if i == k {
            (1.0 - 2.0 * pi) * yi + pi * pi
        } else if self.pool_of[i] == self.pool_of[k] {
            let joint = self.scales[self.pool_of[i]] * pi * pk;
            joint - pk * yi - pi * yk + pi * pk
        } else {
            (yi - pi) * (yk - pk)
        }
    }

    /// Diagonal of E[D | Z]; non-negative whenever Ŷ ∈ [0, 1].
    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n()).map(|i| self.entry(i, i)).collect()
    }

    /// E[S_c | Z] = [𝟙, X_M]ᵀ(Ŷ − π).
    pub fn mean_score(&self, data: &Dataset, model: &[usize]) -> DVector<f64> {
        let resid: Vec<f64> = self.y_hat.iter().zip(&self.probs).map(|(y, p)| y - p).collect();
        design_transpose_times(data, model, &resid)
    }

    /// [𝟙, X_M]ᵀ Cov(Y | Z) [𝟙, X_M]: the missing information.
    pub fn missing_information(&self, data: &Dataset, model: &[usize]) -> DMatrix<f64> {
        // Per pool, Cov(Y | Z) = diag(Ŷ(1 − Ŷ) − cπ² + Ŷ²) + c·ππᵀ − ŶŶᵀ.
        let diag = |i: usize| {
            let (p, y) = (self.probs[i], self.y_hat[i]);
            y * (1.0 - y) - self.scales[self.pool_of[i]] * p * p + y * y
        };
        let mut out = weighted_gram(data, model, diag);
        let q = model.len() + 1;
        let mut row = vec![0.0; q];
        let mut sum_p = DVector::zeros(q);
        let mut sum_y = DVector::zeros(q);
        for (j, members) in data.pools().iter().enumerate() {
            sum_p.fill(0.0);
            sum_y.fill(0.0);
            for &i in members {
                design_row(data, model, i, &mut row);
                for a in 0..q {
                    sum_p[a] += self.probs[i] * row[a];
                    sum_y[a] += self.y_hat[i] * row[a];
                }
            }
            let c = self.scales[j];
            for a in 0..q {
                for b in 0..q {
                    out[(a, b)] += c * sum_p[a] * sum_p[b] - sum_y[a] * sum_y[b];
                }
            }
        }
        out
    }

    /// [𝟙, X_M]ᵀ E[D | Z] [𝟙, X_M] = missing information + E[S_c|Z]E[S_c|Z]ᵀ.
    pub fn quadratic_form(&self, data: &Dataset, model: &[usize]) -> DMatrix<f64> {
        let g = self.mean_score(data, model);
        self.missing_information(data, model) + &g * g.transpose()
    }
}

/// Louis' observed information at θ_M:
/// I_c − E[S_c S_cᵀ | Z] + E[S_c | Z] E[S_c | Z]ᵀ.
///
/// The last term vanishes at a stationary point of the observed likelihood;
/// at a penalized estimate it equals the outer product of [0, λ s_M].
pub fn louis_information(theta_m: &SubmodelCoefficients, data: &Dataset) -> InformationEstimate {
    let moments = conditional_cross_moments(theta_m, data);
    let info = complete_data_information(theta_m, data) - moments.missing_information(data, theta_m.model());
    InformationEstimate::new(InfoMethod::Louis, symmetrize(info))
}

/// I_c⁻¹ (Σ (Ŷ_i − π_i)² [1 x_i; x_i x_iᵀ]) I_c⁻¹ at θ_M.
pub fn sandwich_covariance(theta_m: &SubmodelCoefficients, data: &Dataset) -> Result<InformationEstimate> {
    let moments = conditional_cross_moments(theta_m, data);
    let bread = complete_data_information(theta_m, data)
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::DegenerateDesign("complete-data information is singular".into()))?;
    let meat = weighted_gram(data, theta_m.model(), |i| {
        let r = moments.y_hat[i] - moments.probs[i];
        r * r
    });
    let cov = &bread * meat * bread.transpose();
    Ok(InformationEstimate::new(InfoMethod::Sandwich, symmetrize(cov)))
}

/// Information estimate for the requested method.
pub fn estimate_information(
    method: InfoMethod,
    theta_m: &SubmodelCoefficients,
    data: &Dataset,
) -> Result<InformationEstimate> {
    match method {
        InfoMethod::Louis => Ok(louis_information(theta_m, data)),
        InfoMethod::Sandwich => sandwich_covariance(theta_m, data),
    }
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}
