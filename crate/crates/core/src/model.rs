//! Logistic model primitives and observed-data likelihoods for individual
//! and pooled test outcomes.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower and upper clamp applied to every fitted probability.
pub const PROB_EPS: f64 = 1e-10;

/// Covariates, pool memberships, pooled test outcomes and assay accuracy.
///
/// Pools are stored in canonical order: members of each pool ascending and
/// pools ordered by their first member. Individual testing is the special
/// case in which every pool is a singleton.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    pools: Vec<Vec<usize>>,
    pool_of: Vec<usize>,
    pool_labels: Vec<String>,
    z: Vec<bool>,
    se: f64,
    sp: f64,
}

impl Dataset {
    /// Builds a dataset from an `n × p` design, a partition of `0..n` into
    /// pools, one outcome per pool and the assay sensitivity/specificity.
    pub fn new(x: DMatrix<f64>, pools: Vec<Vec<usize>>, z: Vec<bool>, se: f64, sp: f64) -> Result<Self> {
        let labels = (1..=pools.len()).map(|j| j.to_string()).collect();
        Self::with_labels(x, pools, z, labels, se, sp)
    }

    /// Like [`Dataset::new`] with explicit pool labels (as read from CSV).
    pub fn with_labels(
        x: DMatrix<f64>,
        pools: Vec<Vec<usize>>,
        z: Vec<bool>,
        pool_labels: Vec<String>,
        se: f64,
        sp: f64,
    ) -> Result<Self> {
        let n = x.nrows();
        if n == 0 {
            return Err(Error::InvalidDataset("no individuals".into()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset("non-finite covariate value".into()));
        }
        if z.len() != pools.len() || pool_labels.len() != pools.len() {
            return Err(Error::InvalidDataset(format!(
                "{} pools but {} outcomes and {} labels",
                pools.len(),
                z.len(),
                pool_labels.len()
            )));
        }
        check_accuracy(se, sp)?;

        let mut pool_of = vec![usize::MAX; n];
        let mut canon: Vec<(Vec<usize>, bool, String)> = Vec::with_capacity(pools.len());
        for ((mut members, zj), label) in pools.into_iter().zip(z).zip(pool_labels) {
            if members.is_empty() {
                return Err(Error::InvalidDataset(format!("pool {label} is empty")));
            }
            members.sort_unstable();
            for &i in &members {
                if i >= n {
                    return Err(Error::InvalidDataset(format!("individual {i} out of range (n = {n})")));
                }
                if pool_of[i] != usize::MAX {
                    return Err(Error::InvalidDataset(format!("individual {i} belongs to two pools")));
                }
                pool_of[i] = 0;
            }
            canon.push((members, zj, label));
        }
        if let Some(i) = pool_of.iter().position(|&j| j == usize::MAX) {
            return Err(Error::InvalidDataset(format!("individual {i} is not in any pool")));
        }
        canon.sort_by_key(|(members, _, _)| members[0]);

        let mut pools = Vec::with_capacity(canon.len());
        let mut z = Vec::with_capacity(canon.len());
        let mut labels = Vec::with_capacity(canon.len());
        for (j, (members, zj, label)) in canon.into_iter().enumerate() {
            for &i in &members {
                pool_of[i] = j;
            }
            pools.push(members);
            z.push(zj);
            labels.push(label);
        }
        Ok(Self { x, pools, pool_of, pool_labels: labels, z, se, sp })
    }

    /// Individual testing: one outcome per row of `x`.
    pub fn individual(x: DMatrix<f64>, z: Vec<bool>, se: f64, sp: f64) -> Result<Self> {
        let pools = (0..x.nrows()).map(|i| vec![i]).collect();
        Self::new(x, pools, z, se, sp)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn num_pools(&self) -> usize {
        self.pools.len()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    /// Column `j` of the design as a contiguous slice.
    pub fn column(&self, j: usize) -> &[f64] {
        let n = self.n();
        &self.x.as_slice()[j * n..(j + 1) * n]
    }

    pub fn pools(&self) -> &[Vec<usize>] {
        &self.pools
    }

    pub fn pool_of(&self, i: usize) -> usize {
        self.pool_of[i]
    }

    pub fn pool_labels(&self) -> &[String] {
        &self.pool_labels
    }

    pub fn z(&self) -> &[bool] {
        &self.z
    }

    pub fn se(&self) -> f64 {
        self.se
    }

    pub fn sp(&self) -> f64 {
        self.sp
    }

    pub fn is_individual(&self) -> bool {
        self.pools.len() == self.n()
    }

    pub fn mean_pool_size(&self) -> f64 {
        self.n() as f64 / self.pools.len() as f64
    }

    /// Same covariates and outcomes analysed under a different assumed assay.
    pub fn with_accuracy(&self, se: f64, sp: f64) -> Result<Self> {
        check_accuracy(se, sp)?;
        Ok(Self { se, sp, ..self.clone() })
    }

    /// Keeps only the listed covariate columns (in the given order).
    pub fn select_columns(&self, cols: &[usize]) -> Result<Self> {
        if let Some(&c) = cols.iter().find(|&&c| c >= self.p()) {
            return Err(Error::InvalidArgument(format!("column {c} out of range (p = {})", self.p())));
        }
        let x = self.x.select_columns(cols);
        Ok(Self { x, ..self.clone() })
    }

    /// Restricts the dataset to the given pools, renumbering individuals.
    pub fn subset_pools(&self, pool_ids: &[usize]) -> Result<Self> {
        let mut rows = Vec::new();
        let mut pools = Vec::with_capacity(pool_ids.len());
        let mut z = Vec::with_capacity(pool_ids.len());
        let mut labels = Vec::with_capacity(pool_ids.len());
        for &j in pool_ids {
            let members = self.pools.get(j).ok_or(Error::PoolIndex { index: j, pools: self.pools.len() })?;
            let start = rows.len();
            rows.extend_from_slice(members);
            pools.push((start..rows.len()).collect());
            z.push(self.z[j]);
            labels.push(self.pool_labels[j].clone());
        }
        let x = self.x.select_rows(&rows);
        Self::with_labels(x, pools, z, labels, self.se, self.sp)
    }
}

fn check_accuracy(se: f64, sp: f64) -> Result<()> {
    if !(se > 0.0 && se <= 1.0 && sp > 0.0 && sp <= 1.0) {
        return Err(Error::InvalidDataset(format!("sensitivity {se} and specificity {sp} must lie in (0, 1]")));
    }
    Ok(())
}

/// Intercept and slopes of the full logistic model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub(crate) alpha: f64,
    pub(crate) beta: Vec<f64>,
}

impl Coefficients {
    pub fn new(alpha: f64, beta: Vec<f64>) -> Result<Self> {
        if !alpha.is_finite() || beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidArgument("coefficients must be finite".into()));
        }
        Ok(Self { alpha, beta })
    }

    pub fn zeros(p: usize) -> Self {
        Self { alpha: 0.0, beta: vec![0.0; p] }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn p(&self) -> usize {
        self.beta.len()
    }

    /// Indices (0-based) of the non-zero slopes.
    pub fn support(&self) -> Vec<usize> {
        self.beta.iter().enumerate().filter(|(_, b)| **b != 0.0).map(|(j, _)| j).collect()
    }

    pub fn l1_norm(&self) -> f64 {
        self.beta.iter().map(|b| b.abs()).sum()
    }

    /// Restriction to a set of columns.
    pub fn restrict(&self, model: &[usize]) -> SubmodelCoefficients {
        SubmodelCoefficients {
            model: model.to_vec(),
            alpha: self.alpha,
            beta: model.iter().map(|&j| self.beta[j]).collect(),
        }
    }
}

/// Coefficients of a submodel θ_M = (α, β_M) over a sorted column set M.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmodelCoefficients {
    pub(crate) model: Vec<usize>,
    pub(crate) alpha: f64,
    pub(crate) beta: Vec<f64>,
}

impl SubmodelCoefficients {
    /// `model` holds 0-based column indices in strictly increasing order.
    pub fn new(model: Vec<usize>, alpha: f64, beta: Vec<f64>) -> Result<Self> {
        if model.len() != beta.len() {
            return Err(Error::InvalidArgument("model and beta lengths differ".into()));
        }
        if model.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("model indices must be strictly increasing".into()));
        }
        if !alpha.is_finite() || beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidArgument("coefficients must be finite".into()));
        }
        Ok(Self { model, alpha, beta })
    }

    pub fn model(&self) -> &[usize] {
        &self.model
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    /// (α, β_M) stacked as one vector.
    pub fn as_vector(&self) -> Vec<f64> {
        std::iter::once(self.alpha).chain(self.beta.iter().copied()).collect()
    }

    /// Embeds into a length-`p` coefficient vector, zero outside M.
    pub fn to_full(&self, p: usize) -> Coefficients {
        let mut beta = vec![0.0; p];
        for (&j, &b) in self.model.iter().zip(&self.beta) {
            beta[j] = b;
        }
        Coefficients { alpha: self.alpha, beta }
    }
}

#[inline]
pub(crate) fn logistic(eta: f64) -> f64 {
    (1.0 / (1.0 + (-eta).exp())).clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// π(θ) = 1/(1 + exp(−α − xᵀβ)), clamped to [1e−10, 1 − 1e−10].
pub fn logistic_mean(theta: &Coefficients, x: &[f64]) -> f64 {
    let eta = theta.alpha + theta.beta.iter().zip(x).map(|(b, v)| b * v).sum::<f64>();
    logistic(eta)
}

/// α + Xβ for every individual, skipping zero slopes.
pub(crate) fn linear_predictor(theta: &Coefficients, data: &Dataset) -> Vec<f64> {
    let mut eta = vec![theta.alpha; data.n()];
    for (j, &b) in theta.beta.iter().enumerate() {
        if b != 0.0 {
            for (e, &v) in eta.iter_mut().zip(data.column(j)) {
                *e += b * v;
            }
        }
    }
    eta
}

/// π_i(θ) for all individuals.
pub fn fitted_probs(theta: &Coefficients, data: &Dataset) -> Vec<f64> {
    let mut eta = linear_predictor(theta, data);
    for e in eta.iter_mut() {
        *e = logistic(*e);
    }
    eta
}

/// P(Z = 0) for a pool whose members have the given probabilities.
#[inline]
pub(crate) fn negative_prob_from(probs: impl Iterator<Item = f64>, se: f64, sp: f64) -> f64 {
    let all_negative: f64 = probs.map(|p| 1.0 - p).product();
    (1.0 - se) * (1.0 - all_negative) + sp * all_negative
}

/// P_θ(Z_j = 0) = (1 − Se)[1 − ∏(1 − π_i)] + Sp·∏(1 − π_i) over i in pool j.
pub fn pool_negative_prob(theta: &Coefficients, data: &Dataset, j: usize) -> Result<f64> {
    let members = data.pools.get(j).ok_or(Error::PoolIndex { index: j, pools: data.num_pools() })?;
    let probs = members.iter().map(|&i| {
        let row: Vec<f64> = data.x.row(i).iter().copied().collect();
        logistic_mean(theta, &row)
    });
    Ok(negative_prob_from(probs, data.se, data.sp))
}

/// Per-pool P(Z_j = 0) from precomputed individual probabilities.
pub(crate) fn pool_negative_probs(probs: &[f64], data: &Dataset) -> Vec<f64> {
    data.pools
        .iter()
        .map(|members| negative_prob_from(members.iter().map(|&i| probs[i]), data.se, data.sp))
        .collect()
}

pub(crate) fn loglik_from_probs(probs: &[f64], data: &Dataset) -> f64 {
    pool_negative_probs(probs, data)
        .into_iter()
        .zip(&data.z)
        .map(|(p0, &zj)| if zj { (1.0 - p0).ln() } else { p0.ln() })
        .sum()
}

/// Observed-data log-likelihood Σ_j log P_θ(Z_j = z_j).
pub fn observed_loglik(theta: &Coefficients, data: &Dataset) -> f64 {
    loglik_from_probs(&fitted_probs(theta, data), data)
}

/// Information criteria of a fitted submodel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InformationCriteria {
    pub aic: f64,
    pub bic: f64,
    pub loglik: f64,
}

/// AIC and BIC with |M| + 1 parameters (the intercept always counts).
pub fn aic_bic(theta_m: &SubmodelCoefficients, data: &Dataset) -> InformationCriteria {
    let loglik = observed_loglik(&theta_m.to_full(data.p()), data);
    criteria_from_loglik(loglik, theta_m.model.len(), data.n())
}

pub(crate) fn criteria_from_loglik(loglik: f64, model_size: usize, n: usize) -> InformationCriteria {
    let k = (model_size + 1) as f64;
    InformationCriteria { aic: -2.0 * loglik + 2.0 * k, bic: -2.0 * loglik + (n as f64).ln() * k, loglik }
}
