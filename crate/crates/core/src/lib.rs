//! Selective inference for LASSO logistic regression when binary outcomes
//! are observed through error-prone individual or pooled tests.
//!
//! The pipeline is [`em_fit`] → [`post_selection`] → [`selective_intervals`],
//! with [`naive_ci`] and [`split_inference`] as baselines and
//! [`simulation`] holding the Monte Carlo harness.

pub mod em;
pub mod error;
pub mod inference;
pub mod information;
pub mod io;
pub mod model;
pub mod normal;
pub mod selection;
pub mod simulation;

pub use em::{e_step_group, e_step_individual, em_fit, em_fit_with, kkt_check, lambda_max, m_step_penalized};
pub use em::{EmOptions, KktReport, MStepOptions, PenalizedFit};
pub use error::{Error, Result};
pub use inference::{
    naive_ci, selective_ci, selective_intervals, selective_pivot, split_inference, truncated_normal_cdf,
    IntervalEstimate, Method, SplitResult, TruncatedGaussian,
};
pub use information::{
    complete_data_information, conditional_cross_moments, louis_information, sandwich_covariance, InfoMethod,
    InformationEstimate,
};
pub use model::{
    aic_bic, logistic_mean, observed_loglik, pool_negative_prob, Coefficients, Dataset, InformationCriteria,
    SubmodelCoefficients,
};
pub use selection::{
    polyhedral_limits, post_selection, post_selection_estimator, selection_constraints, PostSelectionEstimate,
    SelectionEvent, TruncationInterval,
};
