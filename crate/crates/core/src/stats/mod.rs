//! Count regression, correlation and two-sample tests.

mod correlation;
mod glm;
mod stepwise;

pub use correlation::{midranks, pearson, spearman, t_two_sided, ttest_two_sample, Correlation, TTest};
pub use glm::{
    fit_negbin, fit_negbin_with, fit_poisson, negbin_loglik, negbin_score, DesignMatrix, FitOptions, RegressionFit,
    INTERCEPT, THETA_MAX, THETA_MIN,
};
pub use stepwise::{stepwise_backward, write_trace, StepCandidate, StepRecord, StepwiseError, StepwiseResult};
