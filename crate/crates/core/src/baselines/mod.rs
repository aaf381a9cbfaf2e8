//! Reference methods used to check the variational fits: a random-walk
//! Metropolis sampler, a simplex maximum-likelihood fitter and evaluation
//! metrics.

mod mcmc;
mod metrics;
mod mle;

pub use mcmc::{batch_means_se, mh_accept_prob, rwm_sample, Chain, RwmConfig};
pub use metrics::{metrics_classification, metrics_regression, ClassMetrics, RegMetrics};
pub use mle::{mle_fit, nelder_mead, MleFit, NelderMeadConfig};
