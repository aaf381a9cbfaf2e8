//! Natural-gradient variational inference for Gaussian posteriors, driven only
//! by log-likelihood evaluations.

pub mod baselines;
pub mod error;
pub mod estimator;
pub mod gaussian;
pub mod inverse_gamma;
pub mod linalg;
pub mod models;
pub mod special;
pub mod trainer;
pub mod updates;

pub use error::{Error, Result};
pub use estimator::{CvCoefficients, GradientEstimate};
pub use gaussian::{GaussianVariational, ScoreGrad};
pub use linalg::{CovStructure, SymBlock};
pub use updates::{LbGradient, PdStrategy, PriorSpec};
pub use inverse_gamma::IGParams;
pub use models::{Dataset, Model, NoiseModel, TransformChain};
pub use trainer::{fit, ExitReason, FitResult, TrainConfig};
