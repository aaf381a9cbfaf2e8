//! Update kernels for the Gaussian factor and the positivity safeguards.
//!
//! Every kernel works from the lower-bound gradient pair
//! `(S₀⁻¹(μ₀ − μ) + E[vℓ], S₀⁻¹ − S⁻¹ + E[(S⁻¹ − vvᵀ)ℓ])`; the plain
//! precision step `(1 − β)S⁻¹ + β(S₀⁻¹ + G)` is the same as `S⁻¹ + β·grad`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimator::GradientEstimate;
use crate::gaussian::GaussianVariational;
use crate::linalg::{cholesky, symmetrize, CovStructure, SymBlock};

/// Gaussian prior `N(μ₀, S₀)` stored through its precision.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorSpec {
    pub mu0: DVector<f64>,
    pub prec0: SymBlock,
}

impl PriorSpec {
    pub fn new(mu0: DVector<f64>, prec0: SymBlock) -> Result<Self> {
        // Reuse the family's validation.
        GaussianVariational::new(mu0.clone(), prec0.clone())?;
        Ok(Self { mu0, prec0 })
    }

    /// `μ₀ = 0`, `S₀⁻¹ = τI`.
    pub fn isotropic(d: usize, tau: f64, structure: CovStructure) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::Config(format!("prior precision tau must be positive, got {tau}")));
        }
        Self::new(DVector::zeros(d), SymBlock::scaled_identity(structure, d, tau))
    }

    pub fn dim(&self) -> usize {
        self.mu0.len()
    }

    pub fn structure(&self) -> CovStructure {
        self.prec0.structure()
    }

    pub fn to_gaussian(&self) -> GaussianVariational {
        GaussianVariational::new(self.mu0.clone(), self.prec0.clone()).expect("validated at construction")
    }

    /// Log prior density at `θ`.
    pub fn log_density(&self, theta: &DVector<f64>) -> f64 {
        self.to_gaussian().log_density(theta)
    }
}

/// How the precision step keeps the covariance valid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PdStrategy {
    /// Unprotected step; the trainer halves β on failure.
    Plain,
    /// Diagonal only: `β = min(β₀, δβ*)`.
    BoundedStep { beta0: f64, delta: f64 },
    /// Diagonal only: multiplicative update on the log scale.
    LogTransform,
    /// Full only: retraction on the SPD manifold.
    Retraction,
}

impl PdStrategy {
    pub fn validate(&self, structure: CovStructure) -> Result<()> {
        match (self, structure) {
            (PdStrategy::Plain, _) => Ok(()),
            (PdStrategy::BoundedStep { beta0, delta }, CovStructure::Diagonal) => {
                if !(*beta0 > 0.0 && *beta0 < 1.0 && *delta > 0.0 && *delta < 1.0) {
                    return Err(Error::Config(format!(
                        "bounded step needs 0 < beta0, delta < 1 (got {beta0}, {delta})"
                    )));
                }
                Ok(())
            }
            (PdStrategy::LogTransform, CovStructure::Diagonal) => Ok(()),
            (PdStrategy::Retraction, CovStructure::Full) => Ok(()),
            (s, st) => Err(Error::Config(format!("{s:?} is not available for {st:?} covariance"))),
        }
    }
}

/// Natural gradient of the lower bound in (mean, precision) form.
#[derive(Debug, Clone, PartialEq)]
pub struct LbGradient {
    /// `S₀⁻¹(μ₀ − μ) + E[vℓ]`.
    pub mean: DVector<f64>,
    /// `S₀⁻¹ − S⁻¹ + E[(S⁻¹ − vvᵀ)ℓ]`.
    pub prec: SymBlock,
}

impl LbGradient {
    pub fn new(q: &GaussianVariational, prior: &PriorSpec, est: &GradientEstimate) -> Self {
        let mean = prior.prec0.mul_vec(&(&prior.mu0 - q.mean())) + &est.g_mu_term;
        let prec = prior.prec0.sub(q.precision()).add(&est.g_prec_term);
        Self { mean, prec }
    }

    pub fn zeros(structure: CovStructure, d: usize) -> Self {
        Self { mean: DVector::zeros(d), prec: SymBlock::zeros(structure, d) }
    }

    pub fn flat_len(&self) -> usize {
        self.mean.len() + self.prec.flat_len()
    }

    /// Mean entries followed by the row-major precision block.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.mean.iter().copied().collect();
        out.extend(self.prec.to_flat());
        out
    }

    pub fn from_flat(structure: CovStructure, d: usize, data: &[f64]) -> Result<Self> {
        let want = d + if structure == CovStructure::Full { d * d } else { d };
        if data.len() != want {
            return Err(Error::DimMismatch { expected: want, got: data.len() });
        }
        let mean = DVector::from_column_slice(&data[..d]);
        let prec = SymBlock::from_flat(structure, d, &data[d..])?.symmetrized();
        Ok(Self { mean, prec })
    }
}

fn mean_step(q: &GaussianVariational, new_prec: SymBlock, grad_mean: &DVector<f64>, beta: f64) -> Result<GaussianVariational> {
    // Precision first, then the mean through the new covariance.
    let tmp = GaussianVariational::new(q.mean().clone(), new_prec)?;
    let mu = q.mean() + tmp.solve(grad_mean) * beta;
    GaussianVariational::new(mu, tmp.precision().clone())
}

/// Full-covariance step `S⁻¹ ← (1−β)S⁻¹ + β(S₀⁻¹ + G)`,
/// `μ ← μ + β S_{t+1}[S₀⁻¹(μ₀ − μ) + E[vℓ]]`.
pub fn step_full(q: &GaussianVariational, prior: &PriorSpec, est: &GradientEstimate, beta: f64) -> Result<GaussianVariational> {
    apply_plain(q, &LbGradient::new(q, prior, est), beta)
}

/// Elementwise analogue of [`step_full`].
pub fn step_diag(q: &GaussianVariational, prior: &PriorSpec, est: &GradientEstimate, beta: f64) -> Result<GaussianVariational> {
    apply_plain(q, &LbGradient::new(q, prior, est), beta)
}

/// Plain step from a (possibly clipped or smoothed) gradient, either storage.
pub fn apply_plain(q: &GaussianVariational, grad: &LbGradient, beta: f64) -> Result<GaussianVariational> {
    let new_prec = q.precision().lin_comb(1.0, &grad.prec, beta).symmetrized();
    mean_step(q, new_prec, &grad.mean, beta)
}

/// Largest safe step for the diagonal update `s⁻¹ + β(h − s⁻¹)`.
pub fn safe_beta(s_inv: &DVector<f64>, h: &DVector<f64>, beta0: f64, delta: f64) -> f64 {
    let beta_star = s_inv
        .iter()
        .zip(h.iter())
        .filter(|(s, h)| *h - *s < 0.0)
        .map(|(s, h)| -s / (h - s))
        .fold(f64::INFINITY, f64::min);
    if beta_star.is_finite() {
        beta0.min(delta * beta_star)
    } else {
        beta0
    }
}

/// Diagonal step with `β` bounded by [`safe_beta`]; returns the step actually taken.
pub fn apply_bounded(q: &GaussianVariational, grad: &LbGradient, beta: f64, delta: f64) -> Result<(GaussianVariational, f64)> {
    let s_inv = match q.precision() {
        SymBlock::Diagonal(p) => p,
        _ => return Err(Error::Config("bounded step needs diagonal covariance".into())),
    };
    let h = s_inv + grad.prec.diagonal();
    let b = safe_beta(s_inv, &h, beta, delta);
    Ok((apply_plain(q, grad, b)?, b))
}

/// Log-scale diagonal step: `s⁻¹ ← s⁻¹·exp(β s⊙grad)`.
pub fn step_diag_logxform(q: &GaussianVariational, prior: &PriorSpec, est: &GradientEstimate, beta: f64) -> Result<GaussianVariational> {
    apply_logxform(q, &LbGradient::new(q, prior, est), beta)
}

pub fn apply_logxform(q: &GaussianVariational, grad: &LbGradient, beta: f64) -> Result<GaussianVariational> {
    let (s_inv, g) = match (q.precision(), &grad.prec) {
        (SymBlock::Diagonal(p), SymBlock::Diagonal(g)) => (p, g),
        _ => return Err(Error::Config("log-transform step needs diagonal covariance".into())),
    };
    // ξ = −log(s⁻¹/2) moves by −β s⊙grad. Repeated shrinking steps would
    // otherwise underflow to zero, so the product is kept in the normal range.
    let new = DVector::from_fn(s_inv.len(), |i, _| {
        let expo = (beta * g[i] / s_inv[i]).clamp(-700.0, 700.0);
        (s_inv[i] * expo.exp()).clamp(f64::MIN_POSITIVE, f64::MAX)
    });
    mean_step(q, SymBlock::Diagonal(new), &grad.mean, beta)
}

/// `R_P(ξ) = P + ξ + ½ξP⁻¹ξ`.
pub fn retract_spd(p: &DMatrix<f64>, xi: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = cholesky(p).map_err(|_| Error::Singular)?;
    let xi = symmetrize(xi.clone());
    let w = chol.solve(&xi);
    if w.iter().any(|x| !x.is_finite()) {
        return Err(Error::Singular);
    }
    Ok(symmetrize(p + &xi + &xi * w * 0.5))
}

/// Full step with the precision moved by retraction along `β·grad`.
pub fn step_full_manifold(q: &GaussianVariational, prior: &PriorSpec, est: &GradientEstimate, beta: f64) -> Result<GaussianVariational> {
    apply_retraction(q, &LbGradient::new(q, prior, est), beta)
}

pub fn apply_retraction(q: &GaussianVariational, grad: &LbGradient, beta: f64) -> Result<GaussianVariational> {
    let (p, g) = match (q.precision(), &grad.prec) {
        (SymBlock::Full(p), SymBlock::Full(g)) => (p, g),
        _ => return Err(Error::Config("retraction needs full covariance".into())),
    };
    let new = retract_spd(p, &(g * beta))?;
    mean_step(q, SymBlock::Full(new), &grad.mean, beta).map_err(|e| match e {
        Error::NotSpd => Error::Singular,
        e => e,
    })
}

/// Applies one step under `strategy`. Returns the new factor and the step used.
pub fn apply_step(q: &GaussianVariational, grad: &LbGradient, beta: f64, strategy: PdStrategy) -> Result<(GaussianVariational, f64)> {
    match strategy {
        PdStrategy::Plain => Ok((apply_plain(q, grad, beta)?, beta)),
        PdStrategy::BoundedStep { beta0, delta } => apply_bounded(q, grad, beta.min(beta0), delta),
        PdStrategy::LogTransform => Ok((apply_logxform(q, grad, beta)?, beta)),
        PdStrategy::Retraction => Ok((apply_retraction(q, grad, beta)?, beta)),
    }
}
