//! Inverse-Gamma variational factor for a positive scalar (a regression
//! variance), and the joint mean-field step with a diagonal Gaussian factor.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::estimator::{estimate_from_draws, CvCoefficients, GradientEstimate};
use crate::gaussian::GaussianVariational;
use crate::models::NoiseModel;
use crate::special::{digamma, ln_gamma, trigamma};
use crate::updates::{apply_plain, LbGradient, PriorSpec};

/// Shape `alpha` and scale `beta` of `IG(α, β)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IGParams {
    pub alpha: f64,
    pub beta: f64,
}

impl IGParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite()) {
            return Err(Error::Domain(format!("IG parameters must be positive, got ({alpha}, {beta})")));
        }
        Ok(Self { alpha, beta })
    }

    /// `β/(α − 1)`, defined for `α > 1`.
    pub fn mean(&self) -> Option<f64> {
        (self.alpha > 1.0).then(|| self.beta / (self.alpha - 1.0))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let g: f64 = Gamma::new(self.alpha, 1.0).expect("positive shape").sample(rng);
        self.beta / g
    }
}

fn check_x(x: f64) -> Result<()> {
    if !(x > 0.0) {
        return Err(Error::Domain(format!("IG support is x > 0, got {x}")));
    }
    Ok(())
}

pub fn ig_log_density(x: f64, p: IGParams) -> Result<f64> {
    check_x(x)?;
    Ok(p.alpha * p.beta.ln() - ln_gamma(p.alpha) - (p.alpha + 1.0) * x.ln() - p.beta / x)
}

/// Gradient of `log IG(x; α, β)` in `(α, β)`.
pub fn ig_score(x: f64, p: IGParams) -> Result<[f64; 2]> {
    check_x(x)?;
    Ok([p.beta.ln() - digamma(p.alpha) - x.ln(), p.alpha / p.beta - 1.0 / x])
}

/// Fisher information `[[ψ′(α), −1/β], [−1/β, α/β²]]`.
pub fn ig_fim(p: IGParams) -> [[f64; 2]; 2] {
    let off = -1.0 / p.beta;
    [[trigamma(p.alpha), off], [off, p.alpha / (p.beta * p.beta)]]
}

/// Solves `FIM·g = rhs` with the closed-form 2×2 inverse.
pub fn ig_fim_solve(p: IGParams, rhs: [f64; 2]) -> [f64; 2] {
    let [[a, b], [_, d]] = ig_fim(p);
    let det = a * d - b * b;
    [(d * rhs[0] - b * rhs[1]) / det, (a * rhs[1] - b * rhs[0]) / det]
}

/// Diagonal of the inverse Fisher information, the variance of the natural score.
pub fn ig_fim_inv_diag(p: IGParams) -> [f64; 2] {
    let [[a, b], [_, d]] = ig_fim(p);
    let det = a * d - b * b;
    [d / det, a / det]
}

/// Natural-gradient score `FIM⁻¹·∇ log IG(x)`.
pub fn ig_natgrad_score(x: f64, p: IGParams) -> Result<[f64; 2]> {
    Ok(ig_fim_solve(p, ig_score(x, p)?))
}

/// Joint draws and gradient terms for both factors.
#[derive(Debug, Clone, PartialEq)]
pub struct MfEstimate {
    pub gauss: GradientEstimate,
    /// Estimate of `E[FIM⁻¹∇log q_ν · ℓ]`.
    pub ig_term: [f64; 2],
    pub sigma2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MfCv {
    pub gauss: CvCoefficients,
    pub ig: [f64; 2],
}

/// Draws `(θ_s, σ²_s)` from `q_θ·q_ν` and forms both gradient terms.
pub fn mf_estimate<M, R>(
    q_theta: &GaussianVariational,
    q_v: IGParams,
    model: &M,
    n: usize,
    rng: &mut R,
    cv: Option<&MfCv>,
) -> Result<MfEstimate>
where
    M: NoiseModel + ?Sized,
    R: Rng + ?Sized,
{
    if n == 0 {
        return Err(Error::Config("number of MC samples must be at least 1".into()));
    }
    let draws = q_theta.sample(n, rng);
    let sigma2: Vec<f64> = (0..n).map(|_| q_v.sample(rng)).collect();
    let mut logliks = Vec::with_capacity(n);
    for s in 0..n {
        let theta = draws.row(s).transpose();
        let value = model.log_lik_with_variance(&theta, sigma2[s]);
        if !value.is_finite() {
            let mut t: Vec<f64> = theta.iter().copied().collect();
            t.push(sigma2[s]);
            return Err(Error::NonFiniteLoglik { theta: t, value });
        }
        logliks.push(value);
    }
    let c_ig = cv.map_or([0.0; 2], |c| c.ig);
    let mut ig_term = [0.0; 2];
    for s in 0..n {
        let g = ig_natgrad_score(sigma2[s], q_v)?;
        for k in 0..2 {
            ig_term[k] += g[k] * (logliks[s] - c_ig[k]);
        }
    }
    for v in &mut ig_term {
        *v /= n as f64;
    }
    let gauss = estimate_from_draws(q_theta, draws, logliks, cv.map(|c| &c.gauss));
    Ok(MfEstimate { gauss, ig_term, sigma2 })
}

/// Control-variate coefficients for both factors from the previous draws.
pub fn mf_cv_coefficients(prev: &MfEstimate, q_theta_prev: &GaussianVariational, q_v_prev: IGParams) -> Result<MfCv> {
    let gauss = crate::estimator::cv_coefficients(&prev.gauss, q_theta_prev)?;
    let var = ig_fim_inv_diag(q_v_prev);
    let mut ig = [0.0; 2];
    let scores: Vec<[f64; 2]> = prev.sigma2.iter().map(|&x| ig_natgrad_score(x, q_v_prev)).collect::<Result<_>>()?;
    for k in 0..2 {
        let g: Vec<f64> = scores.iter().map(|g| g[k]).collect();
        ig[k] = crate::estimator::cv_coefficient(&g, &prev.gauss.logliks, var[k]);
    }
    Ok(MfCv { gauss, ig })
}

/// `ν₀ − ν + E[g̃ℓ]`.
pub fn ig_lb_gradient(q_v: IGParams, prior_v: IGParams, ig_term: [f64; 2]) -> [f64; 2] {
    [prior_v.alpha - q_v.alpha + ig_term[0], prior_v.beta - q_v.beta + ig_term[1]]
}

/// `ν + ε·grad`, halving `ε` (up to 50 times) while a coordinate would leave
/// the positive half-line. Returns the new factor and the step used.
pub fn ig_apply(q_v: IGParams, grad: [f64; 2], eps: f64) -> Result<(IGParams, f64)> {
    let mut e = eps;
    for _ in 0..50 {
        let a = q_v.alpha + e * grad[0];
        let b = q_v.beta + e * grad[1];
        if a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite() {
            return Ok((IGParams { alpha: a, beta: b }, e));
        }
        e *= 0.5;
    }
    Err(Error::NotPositive { index: 0, value: q_v.alpha + e * grad[0] })
}

/// One joint step for a diagonal Gaussian factor and an IG factor, without
/// control variates.
#[allow(clippy::too_many_arguments)]
pub fn mf_step<M, R>(
    q_theta: &GaussianVariational,
    q_v: IGParams,
    prior_theta: &PriorSpec,
    prior_v: IGParams,
    model: &M,
    n: usize,
    rng: &mut R,
    eps: f64,
) -> Result<(GaussianVariational, IGParams)>
where
    M: NoiseModel + ?Sized,
    R: Rng + ?Sized,
{
    let est = mf_estimate(q_theta, q_v, model, n, rng, None)?;
    mf_apply(q_theta, q_v, prior_theta, prior_v, &est, eps)
}

/// Applies both factor updates from an existing estimate.
pub fn mf_apply(
    q_theta: &GaussianVariational,
    q_v: IGParams,
    prior_theta: &PriorSpec,
    prior_v: IGParams,
    est: &MfEstimate,
    eps: f64,
) -> Result<(GaussianVariational, IGParams)> {
    let grad = LbGradient::new(q_theta, prior_theta, &est.gauss);
    let mut e = eps;
    let mut q_next = None;
    for _ in 0..=10 {
        match apply_plain(q_theta, &grad, e) {
            Ok(q) => {
                q_next = Some(q);
                break;
            }
            Err(Error::NotPositive { .. }) | Err(Error::NotSpd) => e *= 0.5,
            Err(other) => return Err(other),
        }
    }
    let q_next = q_next.ok_or(Error::NotPositive { index: 0, value: f64::NAN })?;
    let (v_next, _) = ig_apply(q_v, ig_lb_gradient(q_v, prior_v, est.ig_term), eps)?;
    Ok((q_next, v_next))
}

/// Draws as rows plus variance draws; a convenience for tests and reporting.
pub fn sample_joint<R: Rng + ?Sized>(
    q_theta: &GaussianVariational,
    q_v: IGParams,
    n: usize,
    rng: &mut R,
) -> (DMatrix<f64>, DVector<f64>) {
    let draws = q_theta.sample(n, rng);
    let s2 = DVector::from_fn(n, |_, _| q_v.sample(rng));
    (draws, s2)
}
