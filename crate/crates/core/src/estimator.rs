//! Monte Carlo estimates of the two expectations driving the update:
//! `E_q[v·log p(y|θ)]` and `E_q[(S⁻¹ − vvᵀ)·log p(y|θ)]`, optionally with
//! per-component control variates built from the previous iteration's draws.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::gaussian::GaussianVariational;
use crate::linalg::{CovStructure, SymBlock};

/// Retained draws plus the two gradient terms.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    /// Estimate of `E_q[v·log p(y|θ)]`.
    pub g_mu_term: DVector<f64>,
    /// Estimate of `E_q[(S⁻¹ − vvᵀ)·log p(y|θ)]`.
    pub g_prec_term: SymBlock,
    pub n_samples: usize,
    /// Draws as rows, kept for the next iteration's control-variate coefficients.
    pub draws: DMatrix<f64>,
    pub logliks: Vec<f64>,
}

/// One control-variate coefficient per scalar entry of each score block.
#[derive(Debug, Clone, PartialEq)]
pub struct CvCoefficients {
    pub c1: DVector<f64>,
    pub c2: SymBlock,
}

impl CvCoefficients {
    pub fn zeros(structure: CovStructure, d: usize) -> Self {
        Self { c1: DVector::zeros(d), c2: SymBlock::zeros(structure, d) }
    }

    pub fn constant(structure: CovStructure, d: usize, c: f64) -> Self {
        Self {
            c1: DVector::from_element(d, c),
            c2: SymBlock::zeros(structure, d).map(|_| c),
        }
    }
}

/// Evaluates the log-likelihood at every row of `draws`, in row order.
pub fn evaluate_logliks<F>(draws: &DMatrix<f64>, loglik: F) -> Result<Vec<f64>>
where
    F: Fn(&DVector<f64>) -> f64,
{
    let mut out = Vec::with_capacity(draws.nrows());
    for s in 0..draws.nrows() {
        let theta = draws.row(s).transpose();
        let value = loglik(&theta);
        if !value.is_finite() {
            return Err(Error::NonFiniteLoglik { theta: theta.iter().copied().collect(), value });
        }
        out.push(value);
    }
    Ok(out)
}

/// Naive estimator: draw `n` samples and average `v·ℓ` and `(S⁻¹ − vvᵀ)·ℓ`.
pub fn estimate_naive<F, R>(
    q: &GaussianVariational,
    loglik: F,
    n: usize,
    rng: &mut R,
) -> Result<GradientEstimate>
where
    F: Fn(&DVector<f64>) -> f64,
    R: Rng + ?Sized,
{
    estimate(q, loglik, n, rng, None)
}

/// Control-variate estimator: each score entry is weighted by `ℓ − c` instead of `ℓ`.
pub fn estimate_cv<F, R>(
    q: &GaussianVariational,
    loglik: F,
    n: usize,
    rng: &mut R,
    c: &CvCoefficients,
) -> Result<GradientEstimate>
where
    F: Fn(&DVector<f64>) -> f64,
    R: Rng + ?Sized,
{
    estimate(q, loglik, n, rng, Some(c))
}

fn estimate<F, R>(
    q: &GaussianVariational,
    loglik: F,
    n: usize,
    rng: &mut R,
    c: Option<&CvCoefficients>,
) -> Result<GradientEstimate>
where
    F: Fn(&DVector<f64>) -> f64,
    R: Rng + ?Sized,
{
    if n == 0 {
        return Err(Error::Config("number of MC samples must be at least 1".into()));
    }
    let draws = q.sample(n, rng);
    let logliks = evaluate_logliks(&draws, loglik)?;
    Ok(estimate_from_draws(q, draws, logliks, c))
}

/// Builds the estimate from draws already taken from `q` and their
/// log-likelihood values. The reduction runs in sample order.
pub fn estimate_from_draws(
    q: &GaussianVariational,
    draws: DMatrix<f64>,
    logliks: Vec<f64>,
    c: Option<&CvCoefficients>,
) -> GradientEstimate {
    let n = draws.nrows();
    let d = q.dim();
    assert_eq!(n, logliks.len(), "one log-likelihood per draw");
    let mut g_mu = DVector::zeros(d);
    let mut g_prec = SymBlock::zeros(q.structure(), d);

    for (s, &ell) in logliks.iter().enumerate() {
        let theta = draws.row(s).transpose();
        let v = q.scaled_residual(&theta);
        let w1 = match c {
            Some(c) => c.c1.map(|ci| ell - ci),
            None => DVector::from_element(d, ell),
        };
        g_mu += v.component_mul(&w1);

        match (&mut g_prec, q.precision()) {
            (SymBlock::Full(acc), SymBlock::Full(p)) => {
                let c2 = c.map(|c| match &c.c2 {
                    SymBlock::Full(m) => m,
                    _ => panic!("coefficient storage mismatch"),
                });
                for j in 0..d {
                    for i in 0..d {
                        let w = ell - c2.map_or(0.0, |m| m[(i, j)]);
                        acc[(i, j)] += (p[(i, j)] - v[i] * v[j]) * w;
                    }
                }
            }
            (SymBlock::Diagonal(acc), SymBlock::Diagonal(p)) => {
                let c2 = c.map(|c| match &c.c2 {
                    SymBlock::Diagonal(m) => m,
                    _ => panic!("coefficient storage mismatch"),
                });
                for i in 0..d {
                    let w = ell - c2.map_or(0.0, |m| m[i]);
                    acc[i] += (p[i] - v[i] * v[i]) * w;
                }
            }
            _ => unreachable!(),
        }
    }

    let inv_n = 1.0 / n as f64;
    GradientEstimate {
        g_mu_term: g_mu * inv_n,
        g_prec_term: g_prec.scale(inv_n).symmetrized(),
        n_samples: n,
        draws,
        logliks,
    }
}

/// Per-component optimal coefficients `Cov(g·ℓ, g) / V(g)` from the retained
/// draws of the previous iteration, with analytic denominators at `q_prev`.
pub fn cv_coefficients(prev: &GradientEstimate, q_prev: &GaussianVariational) -> Result<CvCoefficients> {
    let n = prev.logliks.len();
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    let d = q_prev.dim();
    let scores: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
        .map(|s| {
            let g = q_prev.score_m(&prev.draws.row(s).transpose());
            (g.g_m1.iter().copied().collect(), g.g_m2.to_flat())
        })
        .collect();

    let var1 = analytic_var_m1(q_prev);
    let var2 = analytic_var_m2(q_prev).to_flat();

    let c1 = DVector::from_fn(d, |i, _| {
        let g: Vec<f64> = scores.iter().map(|sc| sc.0[i]).collect();
        cv_coefficient(&g, &prev.logliks, var1[i])
    });
    let flat2: Vec<f64> = (0..var2.len())
        .map(|k| {
            let g: Vec<f64> = scores.iter().map(|sc| sc.1[k]).collect();
            cv_coefficient(&g, &prev.logliks, var2[k])
        })
        .collect();
    let c2 = SymBlock::from_flat(q_prev.structure(), d, &flat2)?.symmetrized();
    Ok(CvCoefficients { c1, c2 })
}

/// One coefficient `Cov(g·ℓ, g) / var` for a zero-mean score `g` with known
/// variance `var`.
///
/// With `ℓ = ℓ̄ + δ` the covariance splits into `ℓ̄·V(g) + Cov(g·δ, g)`; the
/// first part uses the known variance, so a constant `ℓ` gives back exactly
/// that constant and only the fluctuation `δ` is estimated by sampling.
/// Returns 0 when `var` is not positive or the result is not finite.
pub fn cv_coefficient(g: &[f64], logliks: &[f64], var: f64) -> f64 {
    let n = g.len();
    if !(var > 0.0) || n < 2 {
        return 0.0;
    }
    let l_bar = logliks.iter().sum::<f64>() / n as f64;
    let mean_g = g.iter().sum::<f64>() / n as f64;
    let mean_gd = g.iter().zip(logliks).map(|(g, l)| g * (l - l_bar)).sum::<f64>() / n as f64;
    let cov = g
        .iter()
        .zip(logliks)
        .map(|(g, l)| (g * (l - l_bar) - mean_gd) * (g - mean_g))
        .sum::<f64>()
        / (n - 1) as f64;
    let c = l_bar + cov / var;
    if c.is_finite() {
        c
    } else {
        0.0
    }
}

/// `Cov(V_ij, V_kl)` for `V ~ W(1, Σ)`: `Σ_ik Σ_jl + Σ_il Σ_jk`.
pub fn wishart1_cov(sigma: &DMatrix<f64>, i: usize, j: usize, k: usize, l: usize) -> f64 {
    sigma[(i, k)] * sigma[(j, l)] + sigma[(i, l)] * sigma[(j, k)]
}

/// Elementwise variance of the `m₂` score: `¼(S⁻¹⊙S⁻¹ + diag(S⁻¹)diag(S⁻¹)ᵀ)`.
pub fn analytic_var_m2(q: &GaussianVariational) -> SymBlock {
    match q.precision() {
        SymBlock::Full(p) => {
            let dg = p.diagonal();
            SymBlock::Full((p.component_mul(p) + &dg * dg.transpose()) * 0.25)
        }
        SymBlock::Diagonal(p) => SymBlock::Diagonal(p.map(|x| 0.5 * x * x)),
    }
}

/// Elementwise variance of the `m₁` score: `diag(S⁻¹(S + D)S⁻¹)` with
/// `D = vcov(Vz)`, `V ~ W(1, S)`, `z = S⁻¹μ`.
pub fn analytic_var_m1(q: &GaussianVariational) -> DVector<f64> {
    match (q.precision(), q.covariance()) {
        (SymBlock::Full(p), SymBlock::Full(s)) => {
            let d = q.dim();
            let z = p * q.mean();
            let mut dm = DMatrix::zeros(d, d);
            for i in 0..d {
                for j in i..d {
                    let mut acc = 0.0;
                    for h in 0..d {
                        for k in 0..d {
                            acc += z[h] * z[k] * wishart1_cov(&s, i, h, j, k);
                        }
                    }
                    dm[(i, j)] = acc;
                    dm[(j, i)] = acc;
                }
            }
            (p * (s + dm) * p).diagonal()
        }
        (SymBlock::Diagonal(p), _) => {
            // One-dimensional case per coordinate: p + 2 p² μ².
            DVector::from_fn(q.dim(), |i, _| {
                let mu = q.mean()[i];
                p[i] + 2.0 * p[i] * p[i] * mu * mu
            })
        }
        _ => unreachable!(),
    }
}
