//! Log-likelihood evaluators and parameter transforms.
//!
//! Models take unconstrained parameters; constrained quantities are reached
//! through a [`TransformChain`].

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Covariates (rows are observations) and targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::Config("dataset has no rows".into()));
        }
        if x.nrows() != y.len() {
            return Err(Error::DimMismatch { expected: x.nrows(), got: y.len() });
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Domain("dataset contains non-finite values".into()));
        }
        Ok(Self { x, y })
    }

    /// Prepends a column of ones.
    pub fn with_intercept(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let x = x.insert_column(0, 1.0);
        Self::new(x, y)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn rows(&self, idx: &[usize]) -> Dataset {
        Dataset { x: self.x.select_rows(idx), y: self.y.select_rows(idx) }
    }

    pub fn check_binary(&self) -> Result<()> {
        match self.y.iter().find(|v| **v != 0.0 && **v != 1.0) {
            Some(v) => Err(Error::Domain(format!("binary target expected, found {v}"))),
            None => Ok(()),
        }
    }
}

/// Map from the real line into a constrained set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    Identity,
    Sigmoid,
    Exp,
}

impl Transform {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Transform::Identity => x,
            Transform::Sigmoid => sigmoid(x),
            Transform::Exp => x.exp(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TransformChain {
    Elementwise(Vec<Transform>),
    /// `(ψ_ω, ψ_α, ψ_β) ↦ (ω, α, β)` keeping `α + β < 1`.
    Garch,
}

impl TransformChain {
    pub fn identity(d: usize) -> Self {
        TransformChain::Elementwise(vec![Transform::Identity; d])
    }

    pub fn apply(&self, raw: &DVector<f64>) -> DVector<f64> {
        match self {
            TransformChain::Elementwise(ts) => {
                assert_eq!(ts.len(), raw.len(), "one transform per coordinate");
                DVector::from_fn(raw.len(), |i, _| ts[i].apply(raw[i]))
            }
            TransformChain::Garch => {
                let (w, a, b) = garch_params(raw);
                DVector::from_vec(vec![w, a, b])
            }
        }
    }
}

pub fn apply_transforms(chain: &TransformChain, theta_raw: &DVector<f64>) -> DVector<f64> {
    chain.apply(theta_raw)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + eˣ)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Something that can score unconstrained parameters against data.
pub trait Model {
    fn dim(&self) -> usize;

    fn n_obs(&self) -> usize;

    fn log_lik(&self, theta: &DVector<f64>) -> f64;

    /// Whether [`log_lik_rows`](Self::log_lik_rows) evaluates a subset.
    fn batchable(&self) -> bool {
        false
    }

    /// Log-likelihood of the listed observations only.
    fn log_lik_rows(&self, theta: &DVector<f64>, _rows: &[usize]) -> f64 {
        self.log_lik(theta)
    }

    fn transforms(&self) -> TransformChain {
        TransformChain::identity(self.dim())
    }
}

/// Model with an extra positive variance parameter, for the mean-field factor.
pub trait NoiseModel {
    fn dim(&self) -> usize;

    fn n_obs(&self) -> usize;

    fn log_lik_with_variance(&self, theta: &DVector<f64>, sigma2: f64) -> f64;
}

pub fn logistic_loglik(theta: &DVector<f64>, data: &Dataset) -> Result<f64> {
    if theta.len() != data.p() {
        return Err(Error::DimMismatch { expected: data.p(), got: theta.len() });
    }
    Ok(logistic_rows(theta, data, 0..data.n()))
}

fn logistic_rows(theta: &DVector<f64>, data: &Dataset, rows: impl Iterator<Item = usize>) -> f64 {
    let mut ll = 0.0;
    for i in rows {
        let eta = data.x.row(i).dot(&theta.transpose());
        ll += data.y[i] * eta - softplus(eta);
    }
    ll
}

/// `P(y = 1 | x)` for every row.
pub fn logistic_probs(theta: &DVector<f64>, data: &Dataset) -> DVector<f64> {
    (&data.x * theta).map(sigmoid)
}

pub fn gaussian_reg_loglik(theta: &DVector<f64>, sigma2: f64, data: &Dataset) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return Err(Error::Domain(format!("variance must be positive, got {sigma2}")));
    }
    if theta.len() != data.p() {
        return Err(Error::DimMismatch { expected: data.p(), got: theta.len() });
    }
    Ok(gaussian_rows(theta, sigma2, data, 0..data.n()))
}

fn gaussian_rows(theta: &DVector<f64>, sigma2: f64, data: &Dataset, rows: impl Iterator<Item = usize>) -> f64 {
    let mut rss = 0.0;
    let mut n = 0usize;
    for i in rows {
        let r = data.y[i] - data.x.row(i).dot(&theta.transpose());
        rss += r * r;
        n += 1;
    }
    -0.5 * n as f64 * (2.0 * PI * sigma2).ln() - rss / (2.0 * sigma2)
}

pub fn linear_preds(theta: &DVector<f64>, data: &Dataset) -> DVector<f64> {
    &data.x * theta
}

/// HAR design: `[1, rv_{t−1}, mean of 5 lags, mean of 22 lags]` against `rv_t`.
pub fn har_features(rv: &[f64]) -> Result<Dataset> {
    let t = rv.len();
    if t <= 22 {
        return Err(Error::TooShort { needed: 22, got: t });
    }
    let rows = t - 22;
    let mut x = DMatrix::zeros(rows, 4);
    let mut y = DVector::zeros(rows);
    for (r, i) in (22..t).enumerate() {
        x[(r, 0)] = 1.0;
        x[(r, 1)] = rv[i - 1];
        x[(r, 2)] = rv[i - 5..i].iter().sum::<f64>() / 5.0;
        x[(r, 3)] = rv[i - 22..i].iter().sum::<f64>() / 22.0;
        y[r] = rv[i];
    }
    Dataset::new(x, y)
}

/// `(ω, α, β)` from `ψ`: `ω = f(ψ_ω)`, `α = f(ψ_α)(1 − f(ψ_β))`, `β = f(ψ_α)f(ψ_β)`.
pub fn garch_params(psi: &DVector<f64>) -> (f64, f64, f64) {
    let fa = sigmoid(psi[1]);
    (sigmoid(psi[0]), fa * sigmoid(-psi[2]), fa * sigmoid(psi[2]))
}

fn sample_variance(r: &[f64]) -> f64 {
    let n = r.len() as f64;
    let m = r.iter().sum::<f64>() / n;
    r.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
}

/// GARCH(1,1) log-likelihood with `h₁` set to the sample variance, summed
/// over `t = 2..T`.
pub fn garch_loglik(psi: &DVector<f64>, returns: &[f64]) -> Result<f64> {
    if psi.len() != 3 {
        return Err(Error::DimMismatch { expected: 3, got: psi.len() });
    }
    if returns.len() < 2 {
        return Err(Error::TooShort { needed: 1, got: returns.len() });
    }
    Ok(garch_ll_unchecked(psi, returns, sample_variance(returns)))
}

fn garch_ll_unchecked(psi: &DVector<f64>, r: &[f64], h1: f64) -> f64 {
    let (w, a, b) = garch_params(psi);
    let mut h = h1;
    let mut ll = 0.0;
    for t in 1..r.len() {
        h = w + a * r[t - 1] * r[t - 1] + b * h;
        ll += -0.5 * (2.0 * PI * h).ln() - r[t] * r[t] / (2.0 * h);
    }
    ll
}

/// Simulates a GARCH(1,1) path started from the unconditional variance.
pub fn simulate_garch<R: rand::Rng + ?Sized>(omega: f64, alpha: f64, beta: f64, t: usize, rng: &mut R) -> Vec<f64> {
    use rand_distr::StandardNormal;
    let mut h = omega / (1.0 - alpha - beta);
    let mut out = Vec::with_capacity(t);
    for _ in 0..t {
        let z: f64 = rng.sample(StandardNormal);
        let r = h.sqrt() * z;
        out.push(r);
        h = omega + alpha * r * r + beta * h;
    }
    out
}

#[derive(Debug, Clone)]
pub struct LogisticRegression {
    pub data: Dataset,
}

impl LogisticRegression {
    pub fn new(data: Dataset) -> Result<Self> {
        data.check_binary()?;
        Ok(Self { data })
    }
}

impl Model for LogisticRegression {
    fn dim(&self) -> usize {
        self.data.p()
    }

    fn n_obs(&self) -> usize {
        self.data.n()
    }

    fn log_lik(&self, theta: &DVector<f64>) -> f64 {
        logistic_rows(theta, &self.data, 0..self.data.n())
    }

    fn batchable(&self) -> bool {
        true
    }

    fn log_lik_rows(&self, theta: &DVector<f64>, rows: &[usize]) -> f64 {
        logistic_rows(theta, &self.data, rows.iter().copied())
    }
}

/// Linear regression with Gaussian noise. Implements [`Model`] when the
/// variance is fixed and [`NoiseModel`] always.
#[derive(Debug, Clone)]
pub struct LinearRegression {
    pub data: Dataset,
    pub sigma2: Option<f64>,
}

impl LinearRegression {
    pub fn known_noise(data: Dataset, sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0) {
            return Err(Error::Domain(format!("variance must be positive, got {sigma2}")));
        }
        Ok(Self { data, sigma2: Some(sigma2) })
    }

    pub fn unknown_noise(data: Dataset) -> Self {
        Self { data, sigma2: None }
    }

    fn sigma2(&self) -> f64 {
        self.sigma2.expect("Model interface needs a fixed noise variance")
    }
}

impl Model for LinearRegression {
    fn dim(&self) -> usize {
        self.data.p()
    }

    fn n_obs(&self) -> usize {
        self.data.n()
    }

    fn log_lik(&self, theta: &DVector<f64>) -> f64 {
        gaussian_rows(theta, self.sigma2(), &self.data, 0..self.data.n())
    }

    fn batchable(&self) -> bool {
        true
    }

    fn log_lik_rows(&self, theta: &DVector<f64>, rows: &[usize]) -> f64 {
        gaussian_rows(theta, self.sigma2(), &self.data, rows.iter().copied())
    }
}

impl NoiseModel for LinearRegression {
    fn dim(&self) -> usize {
        self.data.p()
    }

    fn n_obs(&self) -> usize {
        self.data.n()
    }

    fn log_lik_with_variance(&self, theta: &DVector<f64>, sigma2: f64) -> f64 {
        gaussian_rows(theta, sigma2, &self.data, 0..self.data.n())
    }
}

#[derive(Debug, Clone)]
pub struct Garch {
    pub returns: Vec<f64>,
    h1: f64,
}

impl Garch {
    pub fn new(returns: Vec<f64>) -> Result<Self> {
        if returns.len() < 2 {
            return Err(Error::TooShort { needed: 1, got: returns.len() });
        }
        if returns.iter().any(|r| !r.is_finite()) {
            return Err(Error::Domain("returns contain non-finite values".into()));
        }
        let h1 = sample_variance(&returns);
        Ok(Self { returns, h1 })
    }
}

impl Model for Garch {
    fn dim(&self) -> usize {
        3
    }

    fn n_obs(&self) -> usize {
        self.returns.len()
    }

    fn log_lik(&self, theta: &DVector<f64>) -> f64 {
        garch_ll_unchecked(theta, &self.returns, self.h1)
    }

    fn transforms(&self) -> TransformChain {
        TransformChain::Garch
    }
}

/// Likelihood that ignores the parameters.
#[derive(Debug, Clone)]
pub struct ConstantModel {
    pub d: usize,
    pub value: f64,
}

impl Model for ConstantModel {
    fn dim(&self) -> usize {
        self.d
    }

    fn n_obs(&self) -> usize {
        1
    }

    fn log_lik(&self, _theta: &DVector<f64>) -> f64 {
        self.value
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_logistic(n: usize, p: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, _| 3.0 * rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(n, |_, _| if rng.random::<f64>() < 0.5 { 1.0 } else { 0.0 });
        Dataset::new(x, y).unwrap()
    }

    #[test]
    fn logistic_examples() {
        let data = random_logistic(20, 3, 1);
        let ll = logistic_loglik(&DVector::zeros(3), &data).unwrap();
        assert!((ll - 20.0 * 0.5f64.ln()).abs() < 1e-12);
        let one = Dataset::new(DMatrix::from_element(1, 1, 1.0), DVector::from_element(1, 1.0)).unwrap();
        assert!((logistic_loglik(&DVector::zeros(1), &one).unwrap() - 0.5f64.ln()).abs() < 1e-15);
        assert!(matches!(logistic_loglik(&DVector::zeros(2), &data), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn logistic_matches_naive_loop() {
        let data = random_logistic(50, 4, 2);
        let theta = DVector::from_vec(vec![0.3, -0.2, 0.5, 0.1]);
        let mut naive = 0.0;
        for i in 0..data.n() {
            let p = 1.0 / (1.0 + (-(data.x.row(i) * &theta)[0]).exp());
            naive += data.y[i] * p.ln() + (1.0 - data.y[i]) * (1.0 - p).ln();
        }
        assert!((logistic_loglik(&theta, &data).unwrap() - naive).abs() < 1e-10);
    }

    #[test]
    fn logistic_is_finite_at_extreme_scores() {
        let data = Dataset::new(DMatrix::from_element(2, 1, 1.0), DVector::from_vec(vec![0.0, 1.0])).unwrap();
        let ll = logistic_loglik(&DVector::from_element(1, 800.0), &data).unwrap();
        assert!((ll + 800.0).abs() < 1e-9);
    }

    #[test]
    fn logistic_concavity_probe() {
        let data = random_logistic(40, 3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let a = DVector::from_fn(3, |_, _| rng.sample::<f64, _>(StandardNormal));
            let b = DVector::from_fn(3, |_, _| rng.sample::<f64, _>(StandardNormal));
            let fa = logistic_loglik(&a, &data).unwrap();
            let fb = logistic_loglik(&b, &data).unwrap();
            for k in 1..=20 {
                let t = k as f64 / 21.0;
                let mid = &a * (1.0 - t) + &b * t;
                assert!(logistic_loglik(&mid, &data).unwrap() >= (1.0 - t) * fa + t * fb - 1e-9);
            }
        }
    }

    #[test]
    fn gaussian_examples() {
        let x = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        let data = Dataset::new(x, DVector::from_vec(vec![2.0, 4.0, 6.0])).unwrap();
        let ll = gaussian_reg_loglik(&DVector::from_element(1, 2.0), 1.0, &data).unwrap();
        assert!((ll + 1.5 * (2.0 * PI).ln()).abs() < 1e-12);
        let zero = Dataset::new(DMatrix::zeros(1, 1), DVector::zeros(1)).unwrap();
        let ll = gaussian_reg_loglik(&DVector::from_element(1, 17.0), 1.0, &zero).unwrap();
        assert!((ll + 0.5 * (2.0 * PI).ln()).abs() < 1e-15);
        assert!(matches!(gaussian_reg_loglik(&DVector::zeros(1), 0.0, &zero), Err(Error::Domain(_))));
    }

    #[test]
    fn gaussian_matches_naive_loop() {
        let data = random_logistic(30, 2, 5);
        let theta = DVector::from_vec(vec![0.7, -1.1]);
        let s2 = 2.3;
        let naive: f64 = (0..30)
            .map(|i| {
                let r = data.y[i] - (data.x.row(i) * &theta)[0];
                -0.5 * (2.0 * PI * s2).ln() - r * r / (2.0 * s2)
            })
            .sum();
        assert!((gaussian_reg_loglik(&theta, s2, &data).unwrap() - naive).abs() < 1e-10);
    }

    #[test]
    fn har_examples() {
        let d = har_features(&[0.7; 30]).unwrap();
        assert_eq!(d.n(), 8);
        for i in 0..d.n() {
            for (j, want) in [1.0, 0.7, 0.7, 0.7].iter().enumerate() {
                assert!((d.x[(i, j)] - want).abs() < 1e-14);
            }
            assert_eq!(d.y[i], 0.7);
        }
        assert_eq!(har_features(&[1.0; 23]).unwrap().n(), 1);
        assert!(matches!(har_features(&[1.0; 22]), Err(Error::TooShort { .. })));
    }

    #[test]
    fn har_matches_windowed_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let rv: Vec<f64> = (0..60).map(|_| rng.random::<f64>()).collect();
        let d = har_features(&rv).unwrap();
        for (r, t) in (22..60).enumerate() {
            let w5: f64 = (1..=5).map(|k| rv[t - k]).sum::<f64>() / 5.0;
            let w22: f64 = (1..=22).map(|k| rv[t - k]).sum::<f64>() / 22.0;
            assert_eq!(d.x[(r, 1)], rv[t - 1]);
            assert!((d.x[(r, 2)] - w5).abs() < 1e-14);
            assert!((d.x[(r, 3)] - w22).abs() < 1e-14);
            assert_eq!(d.y[r], rv[t]);
        }
    }

    #[test]
    fn garch_degenerate_recursion_is_iid() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let r: Vec<f64> = (0..100).map(|_| 0.3 * rng.sample::<f64, _>(StandardNormal)).collect();
        let psi = DVector::from_vec(vec![-1.0, -800.0, 0.0]);
        let w = sigmoid(-1.0);
        let iid: f64 = r[1..].iter().map(|x| -0.5 * (2.0 * PI * w).ln() - x * x / (2.0 * w)).sum();
        assert!((garch_loglik(&psi, &r).unwrap() - iid).abs() < 1e-9);
        assert!(matches!(garch_loglik(&psi, &r[..1]), Err(Error::TooShort { .. })));
    }

    #[test]
    fn garch_transform_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        // Beyond |ψ| ≈ 36 the logistic rounds to exactly 1 in f64.
        for _ in 0..10_000 {
            let psi = DVector::from_fn(3, |_, _| rng.random_range(-30.0..30.0));
            let (w, a, b) = garch_params(&psi);
            assert!(w > 0.0 && a > 0.0 && b > 0.0 && a + b < 1.0);
        }
    }

    #[test]
    fn transform_examples() {
        let raw = DVector::from_vec(vec![0.3, -2.0]);
        assert_eq!(TransformChain::identity(2).apply(&raw), raw);
        assert_eq!(Transform::Sigmoid.apply(0.0), 0.5);
        assert_eq!(Transform::Exp.apply(0.0), 1.0);
        let g = apply_transforms(&TransformChain::Garch, &DVector::zeros(3));
        assert_eq!(g, DVector::from_vec(vec![0.5, 0.25, 0.25]));
    }

    #[test]
    fn batch_rows_sum_to_full() {
        let m = LogisticRegression::new(random_logistic(10, 2, 9)).unwrap();
        let theta = DVector::from_vec(vec![0.4, -0.3]);
        let a = m.log_lik_rows(&theta, &[0, 1, 2, 3, 4]);
        let b = m.log_lik_rows(&theta, &[5, 6, 7, 8, 9]);
        assert!((a + b - m.log_lik(&theta)).abs() < 1e-12);
    }
}
