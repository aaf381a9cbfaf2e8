//! The optimization loop: sampling, lower-bound tracking, control variates,
//! clipping, momentum, adaptive step size and early stopping.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::estimator::{cv_coefficients, estimate_from_draws, CvCoefficients, GradientEstimate};
use crate::gaussian::GaussianVariational;
use crate::inverse_gamma::{
    ig_apply, ig_lb_gradient, ig_log_density, mf_cv_coefficients, mf_estimate, IGParams, MfCv, MfEstimate,
};
use crate::linalg::CovStructure;
use crate::models::{Model, NoiseModel};
use crate::updates::{apply_step, LbGradient, PdStrategy, PriorSpec};

/// Hyperparameters of a run. [`TrainConfig::new`] fills in the usual defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub beta: f64,
    /// Iteration `t′` after which the step decays as `β t′/t`.
    pub t_prime: usize,
    pub patience: usize,
    pub window: usize,
    pub momentum: f64,
    pub clip_norm: f64,
    pub n_samples: usize,
    pub max_iters: usize,
    pub batch_size: Option<usize>,
    pub seed: u64,
    pub pd_strategy: PdStrategy,
    pub cv_enabled: bool,
    pub prior: PriorSpec,
    /// Starting point; the prior when `None`.
    pub init: Option<GaussianVariational>,
}

impl TrainConfig {
    /// Defaults: `β = 0.1`, `t′ = 800`, `P = 500`, `w = 30`, `γ = 0.4`,
    /// `l_max = 1000`, `N_s = 100`, 1000 iterations, prior `N(0, 5I)`.
    pub fn new(d: usize, structure: CovStructure) -> Self {
        Self {
            beta: 0.1,
            t_prime: 800,
            patience: 500,
            window: 30,
            momentum: 0.4,
            clip_norm: 1000.0,
            n_samples: 100,
            max_iters: 1000,
            batch_size: None,
            seed: 0,
            pd_strategy: PdStrategy::Plain,
            cv_enabled: true,
            prior: PriorSpec::isotropic(d, 0.2, structure).expect("positive tau"),
            init: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return bad(format!("beta must lie in (0, 1), got {}", self.beta));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if self.window == 0 || self.patience == 0 {
            return bad("window and patience must be at least 1".into());
        }
        if !(self.clip_norm > 0.0) {
            return bad(format!("clip norm must be positive, got {}", self.clip_norm));
        }
        if self.n_samples < 2 {
            return bad("need at least 2 MC samples per iteration".into());
        }
        if self.max_iters == 0 || self.t_prime == 0 {
            return bad("max_iters and t_prime must be at least 1".into());
        }
        if self.batch_size == Some(0) {
            return bad("batch size must be at least 1".into());
        }
        self.pd_strategy.validate(self.prior.structure())?;
        if let Some(q) = &self.init {
            if q.dim() != self.prior.dim() || q.structure() != self.prior.structure() {
                return bad("initial distribution does not match the prior".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitReason {
    Patience,
    MaxIters,
}

impl ExitReason {
    pub fn as_str(self) -> &'static str {
        match self {
            ExitReason::Patience => "patience",
            ExitReason::MaxIters => "max_iters",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub lb_raw: f64,
    pub lb_smoothed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    /// Variational factor at the smoothed-LB maximum.
    pub best_q: GaussianVariational,
    pub best_ig: Option<IGParams>,
    pub best_iter: usize,
    pub trace: Vec<TraceRow>,
    pub exit_reason: ExitReason,
    pub final_q: GaussianVariational,
    pub final_ig: Option<IGParams>,
}

/// Called once per iteration with the iteration index, the factor the LB was
/// evaluated at, and the raw and smoothed LB.
pub type Observer<'a> = dyn FnMut(usize, &GaussianVariational, Option<IGParams>, f64, f64) + 'a;

/// `E_q[log p(θ) + log p(y|θ) − log q(θ)]` by Monte Carlo.
pub fn estimate_lb<M, R>(q: &GaussianVariational, prior: &PriorSpec, model: &M, n: usize, rng: &mut R) -> Result<f64>
where
    M: Model + ?Sized,
    R: Rng + ?Sized,
{
    let draws = q.sample(n, rng);
    let logliks = crate::estimator::evaluate_logliks(&draws, |t| model.log_lik(t))?;
    Ok(lb_from_draws(q, prior, &draws, &logliks))
}

fn lb_from_draws(q: &GaussianVariational, prior: &PriorSpec, draws: &nalgebra::DMatrix<f64>, logliks: &[f64]) -> f64 {
    let p = prior.to_gaussian();
    let mut acc = 0.0;
    for (s, ell) in logliks.iter().enumerate() {
        let theta = draws.row(s).transpose();
        acc += p.log_density(&theta) + ell - q.log_density(&theta);
    }
    acc / logliks.len() as f64
}

/// Mean of the last `min(w, len)` values.
pub fn smooth_lb(trace: &[f64], w: usize) -> f64 {
    let k = w.min(trace.len()).max(1);
    trace[trace.len() - k..].iter().sum::<f64>() / k as f64
}

/// True when the running maximum of `smoothed` is more than `patience`
/// entries old.
pub fn should_stop(smoothed: &[f64], patience: usize) -> bool {
    let mut best = 0;
    for (i, v) in smoothed.iter().enumerate() {
        if *v > smoothed[best] {
            best = i;
        }
    }
    !smoothed.is_empty() && smoothed.len() - 1 - best > patience
}

/// Rescales `g` to norm `l_max` when it is longer.
pub fn clip_gradient(g: &mut [f64], l_max: f64) {
    let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > l_max {
        let s = l_max / norm;
        g.iter_mut().for_each(|x| *x *= s);
    }
}

/// `ḡ ← γḡ + (1 − γ)ĝ`.
pub fn momentum_update(g_bar: &mut [f64], g_hat: &[f64], gamma: f64) {
    for (b, h) in g_bar.iter_mut().zip(g_hat) {
        *b = gamma * *b + (1.0 - gamma) * h;
    }
}

/// `min(β, β t′/t)`.
pub fn step_size(t: usize, beta: f64, t_prime: usize) -> f64 {
    beta.min(beta * t_prime as f64 / t as f64)
}

/// Without-replacement minibatches, reshuffled each epoch.
struct Batcher {
    order: Vec<usize>,
    pos: usize,
    size: usize,
}

impl Batcher {
    fn new<R: Rng + ?Sized>(n: usize, size: usize, rng: &mut R) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        Self { order, pos: 0, size: size.min(n) }
    }

    fn next<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<usize> {
        if self.pos + self.size > self.order.len() {
            self.order.shuffle(rng);
            self.pos = 0;
        }
        let out = self.order[self.pos..self.pos + self.size].to_vec();
        self.pos += self.size;
        out
    }
}

/// Shared iteration state for both the single-factor and mean-field loops.
struct Tracker {
    raw: Vec<f64>,
    smoothed: Vec<f64>,
    trace: Vec<TraceRow>,
    best: Option<(usize, f64, GaussianVariational, Option<IGParams>)>,
    g_bar: Option<Vec<f64>>,
}

impl Tracker {
    fn new() -> Self {
        Self { raw: vec![], smoothed: vec![], trace: vec![], best: None, g_bar: None }
    }

    fn record(&mut self, t: usize, lb: f64, w: usize, q: &GaussianVariational, v: Option<IGParams>) -> f64 {
        self.raw.push(lb);
        let sm = smooth_lb(&self.raw, w);
        self.smoothed.push(sm);
        self.trace.push(TraceRow { iter: t, lb_raw: lb, lb_smoothed: sm });
        if self.best.as_ref().is_none_or(|b| sm > b.1) {
            self.best = Some((t, sm, q.clone(), v));
        }
        sm
    }

    /// Clip then smooth, in place.
    fn process(&mut self, mut g: Vec<f64>, cfg: &TrainConfig) -> Vec<f64> {
        clip_gradient(&mut g, cfg.clip_norm);
        match &mut self.g_bar {
            Some(b) => momentum_update(b, &g, cfg.momentum),
            None => self.g_bar = Some(g),
        }
        self.g_bar.clone().expect("set above")
    }

    fn finish(self, exit: ExitReason, q: GaussianVariational, v: Option<IGParams>) -> FitResult {
        let (best_iter, _, best_q, best_ig) = self.best.expect("at least one iteration");
        FitResult { best_q, best_ig, best_iter, trace: self.trace, exit_reason: exit, final_q: q, final_ig: v }
    }
}

/// Applies the Gaussian step, halving the step up to 10 times on a
/// positivity failure.
fn gaussian_step(q: &GaussianVariational, grad: &LbGradient, beta: f64, strategy: PdStrategy) -> Result<GaussianVariational> {
    let mut b = beta;
    let mut last = Error::NotSpd;
    for _ in 0..=10 {
        match apply_step(q, grad, b, strategy) {
            Ok((q, _)) => return Ok(q),
            Err(e @ (Error::NotSpd | Error::NotPositive { .. } | Error::Singular)) => {
                last = e;
                b *= 0.5;
            }
            Err(e) => return Err(e),
        }
    }
    Err(last)
}

fn check_model_dim(cfg: &TrainConfig, d: usize) -> Result<()> {
    cfg.validate()?;
    if d != cfg.prior.dim() {
        return Err(Error::Config(format!("model has {d} parameters but the prior has {}", cfg.prior.dim())));
    }
    Ok(())
}

pub fn fit<M: Model + ?Sized>(model: &M, cfg: &TrainConfig) -> Result<FitResult> {
    fit_with_observer(model, cfg, &mut |_, _, _, _, _| {})
}

pub fn fit_with_observer<M: Model + ?Sized>(model: &M, cfg: &TrainConfig, observer: &mut Observer<'_>) -> Result<FitResult> {
    check_model_dim(cfg, model.dim())?;
    if cfg.batch_size.is_some() && !model.batchable() {
        return Err(Error::Config("this model does not support minibatches".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = model.dim();
    let structure = cfg.prior.structure();
    let mut q = cfg.init.clone().unwrap_or_else(|| cfg.prior.to_gaussian());
    let n_obs = model.n_obs();
    let mut batcher = cfg.batch_size.filter(|&m| m < n_obs).map(|m| Batcher::new(n_obs, m, &mut rng));
    let mut prev: Option<(GradientEstimate, GaussianVariational)> = None;
    let mut tr = Tracker::new();
    let mut exit = ExitReason::MaxIters;

    for t in 1..=cfg.max_iters {
        let draws = q.sample(cfg.n_samples, &mut rng);
        let logliks = match batcher.as_mut() {
            Some(b) => {
                let rows = b.next(&mut rng);
                let scale = n_obs as f64 / rows.len() as f64;
                crate::estimator::evaluate_logliks(&draws, |th| scale * model.log_lik_rows(th, &rows))?
            }
            None => crate::estimator::evaluate_logliks(&draws, |th| model.log_lik(th))?,
        };
        let lb = lb_from_draws(&q, &cfg.prior, &draws, &logliks);
        let sm = tr.record(t, lb, cfg.window, &q, None);
        observer(t, &q, None, lb, sm);

        let c = match (&prev, cfg.cv_enabled) {
            (Some((e, qp)), true) => cv_coefficients(e, qp)?,
            _ => CvCoefficients::zeros(structure, d),
        };
        let est = estimate_from_draws(&q, draws, logliks, Some(&c));
        let raw_grad = LbGradient::new(&q, &cfg.prior, &est);
        let g = tr.process(raw_grad.to_flat(), cfg);
        let grad = LbGradient::from_flat(structure, d, &g)?;
        let next = gaussian_step(&q, &grad, step_size(t, cfg.beta, cfg.t_prime), cfg.pd_strategy)?;
        prev = Some((est, q));
        q = next;

        if should_stop(&tr.smoothed, cfg.patience) {
            exit = ExitReason::Patience;
            break;
        }
    }
    Ok(tr.finish(exit, q, None))
}

/// Mean-field fit: Gaussian factor for `θ`, Inverse-Gamma factor for the
/// noise variance. Both gradient blocks share clipping and momentum.
pub fn fit_mean_field<M: NoiseModel + ?Sized>(
    model: &M,
    cfg: &TrainConfig,
    prior_v: IGParams,
    init_v: Option<IGParams>,
    observer: &mut Observer<'_>,
) -> Result<FitResult> {
    check_model_dim(cfg, model.dim())?;
    if cfg.batch_size.is_some() {
        return Err(Error::Config("minibatches are not supported for the mean-field fit".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = model.dim();
    let structure = cfg.prior.structure();
    let prior_g = cfg.prior.to_gaussian();
    let mut q = cfg.init.clone().unwrap_or_else(|| prior_g.clone());
    let mut v = init_v.unwrap_or(prior_v);
    let mut prev: Option<(MfEstimate, GaussianVariational, IGParams)> = None;
    let mut tr = Tracker::new();
    let mut exit = ExitReason::MaxIters;

    for t in 1..=cfg.max_iters {
        let cv: Option<MfCv> = match (&prev, cfg.cv_enabled) {
            (Some((e, qp, vp)), true) => Some(mf_cv_coefficients(e, qp, *vp)?),
            _ => None,
        };
        let est = mf_estimate(&q, v, model, cfg.n_samples, &mut rng, cv.as_ref())?;
        let mut lb = 0.0;
        for s in 0..cfg.n_samples {
            let theta = est.gauss.draws.row(s).transpose();
            let s2 = est.sigma2[s];
            lb += prior_g.log_density(&theta) + ig_log_density(s2, prior_v)? + est.gauss.logliks[s]
                - q.log_density(&theta)
                - ig_log_density(s2, v)?;
        }
        lb /= cfg.n_samples as f64;
        let sm = tr.record(t, lb, cfg.window, &q, Some(v));
        observer(t, &q, Some(v), lb, sm);

        let gauss = LbGradient::new(&q, &cfg.prior, &est.gauss);
        let mut flat = gauss.to_flat();
        flat.extend(ig_lb_gradient(v, prior_v, est.ig_term));
        let g = tr.process(flat, cfg);
        let split = g.len() - 2;
        let grad = LbGradient::from_flat(structure, d, &g[..split])?;
        let beta_t = step_size(t, cfg.beta, cfg.t_prime);
        let next_q = gaussian_step(&q, &grad, beta_t, cfg.pd_strategy)?;
        let (next_v, _) = ig_apply(v, [g[split], g[split + 1]], beta_t)?;
        prev = Some((est, q, v));
        q = next_q;
        v = next_v;

        if should_stop(&tr.smoothed, cfg.patience) {
            exit = ExitReason::Patience;
            break;
        }
    }
    Ok(tr.finish(exit, q, Some(v)))
}

/// Posterior mean of the model's constrained parameters, `E_q[f(θ)]`, by
/// Monte Carlo.
pub fn constrained_mean<R: Rng + ?Sized>(
    q: &GaussianVariational,
    chain: &crate::models::TransformChain,
    n: usize,
    rng: &mut R,
) -> DVector<f64> {
    let draws = q.sample(n, rng);
    let mut acc = DVector::zeros(q.dim());
    for s in 0..n {
        acc += chain.apply(&draws.row(s).transpose());
    }
    acc / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ConstantModel;

    #[test]
    fn smoothing_examples() {
        assert_eq!(smooth_lb(&[1.0, 2.0, 3.0], 2), 2.5);
        assert_eq!(smooth_lb(&[5.0], 30), 5.0);
    }

    #[test]
    fn stopping_examples() {
        assert!(!should_stop(&[1.0, 2.0, 3.0, 4.0, 5.0], 1));
        assert!(should_stop(&[9.0, 1.0, 2.0, 3.0, 4.0], 3));
        assert!(!should_stop(&[9.0, 1.0, 2.0, 3.0], 3));
        assert!(!should_stop(&[], 3));
    }

    #[test]
    fn clipping_examples() {
        let mut g = vec![1200.0, 1600.0];
        clip_gradient(&mut g, 1000.0);
        assert_eq!(g, vec![600.0, 800.0]);
        let mut g = vec![3.0, 4.0];
        clip_gradient(&mut g, 1000.0);
        assert_eq!(g, vec![3.0, 4.0]);
    }

    #[test]
    fn momentum_examples() {
        let mut b = vec![1.0, 2.0];
        momentum_update(&mut b, &[5.0, 6.0], 0.0);
        assert_eq!(b, vec![5.0, 6.0]);
        momentum_update(&mut b, &[7.0, 8.0], 1.0);
        assert_eq!(b, vec![5.0, 6.0]);
        let mut b = vec![0.0];
        for _ in 0..200 {
            momentum_update(&mut b, &[3.0], 0.4);
        }
        assert!((b[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn step_size_examples() {
        assert_eq!(step_size(10, 0.1, 800), 0.1);
        assert_eq!(step_size(800, 0.1, 800), 0.1);
        assert!((step_size(1600, 0.1, 800) - 0.05).abs() < 1e-15);
        let mut last = f64::INFINITY;
        for t in (1..100_000).step_by(97) {
            let s = step_size(t, 0.1, 800);
            assert!(s <= last);
            last = s;
        }
        assert!(last < 1e-3);
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::new(2, CovStructure::Full);
        assert!(c.validate().is_ok());
        c.beta = 1.0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::new(2, CovStructure::Full);
        c.pd_strategy = PdStrategy::LogTransform;
        assert!(c.validate().is_err());
        let c = TrainConfig::new(2, CovStructure::Full);
        let m = ConstantModel { d: 3, value: 0.0 };
        assert!(matches!(fit(&m, &c), Err(Error::Config(_))));
    }

    #[test]
    fn constant_model_recovers_prior() {
        for (st, strat) in [
            (CovStructure::Full, PdStrategy::Plain),
            (CovStructure::Full, PdStrategy::Retraction),
            (CovStructure::Diagonal, PdStrategy::BoundedStep { beta0: 0.5, delta: 0.9 }),
            (CovStructure::Diagonal, PdStrategy::LogTransform),
        ] {
            let mut c = TrainConfig::new(3, st);
            c.pd_strategy = strat;
            c.max_iters = 300;
            c.init = Some(
                GaussianVariational::new(
                    DVector::from_vec(vec![1.0, -1.0, 0.5]),
                    crate::linalg::SymBlock::scaled_identity(st, 3, 2.0),
                )
                .unwrap(),
            );
            let r = fit(&ConstantModel { d: 3, value: -4.0 }, &c).unwrap();
            let q = &r.best_q;
            assert!(q.mean().amax() < 0.05, "{strat:?}");
            assert!(q.precision().max_abs_diff(&c.prior.prec0) < 0.05 * 0.2, "{strat:?}");
        }
    }

    #[test]
    fn best_iter_has_max_smoothed_lb() {
        let mut c = TrainConfig::new(2, CovStructure::Full);
        c.max_iters = 200;
        let r = fit(&ConstantModel { d: 2, value: 1.0 }, &c).unwrap();
        let best = r.trace.iter().find(|row| row.iter == r.best_iter).unwrap().lb_smoothed;
        assert!(r.trace.iter().all(|row| row.lb_smoothed <= best));
        assert_eq!(r.trace.len(), 200);
        assert_eq!(r.exit_reason, ExitReason::MaxIters);
    }

    #[test]
    fn patience_stops_early() {
        let mut c = TrainConfig::new(1, CovStructure::Diagonal);
        c.patience = 5;
        c.max_iters = 1000;
        let r = fit(&ConstantModel { d: 1, value: 0.0 }, &c).unwrap();
        assert_eq!(r.exit_reason, ExitReason::Patience);
        assert_eq!(r.trace.len(), r.best_iter + 6);
    }
}
