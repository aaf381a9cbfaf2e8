use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RwmConfig {
    pub n_draws: usize,
    pub burn_in: usize,
    /// Initial proposal scale; adapted during burn-in.
    pub step_scale: f64,
    /// Lower-triangular proposal shape `L` (proposal `θ + scale·Lz`).
    pub proposal: Option<DMatrix<f64>>,
    pub x0: Option<DVector<f64>>,
}

impl Default for RwmConfig {
    fn default() -> Self {
        Self { n_draws: 50_000, burn_in: 10_000, step_scale: 0.5, proposal: None, x0: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    /// All draws including burn-in, one per row.
    pub draws: DMatrix<f64>,
    /// Acceptance rate after burn-in.
    pub acceptance_rate: f64,
    pub burn_in: usize,
    pub step_scale: f64,
}

impl Chain {
    pub fn kept(&self) -> DMatrix<f64> {
        self.draws.rows(self.burn_in, self.draws.nrows() - self.burn_in).into_owned()
    }

    pub fn mean(&self) -> DVector<f64> {
        self.kept().row_mean().transpose()
    }

    /// Batch-means standard error of each coordinate's mean.
    pub fn mean_se(&self) -> DVector<f64> {
        let k = self.kept();
        DVector::from_fn(k.ncols(), |j, _| batch_means_se(k.column(j).as_slice()))
    }
}

/// `min(1, e^Δ)`.
pub fn mh_accept_prob(delta: f64) -> f64 {
    if delta >= 0.0 {
        1.0
    } else {
        delta.exp()
    }
}

/// Standard error of the mean from `⌊√n⌋` non-overlapping batches.
pub fn batch_means_se(xs: &[f64]) -> f64 {
    let n = xs.len();
    let b = (n as f64).sqrt().floor() as usize;
    let n_batches = n / b.max(1);
    if n_batches < 2 {
        return f64::NAN;
    }
    let means: Vec<f64> = (0..n_batches).map(|k| xs[k * b..(k + 1) * b].iter().sum::<f64>() / b as f64).collect();
    let m = means.iter().sum::<f64>() / n_batches as f64;
    let var = means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n_batches - 1) as f64;
    (var / n_batches as f64).sqrt()
}

/// Random-walk Metropolis. The scale is tuned every 100 burn-in steps toward
/// an acceptance rate in `[0.2, 0.4]` and frozen afterwards.
pub fn rwm_sample<F, R>(log_post: F, d: usize, cfg: &RwmConfig, rng: &mut R) -> Result<Chain>
where
    F: Fn(&DVector<f64>) -> f64,
    R: Rng + ?Sized,
{
    if cfg.n_draws < 1000 || cfg.burn_in >= cfg.n_draws {
        return Err(Error::Config("need n_draws ≥ 1000 and burn_in < n_draws".into()));
    }
    let mut x = cfg.x0.clone().unwrap_or_else(|| DVector::zeros(d));
    if x.len() != d {
        return Err(Error::DimMismatch { expected: d, got: x.len() });
    }
    let mut lp = log_post(&x);
    if !lp.is_finite() {
        return Err(Error::NonFiniteLogPost { value: lp });
    }
    let shape = cfg.proposal.clone().unwrap_or_else(|| DMatrix::identity(d, d));
    let mut scale = cfg.step_scale;
    let mut draws = DMatrix::zeros(cfg.n_draws, d);
    let (mut acc_window, mut acc_kept) = (0usize, 0usize);

    for i in 0..cfg.n_draws {
        let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let prop = &x + &shape * z * scale;
        let lp_prop = log_post(&prop);
        let u: f64 = rng.random();
        if lp_prop.is_finite() && u < mh_accept_prob(lp_prop - lp) {
            x = prop;
            lp = lp_prop;
            if i < cfg.burn_in {
                acc_window += 1;
            } else {
                acc_kept += 1;
            }
        }
        draws.set_row(i, &x.transpose());
        if i < cfg.burn_in && (i + 1) % 100 == 0 {
            let rate = acc_window as f64 / 100.0;
            if rate < 0.2 {
                scale *= 0.8;
            } else if rate > 0.4 {
                scale *= 1.25;
            }
            acc_window = 0;
        }
    }
    Ok(Chain {
        draws,
        acceptance_rate: acc_kept as f64 / (cfg.n_draws - cfg.burn_in) as f64,
        burn_in: cfg.burn_in,
        step_scale: scale,
    })
}
