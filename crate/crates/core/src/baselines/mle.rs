use nalgebra::DVector;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadConfig {
    /// Initial simplex edge, relative to `max(1, |x_i|)`.
    pub initial_step: f64,
    /// Stop once the simplex diameter falls below this.
    pub tol: f64,
    pub max_evals: usize,
    /// Fresh simplices built around the incumbent after convergence.
    pub restarts: usize,
}

impl Default for NelderMeadConfig {
    fn default() -> Self {
        Self { initial_step: 0.1, tol: 1e-8, max_evals: 10_000, restarts: 5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MleFit {
    pub theta: DVector<f64>,
    pub ll: f64,
    pub evals: usize,
    /// Best value after each restart, starting with the first run.
    pub history: Vec<f64>,
}

/// Minimizes `f` from `x0`. Returns the best vertex, its value and the
/// number of evaluations used.
pub fn nelder_mead<F>(f: F, x0: &DVector<f64>, cfg: &NelderMeadConfig) -> (DVector<f64>, f64, usize)
where
    F: Fn(&DVector<f64>) -> f64,
{
    let d = x0.len();
    let eval = |x: &DVector<f64>| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut simplex: Vec<(DVector<f64>, f64)> = Vec::with_capacity(d + 1);
    simplex.push((x0.clone(), eval(x0)));
    for i in 0..d {
        let mut x = x0.clone();
        x[i] += cfg.initial_step * x0[i].abs().max(1.0);
        let v = eval(&x);
        simplex.push((x, v));
    }
    let mut evals = d + 1;
    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);

    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let diameter = simplex
            .iter()
            .skip(1)
            .map(|(x, _)| (x - &simplex[0].0).amax())
            .fold(0.0, f64::max);
        if diameter < cfg.tol || evals >= cfg.max_evals {
            break;
        }
        let centroid = simplex[..d].iter().fold(DVector::zeros(d), |acc, (x, _)| acc + x) / d as f64;
        let worst = simplex[d].clone();
        let xr = &centroid + (&centroid - &worst.0) * alpha;
        let fr = eval(&xr);
        evals += 1;
        if fr < simplex[0].1 {
            let xe = &centroid + (&xr - &centroid) * gamma;
            let fe = eval(&xe);
            evals += 1;
            simplex[d] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[d - 1].1 {
            simplex[d] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < worst.1 {
            let xc = &centroid + (&xr - &centroid) * rho;
            let fc = eval(&xc);
            (xc, fc)
        } else {
            let xc = &centroid + (&worst.0 - &centroid) * rho;
            let fc = eval(&xc);
            (xc, fc)
        };
        evals += 1;
        if fc < fr.min(worst.1) {
            simplex[d] = (xc, fc);
            continue;
        }
        let best = simplex[0].0.clone();
        for v in simplex.iter_mut().skip(1) {
            v.0 = &best + (&v.0 - &best) * sigma;
            v.1 = eval(&v.0);
        }
        evals += d;
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, v) = simplex.swap_remove(0);
    (x, v, evals)
}

/// Maximizes `loglik` by Nelder–Mead with restarts around the incumbent.
pub fn mle_fit<F>(loglik: F, x0: &DVector<f64>, cfg: &NelderMeadConfig) -> Result<MleFit>
where
    F: Fn(&DVector<f64>) -> f64,
{
    let start = loglik(x0);
    if !start.is_finite() {
        return Err(Error::NonFiniteLoglik { theta: x0.iter().copied().collect(), value: start });
    }
    let neg = |x: &DVector<f64>| -loglik(x);
    let (mut x, mut v, mut evals) = nelder_mead(neg, x0, cfg);
    let mut history = vec![-v];
    for _ in 0..cfg.restarts {
        let (x2, v2, e2) = nelder_mead(neg, &x, cfg);
        evals += e2;
        let improved = v - v2;
        if v2 < v {
            x = x2;
            v = v2;
        }
        history.push(-v);
        if improved.abs() < 1e-10 {
            break;
        }
    }
    Ok(MleFit { theta: x, ll: -v, evals, history })
}
