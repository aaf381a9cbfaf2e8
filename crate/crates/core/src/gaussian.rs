//! Multivariate Gaussian variational family.
//!
//! The precision `S⁻¹` is the stored representation; the covariance is only
//! materialized through Cholesky solves. Natural parameters
//! `λ = (S⁻¹μ, −½S⁻¹)` and expectation parameters `m = (μ, S + μμᵀ)` are
//! derived views.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{cholesky, symmetrize, CovStructure, SymBlock};

#[derive(Debug, Clone)]
pub struct GaussianVariational {
    mu: DVector<f64>,
    prec: SymBlock,
    /// Cholesky factor of the precision (Full only).
    chol: Option<Cholesky<f64, Dyn>>,
}

/// Gradient of `log q(θ)` with respect to the expectation parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreGrad {
    pub g_m1: DVector<f64>,
    pub g_m2: SymBlock,
}

impl GaussianVariational {
    /// Builds a distribution from a mean and a precision block.
    ///
    /// Full precisions are symmetrized before the Cholesky check.
    pub fn new(mu: DVector<f64>, prec: SymBlock) -> Result<Self> {
        let d = mu.len();
        if d == 0 {
            return Err(Error::Config("dimension must be at least 1".into()));
        }
        if prec.dim() != d {
            return Err(Error::DimMismatch { expected: d, got: prec.dim() });
        }
        if mu.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("mean has non-finite entries".into()));
        }
        match prec {
            SymBlock::Full(m) => {
                let m = symmetrize(m);
                let chol = cholesky(&m)?;
                Ok(Self { mu, prec: SymBlock::Full(m), chol: Some(chol) })
            }
            SymBlock::Diagonal(p) => {
                if let Some((index, &value)) =
                    p.iter().enumerate().find(|(_, x)| !(x.is_finite() && **x > 0.0))
                {
                    return Err(Error::NotPositive { index, value });
                }
                Ok(Self { mu, prec: SymBlock::Diagonal(p), chol: None })
            }
        }
    }

    pub fn full(mu: DVector<f64>, prec: DMatrix<f64>) -> Result<Self> {
        Self::new(mu, SymBlock::Full(prec))
    }

    pub fn diagonal(mu: DVector<f64>, prec: DVector<f64>) -> Result<Self> {
        Self::new(mu, SymBlock::Diagonal(prec))
    }

    /// Zero mean, precision `tau * I`.
    pub fn isotropic(d: usize, tau: f64, structure: CovStructure) -> Result<Self> {
        Self::new(DVector::zeros(d), SymBlock::scaled_identity(structure, d, tau))
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn structure(&self) -> CovStructure {
        self.prec.structure()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn precision(&self) -> &SymBlock {
        &self.prec
    }

    /// Covariance `S`, via the Cholesky inverse in the full case.
    pub fn covariance(&self) -> SymBlock {
        match (&self.prec, &self.chol) {
            (SymBlock::Full(_), Some(c)) => SymBlock::Full(symmetrize(c.inverse())),
            (SymBlock::Diagonal(p), _) => SymBlock::Diagonal(p.map(|x| 1.0 / x)),
            _ => unreachable!("full precision always carries its factor"),
        }
    }

    /// Returns `S x`.
    pub fn solve(&self, x: &DVector<f64>) -> DVector<f64> {
        match (&self.prec, &self.chol) {
            (SymBlock::Full(_), Some(c)) => c.solve(x),
            (SymBlock::Diagonal(p), _) => x.component_div(p),
            _ => unreachable!(),
        }
    }

    pub fn log_det_precision(&self) -> f64 {
        match (&self.prec, &self.chol) {
            (SymBlock::Full(_), Some(c)) => 2.0 * c.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>(),
            (SymBlock::Diagonal(p), _) => p.iter().map(|x| x.ln()).sum(),
            _ => unreachable!(),
        }
    }

    /// `(λ₁, λ₂) = (S⁻¹μ, −½S⁻¹)`.
    pub fn common_to_natural(&self) -> (DVector<f64>, SymBlock) {
        (self.prec.mul_vec(&self.mu), self.prec.scale(-0.5))
    }

    /// Inverse of [`common_to_natural`](Self::common_to_natural).
    pub fn natural_to_common(lambda1: &DVector<f64>, lambda2: &SymBlock) -> Result<Self> {
        let prec = lambda2.scale(-2.0);
        match prec {
            SymBlock::Full(p) => {
                let p = symmetrize(p);
                let chol = cholesky(&p)?;
                let mu = chol.solve(lambda1);
                Ok(Self { mu, prec: SymBlock::Full(p), chol: Some(chol) })
            }
            SymBlock::Diagonal(p) => {
                if let Some((index, &value)) = p.iter().enumerate().find(|(_, x)| !(**x > 0.0)) {
                    return Err(Error::NotPositive { index, value });
                }
                let mu = lambda1.component_div(&p);
                Self::diagonal(mu, p)
            }
        }
    }

    /// `(m₁, m₂) = (μ, S + μμᵀ)`; diagonal storage keeps only `s + μ⊙μ`.
    pub fn expectation_params(&self) -> (DVector<f64>, SymBlock) {
        let m2 = match self.covariance() {
            SymBlock::Full(s) => SymBlock::Full(s + &self.mu * self.mu.transpose()),
            SymBlock::Diagonal(s) => SymBlock::Diagonal(s + self.mu.component_mul(&self.mu)),
        };
        (self.mu.clone(), m2)
    }

    /// One draw `μ + Rz` with `RRᵀ = S`; in the full case `R = L⁻ᵀ` for the
    /// precision factor `L`.
    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let d = self.dim();
        let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        match (&self.prec, &self.chol) {
            (SymBlock::Full(_), Some(c)) => {
                let x = c
                    .l()
                    .tr_solve_lower_triangular(&z)
                    .expect("Cholesky factor has a positive diagonal");
                &self.mu + x
            }
            (SymBlock::Diagonal(p), _) => {
                DVector::from_fn(d, |i, _| self.mu[i] + z[i] / p[i].sqrt())
            }
            _ => unreachable!(),
        }
    }

    /// `n` draws as the rows of an `n × d` matrix.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> DMatrix<f64> {
        let d = self.dim();
        let mut out = DMatrix::zeros(n, d);
        let root = self.chol.as_ref().map(|c| c.l());
        for s in 0..n {
            let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let x = match (&self.prec, &root) {
                (SymBlock::Full(_), Some(l)) => {
                    l.tr_solve_lower_triangular(&z).expect("positive diagonal")
                }
                (SymBlock::Diagonal(p), _) => z.component_div(&p.map(f64::sqrt)),
                _ => unreachable!(),
            };
            for j in 0..d {
                out[(s, j)] = self.mu[j] + x[j];
            }
        }
        out
    }

    pub fn log_density(&self, theta: &DVector<f64>) -> f64 {
        let d = self.dim() as f64;
        let r = theta - &self.mu;
        let quad = r.dot(&self.prec.mul_vec(&r));
        -0.5 * (d * (2.0 * PI).ln() - self.log_det_precision() + quad)
    }

    /// `v = S⁻¹(θ − μ)`.
    pub fn scaled_residual(&self, theta: &DVector<f64>) -> DVector<f64> {
        self.prec.mul_vec(&(theta - &self.mu))
    }

    /// Score with respect to the expectation parameters:
    /// `∇m₁ = S⁻¹θ − vvᵀμ`, `∇m₂ = −½(S⁻¹ − vvᵀ)`.
    pub fn score_m(&self, theta: &DVector<f64>) -> ScoreGrad {
        let v = self.scaled_residual(theta);
        match &self.prec {
            SymBlock::Full(p) => {
                let g_m1 = p * theta - &v * v.dot(&self.mu);
                let vvt = &v * v.transpose();
                let g_m2 = SymBlock::Full((p - vvt) * -0.5);
                ScoreGrad { g_m1, g_m2 }
            }
            SymBlock::Diagonal(p) => {
                let vv = v.component_mul(&v);
                let g_m1 = p.component_mul(theta) - vv.component_mul(&self.mu);
                let g_m2 = SymBlock::Diagonal((p - vv) * -0.5);
                ScoreGrad { g_m1, g_m2 }
            }
        }
    }
}

impl PartialEq for GaussianVariational {
    fn eq(&self, other: &Self) -> bool {
        self.mu == other.mu && self.prec == other.prec
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_spd(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        &a * a.transpose() + DMatrix::identity(d, d) * (d as f64) * 0.5
    }

    #[test]
    fn natural_params_identity_case() {
        let q = GaussianVariational::isotropic(2, 1.0, CovStructure::Full).unwrap();
        let (l1, l2) = q.common_to_natural();
        assert_eq!(l1, DVector::zeros(2));
        assert_eq!(l2, SymBlock::Full(DMatrix::identity(2, 2) * -0.5));
    }

    #[test]
    fn natural_params_forced_case() {
        // S = 2I => precision I/2.
        let q = GaussianVariational::full(
            DVector::from_vec(vec![2.0, 0.0]),
            DMatrix::identity(2, 2) * 0.5,
        )
        .unwrap();
        let (l1, l2) = q.common_to_natural();
        assert_eq!(l1, DVector::from_vec(vec![1.0, 0.0]));
        assert_eq!(l2, SymBlock::Full(DMatrix::identity(2, 2) * -0.25));
    }

    #[test]
    fn natural_to_common_identity_and_failure() {
        let q = GaussianVariational::natural_to_common(
            &DVector::zeros(2),
            &SymBlock::Full(DMatrix::identity(2, 2) * -0.5),
        )
        .unwrap();
        assert_eq!(q.mean(), &DVector::zeros(2));
        assert_eq!(q.covariance(), SymBlock::Full(DMatrix::identity(2, 2)));

        let bad = DMatrix::from_row_slice(2, 2, &[-0.5, 0.0, 0.0, 0.5]);
        assert!(matches!(
            GaussianVariational::natural_to_common(&DVector::zeros(2), &SymBlock::Full(bad)),
            Err(Error::NotSpd)
        ));
        assert!(matches!(
            GaussianVariational::natural_to_common(
                &DVector::zeros(2),
                &SymBlock::Diagonal(DVector::from_vec(vec![-0.5, 0.5]))
            ),
            Err(Error::NotPositive { index: 1, .. })
        ));
    }

    #[test]
    fn natural_round_trip_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for d in [3, 4] {
            let p = random_spd(d, &mut rng);
            let mu = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let q = GaussianVariational::full(mu, p).unwrap();
            let (l1, l2) = q.common_to_natural();
            let back = GaussianVariational::natural_to_common(&l1, &l2).unwrap();
            assert!((back.mean() - q.mean()).amax() < 1e-12);
            assert!(back.precision().max_abs_diff(q.precision()) < 1e-12);
        }
    }

    #[test]
    fn expectation_params_examples() {
        let q = GaussianVariational::isotropic(2, 1.0, CovStructure::Full).unwrap();
        let (m1, m2) = q.expectation_params();
        assert_eq!(m1, DVector::zeros(2));
        assert!(m2.max_abs_diff(&SymBlock::Full(DMatrix::identity(2, 2))) < 1e-15);

        let q = GaussianVariational::full(DVector::from_vec(vec![1.0, 1.0]), DMatrix::identity(2, 2))
            .unwrap();
        let (_, m2) = q.expectation_params();
        let want = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        assert!(m2.max_abs_diff(&SymBlock::Full(want)) < 1e-15);
    }

    #[test]
    fn expectation_params_reconstruct_spd_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = random_spd(4, &mut rng);
        let mu = DVector::from_fn(4, |_, _| rng.sample::<f64, _>(StandardNormal));
        let q = GaussianVariational::full(mu.clone(), p).unwrap();
        let (_, m2) = q.expectation_params();
        let s = m2.to_dense() - &mu * mu.transpose();
        assert!(Cholesky::new(symmetrize(s)).is_some());
    }

    #[test]
    fn log_density_constants() {
        let q = GaussianVariational::isotropic(1, 1.0, CovStructure::Diagonal).unwrap();
        assert!((q.log_density(&DVector::zeros(1)) + 0.918_938_533_204_672_7).abs() < 1e-14);
        let q = GaussianVariational::full(DVector::from_vec(vec![0.3, -1.0]), DMatrix::identity(2, 2))
            .unwrap();
        let lp = q.log_density(&DVector::from_vec(vec![0.3, -1.0]));
        assert!((lp + (2.0 * PI).ln()).abs() < 1e-14);
    }

    #[test]
    fn log_density_integrates_to_one() {
        // Midpoint rule on a box of ±7 standard deviations, d = 3.
        let p = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.0, 0.3, 1.0, 0.2, 0.0, 0.2, 1.5]);
        let q = GaussianVariational::full(DVector::from_vec(vec![0.5, -0.2, 0.1]), p).unwrap();
        let sd = q.covariance().diagonal().map(f64::sqrt);
        let m = 60;
        let mut total = 0.0;
        let mut cell = 1.0;
        for k in 0..3 {
            cell *= 14.0 * sd[k] / m as f64;
        }
        for i in 0..m {
            for j in 0..m {
                for k in 0..m {
                    let idx = [i, j, k];
                    let th = DVector::from_fn(3, |c, _| {
                        q.mean()[c] - 7.0 * sd[c] + (idx[c] as f64 + 0.5) * 14.0 * sd[c] / m as f64
                    });
                    total += q.log_density(&th).exp();
                }
            }
        }
        assert!((total * cell - 1.0).abs() < 1e-3, "integral {}", total * cell);
    }

    #[test]
    fn sample_is_deterministic_for_a_seed() {
        let q = GaussianVariational::full(
            DVector::from_vec(vec![1.0, 2.0]),
            DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
        )
        .unwrap();
        let a = q.sample(20, &mut ChaCha8Rng::seed_from_u64(3));
        let b = q.sample(20, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let first = q.sample_one(&mut rng);
        assert_eq!(first.transpose(), a.row(0).into_owned());
    }

    #[test]
    fn sample_moments_match() {
        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = GaussianVariational::isotropic(3, 1.0, CovStructure::Full).unwrap();
        let x = q.sample(n, &mut rng);
        for j in 0..3 {
            let m = x.column(j).mean();
            assert!(m.abs() < 3.0 / (n as f64).sqrt(), "mean {m}");
        }

        // Correlation 0.8, unit variances.
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.8, 0.8, 1.0]);
        let p = s.clone().try_inverse().unwrap();
        let q = GaussianVariational::full(DVector::zeros(2), p).unwrap();
        let x = q.sample(n, &mut rng);
        for a in 0..2 {
            for b in 0..2 {
                let prod: Vec<f64> = (0..n).map(|i| x[(i, a)] * x[(i, b)]).collect();
                let mean = prod.iter().sum::<f64>() / n as f64;
                let var = prod.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
                let se = (var / n as f64).sqrt();
                assert!((mean - s[(a, b)]).abs() < 3.0 * se, "cov[{a},{b}] = {mean}");
            }
        }
    }

    #[test]
    fn score_examples() {
        let q = GaussianVariational::isotropic(2, 1.0, CovStructure::Full).unwrap();
        let g = q.score_m(&DVector::zeros(2));
        assert_eq!(g.g_m1, DVector::zeros(2));
        assert_eq!(g.g_m2, SymBlock::Full(DMatrix::identity(2, 2) * -0.5));

        let q = GaussianVariational::isotropic(1, 1.0, CovStructure::Diagonal).unwrap();
        let g = q.score_m(&DVector::from_vec(vec![2.0]));
        assert_eq!(g.g_m1[0], 2.0);
        assert_eq!(g.g_m2, SymBlock::Diagonal(DVector::from_vec(vec![1.5])));
    }

    #[test]
    fn diagonal_score_matches_full_score_on_diagonal_precision() {
        let mu = DVector::from_vec(vec![0.4, -1.2, 2.0]);
        let p = DVector::from_vec(vec![0.5, 2.0, 3.0]);
        let qd = GaussianVariational::diagonal(mu.clone(), p.clone()).unwrap();
        let qf = GaussianVariational::full(mu, DMatrix::from_diagonal(&p)).unwrap();
        let th = DVector::from_vec(vec![1.0, 0.3, -0.7]);
        let gd = qd.score_m(&th);
        let gf = qf.score_m(&th);
        // m1 differs: the diagonal family drops the cross terms of vvᵀμ.
        let v = qd.scaled_residual(&th);
        for i in 0..3 {
            let want = qd.precision().diagonal()[i] * th[i] - v[i] * v[i] * qd.mean()[i];
            assert!((gd.g_m1[i] - want).abs() < 1e-14);
        }
        assert!((gd.g_m2.diagonal() - gf.g_m2.diagonal()).amax() < 1e-14);
        assert!((qd.log_density(&th) - qf.log_density(&th)).abs() < 1e-13);
    }

    /// `log N(θ; μ, S)` taking the covariance directly (entries treated as free).
    fn log_density_cov(mu: &DVector<f64>, s: &DMatrix<f64>, theta: &DVector<f64>) -> f64 {
        let d = mu.len() as f64;
        let r = theta - mu;
        let lu = s.clone().lu();
        let quad = r.dot(&lu.solve(&r).unwrap());
        -0.5 * (d * (2.0 * PI).ln() + lu.determinant().ln() + quad)
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-3)
    }

    #[test]
    fn score_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let d = 3;
        let prec = random_spd(d, &mut rng);
        let mu = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let q = GaussianVariational::full(mu.clone(), prec).unwrap();
        let s = q.covariance().to_dense();
        let theta = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));

        let grad_mu = DVector::from_fn(d, |i, _| {
            let h = 1e-5 * mu[i].abs().max(1.0);
            let (mut up, mut dn) = (mu.clone(), mu.clone());
            up[i] += h;
            dn[i] -= h;
            (log_density_cov(&up, &s, &theta) - log_density_cov(&dn, &s, &theta)) / (2.0 * h)
        });
        let grad_s = DMatrix::from_fn(d, d, |i, j| {
            let h = 1e-5 * s[(i, j)].abs().max(1.0);
            let (mut up, mut dn) = (s.clone(), s.clone());
            up[(i, j)] += h;
            dn[(i, j)] -= h;
            (log_density_cov(&mu, &up, &theta) - log_density_cov(&mu, &dn, &theta)) / (2.0 * h)
        });
        let g = q.score_m(&theta);
        let want_m1 = &grad_mu - &grad_s * &mu * 2.0;
        for i in 0..d {
            assert!(rel_err(g.g_m1[i], want_m1[i]) < 1e-5, "m1[{i}]");
        }
        let gm2 = g.g_m2.to_dense();
        for i in 0..d {
            for j in 0..d {
                assert!(rel_err(gm2[(i, j)], grad_s[(i, j)]) < 1e-5, "m2[{i},{j}]");
            }
        }
        // Mean gradient is v itself.
        assert!((q.scaled_residual(&theta) - &grad_mu).amax() < 1e-6);
    }

    /// Sufficient statistics of the minimal bivariate family, ordered as
    /// `(θ₁, θ₂, θ₁², 2θ₁θ₂, θ₂²)`.
    fn suff_stats(t: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![t[0], t[1], t[0] * t[0], 2.0 * t[0] * t[1], t[1] * t[1]])
    }

    /// `E[T]` as a function of the minimal natural parameters
    /// `(λ₁, λ₂₁₁, λ₂₁₂, λ₂₂₂)`.
    fn mean_stats(eta: &DVector<f64>) -> DVector<f64> {
        let l2 = DMatrix::from_row_slice(2, 2, &[eta[2], eta[3], eta[3], eta[4]]);
        let s = (l2 * -2.0).try_inverse().unwrap();
        let mu = &s * DVector::from_vec(vec![eta[0], eta[1]]);
        DVector::from_vec(vec![
            mu[0],
            mu[1],
            s[(0, 0)] + mu[0] * mu[0],
            2.0 * (s[(0, 1)] + mu[0] * mu[1]),
            s[(1, 1)] + mu[1] * mu[1],
        ])
    }

    #[test]
    fn natural_gradient_equals_expectation_gradient() {
        let prec = DMatrix::from_row_slice(2, 2, &[1.7, 0.6, 0.6, 0.9]);
        let mu = DVector::from_vec(vec![0.4, -1.2]);
        let q = GaussianVariational::full(mu, prec).unwrap();
        let (l1, l2) = q.common_to_natural();
        let l2 = l2.to_dense();
        let eta = DVector::from_vec(vec![l1[0], l1[1], l2[(0, 0)], l2[(0, 1)], l2[(1, 1)]]);

        // Fisher information as the Jacobian of E[T] in λ.
        let mut fim = DMatrix::zeros(5, 5);
        for k in 0..5 {
            let h = 1e-5 * eta[k].abs().max(1.0);
            let (mut up, mut dn) = (eta.clone(), eta.clone());
            up[k] += h;
            dn[k] -= h;
            fim.set_column(k, &((mean_stats(&up) - mean_stats(&dn)) / (2.0 * h)));
        }
        let m = mean_stats(&eta);
        for theta in [vec![0.0, 0.0], vec![1.5, -0.3], vec![-2.0, 2.5]] {
            let theta = DVector::from_vec(theta);
            let nat = fim.clone().lu().solve(&(suff_stats(&theta) - &m)).unwrap();
            let g = q.score_m(&theta);
            let gm2 = g.g_m2.to_dense();
            let mapped = [g.g_m1[0], g.g_m1[1], gm2[(0, 0)], gm2[(0, 1)], gm2[(1, 1)]];
            for k in 0..5 {
                assert!(rel_err(nat[k], mapped[k]) < 1e-4, "component {k}: {} vs {}", nat[k], mapped[k]);
            }
        }
    }

    #[test]
    fn score_has_zero_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let prec = random_spd(3, &mut rng);
        let mu = DVector::from_vec(vec![0.5, -0.2, 1.0]);
        let qs = [
            GaussianVariational::full(mu.clone(), prec.clone()).unwrap(),
            GaussianVariational::diagonal(mu, prec.diagonal()).unwrap(),
        ];
        let n = 100_000;
        for q in &qs {
            let draws = q.sample(n, &mut rng);
            let k = q.dim() + q.precision().flat_len();
            let mut sum = vec![0.0; k];
            let mut sum2 = vec![0.0; k];
            for s in 0..n {
                let g = q.score_m(&draws.row(s).transpose());
                let flat: Vec<f64> = g.g_m1.iter().copied().chain(g.g_m2.to_flat()).collect();
                for (c, x) in flat.iter().enumerate() {
                    sum[c] += x;
                    sum2[c] += x * x;
                }
            }
            for c in 0..k {
                let m = sum[c] / n as f64;
                let se = ((sum2[c] / n as f64 - m * m) / n as f64).sqrt();
                assert!(m.abs() < 3.0 * se, "{:?} component {c}: {m} vs {se}", q.structure());
            }
        }
    }
}
