//! File-level plumbing around the `qbvi` library: CSV ingestion, splitting,
//! running a fit with optional baselines, and writing `result.json`,
//! `trace.csv` and `metrics.csv`.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use qbvi::baselines::{metrics_classification, metrics_regression, mle_fit, rwm_sample, NelderMeadConfig, RwmConfig};
use qbvi::inverse_gamma::ig_log_density;
use qbvi::models::{garch_loglik, gaussian_reg_loglik, har_features, linear_preds, logistic_loglik, logistic_probs, Garch, LinearRegression, LogisticRegression};
use qbvi::trainer::{constrained_mean, fit_mean_field, fit_with_observer};
use qbvi::{CovStructure, Dataset, FitResult, GaussianVariational, IGParams, Model, PdStrategy, PriorSpec, SymBlock, TrainConfig};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },

    #[error("parse error at row {row}, col {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },

    #[error("{0}")]
    Spec(String),

    #[error(transparent)]
    Core(#[from] qbvi::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Offsets added to the run seed for the randomness outside the fit itself.
pub const MCMC_SEED_OFFSET: u64 = 1;
pub const TRANSFORM_SEED_OFFSET: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Logistic,
    Linreg,
    Har,
    Garch,
}

impl Task {
    /// Time-series tasks are split chronologically.
    pub fn is_time_series(self) -> bool {
        matches!(self, Task::Har | Task::Garch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Plain,
    Bounded,
    Log,
    Retraction,
}

/// Hyperparameters as given on the command line. The prior and initial
/// factor are built once the parameter dimension is known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub beta: f64,
    pub t_prime: usize,
    pub patience: usize,
    pub window: usize,
    pub momentum: f64,
    pub clip_norm: f64,
    /// Prior precision of the isotropic Gaussian prior.
    pub tau: f64,
    pub n_samples: usize,
    pub max_iters: usize,
    pub batch_size: Option<usize>,
    /// Retraction for full and the bounded step for diagonal covariance
    /// when `None`.
    pub pd_strategy: Option<Strategy>,
    /// `δ` of the bounded step.
    pub delta: f64,
    pub cv: bool,
    pub seed: u64,
    pub diagonal: bool,
    /// Precision of the starting factor; the prior's when `None`.
    pub init_precision: Option<f64>,
    /// Prior `(α₀, β₀)` of the noise variance for regression tasks.
    pub ig_prior: (f64, f64),
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            beta: 0.1,
            t_prime: 800,
            patience: 500,
            window: 30,
            momentum: 0.4,
            clip_norm: 1000.0,
            tau: 0.2,
            n_samples: 100,
            max_iters: 1000,
            batch_size: None,
            pd_strategy: None,
            delta: 0.5,
            cv: true,
            seed: 0,
            diagonal: false,
            init_precision: Some(10.0),
            ig_prior: (3.0, 1.0),
        }
    }
}

impl RunConfig {
    pub fn structure(&self) -> CovStructure {
        if self.diagonal {
            CovStructure::Diagonal
        } else {
            CovStructure::Full
        }
    }

    pub fn strategy(&self) -> PdStrategy {
        let default = if self.diagonal { Strategy::Bounded } else { Strategy::Retraction };
        match self.pd_strategy.unwrap_or(default) {
            Strategy::Plain => PdStrategy::Plain,
            Strategy::Bounded => PdStrategy::BoundedStep { beta0: self.beta, delta: self.delta },
            Strategy::Log => PdStrategy::LogTransform,
            Strategy::Retraction => PdStrategy::Retraction,
        }
    }

    /// Trainer configuration for `d` parameters, starting at `init_mean`
    /// (zero when `None`).
    pub fn train_config(&self, d: usize, init_mean: Option<DVector<f64>>) -> Result<TrainConfig> {
        let structure = self.structure();
        let mut cfg = TrainConfig::new(d, structure);
        cfg.beta = self.beta;
        cfg.t_prime = self.t_prime;
        cfg.patience = self.patience;
        cfg.window = self.window;
        cfg.momentum = self.momentum;
        cfg.clip_norm = self.clip_norm;
        cfg.n_samples = self.n_samples;
        cfg.max_iters = self.max_iters;
        cfg.batch_size = self.batch_size;
        cfg.seed = self.seed;
        cfg.pd_strategy = self.strategy();
        cfg.cv_enabled = self.cv;
        cfg.prior = PriorSpec::isotropic(d, self.tau, structure)?;
        if init_mean.is_some() || self.init_precision.is_some() {
            let prec = self.init_precision.unwrap_or(self.tau);
            let mu = init_mean.unwrap_or_else(|| DVector::zeros(d));
            cfg.init = Some(GaussianVariational::new(mu, SymBlock::scaled_identity(structure, d, prec))?);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Compare {
    pub mcmc: bool,
    pub mle: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub task: Task,
    pub data_path: PathBuf,
    pub has_header: bool,
    /// Training fraction in `(0, 1)`.
    pub split: f64,
    pub config: RunConfig,
    pub output_dir: PathBuf,
    pub compare: Compare,
    /// MCMC chain length when `compare.mcmc` is set.
    pub mcmc_draws: usize,
}

/// Reads a numeric CSV; the last column is the target and the rest are
/// covariates. Rows and columns in errors are 1-based file positions.
pub fn load_csv(path: &Path, has_header: bool) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(has_header).trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut values = Vec::new();
    let mut width = None;
    let mut n = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let row = e.position().map_or(0, |p| p.line() as usize);
            CliError::Parse { row, col: 0, msg: e.to_string() }
        })?;
        let row = rec.position().map_or(n + 1, |p| p.line() as usize);
        if *width.get_or_insert(rec.len()) != rec.len() {
            return Err(CliError::Parse { row, col: rec.len(), msg: "ragged row".into() });
        }
        for (j, cell) in rec.iter().enumerate() {
            let col = j + 1;
            if cell.is_empty() {
                return Err(CliError::Parse { row, col, msg: "empty cell".into() });
            }
            let v: f64 = cell.parse().map_err(|_| CliError::Parse { row, col, msg: format!("not a number: {cell:?}") })?;
            if !v.is_finite() {
                return Err(CliError::Parse { row, col, msg: format!("non-finite value {cell:?}") });
            }
            values.push(v);
        }
        n += 1;
    }
    let w = match width {
        Some(w) if n > 0 => w,
        _ => return Err(CliError::Spec(format!("{} has no data rows", path.display()))),
    };
    let all = DMatrix::from_row_slice(n, w, &values);
    let x = all.columns(0, w - 1).into_owned();
    let y = all.column(w - 1).into_owned();
    Ok(Dataset::new(x, y)?)
}

/// Row indices of the training and test parts: `⌈frac·n⌉` training rows,
/// taken in order for time series and after a seeded shuffle otherwise.
pub fn split_indices(n: usize, frac: f64, chronological: bool, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(frac > 0.0 && frac < 1.0) {
        return Err(CliError::Spec(format!("split fraction must lie in (0, 1), got {frac}")));
    }
    // Guard against products like 0.7·10 = 7.000000000000001.
    let n_train = ((frac * n as f64) - 1e-9).ceil() as usize;
    if n_train == 0 || n_train >= n {
        return Err(CliError::Spec(format!("splitting {n} rows at {frac} leaves an empty part")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    if !chronological {
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let test = idx.split_off(n_train);
    Ok((idx, test))
}

pub fn split_data(data: &Dataset, frac: f64, chronological: bool, seed: u64) -> Result<(Dataset, Dataset)> {
    let (tr, te) = split_indices(data.n(), frac, chronological, seed)?;
    Ok((data.rows(&tr), data.rows(&te)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IgJson {
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub fit: u64,
    pub mcmc: u64,
    pub transform: u64,
}

/// Contents of `result.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultFile {
    pub task: Option<Task>,
    pub dim: usize,
    /// `"full"` or `"diagonal"`.
    pub structure: String,
    pub mu: Vec<f64>,
    /// Row-major `S⁻¹` when full, the diagonal `s⁻¹` otherwise.
    pub precision: Vec<f64>,
    pub ig: Option<IgJson>,
    pub best_iter: usize,
    pub iterations: usize,
    pub exit_reason: String,
    /// Monte Carlo posterior mean of the constrained parameters.
    pub constrained_mean: Option<Vec<f64>>,
    pub config: RunConfig,
    pub seeds: Seeds,
}

impl ResultFile {
    pub fn posterior(&self) -> Result<GaussianVariational> {
        let d = self.dim;
        let mu = DVector::from_vec(self.mu.clone());
        let prec = match self.structure.as_str() {
            "full" => SymBlock::Full(DMatrix::from_row_slice(d, d, &self.precision)),
            "diagonal" => SymBlock::Diagonal(DVector::from_vec(self.precision.clone())),
            s => return Err(CliError::Spec(format!("unknown structure {s:?}"))),
        };
        Ok(GaussianVariational::new(mu, prec)?)
    }

    pub fn ig_params(&self) -> Result<Option<IGParams>> {
        Ok(match &self.ig {
            Some(p) => Some(IGParams::new(p.alpha, p.beta)?),
            None => None,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn from_fit(fit: &FitResult, config: &RunConfig, task: Option<Task>) -> Self {
        let q = &fit.best_q;
        let (structure, precision) = match q.precision() {
            SymBlock::Full(m) => ("full", m.transpose().as_slice().to_vec()),
            SymBlock::Diagonal(v) => ("diagonal", v.as_slice().to_vec()),
        };
        ResultFile {
            task,
            dim: q.dim(),
            structure: structure.into(),
            mu: q.mean().as_slice().to_vec(),
            precision,
            ig: fit.best_ig.map(|p| IgJson { alpha: p.alpha, beta: p.beta }),
            best_iter: fit.best_iter,
            iterations: fit.trace.len(),
            exit_reason: fit.exit_reason.as_str().into(),
            constrained_mean: None,
            config: config.clone(),
            seeds: Seeds {
                fit: config.seed,
                mcmc: config.seed.wrapping_add(MCMC_SEED_OFFSET),
                transform: config.seed.wrapping_add(TRANSFORM_SEED_OFFSET),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceLine {
    pub iter: usize,
    pub lb_raw: f64,
    pub lb_smoothed: f64,
    pub train_ll: f64,
    pub test_ll: f64,
}

/// Metric table: one row per metric, one column per method and split.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsTable {
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<f64>)>,
}

impl MetricsTable {
    fn with_metrics(names: &[&str]) -> Self {
        Self { columns: Vec::new(), rows: names.iter().map(|n| (n.to_string(), Vec::new())).collect() }
    }

    fn push_column(&mut self, name: String, values: &[f64]) {
        self.columns.push(name);
        for (row, v) in self.rows.iter_mut().zip(values) {
            row.1.push(*v);
        }
    }

    pub fn get(&self, metric: &str, column: &str) -> Option<f64> {
        let j = self.columns.iter().position(|c| c == column)?;
        self.rows.iter().find(|r| r.0 == metric).map(|r| r.1[j])
    }
}

pub fn write_trace(path: &Path, trace: &[TraceLine]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iter", "lb_raw", "lb_smoothed", "train_ll", "test_ll"])?;
    for t in trace {
        w.write_record([t.iter.to_string(), t.lb_raw.to_string(), t.lb_smoothed.to_string(), t.train_ll.to_string(), t.test_ll.to_string()])?;
    }
    w.flush().map_err(|source| CliError::Write { path: path.to_path_buf(), source })?;
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceLine>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec.position().map_or(0, |p| p.line() as usize);
        let num = |j: usize| -> Result<f64> {
            rec[j].parse().map_err(|_| CliError::Parse { row, col: j + 1, msg: format!("not a number: {:?}", &rec[j]) })
        };
        out.push(TraceLine { iter: num(0)? as usize, lb_raw: num(1)?, lb_smoothed: num(2)?, train_ll: num(3)?, test_ll: num(4)? });
    }
    Ok(out)
}

pub fn write_metrics(path: &Path, table: &MetricsTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["metric".to_string()];
    header.extend(table.columns.iter().cloned());
    w.write_record(&header)?;
    for (name, vals) in &table.rows {
        let mut rec = vec![name.clone()];
        rec.extend(vals.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|source| CliError::Write { path: path.to_path_buf(), source })?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<MetricsTable> {
    let mut r = csv::Reader::from_path(path)?;
    let columns = r.headers()?.iter().skip(1).map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec.position().map_or(0, |p| p.line() as usize);
        let vals = rec
            .iter()
            .enumerate()
            .skip(1)
            .map(|(j, c)| c.parse().map_err(|_| CliError::Parse { row, col: j + 1, msg: format!("not a number: {c:?}") }))
            .collect::<Result<Vec<f64>>>()?;
        rows.push((rec[0].to_string(), vals));
    }
    Ok(MetricsTable { columns, rows })
}

/// Writes `result.json`, `trace.csv` and `metrics.csv` into `dir`.
pub fn write_outputs(dir: &Path, result: &ResultFile, trace: &[TraceLine], metrics: &MetricsTable) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| CliError::Write { path: dir.to_path_buf(), source })?;
    let json = serde_json::to_string_pretty(result)?;
    let p = dir.join("result.json");
    fs::write(&p, json + "\n").map_err(|source| CliError::Write { path: p, source })?;
    write_trace(&dir.join("trace.csv"), trace)?;
    write_metrics(&dir.join("metrics.csv"), metrics)
}

/// Point estimate of the noise variance under `IG(α, β)`: the mean when it
/// exists, the mode otherwise.
pub fn ig_point(p: IGParams) -> f64 {
    p.mean().unwrap_or(p.beta / (p.alpha + 1.0))
}

/// Fits `model` and records the plug-in train/test log-likelihood at the
/// current mean alongside the lower bound.
pub fn fit_traced<M, F, G>(model: &M, cfg: &TrainConfig, train_ll: F, test_ll: G) -> Result<(FitResult, Vec<TraceLine>)>
where
    M: Model + ?Sized,
    F: Fn(&DVector<f64>, Option<f64>) -> f64,
    G: Fn(&DVector<f64>, Option<f64>) -> f64,
{
    let mut trace = Vec::new();
    let fit = fit_with_observer(model, cfg, &mut |t, q, _, lb, sm| {
        trace.push(TraceLine { iter: t, lb_raw: lb, lb_smoothed: sm, train_ll: train_ll(q.mean(), None), test_ll: test_ll(q.mean(), None) });
    })?;
    Ok((fit, trace))
}

struct Outcome {
    fit: FitResult,
    trace: Vec<TraceLine>,
    metrics: MetricsTable,
    constrained: Option<Vec<f64>>,
}

fn mcmc_config(draws: usize, center: DVector<f64>, cov: &DMatrix<f64>) -> RwmConfig {
    let d = center.len();
    let n_draws = draws.max(1000);
    RwmConfig {
        n_draws,
        burn_in: n_draws / 5,
        step_scale: 2.38 / (d as f64).sqrt(),
        proposal: nalgebra::Cholesky::new(cov.clone()).map(|c| c.l()),
        x0: Some(center),
    }
}

fn mcmc_rng(cfg: &RunConfig) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(MCMC_SEED_OFFSET))
}

fn run_logistic(spec: &RunSpec, data: Dataset) -> Result<Outcome> {
    let data = Dataset::with_intercept(data.x, data.y)?;
    let (train, test) = split_data(&data, spec.split, false, spec.config.seed)?;
    let model = LogisticRegression::new(train.clone())?;
    test.check_binary()?;
    let d = train.p();
    let cfg = spec.config.train_config(d, None)?;
    let ll = |data: &Dataset| {
        let data = data.clone();
        move |th: &DVector<f64>, _: Option<f64>| logistic_loglik(th, &data).unwrap_or(f64::NAN)
    };
    let (fit, trace) = fit_traced(&model, &cfg, ll(&train), ll(&test))?;

    let names = ["accuracy", "precision", "recall", "f1", "ll"];
    let mut metrics = MetricsTable::with_metrics(&names);
    let mut add = |method: &str, theta: &DVector<f64>| {
        for (split, ds) in [("train", &train), ("test", &test)] {
            let m = metrics_classification(&logistic_probs(theta, ds), &ds.y);
            metrics.push_column(format!("{method}_{split}"), &[m.accuracy, m.precision, m.recall, m.f1, m.ll]);
        }
    };
    add("qbvi", fit.best_q.mean());
    if spec.compare.mle {
        let mle = mle_fit(|th| logistic_loglik(th, &train).unwrap_or(f64::NEG_INFINITY), &DVector::zeros(d), &NelderMeadConfig::default())?;
        add("mle", &mle.theta);
    }
    if spec.compare.mcmc {
        let prior = cfg.prior.clone();
        let post = |th: &DVector<f64>| prior.log_density(th) + model.log_lik(th);
        let rc = mcmc_config(spec.mcmc_draws, fit.best_q.mean().clone(), &fit.best_q.covariance().to_dense());
        let chain = rwm_sample(post, d, &rc, &mut mcmc_rng(&spec.config))?;
        add("mcmc", &chain.mean());
    }
    Ok(Outcome { fit, trace, metrics, constrained: None })
}

/// Shared path of the two linear-regression tasks with unknown noise.
fn run_regression(spec: &RunSpec, train: Dataset, test: Dataset) -> Result<Outcome> {
    let d = train.p();
    let cfg = spec.config.train_config(d, None)?;
    let (a0, b0) = spec.config.ig_prior;
    let prior_v = IGParams::new(a0, b0)?;
    let model = LinearRegression::unknown_noise(train.clone());
    let ll = |ds: &Dataset, th: &DVector<f64>, s2: f64| gaussian_reg_loglik(th, s2, ds).unwrap_or(f64::NAN);
    let mut trace = Vec::new();
    let fit = fit_mean_field(&model, &cfg, prior_v, None, &mut |t, q, v, lb, sm| {
        let s2 = v.map_or(f64::NAN, ig_point);
        trace.push(TraceLine { iter: t, lb_raw: lb, lb_smoothed: sm, train_ll: ll(&train, q.mean(), s2), test_ll: ll(&test, q.mean(), s2) });
    })?;

    let mut metrics = MetricsTable::with_metrics(&["mse", "ll"]);
    let mut add = |method: &str, theta: &DVector<f64>, s2: f64| {
        for (split, ds) in [("train", &train), ("test", &test)] {
            let m = metrics_regression(&linear_preds(theta, ds), &ds.y, s2);
            metrics.push_column(format!("{method}_{split}"), &[m.mse, m.ll]);
        }
    };
    let v = fit.best_ig.expect("mean-field fit carries an IG factor");
    add("qbvi", fit.best_q.mean(), ig_point(v));

    // Baselines work on (θ, log σ²).
    let unpack = |x: &DVector<f64>| (x.rows(0, d).into_owned(), x[d].exp());
    let var_y = {
        let m = train.y.mean();
        train.y.iter().map(|y| (y - m).powi(2)).sum::<f64>() / train.n() as f64
    };
    if spec.compare.mle {
        let mut x0 = DVector::zeros(d + 1);
        x0[d] = var_y.max(1e-12).ln();
        let f = |x: &DVector<f64>| {
            let (th, s2) = unpack(x);
            gaussian_reg_loglik(&th, s2, &train).unwrap_or(f64::NEG_INFINITY)
        };
        let mle = mle_fit(f, &x0, &NelderMeadConfig::default())?;
        let (th, s2) = unpack(&mle.theta);
        add("mle", &th, s2);
    }
    if spec.compare.mcmc {
        let prior = cfg.prior.clone();
        let post = |x: &DVector<f64>| {
            let (th, s2) = unpack(x);
            let lv = ig_log_density(s2, prior_v).unwrap_or(f64::NEG_INFINITY);
            prior.log_density(&th) + lv + x[d] + gaussian_reg_loglik(&th, s2, &train).unwrap_or(f64::NEG_INFINITY)
        };
        let mut center = DVector::zeros(d + 1);
        center.rows_mut(0, d).copy_from(fit.best_q.mean());
        center[d] = ig_point(v).ln();
        let mut cov = DMatrix::zeros(d + 1, d + 1);
        cov.view_mut((0, 0), (d, d)).copy_from(&fit.best_q.covariance().to_dense());
        // Var(log σ²) under IG(α, β) is trigamma(α) ≈ 1/α for moderate α.
        cov[(d, d)] = 1.0 / v.alpha;
        let rc = mcmc_config(spec.mcmc_draws, center, &cov);
        let chain = rwm_sample(post, d + 1, &rc, &mut mcmc_rng(&spec.config))?;
        let kept = chain.kept();
        let th = chain.mean().rows(0, d).into_owned();
        let s2 = kept.column(d).iter().map(|l| l.exp()).sum::<f64>() / kept.nrows() as f64;
        add("mcmc", &th, s2);
    }
    Ok(Outcome { fit, trace, metrics, constrained: None })
}

/// Unconstrained GARCH start from the sample variance: `ω = 0.05·var`,
/// `α = 0.05`, `β = 0.9`.
pub fn garch_start(returns: &[f64]) -> DVector<f64> {
    let n = returns.len() as f64;
    let m = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - m).powi(2)).sum::<f64>() / (n - 1.0);
    let logit = |p: f64| (p / (1.0 - p)).ln();
    let (w, a, b) = (0.05 * var, 0.05, 0.9);
    DVector::from_vec(vec![logit(w.min(0.5)), logit(a + b), logit(b / (a + b))])
}

fn run_garch(spec: &RunSpec, series: Vec<f64>) -> Result<Outcome> {
    let (tr, te) = split_indices(series.len(), spec.split, true, spec.config.seed)?;
    let train: Vec<f64> = tr.iter().map(|&i| series[i]).collect();
    let test: Vec<f64> = te.iter().map(|&i| series[i]).collect();
    let model = Garch::new(train.clone())?;
    let x0 = garch_start(&train);
    let cfg = spec.config.train_config(3, Some(x0.clone()))?;
    let ll = |r: &[f64]| {
        let r = r.to_vec();
        move |th: &DVector<f64>, _: Option<f64>| garch_loglik(th, &r).unwrap_or(f64::NAN)
    };
    let (fit, trace) = fit_traced(&model, &cfg, ll(&train), ll(&test))?;

    let mut metrics = MetricsTable::with_metrics(&["ll"]);
    let mut add = |method: &str, th: &DVector<f64>| {
        for (split, r) in [("train", &train), ("test", &test)] {
            metrics.push_column(format!("{method}_{split}"), &[garch_loglik(th, r).unwrap_or(f64::NAN)]);
        }
    };
    add("qbvi", fit.best_q.mean());
    if spec.compare.mle {
        let mle = mle_fit(|th| model.log_lik(th), &x0, &NelderMeadConfig::default())?;
        add("mle", &mle.theta);
    }
    if spec.compare.mcmc {
        let prior = cfg.prior.clone();
        let post = |th: &DVector<f64>| prior.log_density(th) + model.log_lik(th);
        let rc = mcmc_config(spec.mcmc_draws, fit.best_q.mean().clone(), &fit.best_q.covariance().to_dense());
        let chain = rwm_sample(post, 3, &rc, &mut mcmc_rng(&spec.config))?;
        add("mcmc", &chain.mean());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.config.seed.wrapping_add(TRANSFORM_SEED_OFFSET));
    let cm = constrained_mean(&fit.best_q, &model.transforms(), 10_000, &mut rng);
    Ok(Outcome { fit, trace, metrics, constrained: Some(cm.as_slice().to_vec()) })
}

/// Loads the data, fits, runs the requested baselines and writes the three
/// output files. Returns the contents of `result.json`.
pub fn run(spec: &RunSpec) -> Result<ResultFile> {
    if !spec.data_path.is_file() {
        return Err(CliError::Spec(format!("data file {} does not exist", spec.data_path.display())));
    }
    let data = load_csv(&spec.data_path, spec.has_header)?;
    let out = match spec.task {
        Task::Logistic => {
            if data.p() == 0 {
                return Err(CliError::Spec("logistic task needs at least one covariate column".into()));
            }
            run_logistic(spec, data)?
        }
        Task::Linreg => {
            if data.p() == 0 {
                return Err(CliError::Spec("linreg task needs at least one covariate column".into()));
            }
            let data = Dataset::with_intercept(data.x, data.y)?;
            let (train, test) = split_data(&data, spec.split, false, spec.config.seed)?;
            run_regression(spec, train, test)?
        }
        Task::Har => {
            let feats = har_features(data.y.as_slice())?;
            let (train, test) = split_data(&feats, spec.split, true, spec.config.seed)?;
            run_regression(spec, train, test)?
        }
        Task::Garch => run_garch(spec, data.y.as_slice().to_vec())?,
    };
    let mut result = ResultFile::from_fit(&out.fit, &spec.config, Some(spec.task));
    result.constrained_mean = out.constrained;
    write_outputs(&spec.output_dir, &result, &out.trace, &out.metrics)?;
    Ok(result)
}
