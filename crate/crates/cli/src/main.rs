use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use qbvi_cli::{run, Compare, RunConfig, RunSpec, Strategy, Task};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TaskArg {
    Logistic,
    Linreg,
    Har,
    Garch,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StrategyArg {
    Plain,
    Bounded,
    Log,
    Retraction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Baseline {
    Mcmc,
    Mle,
}

/// Fit a Gaussian variational posterior with natural-gradient QBVI.
#[derive(Debug, Parser)]
#[command(name = "qbvi", version)]
struct Args {
    #[arg(long, value_enum)]
    task: TaskArg,
    /// CSV file; the last column is the target (or the series for har/garch).
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "out")]
    output: PathBuf,
    /// The first line of the CSV is a header.
    #[arg(long)]
    header: bool,
    /// Training fraction.
    #[arg(long, default_value_t = 0.75)]
    split: f64,
    /// Baselines to run alongside the fit.
    #[arg(long, value_enum, value_delimiter = ',')]
    compare: Vec<Baseline>,
    #[arg(long, default_value_t = 20_000)]
    mcmc_draws: usize,

    #[arg(long, default_value_t = 0.1)]
    beta: f64,
    #[arg(long, default_value_t = 500)]
    patience: usize,
    #[arg(long, default_value_t = 30)]
    window: usize,
    #[arg(long, default_value_t = 0.4)]
    momentum: f64,
    /// Gradient clipping threshold `l_max`.
    #[arg(long, default_value_t = 1000.0)]
    clip: f64,
    /// Prior precision.
    #[arg(long, default_value_t = 0.2)]
    tau: f64,
    /// Monte Carlo samples per iteration.
    #[arg(long, default_value_t = 100)]
    ns: usize,
    #[arg(long, default_value_t = 1000)]
    max_iters: usize,
    #[arg(long, default_value_t = 800)]
    t_prime: usize,
    /// Defaults to retraction (full) or bounded (diagonal).
    #[arg(long, value_enum)]
    pd_strategy: Option<StrategyArg>,
    /// `δ` for the bounded strategy.
    #[arg(long, default_value_t = 0.5)]
    delta: f64,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    cv: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Use a diagonal covariance.
    #[arg(long)]
    diagonal: bool,
    /// Precision of the starting factor.
    #[arg(long, default_value_t = 10.0)]
    init_prec: f64,
    #[arg(long)]
    batch_size: Option<usize>,
}

fn spec_from(a: Args) -> RunSpec {
    let task = match a.task {
        TaskArg::Logistic => Task::Logistic,
        TaskArg::Linreg => Task::Linreg,
        TaskArg::Har => Task::Har,
        TaskArg::Garch => Task::Garch,
    };
    let pd_strategy = a.pd_strategy.map(|s| match s {
        StrategyArg::Plain => Strategy::Plain,
        StrategyArg::Bounded => Strategy::Bounded,
        StrategyArg::Log => Strategy::Log,
        StrategyArg::Retraction => Strategy::Retraction,
    });
    RunSpec {
        task,
        data_path: a.data,
        has_header: a.header,
        split: a.split,
        config: RunConfig {
            beta: a.beta,
            t_prime: a.t_prime,
            patience: a.patience,
            window: a.window,
            momentum: a.momentum,
            clip_norm: a.clip,
            tau: a.tau,
            n_samples: a.ns,
            max_iters: a.max_iters,
            batch_size: a.batch_size,
            pd_strategy,
            delta: a.delta,
            cv: a.cv,
            seed: a.seed,
            diagonal: a.diagonal,
            init_precision: Some(a.init_prec),
            ..RunConfig::default()
        },
        output_dir: a.output,
        compare: Compare { mcmc: a.compare.contains(&Baseline::Mcmc), mle: a.compare.contains(&Baseline::Mle) },
        mcmc_draws: a.mcmc_draws,
    }
}

fn main() -> ExitCode {
    let spec = spec_from(Args::parse());
    match run(&spec) {
        Ok(r) => {
            println!(
                "{}: best iteration {} of {} ({}); outputs in {}",
                spec.data_path.display(),
                r.best_iter,
                r.iterations,
                r.exit_reason,
                spec.output_dir.display()
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
