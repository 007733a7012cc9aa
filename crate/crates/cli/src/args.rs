//! Command-line flags. Every flag is optional so that a `--config` file can
//! supply it; flags override the file.

use std::path::PathBuf;

use cbs_core::Mode;
use clap::{Args, Parser, Subcommand};

use crate::config::ExperimentConfig;

#[derive(Debug, Parser)]
#[command(
    name = "cbs",
    version,
    about = "Consensus-based sampling and optimization experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// One optimization run: trajectory CSV and summary JSON.
    Optimize(RunArgs),
    /// One sampling run: trajectory, final ensemble and moments.
    Sample(RunArgs),
    /// Exact Gaussian moment dynamics over a parameter grid, with fitted rates.
    Theory(TheoryArgs),
    /// Success-rate matrix over objective shift b, alpha and ensemble size J.
    Bench(BenchArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Optimize(_) => "optimize",
            Command::Sample(_) => "sample",
            Command::Theory(_) => "theory",
            Command::Bench(_) => "bench",
        }
    }
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON configuration file; flags given on the command line win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory [default: ./results].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Master seed [env: CBS_SEED].
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ObjectiveArgs {
    /// quadratic | ackley | rastrigin | elliptic-2d | logcosh
    #[arg(long)]
    pub objective: Option<String>,
    /// Dimension (quadratic, ackley, rastrigin).
    #[arg(long = "d")]
    pub d: Option<usize>,
    /// Shift of the minimizer to (b, ..., b).
    #[arg(long = "b", allow_hyphen_values = true)]
    pub b: Option<f64>,
    /// Comma-separated center of the quadratic objective.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub center: Option<Vec<f64>>,
    /// Comma-separated row-major covariance of the quadratic objective.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub covariance: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct BetaArgs {
    /// Inverse temperature, or its starting value with --adaptive-beta.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Choose beta each step from the effective-sample-size target eta.
    #[arg(long, conflicts_with = "fixed_beta")]
    pub adaptive_beta: bool,
    /// Keep beta fixed (overrides a config file).
    #[arg(long)]
    pub fixed_beta: bool,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub beta_max: Option<f64>,
    /// Stop once the ensemble covariance has Frobenius norm below this.
    #[arg(long = "cov-tol")]
    pub cov_frobenius_tol: Option<f64>,
    /// Iteration count (sample) or cap (optimize, bench).
    #[arg(long)]
    pub iters: Option<usize>,
    /// Standard deviation of the N(0, s^2 I) initial ensemble.
    #[arg(long)]
    pub init_std: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub objective: ObjectiveArgs,
    #[command(flatten)]
    pub beta: BetaArgs,
    /// Number of particles.
    #[arg(long = "J", alias = "particles")]
    pub particles: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Must agree with the subcommand.
    #[arg(long)]
    pub mode: Option<Mode>,
    /// Sample only: optimization-mode iterations from the final ensemble.
    #[arg(long)]
    pub refine_iters: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TheoryArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Comma-separated modes.
    #[arg(long, value_delimiter = ',')]
    pub modes: Option<Vec<Mode>>,
    /// Comma-separated alphas in [0, 1]; 1 selects continuous time.
    #[arg(long, value_delimiter = ',')]
    pub alphas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub betas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub dims: Option<Vec<usize>>,
    /// RK4 step for the continuous-time cases.
    #[arg(long)]
    pub dt: Option<f64>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub objective: ObjectiveArgs,
    #[command(flatten)]
    pub beta: BetaArgs,
    /// Comma-separated ensemble sizes.
    #[arg(long = "Js", value_delimiter = ',')]
    pub particle_counts: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub alphas: Option<Vec<f64>>,
    /// Comma-separated shifts b.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub bs: Option<Vec<f64>>,
    /// Independent runs per cell.
    #[arg(long)]
    pub n_runs: Option<usize>,
    /// Must be optimization.
    #[arg(long)]
    pub mode: Option<Mode>,
}

impl CommonArgs {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        cfg.out = self.out.clone();
        cfg.seed = self.seed;
    }
}

impl ObjectiveArgs {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        cfg.objective = self.objective.clone();
        cfg.d = self.d;
        cfg.b = self.b;
        cfg.center = self.center.clone();
        cfg.covariance = self.covariance.clone();
    }
}

impl BetaArgs {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        cfg.beta = self.beta;
        cfg.adaptive_beta = if self.adaptive_beta {
            Some(true)
        } else if self.fixed_beta {
            Some(false)
        } else {
            None
        };
        cfg.eta = self.eta;
        cfg.beta_max = self.beta_max;
        cfg.cov_frobenius_tol = self.cov_frobenius_tol;
        cfg.iters = self.iters;
        cfg.init_std = self.init_std;
    }
}

impl Command {
    pub fn config_path(&self) -> Option<&PathBuf> {
        match self {
            Command::Optimize(a) | Command::Sample(a) => a.common.config.as_ref(),
            Command::Theory(a) => a.common.config.as_ref(),
            Command::Bench(a) => a.common.config.as_ref(),
        }
    }

    /// The flags given on the command line, as a sparse config.
    pub fn flags(&self) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        match self {
            Command::Optimize(a) | Command::Sample(a) => {
                a.common.apply(&mut cfg);
                a.objective.apply(&mut cfg);
                a.beta.apply(&mut cfg);
                cfg.particles = a.particles;
                cfg.alpha = a.alpha;
                cfg.mode = a.mode;
                cfg.refine_iters = a.refine_iters;
            }
            Command::Theory(a) => {
                a.common.apply(&mut cfg);
                cfg.modes = a.modes.clone();
                cfg.alphas = a.alphas.clone();
                cfg.betas = a.betas.clone();
                cfg.dims = a.dims.clone();
                cfg.dt = a.dt;
            }
            Command::Bench(a) => {
                a.common.apply(&mut cfg);
                a.objective.apply(&mut cfg);
                a.beta.apply(&mut cfg);
                cfg.particle_counts = a.particle_counts.clone();
                cfg.alphas = a.alphas.clone();
                cfg.bs = a.bs.clone();
                cfg.n_runs = a.n_runs;
                cfg.mode = a.mode;
            }
        }
        cfg
    }
}
