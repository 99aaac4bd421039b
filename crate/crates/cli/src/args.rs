use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use geogress::experiment::{EstimatorOverrides, InitKind};

#[derive(Debug, Parser)]
#[command(
    name = "geogress",
    version,
    about = "Fit geodesics to time-indexed subspace data"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a planted dataset and optionally save its ground truth.
    Synth(SynthArgs),
    /// Fit a geodesic to a dataset file.
    Fit(FitArgs),
    /// Run an experiment grid and write its CSV tables.
    Experiment(ExperimentArgs),
    /// Tabulate the rank-1 loss surface in the plane, with fit trajectories.
    Landscape(LandscapeArgs),
    /// Fit a continuous piecewise geodesic along a penalty schedule.
    Piecewise(PiecewiseArgs),
}

/// Parameters of a planted instance. Unset values take per-command defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct PlantArgs {
    /// Ambient dimension.
    #[arg(long)]
    pub d: Option<usize>,
    /// Subspace rank.
    #[arg(long)]
    pub k: Option<usize>,
    /// Columns per sample.
    #[arg(long)]
    pub ell: Option<usize>,
    /// Number of samples.
    #[arg(long = "T")]
    pub n_times: Option<usize>,
    /// Noise standard deviation.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Largest principal angle rate of the planted geodesic.
    #[arg(long, alias = "theta_max")]
    pub theta_max: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Resolved planted-instance parameters.
#[derive(Debug, Clone, Copy)]
pub struct Plant {
    pub d: usize,
    pub k: usize,
    pub ell: usize,
    pub n_times: usize,
    pub sigma: f64,
    pub theta_max: f64,
    pub seed: u64,
}

impl PlantArgs {
    pub fn resolve(&self, defaults: Plant) -> Plant {
        Plant {
            d: self.d.unwrap_or(defaults.d),
            k: self.k.unwrap_or(defaults.k),
            ell: self.ell.unwrap_or(defaults.ell),
            n_times: self.n_times.unwrap_or(defaults.n_times),
            sigma: self.sigma.unwrap_or(defaults.sigma),
            theta_max: self.theta_max.unwrap_or(defaults.theta_max),
            seed: self.seed.unwrap_or(defaults.seed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitChoice {
    Random,
    Endpoints,
    Svd,
}

impl From<InitChoice> for InitKind {
    fn from(c: InitChoice) -> Self {
        match c {
            InitChoice::Random => InitKind::Random,
            InitChoice::Endpoints => InitKind::Endpoints,
            InitChoice::Svd => InitKind::Svd,
        }
    }
}

/// Estimator settings, named after the `estimator` keys of an experiment file.
#[derive(Debug, Clone, Default, Args)]
pub struct EstimatorArgs {
    #[arg(long, value_enum)]
    pub init: Option<InitChoice>,
    #[arg(long, alias = "outer_iters")]
    pub outer_iters: Option<usize>,
    #[arg(long, alias = "inner_mm_iters")]
    pub inner_mm_iters: Option<usize>,
    #[arg(long, alias = "rel_loss_tol")]
    pub rel_loss_tol: Option<f64>,
    /// Share of samples pooled at each end by the endpoints init.
    #[arg(long, alias = "pool_fraction")]
    pub pool_fraction: Option<f64>,
    /// Angle bound for the random init.
    #[arg(long, alias = "init_theta_max")]
    pub init_theta_max: Option<f64>,
    /// Re-center times at this value while fitting.
    #[arg(long, alias = "time_center")]
    pub time_center: Option<f64>,
    /// Extrapolated MM steps (true or false).
    #[arg(long)]
    pub accelerate: Option<bool>,
    /// Gauss-Newton steps after the MM rounds.
    #[arg(long, alias = "refine_iters")]
    pub refine_iters: Option<usize>,
}

impl EstimatorArgs {
    /// Writes every flag that was given over `base`.
    pub fn apply(&self, base: &mut EstimatorOverrides) {
        if let Some(v) = self.init {
            base.init = Some(v.into());
        }
        macro_rules! set {
            ($($f:ident),*) => {$(if self.$f.is_some() { base.$f = self.$f; })*};
        }
        set!(
            outer_iters,
            inner_mm_iters,
            rel_loss_tol,
            pool_fraction,
            init_theta_max,
            time_center,
            accelerate,
            refine_iters
        );
    }

    pub fn overrides(&self) -> EstimatorOverrides {
        let mut o = EstimatorOverrides::default();
        self.apply(&mut o);
        o
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub plant: PlantArgs,
    /// Knots in [0, 1]; when given the truth is a piecewise geodesic.
    #[arg(long, value_delimiter = ',')]
    pub knots: Option<Vec<f64>>,
    /// Dataset file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Model file for the planted truth. Piecewise truths get one file per
    /// segment, suffixed `_seg<j>`.
    #[arg(long)]
    pub truth_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Dataset file to fit.
    #[arg(long)]
    pub data: PathBuf,
    /// Rank of the fitted subspace.
    #[arg(long)]
    pub k: usize,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    /// Seed for the random init.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// CSV of the loss after every iteration.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Known model to score the fit against.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// JSON experiment file; its keys match the flag names below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Start from the built-in grid of this experiment.
    #[arg(long, required_unless_present = "config")]
    pub experiment: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub d: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub k: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub ell: Option<Vec<usize>>,
    #[arg(long = "T", value_delimiter = ',')]
    pub n_times: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub sigma: Option<Vec<f64>>,
    #[arg(long, alias = "theta_max", value_delimiter = ',')]
    pub theta_max: Option<Vec<f64>>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Base seed of the grid.
    #[arg(long, alias = "base_seed")]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    #[arg(long, alias = "fit_ranks", value_delimiter = ',')]
    pub fit_ranks: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub lambdas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub knots: Option<Vec<f64>>,
    #[arg(long, alias = "grid_points")]
    pub grid_points: Option<usize>,
    #[arg(long, alias = "n_quadrature")]
    pub n_quadrature: Option<usize>,
    /// Record wall time per fit.
    #[arg(long)]
    pub timing: bool,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Main CSV path; summary and auxiliary tables are written beside it.
    /// Without it the main table goes to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print the resolved experiment as JSON and exit.
    #[arg(long)]
    pub print_config: bool,
}

#[derive(Debug, Args)]
pub struct LandscapeArgs {
    /// Planar dataset (d = 2); a planted one is drawn when absent.
    #[arg(long, conflicts_with_all = ["d", "k"])]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub plant: PlantArgs,
    /// Side length of the surface grid.
    #[arg(long, default_value_t = 101)]
    pub grid_points: usize,
    /// Time center used by the second trajectory.
    #[arg(long, default_value_t = 0.5)]
    pub time_center: f64,
    #[arg(long, default_value_t = 500)]
    pub outer_iters: usize,
    /// Surface CSV with columns omega, theta, loss.
    #[arg(long)]
    pub out: PathBuf,
    /// Trajectory CSV with columns run, iteration, omega, theta, loss.
    #[arg(long)]
    pub iterates: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PiecewiseArgs {
    /// Dataset file; a planted piecewise dataset is drawn when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub plant: PlantArgs,
    #[arg(long, value_delimiter = ',', default_value = "0,0.5,1")]
    pub knots: Vec<f64>,
    /// Penalty stages; defaults to 0 then 1e-2 up to 1e3 by decades.
    #[arg(long, value_delimiter = ',')]
    pub lambdas: Option<Vec<f64>>,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    #[arg(long, default_value_t = 50)]
    pub max_sweeps: usize,
    /// Stage CSV with columns lambda, objective, sweeps, max_gap.
    #[arg(long)]
    pub out: PathBuf,
    /// Directory for the segment models of the last stage.
    #[arg(long)]
    pub models_dir: Option<PathBuf>,
}
