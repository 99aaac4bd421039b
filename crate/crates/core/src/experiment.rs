//! Synthetic experiment grids and their CSV tables.
//!
//! A spec expands into cells (the cartesian product of its parameter grids,
//! nested `d, k, ell, T, sigma, theta_max` from outermost to innermost) and
//! runs `trials` planted instances per cell. Trial `j` of cell `c` uses seed
//! `base_seed ^ (c << 32) ^ j`, so any row can be regenerated in isolation
//! with [`run_trial`].

use std::f64::consts::{FRAC_PI_2, PI};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{batch_svd_subspace, per_timepoint_svd, static_as_geodesic};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::estimator::{fit, fit_observed, reconstruct, EstimatorConfig, FitReport, Init};
use crate::landscape::{linspace, loss_surface_2d, planar_coordinates, recenter_times};
use crate::manifold::{GeodesicModel, OrthonormalBasis};
use crate::metrics::{data_error, geodesic_error, subspace_error, subspace_error_matrices};
use crate::piecewise::{
    fit_piecewise_continuation, lambda_schedule, PiecewiseConfig, PiecewiseModel,
};
use crate::synth::{isotropic_instance, permute_times, planted_instance, planted_piecewise};

const INIT_SALT: u64 = 0x9e37_79b9_7f4a_7c15;
const PERMUTE_SALT: u64 = 0xd1b5_4a32_d192_ed03;
const ISOTROPIC_SALT: u64 = 0x8cb9_2ba7_2f3d_8dd7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExperimentKind {
    PhaseTransition,
    ErrorVsSamples,
    ErrorVsEll,
    LossVsRank,
    Convergence,
    Landscape2D,
    PiecewiseDemo,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::PhaseTransition,
        ExperimentKind::ErrorVsSamples,
        ExperimentKind::ErrorVsEll,
        ExperimentKind::LossVsRank,
        ExperimentKind::Convergence,
        ExperimentKind::Landscape2D,
        ExperimentKind::PiecewiseDemo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::PhaseTransition => "PhaseTransition",
            ExperimentKind::ErrorVsSamples => "ErrorVsSamples",
            ExperimentKind::ErrorVsEll => "ErrorVsEll",
            ExperimentKind::LossVsRank => "LossVsRank",
            ExperimentKind::Convergence => "Convergence",
            ExperimentKind::Landscape2D => "Landscape2D",
            ExperimentKind::PiecewiseDemo => "PiecewiseDemo",
        }
    }
}

impl std::str::FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidSpec(format!("unknown experiment {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitKind {
    Random,
    /// Falls back to `Random` when an end pool has too few columns.
    Endpoints,
    /// Constant geodesic at the rank-`r` SVD subspace; falls back to `Random`
    /// when the data has fewer than `r` columns.
    Svd,
}

/// Estimator settings that a spec may override. Unset fields take the
/// experiment's default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorOverrides {
    pub outer_iters: Option<usize>,
    pub inner_mm_iters: Option<usize>,
    pub rel_loss_tol: Option<f64>,
    pub init: Option<InitKind>,
    pub pool_fraction: Option<f64>,
    pub init_theta_max: Option<f64>,
    pub time_center: Option<f64>,
    /// Defaults to on for experiments.
    pub accelerate: Option<bool>,
    /// Gauss-Newton refinement steps after the MM rounds; none by default.
    pub refine_iters: Option<usize>,
}

fn default_grid_points() -> usize {
    101
}

fn default_quadrature() -> usize {
    crate::metrics::DEFAULT_QUADRATURE_POINTS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub experiment: ExperimentKind,
    pub d: Vec<usize>,
    pub k: Vec<usize>,
    pub ell: Vec<usize>,
    #[serde(rename = "T")]
    pub n_times: Vec<usize>,
    pub sigma: Vec<f64>,
    pub theta_max: Vec<f64>,
    pub trials: usize,
    pub base_seed: u64,
    #[serde(default)]
    pub estimator: EstimatorOverrides,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Assumed ranks for `LossVsRank`.
    #[serde(default)]
    pub fit_ranks: Option<Vec<usize>>,
    /// Penalty stages for `PiecewiseDemo`.
    #[serde(default)]
    pub lambdas: Option<Vec<f64>>,
    #[serde(default)]
    pub knots: Option<Vec<f64>>,
    /// Side length of the `Landscape2D` surface grid.
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    #[serde(default = "default_quadrature")]
    pub n_quadrature: usize,
    /// Record wall time; off by default so tables are byte-reproducible.
    #[serde(default)]
    pub timing: bool,
    #[serde(default)]
    pub threads: Option<usize>,
}

impl ExperimentSpec {
    /// Default grid for each experiment, sized to finish in minutes.
    pub fn preset(kind: ExperimentKind) -> Self {
        let base = |d: Vec<usize>, k: Vec<usize>, ell, t: Vec<usize>, sigma, trials| Self {
            experiment: kind,
            d,
            k,
            ell,
            n_times: t,
            sigma,
            theta_max: vec![1.5],
            trials,
            base_seed: 0,
            estimator: EstimatorOverrides::default(),
            output: None,
            fit_ranks: None,
            lambdas: None,
            knots: None,
            grid_points: default_grid_points(),
            n_quadrature: default_quadrature(),
            timing: false,
            threads: None,
        };
        let refined = EstimatorOverrides {
            outer_iters: Some(100),
            refine_iters: Some(60),
            ..Default::default()
        };
        match kind {
            ExperimentKind::PhaseTransition => Self {
                estimator: refined,
                ..base(
                    vec![40],
                    vec![2, 4, 8],
                    vec![1],
                    (1..=32).collect(),
                    vec![1e-5],
                    15,
                )
            },
            ExperimentKind::ErrorVsSamples => Self {
                estimator: refined,
                ..base(
                    vec![40],
                    vec![2],
                    vec![1],
                    vec![4, 6, 8, 12, 16, 24, 32, 48, 64],
                    vec![1e-3, 1e-2, 1e-1],
                    10,
                )
            },
            ExperimentKind::ErrorVsEll => base(
                vec![40],
                vec![4],
                (1..=8).collect(),
                vec![11],
                vec![1e-2],
                20,
            ),
            ExperimentKind::LossVsRank => Self {
                fit_ranks: Some(vec![1, 2, 3, 4]),
                ..base(vec![40], vec![1, 2], vec![1], vec![60], vec![1e-2], 5)
            },
            ExperimentKind::Convergence => Self {
                estimator: EstimatorOverrides {
                    outer_iters: Some(500),
                    ..Default::default()
                },
                ..base(vec![40], vec![1, 2, 4], vec![1], vec![100], vec![1e-3], 5)
            },
            ExperimentKind::Landscape2D => Self {
                theta_max: vec![1.2],
                ..base(vec![2], vec![1], vec![1], vec![21], vec![0.1], 1)
            },
            ExperimentKind::PiecewiseDemo => Self {
                knots: Some(vec![0.0, 0.5, 1.0]),
                lambdas: Some(lambda_schedule(1e-2, 1e3)),
                theta_max: vec![1.0],
                ..base(vec![20], vec![2], vec![1], vec![12], vec![0.0], 3)
            },
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self =
            serde_json::from_str(text).map_err(|e| Error::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&crate::io::read_text(path.as_ref())?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &d in &self.d {
            for &k in &self.k {
                for &ell in &self.ell {
                    for &n_times in &self.n_times {
                        for &sigma in &self.sigma {
                            for &theta_max in &self.theta_max {
                                out.push(Cell {
                                    d,
                                    k,
                                    ell,
                                    n_times,
                                    sigma,
                                    theta_max,
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Seed of trial `trial` in cell `cell`.
    pub fn trial_seed(&self, cell: usize, trial: usize) -> u64 {
        self.base_seed ^ ((cell as u64) << 32) ^ trial as u64
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        if self.d.is_empty()
            || self.k.is_empty()
            || self.ell.is_empty()
            || self.n_times.is_empty()
            || self.sigma.is_empty()
            || self.theta_max.is_empty()
        {
            return bad("every parameter grid must be non-empty".into());
        }
        if self.trials == 0 {
            return bad("trials must be >= 1".into());
        }
        if self.k.contains(&0) || self.ell.contains(&0) || self.n_times.contains(&0) {
            return bad("k, ell and T must be >= 1".into());
        }
        for &d in &self.d {
            for &k in &self.k {
                if 2 * k > d {
                    return bad(format!("cell with d={d}, k={k} violates 2k <= d"));
                }
            }
        }
        if let Some(s) = self.sigma.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
            return bad(format!("sigma {s} must be finite and >= 0"));
        }
        if let Some(t) = self
            .theta_max
            .iter()
            .find(|t| !(0.0..=FRAC_PI_2).contains(*t))
        {
            return bad(format!("theta_max {t} not in [0, pi/2]"));
        }
        if self.n_quadrature < 2 {
            return bad("n_quadrature must be >= 2".into());
        }
        if self.threads == Some(0) {
            return bad("threads must be >= 1".into());
        }
        if let Some(t) = self.estimator.init_theta_max {
            if !(0.0..=FRAC_PI_2).contains(&t) {
                return bad(format!("init_theta_max {t} not in [0, pi/2]"));
            }
        }
        self.estimator_config(1, 0)?.validate()?;
        match self.experiment {
            ExperimentKind::LossVsRank => {
                let ranks = self.fit_ranks();
                if ranks.is_empty() || ranks.contains(&0) {
                    return bad("fit_ranks must be non-empty and >= 1".into());
                }
                let max_r = ranks.iter().max().expect("non-empty");
                if let Some(d) = self.d.iter().find(|&&d| 2 * max_r > d) {
                    return bad(format!("fit rank {max_r} violates 2r <= d={d}"));
                }
            }
            ExperimentKind::Landscape2D => {
                if self.d != [2] || self.k != [1] {
                    return bad("Landscape2D needs d = [2] and k = [1]".into());
                }
                if self.grid_points < 2 {
                    return bad("grid_points must be >= 2".into());
                }
            }
            ExperimentKind::PiecewiseDemo => {
                let knots = self.knots();
                if knots.len() < 2
                    || knots[0] != 0.0
                    || knots[knots.len() - 1] != 1.0
                    || knots.windows(2).any(|w| !(w[0] < w[1]))
                {
                    return bad("knots must increase strictly from 0 to 1".into());
                }
                let lambdas = self.lambdas();
                if lambdas.is_empty()
                    || lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0))
                    || lambdas.windows(2).any(|w| w[1] < w[0])
                {
                    return bad("lambdas must be non-empty, finite, >= 0 and non-decreasing".into());
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn fit_ranks(&self) -> Vec<usize> {
        self.fit_ranks.clone().unwrap_or_else(|| vec![1, 2, 3, 4])
    }

    fn knots(&self) -> Vec<f64> {
        self.knots.clone().unwrap_or_else(|| vec![0.0, 0.5, 1.0])
    }

    fn lambdas(&self) -> Vec<f64> {
        self.lambdas
            .clone()
            .unwrap_or_else(|| lambda_schedule(1e-2, 1e3))
    }

    fn init_kind(&self) -> InitKind {
        self.estimator.init.unwrap_or(match self.experiment {
            ExperimentKind::PhaseTransition | ExperimentKind::ErrorVsSamples => InitKind::Endpoints,
            ExperimentKind::LossVsRank => InitKind::Svd,
            _ => InitKind::Random,
        })
    }

    /// Estimator config with a random init; the actual init is chosen per fit.
    fn estimator_config(&self, rank: usize, seed: u64) -> Result<EstimatorConfig> {
        let o = &self.estimator;
        Ok(EstimatorConfig::new(Init::Random {
            rank,
            theta_max: o.init_theta_max.unwrap_or(1.0),
            seed: seed ^ INIT_SALT,
        })
        .with_outer_iters(
            o.outer_iters
                .unwrap_or(EstimatorConfig::DEFAULT_OUTER_ITERS),
        )
        .with_inner_mm_iters(
            o.inner_mm_iters
                .unwrap_or(EstimatorConfig::DEFAULT_INNER_MM_ITERS),
        )
        .with_rel_loss_tol(
            o.rel_loss_tol
                .unwrap_or(EstimatorConfig::DEFAULT_REL_LOSS_TOL),
        )
        .with_time_center(o.time_center)
        .with_acceleration(o.accelerate.unwrap_or(true))
        .with_refine_iters(o.refine_iters.unwrap_or(0)))
    }

    /// Fits with the configured init kind, falling back to a random start
    /// when the requested one cannot be formed from this data.
    fn fit_with_init(&self, dataset: &Dataset, rank: usize, seed: u64) -> Result<FitReport> {
        let random = self.estimator_config(rank, seed)?;
        let pool_fraction = self.estimator.pool_fraction.unwrap_or(0.5);
        match self.init_kind() {
            InitKind::Random => fit(dataset, &random),
            InitKind::Endpoints => {
                let cfg = random.clone().with_init(Init::Endpoints {
                    rank,
                    pool_fraction,
                });
                match fit(dataset, &cfg) {
                    Err(Error::InitFailure(_)) => fit(dataset, &random),
                    other => other,
                }
            }
            InitKind::Svd => match batch_svd_subspace(dataset, rank) {
                Ok((u, _)) => {
                    let cfg = random.with_init(Init::Provided(static_as_geodesic(&u)?));
                    fit(dataset, &cfg)
                }
                Err(Error::RankTooLarge { .. }) => fit(dataset, &random),
                Err(e) => Err(e),
            },
        }
    }
}

/// One point of the parameter grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Cell {
    pub d: usize,
    pub k: usize,
    pub ell: usize,
    pub n_times: usize,
    pub sigma: f64,
    pub theta_max: f64,
}

/// One line of the results table. Absent values print as `NA`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub experiment: ExperimentKind,
    pub cell: Cell,
    pub fit_rank: usize,
    pub variant: String,
    pub trial: usize,
    pub seed: u64,
    pub final_loss: Option<f64>,
    pub svd_k_loss: Option<f64>,
    pub svd_2k_loss: Option<f64>,
    pub geodesic_error: Option<f64>,
    pub iters: Option<usize>,
    pub wall_ms: Option<f64>,
    /// Summary-only columns.
    pub data_error: Option<f64>,
    pub continuity_gap: Option<f64>,
}

impl ResultRow {
    fn new(spec: &ExperimentSpec, cell: Cell, trial: usize, seed: u64, variant: &str) -> Self {
        Self {
            experiment: spec.experiment,
            cell,
            fit_rank: cell.k,
            variant: variant.to_string(),
            trial,
            seed,
            final_loss: None,
            svd_k_loss: None,
            svd_2k_loss: None,
            geodesic_error: None,
            iters: None,
            wall_ms: None,
            data_error: None,
            continuity_gap: None,
        }
    }

    fn with_fit(mut self, spec: &ExperimentSpec, report: &FitReport) -> Self {
        self.final_loss = Some(report.final_loss());
        self.iters = Some(report.outer_iters_run);
        if spec.timing {
            self.wall_ms = Some(report.wall_time.as_secs_f64() * 1e3);
        }
        self
    }

    fn with_svd_losses(mut self, dataset: &Dataset, r: usize) -> Self {
        self.svd_k_loss = batch_svd_subspace(dataset, r).ok().map(|(_, l)| l);
        self.svd_2k_loss = batch_svd_subspace(dataset, 2 * r).ok().map(|(_, l)| l);
        self
    }
}

/// An auxiliary table such as an iteration trace or a loss surface.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtraTable {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl ExtraTable {
    fn new(name: &str, header: &[&str]) -> Self {
        Self {
            name: name.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn append(&mut self, other: ExtraTable) {
        self.rows.extend(other.rows);
    }
}

/// Rows and auxiliary tables produced by one `(cell, trial)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrialOutput {
    pub rows: Vec<ResultRow>,
    pub extras: Vec<ExtraTable>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub experiment: ExperimentKind,
    pub rows: Vec<ResultRow>,
    pub extras: Vec<ExtraTable>,
}

/// Aggregate over the trials of one `(cell, fit_rank, variant)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub cell: Cell,
    pub fit_rank: usize,
    pub variant: String,
    pub trials: usize,
    pub mean_final_loss: Option<f64>,
    pub median_final_loss: Option<f64>,
    pub mean_svd_k_loss: Option<f64>,
    pub mean_svd_2k_loss: Option<f64>,
    pub mean_geodesic_error: Option<f64>,
    pub median_geodesic_error: Option<f64>,
    pub mean_data_error: Option<f64>,
    pub mean_continuity_gap: Option<f64>,
    pub mean_iters: Option<f64>,
}

pub const RESULT_COLUMNS: [&str; 17] = [
    "experiment",
    "d",
    "k",
    "fit_rank",
    "ell",
    "T",
    "sigma",
    "theta_max",
    "variant",
    "trial",
    "seed",
    "final_loss",
    "svd_k_loss",
    "svd_2k_loss",
    "geodesic_error",
    "iters",
    "wall_ms",
];

pub const SUMMARY_COLUMNS: [&str; 19] = [
    "experiment",
    "d",
    "k",
    "fit_rank",
    "ell",
    "T",
    "sigma",
    "theta_max",
    "variant",
    "trials",
    "mean_final_loss",
    "median_final_loss",
    "mean_svd_k_loss",
    "mean_svd_2k_loss",
    "mean_geodesic_error",
    "median_geodesic_error",
    "mean_data_error",
    "mean_continuity_gap",
    "mean_iters",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

fn cell_fields(
    experiment: ExperimentKind,
    c: &Cell,
    fit_rank: usize,
    variant: &str,
) -> Vec<String> {
    vec![
        experiment.name().to_string(),
        c.d.to_string(),
        c.k.to_string(),
        fit_rank.to_string(),
        c.ell.to_string(),
        c.n_times.to_string(),
        c.sigma.to_string(),
        c.theta_max.to_string(),
        variant.to_string(),
    ]
}

fn to_csv<I, R>(header: &[String], rows: I) -> String
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    Some(if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    })
}

impl ResultTable {
    pub fn to_csv(&self) -> String {
        let header: Vec<String> = RESULT_COLUMNS.iter().map(|s| s.to_string()).collect();
        to_csv(
            &header,
            self.rows.iter().map(|r| {
                let mut f = cell_fields(r.experiment, &r.cell, r.fit_rank, &r.variant);
                f.extend([
                    r.trial.to_string(),
                    r.seed.to_string(),
                    opt(r.final_loss),
                    opt(r.svd_k_loss),
                    opt(r.svd_2k_loss),
                    opt(r.geodesic_error),
                    opt(r.iters),
                    opt(r.wall_ms),
                ]);
                f
            }),
        )
    }

    /// Groups rows by `(cell, fit_rank, variant)` in first-appearance order.
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut groups: Vec<(Cell, usize, String, Vec<&ResultRow>)> = Vec::new();
        for r in &self.rows {
            match groups
                .iter_mut()
                .find(|g| g.0 == r.cell && g.1 == r.fit_rank && g.2 == r.variant)
            {
                Some(g) => g.3.push(r),
                None => groups.push((r.cell, r.fit_rank, r.variant.clone(), vec![r])),
            }
        }
        groups
            .into_iter()
            .map(|(cell, fit_rank, variant, rows)| {
                let col = |f: fn(&ResultRow) -> Option<f64>| -> Vec<f64> {
                    rows.iter().filter_map(|r| f(r)).collect()
                };
                let losses = col(|r| r.final_loss);
                let errors = col(|r| r.geodesic_error);
                SummaryRow {
                    cell,
                    fit_rank,
                    variant,
                    trials: rows.len(),
                    mean_final_loss: mean(&losses),
                    median_final_loss: median(&losses),
                    mean_svd_k_loss: mean(&col(|r| r.svd_k_loss)),
                    mean_svd_2k_loss: mean(&col(|r| r.svd_2k_loss)),
                    mean_geodesic_error: mean(&errors),
                    median_geodesic_error: median(&errors),
                    mean_data_error: mean(&col(|r| r.data_error)),
                    mean_continuity_gap: mean(&col(|r| r.continuity_gap)),
                    mean_iters: mean(&col(|r| r.iters.map(|i| i as f64))),
                }
            })
            .collect()
    }

    pub fn summary_csv(&self) -> String {
        let header: Vec<String> = SUMMARY_COLUMNS.iter().map(|s| s.to_string()).collect();
        to_csv(
            &header,
            self.summary().into_iter().map(|s| {
                let mut f = cell_fields(self.experiment, &s.cell, s.fit_rank, &s.variant);
                f.extend([
                    s.trials.to_string(),
                    opt(s.mean_final_loss),
                    opt(s.median_final_loss),
                    opt(s.mean_svd_k_loss),
                    opt(s.mean_svd_2k_loss),
                    opt(s.mean_geodesic_error),
                    opt(s.median_geodesic_error),
                    opt(s.mean_data_error),
                    opt(s.mean_continuity_gap),
                    opt(s.mean_iters),
                ]);
                f
            }),
        )
    }

    pub fn extra_csv(&self, name: &str) -> Option<String> {
        self.extras
            .iter()
            .find(|e| e.name == name)
            .map(|e| to_csv(&e.header, e.rows.iter().cloned()))
    }

    /// Writes `<path>`, `<stem>_summary.csv` and one `<stem>_<name>.csv` per
    /// auxiliary table, all in the directory of `path`. Returns the paths.
    pub fn write(&self, path: &Path) -> Result<Vec<PathBuf>> {
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("results")
            .to_string();
        let sibling = |suffix: &str| path.with_file_name(format!("{stem}_{suffix}.csv"));
        let mut files = vec![(path.to_path_buf(), self.to_csv())];
        files.push((sibling("summary"), self.summary_csv()));
        for e in &self.extras {
            files.push((sibling(&e.name), to_csv(&e.header, e.rows.iter().cloned())));
        }
        for (p, text) in &files {
            crate::io::write_text(p, text)?;
        }
        Ok(files.into_iter().map(|(p, _)| p).collect())
    }
}

/// Runs every `(cell, trial)`, possibly in parallel, and writes the tables
/// when `spec.output` is set. Row order is cell-major, then trial, then
/// variant, independent of scheduling.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ResultTable> {
    spec.validate()?;
    let cells = spec.cells();
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..spec.trials).map(move |t| (c, t)))
        .collect();
    let run = || -> Vec<Result<TrialOutput>> {
        jobs.par_iter()
            .map(|&(c, t)| run_trial(spec, c, t))
            .collect()
    };
    let outputs = match spec.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidSpec(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    };
    let mut table = ResultTable {
        experiment: spec.experiment,
        rows: Vec::new(),
        extras: Vec::new(),
    };
    for out in outputs {
        let out = out?;
        table.rows.extend(out.rows);
        for extra in out.extras {
            match table.extras.iter_mut().find(|e| e.name == extra.name) {
                Some(e) => e.append(extra),
                None => table.extras.push(extra),
            }
        }
    }
    if let Some(path) = &spec.output {
        table.write(path)?;
    }
    Ok(table)
}

/// Runs a single `(cell, trial)` of `spec`.
pub fn run_trial(spec: &ExperimentSpec, cell_index: usize, trial: usize) -> Result<TrialOutput> {
    let cells = spec.cells();
    let cell = *cells.get(cell_index).ok_or_else(|| {
        Error::InvalidSpec(format!(
            "cell {cell_index} out of range ({} cells)",
            cells.len()
        ))
    })?;
    let seed = spec.trial_seed(cell_index, trial);
    let ctx = Trial {
        spec,
        cell,
        cell_index,
        trial,
        seed,
    };
    match spec.experiment {
        ExperimentKind::PhaseTransition => ctx.phase_transition(),
        ExperimentKind::ErrorVsSamples => ctx.error_vs_samples(),
        ExperimentKind::ErrorVsEll => ctx.error_vs_ell(),
        ExperimentKind::LossVsRank => ctx.loss_vs_rank(),
        ExperimentKind::Convergence => ctx.convergence(),
        ExperimentKind::Landscape2D => ctx.landscape(),
        ExperimentKind::PiecewiseDemo => ctx.piecewise(),
    }
}

struct Trial<'a> {
    spec: &'a ExperimentSpec,
    cell: Cell,
    cell_index: usize,
    trial: usize,
    seed: u64,
}

impl Trial<'_> {
    fn planted(&self) -> Result<crate::synth::PlantedInstance> {
        let c = self.cell;
        planted_instance(c.d, c.k, c.ell, c.n_times, c.sigma, c.theta_max, self.seed)
    }

    fn row(&self, variant: &str) -> ResultRow {
        ResultRow::new(self.spec, self.cell, self.trial, self.seed, variant)
    }

    fn geodesic_fit_row(
        &self,
        variant: &str,
        dataset: &Dataset,
        truth: &GeodesicModel,
        clean: &[nalgebra::DMatrix<f64>],
    ) -> Result<ResultRow> {
        let report = self.spec.fit_with_init(dataset, self.cell.k, self.seed)?;
        let mut row = self
            .row(variant)
            .with_fit(self.spec, &report)
            .with_svd_losses(dataset, self.cell.k);
        row.geodesic_error = Some(geodesic_error(
            &report.model,
            truth,
            self.spec.n_quadrature,
        )?);
        row.data_error = Some(data_error(&reconstruct(dataset, &report.model)?, clean)?);
        Ok(row)
    }

    fn phase_transition(&self) -> Result<TrialOutput> {
        let inst = self.planted()?;
        let row = self.geodesic_fit_row("geodesic", &inst.dataset, &inst.truth, &inst.clean)?;
        Ok(TrialOutput {
            rows: vec![row],
            extras: vec![],
        })
    }

    /// Geodesic fit next to rank-`2k` SVD span recovery on the same geodesic
    /// data and on isotropic rank-`2k` data. The SVD rows store their
    /// subspace error in the `geodesic_error` column.
    fn error_vs_samples(&self) -> Result<TrialOutput> {
        let c = self.cell;
        let inst = self.planted()?;
        let mut rows =
            vec![self.geodesic_fit_row("geodesic", &inst.dataset, &inst.truth, &inst.clean)?];

        let span = OrthonormalBasis::new(inst.truth.stacked())?;
        let mut geo_svd = self.row("svd_2k_geodesic_data");
        if let Ok((u, l)) = batch_svd_subspace(&inst.dataset, 2 * c.k) {
            geo_svd.final_loss = Some(l);
            geo_svd.geodesic_error = Some(subspace_error(&u, &span)?);
        }
        rows.push(geo_svd);

        let (iso, basis) = isotropic_instance(
            c.d,
            2 * c.k,
            c.ell,
            c.n_times,
            c.sigma,
            self.seed ^ ISOTROPIC_SALT,
        )?;
        let mut iso_svd = self.row("svd_2k_isotropic_data");
        if let Ok((u, l)) = batch_svd_subspace(&iso, 2 * c.k) {
            iso_svd.final_loss = Some(l);
            iso_svd.geodesic_error = Some(subspace_error_matrices(u.matrix(), &basis)?);
        }
        rows.push(iso_svd);
        Ok(TrialOutput {
            rows,
            extras: vec![],
        })
    }

    /// Mean per-sample subspace error of the geodesic fit and of independent
    /// per-sample SVDs (the latter only when `ell >= k`), both stored in the
    /// `geodesic_error` column.
    fn error_vs_ell(&self) -> Result<TrialOutput> {
        let inst = self.planted()?;
        let times = inst.dataset.times();
        let truth_at: Vec<OrthonormalBasis> = times.iter().map(|&t| inst.truth.eval(t)).collect();

        let report = self
            .spec
            .fit_with_init(&inst.dataset, self.cell.k, self.seed)?;
        let mut geo = self
            .row("geodesic")
            .with_fit(self.spec, &report)
            .with_svd_losses(&inst.dataset, self.cell.k);
        let errs = times
            .iter()
            .zip(&truth_at)
            .map(|(&t, u)| subspace_error(&report.model.eval(t), u))
            .collect::<Result<Vec<_>>>()?;
        geo.geodesic_error = mean(&errs);
        geo.data_error = Some(data_error(
            &reconstruct(&inst.dataset, &report.model)?,
            &inst.clean,
        )?);

        let mut per = self.row("per_timepoint_svd");
        if let Ok(bases) = per_timepoint_svd(&inst.dataset, self.cell.k) {
            let errs = bases
                .iter()
                .zip(&truth_at)
                .map(|(b, u)| subspace_error(b, u))
                .collect::<Result<Vec<_>>>()?;
            per.geodesic_error = mean(&errs);
        }
        Ok(TrialOutput {
            rows: vec![geo, per],
            extras: vec![],
        })
    }

    /// For every assumed rank: geodesic fits on ordered and time-permuted
    /// data, plus rank-`r` and rank-`2r` SVD baselines with their data error.
    fn loss_vs_rank(&self) -> Result<TrialOutput> {
        let inst = self.planted()?;
        let permuted = permute_times(&inst.dataset, self.seed ^ PERMUTE_SALT);
        let mut rows = Vec::new();
        for r in self.spec.fit_ranks() {
            let with_rank = |mut row: ResultRow| {
                row.fit_rank = r;
                row.with_svd_losses(&inst.dataset, r)
            };
            let report = self.spec.fit_with_init(&inst.dataset, r, self.seed)?;
            let mut ordered = with_rank(self.row("ordered")).with_fit(self.spec, &report);
            if r == self.cell.k {
                ordered.geodesic_error = Some(geodesic_error(
                    &report.model,
                    &inst.truth,
                    self.spec.n_quadrature,
                )?);
            }
            ordered.data_error = Some(data_error(
                &reconstruct(&inst.dataset, &report.model)?,
                &inst.clean,
            )?);
            rows.push(ordered);

            let report = self.spec.fit_with_init(&permuted, r, self.seed)?;
            rows.push(with_rank(self.row("permuted")).with_fit(self.spec, &report));

            for (variant, rank) in [("svd_k", r), ("svd_2k", 2 * r)] {
                let mut row = with_rank(self.row(variant));
                if let Ok((u, l)) = batch_svd_subspace(&inst.dataset, rank) {
                    row.final_loss = Some(l);
                    let projected: Vec<_> = inst
                        .dataset
                        .iter()
                        .map(|s| u.matrix() * (u.matrix().transpose() * &s.x))
                        .collect();
                    row.data_error = Some(data_error(&projected, &inst.clean)?);
                }
                rows.push(row);
            }
        }
        Ok(TrialOutput {
            rows,
            extras: vec![],
        })
    }

    /// Random-init fit with a per-iteration trace of loss and geodesic error.
    fn convergence(&self) -> Result<TrialOutput> {
        let inst = self.planted()?;
        let offset = self.spec.estimator.time_center;
        let mut trace = ExtraTable::new(
            "trace",
            &["cell", "trial", "iteration", "loss", "geodesic_error"],
        );
        let mut failure = None;
        let cfg = self.spec.estimator_config(self.cell.k, self.seed)?;
        let report = fit_observed(&inst.dataset, &cfg, |state| {
            let model = match offset {
                Some(t_h) => state.model.shifted(-t_h),
                None => state.model.clone(),
            };
            match geodesic_error(&model, &inst.truth, self.spec.n_quadrature) {
                Ok(e) => trace.rows.push(vec![
                    self.cell_index.to_string(),
                    self.trial.to_string(),
                    state.iteration.to_string(),
                    state.loss.to_string(),
                    e.to_string(),
                ]),
                Err(e) => failure = Some(e),
            }
        })?;
        if let Some(e) = failure {
            return Err(e);
        }
        let mut row = self
            .row("geodesic")
            .with_fit(self.spec, &report)
            .with_svd_losses(&inst.dataset, self.cell.k);
        row.geodesic_error = Some(geodesic_error(
            &report.model,
            &inst.truth,
            self.spec.n_quadrature,
        )?);
        row.data_error = Some(data_error(
            &reconstruct(&inst.dataset, &report.model)?,
            &inst.clean,
        )?);
        Ok(TrialOutput {
            rows: vec![row],
            extras: vec![trace],
        })
    }

    /// The same random start fitted on the original and on the re-centered
    /// (`t_H = 0.5`) time axis. Surfaces are emitted for trial 0 only.
    fn landscape(&self) -> Result<TrialOutput> {
        let inst = self.planted()?;
        let mut rows = Vec::new();
        let mut iterates = ExtraTable::new(
            "iterates",
            &[
                "cell",
                "trial",
                "variant",
                "iteration",
                "omega",
                "theta",
                "loss",
            ],
        );
        let mut surface =
            ExtraTable::new("surface", &["cell", "variant", "omega", "theta", "loss"]);
        let omegas = linspace(-FRAC_PI_2, FRAC_PI_2, self.spec.grid_points);
        let thetas = linspace(-PI, PI, self.spec.grid_points);
        for (variant, center) in [("uncentered", None), ("centered", Some(0.5))] {
            let cfg = self
                .spec
                .estimator_config(1, self.seed)?
                .with_time_center(center);
            let mut points = Vec::new();
            let report = fit_observed(&inst.dataset, &cfg, |state| {
                points.push((state.iteration, state.loss, planar_coordinates(state.model)));
            })?;
            for (it, l, coords) in points {
                let (w, th) = coords?;
                iterates.rows.push(vec![
                    self.cell_index.to_string(),
                    self.trial.to_string(),
                    variant.into(),
                    it.to_string(),
                    w.to_string(),
                    th.to_string(),
                    l.to_string(),
                ]);
            }
            let mut row = self
                .row(variant)
                .with_fit(self.spec, &report)
                .with_svd_losses(&inst.dataset, 1);
            row.geodesic_error = Some(geodesic_error(
                &report.model,
                &inst.truth,
                self.spec.n_quadrature,
            )?);
            rows.push(row);

            if self.trial == 0 {
                let working = match center {
                    Some(t_h) => recenter_times(&inst.dataset, t_h),
                    None => inst.dataset.clone(),
                };
                let values = loss_surface_2d(&working, &omegas, &thetas)?;
                for (a, w) in omegas.iter().enumerate() {
                    for (b, th) in thetas.iter().enumerate() {
                        surface.rows.push(vec![
                            self.cell_index.to_string(),
                            variant.into(),
                            w.to_string(),
                            th.to_string(),
                            values[(a, b)].to_string(),
                        ]);
                    }
                }
            }
        }
        let mut extras = vec![iterates];
        if self.trial == 0 {
            extras.push(surface);
        }
        Ok(TrialOutput { rows, extras })
    }

    /// λ continuation on a continuous piecewise truth; one row per stage.
    fn piecewise(&self) -> Result<TrialOutput> {
        let c = self.cell;
        let knots = self.spec.knots();
        let inst = planted_piecewise(
            c.d,
            c.k,
            c.ell,
            c.n_times,
            c.sigma,
            c.theta_max,
            &knots,
            self.seed,
        )?;
        let config = PiecewiseConfig::new(self.spec.estimator_config(c.k, self.seed)?);
        let stages =
            fit_piecewise_continuation(&inst.dataset, &knots, &self.spec.lambdas(), &config)?;
        let mut rows = Vec::new();
        for stage in stages {
            let mut row = self.row(&format!("lambda={}", stage.model.lambda));
            row.final_loss = stage.objective_history.last().copied();
            row.iters = Some(stage.sweeps);
            row.geodesic_error = Some(piecewise_error(
                &stage.model,
                &inst.truth,
                self.spec.n_quadrature,
            )?);
            row.continuity_gap = crate::piecewise::continuity_gap(&stage.model)
                .into_iter()
                .reduce(f64::max);
            let fitted: Vec<_> = inst
                .dataset
                .iter()
                .map(|s| {
                    let u = stage.model.eval_matrix(s.t);
                    &u * (u.transpose() * &s.x)
                })
                .collect();
            row.data_error = Some(data_error(&fitted, &inst.clean)?);
            rows.push(row.with_svd_losses(&inst.dataset, c.k));
        }
        Ok(TrialOutput {
            rows,
            extras: vec![],
        })
    }
}

/// RMS subspace error between two piecewise models on a uniform grid.
fn piecewise_error(a: &PiecewiseModel, b: &PiecewiseModel, n_quad: usize) -> Result<f64> {
    let mut acc = 0.0;
    for i in 0..n_quad {
        let t = i as f64 / (n_quad - 1) as f64;
        let e = subspace_error_matrices(&a.eval_matrix(t), &b.eval_matrix(t))?;
        acc += e * e;
    }
    Ok((acc / n_quad as f64).sqrt())
}
