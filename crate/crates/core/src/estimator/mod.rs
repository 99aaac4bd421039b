//! Geodesic fitting by block-coordinate majorize-minimize.
//!
//! Each outer iteration replaces `[H Y]` by the Stiefel projection `WVᵀ` of
//! `M = Σ_i [X_i Ĝ_iᵀ cos(Θt_i)  X_i Ĝ_iᵀ sin(Θt_i)]` and then runs a fixed
//! number of per-angle MM steps on `Θ`. Both blocks minimize a majorizer of
//! the loss, so the loss never increases.
//!
//! Two optional stages keep that guarantee: squared extrapolation of the MM
//! map (`accelerate`) and damped Gauss-Newton refinement (`refine_iters`).

mod init;
pub mod majorizer;
mod refine;

use std::borrow::Cow;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg;
use crate::manifold::{random_geodesic, GeodesicModel};

pub use init::init_endpoints;
pub use majorizer::{theta_constants, theta_mm_step, ThetaConstants};

/// Starting point of a fit.
#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    Random {
        rank: usize,
        theta_max: f64,
        seed: u64,
    },
    /// Geodesic connecting rank-`rank` SVD estimates of the first and last
    /// `⌈pool_fraction·T⌉` samples.
    Endpoints {
        rank: usize,
        pool_fraction: f64,
    },
    Provided(GeodesicModel),
}

impl Init {
    pub fn rank(&self) -> usize {
        match self {
            Init::Random { rank, .. } | Init::Endpoints { rank, .. } => *rank,
            Init::Provided(m) => m.rank(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    pub outer_iters: usize,
    pub inner_mm_iters: usize,
    pub rel_loss_tol: f64,
    pub init: Init,
    /// When set, times are shifted by `-t_H` during fitting; the returned
    /// model is re-expressed on the original axis.
    pub time_center: Option<f64>,
    /// Squared-extrapolation acceleration. Each outer iteration then runs
    /// two plain updates, extrapolates along their differences and keeps the
    /// extrapolated point only if its loss after one more update is no
    /// larger, so descent is preserved.
    pub accelerate: bool,
    /// Damped Gauss-Newton steps run after the MM rounds. Each accepted step
    /// lowers the loss and counts as one more outer iteration.
    pub refine_iters: usize,
}

impl EstimatorConfig {
    pub const DEFAULT_OUTER_ITERS: usize = 200;
    pub const DEFAULT_INNER_MM_ITERS: usize = 5;
    pub const DEFAULT_REL_LOSS_TOL: f64 = 1e-10;

    pub fn new(init: Init) -> Self {
        Self {
            outer_iters: Self::DEFAULT_OUTER_ITERS,
            inner_mm_iters: Self::DEFAULT_INNER_MM_ITERS,
            rel_loss_tol: Self::DEFAULT_REL_LOSS_TOL,
            init,
            time_center: None,
            accelerate: false,
            refine_iters: 0,
        }
    }

    pub fn with_outer_iters(mut self, n: usize) -> Self {
        self.outer_iters = n;
        self
    }

    pub fn with_inner_mm_iters(mut self, m: usize) -> Self {
        self.inner_mm_iters = m;
        self
    }

    pub fn with_rel_loss_tol(mut self, tol: f64) -> Self {
        self.rel_loss_tol = tol;
        self
    }

    pub fn with_time_center(mut self, t_h: Option<f64>) -> Self {
        self.time_center = t_h;
        self
    }

    pub fn with_acceleration(mut self, on: bool) -> Self {
        self.accelerate = on;
        self
    }

    pub fn with_refine_iters(mut self, n: usize) -> Self {
        self.refine_iters = n;
        self
    }

    pub fn with_init(mut self, init: Init) -> Self {
        self.init = init;
        self
    }

    /// Checks iteration counts, tolerance, pool fraction and centering time.
    pub fn validate(&self) -> Result<()> {
        if self.outer_iters == 0 || self.inner_mm_iters == 0 {
            return Err(Error::InvalidSpec(
                "outer and inner iteration counts must be >= 1".into(),
            ));
        }
        if !(self.rel_loss_tol >= 0.0) {
            return Err(Error::InvalidSpec("rel_loss_tol must be >= 0".into()));
        }
        if let Init::Endpoints { pool_fraction, .. } = self.init {
            if !(pool_fraction > 0.0 && pool_fraction <= 0.5) {
                return Err(Error::InvalidSpec(format!(
                    "pool_fraction {pool_fraction} not in (0, 0.5]"
                )));
            }
        }
        if let Some(t_h) = self.time_center {
            if !(0.0..=1.0).contains(&t_h) {
                return Err(Error::InvalidSpec(format!(
                    "time_center {t_h} not in [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub model: GeodesicModel,
    pub initial_loss: f64,
    pub loss_per_outer_iter: Vec<f64>,
    pub outer_iters_run: usize,
    pub wall_time: Duration,
    pub converged: bool,
    /// Outer iterations in which the `[H Y]` update saw a rank-deficient `M`.
    pub rank_collapses: usize,
}

impl FitReport {
    pub fn final_loss(&self) -> f64 {
        self.loss_per_outer_iter
            .last()
            .copied()
            .unwrap_or(self.initial_loss)
    }

    /// Whether `loss_{n+1} ≤ loss_n·(1 + rel_slack)` holds along the whole
    /// trajectory, starting from the initial loss.
    pub fn is_monotone(&self, rel_slack: f64) -> bool {
        std::iter::once(&self.initial_loss)
            .chain(&self.loss_per_outer_iter)
            .zip(&self.loss_per_outer_iter)
            .all(|(&prev, &next)| next <= prev * (1.0 + rel_slack))
    }
}

/// Snapshot handed to [`fit_observed`] after each outer iteration. The model
/// is expressed on the working (possibly re-centered) time axis.
#[derive(Debug)]
pub struct IterationState<'a> {
    pub iteration: usize,
    pub loss: f64,
    pub model: &'a GeodesicModel,
}

fn check_dims(dataset: &Dataset, model: &GeodesicModel) -> Result<()> {
    if dataset.dim() != model.dim() {
        return Err(Error::dims(format!(
            "model ambient dimension {} but data dimension {}",
            model.dim(),
            dataset.dim()
        )));
    }
    Ok(())
}

/// Least-squares residual `Σ_i ‖X_i − U(t_i)U(t_i)ᵀX_i‖_F²`.
pub fn loss(dataset: &Dataset, model: &GeodesicModel) -> Result<f64> {
    Ok(loss_per_sample(dataset, model)?.iter().sum())
}

/// Per-sample residuals `‖X_i − U(t_i)U(t_i)ᵀX_i‖_F²`.
pub fn loss_per_sample(dataset: &Dataset, model: &GeodesicModel) -> Result<Vec<f64>> {
    check_dims(dataset, model)?;
    Ok(dataset
        .iter()
        .map(|s| linalg::residual_norm_sq(&model.eval_matrix(s.t), &s.x))
        .collect())
}

/// Projections `X̂_i = U(t_i)U(t_i)ᵀX_i`.
pub fn reconstruct(dataset: &Dataset, model: &GeodesicModel) -> Result<Vec<DMatrix<f64>>> {
    check_dims(dataset, model)?;
    Ok(dataset
        .iter()
        .map(|s| {
            let u = model.eval_matrix(s.t);
            let coeffs = u.tr_mul(&s.x);
            u * coeffs
        })
        .collect())
}

/// Result of the `[H Y]` block update.
#[derive(Debug, Clone)]
pub struct QUpdate {
    /// Updated `(H, Y)` with `Θ` unchanged.
    pub model: GeodesicModel,
    /// `M` had numerical rank below `2k`. The update is still a valid Stiefel
    /// point minimizing the linear majorizer.
    pub rank_collapse: bool,
}

const RANK_COLLAPSE_RATIO: f64 = 1e-12;

/// `[H' Y'] = WVᵀ` from the thin SVD of
/// `M = Σ_i X_i X_iᵀ U(t_i) [cos(Θt_i)  sin(Θt_i)]`.
pub fn q_update(dataset: &Dataset, model: &GeodesicModel) -> Result<QUpdate> {
    check_dims(dataset, model)?;
    let (d, k) = (model.dim(), model.rank());
    let mut m = DMatrix::zeros(d, 2 * k);
    for s in dataset {
        let u = model.eval_matrix(s.t);
        // X_i Ĝ_iᵀ with Ĝ_iᵀ = X_iᵀ U(t_i)
        let xg = &s.x * s.x.tr_mul(&u);
        for j in 0..k {
            let (sin, cos) = (model.theta()[j] * s.t).sin_cos();
            m.column_mut(j).axpy(cos, &xg.column(j), 1.0);
            m.column_mut(k + j).axpy(sin, &xg.column(j), 1.0);
        }
    }
    let svd = linalg::thin_svd(&m);
    let sigma = &svd.singular_values;
    let largest = sigma.max();
    let rank_collapse = !(sigma.min() > RANK_COLLAPSE_RATIO * largest);
    let mut q = &svd.u * &svd.v_t;
    if linalg::orthonormality_deviation(&q) > 1e-10 {
        // degenerate factors; re-project while keeping the leading directions
        q = repair_stiefel(&q);
    }
    let h = q.columns(0, k).into_owned();
    let y = q.columns(k, k).into_owned();
    Ok(QUpdate {
        model: model.with_frame(h, y),
        rank_collapse,
    })
}

fn repair_stiefel(q: &DMatrix<f64>) -> DMatrix<f64> {
    let (d, p) = q.shape();
    let mut out = DMatrix::zeros(d, p);
    let mut filled = DMatrix::zeros(d, 0);
    for j in 0..p {
        let mut v = q.column(j).into_owned();
        linalg::project_out(&filled, &mut v);
        let norm = v.norm();
        let v = if norm > 1e-6 {
            v / norm
        } else {
            linalg::orthonormal_completion(&filled, 1)
                .column(0)
                .into_owned()
        };
        out.set_column(j, &v);
        filled = filled.insert_column(j, 0.0);
        filled.set_column(j, &v);
    }
    out
}

fn initial_model(dataset: &Dataset, init: &Init) -> Result<GeodesicModel> {
    let model = match init {
        Init::Random {
            rank,
            theta_max,
            seed,
        } => random_geodesic(dataset.dim(), *rank, *theta_max, *seed)?,
        Init::Endpoints {
            rank,
            pool_fraction,
        } => init_endpoints(dataset, *rank, *pool_fraction)?,
        Init::Provided(m) => m.clone(),
    };
    check_dims(dataset, &model)?;
    Ok(model)
}

/// One plain outer iteration: the `[H Y]` update followed by `inner` MM
/// steps on `Θ`.
fn mm_step(
    data: &Dataset,
    model: &GeodesicModel,
    inner: usize,
    times: &[f64],
) -> Result<(GeodesicModel, bool)> {
    let update = q_update(data, model)?;
    let model = update.model;
    let constants = theta_constants(data, model.h(), model.y())?;
    let mut theta = model.theta().clone();
    for _ in 0..inner {
        theta = theta_mm_step(&constants, &theta, times);
    }
    Ok((model.with_theta(theta), update.rank_collapse))
}

fn pack(model: &GeodesicModel) -> DVector<f64> {
    let q = model.stacked();
    DVector::from_iterator(
        q.len() + model.rank(),
        q.iter().chain(model.theta().iter()).copied(),
    )
}

/// Inverse of [`pack`], with the frame pulled back to the Stiefel manifold by
/// its polar factor.
fn unpack(p: &DVector<f64>, d: usize, k: usize) -> GeodesicModel {
    let q = DMatrix::from_column_slice(d, 2 * k, &p.as_slice()[..2 * d * k]);
    let svd = linalg::thin_svd(&q);
    let mut q = &svd.u * &svd.v_t;
    if linalg::orthonormality_deviation(&q) > 1e-10 {
        q = repair_stiefel(&q);
    }
    GeodesicModel::from_parts(
        q.columns(0, k).into_owned(),
        q.columns(k, k).into_owned(),
        DVector::from_column_slice(&p.as_slice()[2 * d * k..]),
    )
}

/// Losses below this fraction of the data energy are rounding noise; a fit
/// that reaches it has interpolated the data and stops.
const LOSS_FLOOR_RATIO: f64 = 1e-24;

/// Step lengths tried before settling for the plain double update.
const EXTRAPOLATION_BACKTRACKS: usize = 3;

/// Squared extrapolation (SQUAREM, step length `−‖r‖/‖v‖`) over two plain
/// updates, safeguarded against any loss increase.
fn accelerated_step(
    data: &Dataset,
    model: &GeodesicModel,
    start_loss: f64,
    inner: usize,
    times: &[f64],
) -> Result<(GeodesicModel, f64, usize)> {
    let (m1, c1) = mm_step(data, model, inner, times)?;
    let (m2, c2) = mm_step(data, &m1, inner, times)?;
    let mut collapses = usize::from(c1) + usize::from(c2);
    let l2 = loss(data, &m2)?;
    if !(l2 < start_loss) {
        return Ok((m2, l2, collapses));
    }
    let (p0, p1, p2) = (pack(model), pack(&m1), pack(&m2));
    let r = &p1 - &p0;
    let v = &p2 - &p1 - &r;
    let (rn, vn) = (r.norm(), v.norm());
    if !(rn > 0.0 && vn > 0.0) {
        return Ok((m2, l2, collapses));
    }
    let mut alpha = -rn / vn;
    for _ in 0..EXTRAPOLATION_BACKTRACKS {
        if alpha >= -1.0 {
            break;
        }
        let p = &p0 - &r * (2.0 * alpha) + &v * (alpha * alpha);
        if p.iter().all(|x| x.is_finite()) {
            let (m3, c3) = mm_step(data, &unpack(&p, model.dim(), model.rank()), inner, times)?;
            collapses += usize::from(c3);
            let l3 = loss(data, &m3)?;
            if l3 <= l2 {
                return Ok((m3, l3, collapses));
            }
        }
        alpha = 0.5 * (alpha - 1.0);
    }
    Ok((m2, l2, collapses))
}

/// Fits a geodesic with the default observer-free loop.
pub fn fit(dataset: &Dataset, config: &EstimatorConfig) -> Result<FitReport> {
    fit_observed(dataset, config, |_| {})
}

/// Alternates one `[H Y]` update with `inner_mm_iters` `Θ` steps for up to
/// `outer_iters` rounds, stopping once the relative loss decrease of a round
/// drops below `rel_loss_tol`.
pub fn fit_observed<F>(
    dataset: &Dataset,
    config: &EstimatorConfig,
    mut observer: F,
) -> Result<FitReport>
where
    F: FnMut(&IterationState<'_>),
{
    config.validate()?;
    let start = Instant::now();
    let offset = config.time_center.unwrap_or(0.0);
    let data: Cow<'_, Dataset> = match config.time_center {
        Some(t_h) => Cow::Owned(dataset.shift_times(t_h)),
        None => Cow::Borrowed(dataset),
    };
    let mut model = initial_model(dataset, &config.init)?;
    if config.time_center.is_some() {
        model = model.shifted(offset);
    }
    let times = data.times();

    let initial_loss = loss(&data, &model)?;
    let mut prev = initial_loss;
    let mut losses = Vec::with_capacity(config.outer_iters.min(4096));
    let mut converged = false;
    let mut rank_collapses = 0;
    let floor = LOSS_FLOOR_RATIO * data.energy();
    for iteration in 1..=config.outer_iters {
        let (next, current, collapses) = if config.accelerate {
            accelerated_step(&data, &model, prev, config.inner_mm_iters, &times)?
        } else {
            let (next, collapse) = mm_step(&data, &model, config.inner_mm_iters, &times)?;
            let current = loss(&data, &next)?;
            (next, current, usize::from(collapse))
        };
        model = next;
        rank_collapses += collapses;
        losses.push(current);
        observer(&IterationState {
            iteration,
            loss: current,
            model: &model,
        });
        if current <= floor || prev - current < config.rel_loss_tol * prev {
            converged = true;
            break;
        }
        prev = current;
    }

    let mut current = losses.last().copied().unwrap_or(initial_loss);
    if config.refine_iters > 0 && current > floor {
        converged = false;
        let mut refiner = refine::Refiner::new();
        for _ in 0..config.refine_iters {
            let Some((next, next_loss)) = refiner.step(&data, &model, current)? else {
                converged = true;
                break;
            };
            model = next;
            losses.push(next_loss);
            observer(&IterationState {
                iteration: losses.len(),
                loss: next_loss,
                model: &model,
            });
            let done = next_loss <= floor || current - next_loss < config.rel_loss_tol * current;
            current = next_loss;
            if done {
                converged = true;
                break;
            }
        }
    }

    if config.time_center.is_some() {
        model = model.shifted(-offset);
    }
    Ok(FitReport {
        model,
        initial_loss,
        outer_iters_run: losses.len(),
        loss_per_outer_iter: losses,
        wall_time: start.elapsed(),
        converged,
        rank_collapses,
    })
}
