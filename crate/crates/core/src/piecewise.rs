//! Piecewise geodesics with known knots, coupled by a continuity penalty.
//!
//! The total objective is
//!
//! ```text
//! Σ_j residual_j + λ Σ_knots (k − ‖U_j(1)ᵀ U_{j+1}(0)‖_F²)
//! ```
//!
//! where the penalty term is half the squared projector distance across a
//! knot. Refitting one segment with its neighbors' facing endpoints appended
//! as `√λ`-scaled pseudo-samples at local times 0 and 1 minimizes exactly the
//! part of this objective that depends on that segment.

use nalgebra::DMatrix;

use crate::dataset::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::estimator::{fit, EstimatorConfig, Init};
use crate::manifold::GeodesicModel;
use crate::metrics::subspace_error_matrices;

#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseModel {
    pub knots: Vec<f64>,
    pub segments: Vec<GeodesicModel>,
    pub lambda: f64,
}

impl PiecewiseModel {
    /// Segment index and local time for a global time `t`.
    pub fn locate(&self, t: f64) -> (usize, f64) {
        locate(&self.knots, t)
    }

    /// `U(t)`, evaluating the segment that owns `t`.
    pub fn eval_matrix(&self, t: f64) -> DMatrix<f64> {
        let (j, local) = self.locate(t);
        self.segments[j].eval_matrix(local)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseConfig {
    /// Settings for each per-segment fit. The init is used only for the
    /// first, uncoupled pass; later refits warm-start from the current segment.
    pub estimator: EstimatorConfig,
    pub max_sweeps: usize,
    pub rel_tol: f64,
}

impl PiecewiseConfig {
    pub fn new(estimator: EstimatorConfig) -> Self {
        Self {
            estimator,
            max_sweeps: 50,
            rel_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PiecewiseFit {
    pub model: PiecewiseModel,
    /// Penalized objective after the initial pass and after each sweep.
    pub objective_history: Vec<f64>,
    pub sweeps: usize,
}

fn locate(knots: &[f64], t: f64) -> (usize, f64) {
    let segments = knots.len() - 1;
    let j = (0..segments).rev().find(|&j| t >= knots[j]).unwrap_or(0);
    let local = if j == 0 && knots[0] == 0.0 && knots[1] == 1.0 {
        t
    } else {
        (t - knots[j]) / (knots[j + 1] - knots[j])
    };
    (j, local)
}

fn validate_knots(knots: &[f64]) -> Result<()> {
    if knots.len() < 2 {
        return Err(Error::InvalidSpec("need at least two knots".into()));
    }
    if knots.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidSpec(
            "knots must be strictly increasing".into(),
        ));
    }
    Ok(())
}

/// Splits a dataset by knot interval and rescales times to `[0, 1]`.
/// Interval `j` is `[knot_j, knot_{j+1})`; the last one also owns its right end.
pub fn split_by_knots(dataset: &Dataset, knots: &[f64]) -> Result<Vec<Dataset>> {
    validate_knots(knots)?;
    let segments = knots.len() - 1;
    let mut parts: Vec<Vec<Sample>> = vec![Vec::new(); segments];
    for s in dataset {
        if s.t < knots[0] || s.t > knots[segments] {
            return Err(Error::InvalidSpec(format!(
                "sample time {} outside the knot range",
                s.t
            )));
        }
        let (j, local) = locate(knots, s.t);
        parts[j].push(Sample::new(local.clamp(0.0, 1.0), s.x.clone()));
    }
    parts
        .into_iter()
        .enumerate()
        .map(|(j, p)| {
            if p.is_empty() {
                Err(Error::EmptySegment(j))
            } else {
                Dataset::new(p)
            }
        })
        .collect()
}

/// Per-sample residuals `‖X_i − U(t_i)U(t_i)ᵀX_i‖_F²` of a single geodesic.
pub fn loss_per_timepoint(dataset: &Dataset, model: &GeodesicModel) -> Result<Vec<f64>> {
    crate::estimator::loss_per_sample(dataset, model)
}

/// Subspace error across every interior knot.
pub fn continuity_gap(pw: &PiecewiseModel) -> Vec<f64> {
    pw.segments
        .windows(2)
        .map(|w| {
            subspace_error_matrices(&w[0].eval_matrix(1.0), &w[1].eval_matrix(0.0))
                .expect("segments share shape")
        })
        .collect()
}

fn knot_penalty(left: &GeodesicModel, right: &GeodesicModel) -> f64 {
    let a = left.eval_matrix(1.0);
    let b = right.eval_matrix(0.0);
    a.ncols() as f64 - a.tr_mul(&b).norm_squared()
}

/// `Σ_j residual_j + λ·Σ_knots penalty`.
pub fn penalized_objective(
    parts: &[Dataset],
    segments: &[GeodesicModel],
    lambda: f64,
) -> Result<f64> {
    let mut total = 0.0;
    for (data, seg) in parts.iter().zip(segments) {
        total += crate::estimator::loss(data, seg)?;
    }
    if lambda > 0.0 {
        total += lambda
            * segments
                .windows(2)
                .map(|w| knot_penalty(&w[0], &w[1]))
                .sum::<f64>();
    }
    Ok(total)
}

fn augmented(
    part: &Dataset,
    left: Option<&GeodesicModel>,
    right: Option<&GeodesicModel>,
    lambda: f64,
) -> Dataset {
    let scale = lambda.sqrt();
    let mut samples = Vec::with_capacity(part.len() + 2);
    if let Some(l) = left {
        samples.push(Sample::new(0.0, l.eval_matrix(1.0) * scale));
    }
    samples.extend(part.iter().cloned());
    if let Some(r) = right {
        samples.push(Sample::new(1.0, r.eval_matrix(0.0) * scale));
    }
    Dataset::new(samples).expect("segment data already validated")
}

/// Fits one geodesic per knot interval, then alternately sweeps left-to-right
/// and right-to-left refitting each segment against its neighbors.
pub fn fit_piecewise(
    dataset: &Dataset,
    knots: &[f64],
    lambda: f64,
    config: &PiecewiseConfig,
) -> Result<PiecewiseFit> {
    fit_piecewise_from(dataset, knots, lambda, config, None)
}

/// As [`fit_piecewise`], warm-starting from `initial` segments when given.
pub fn fit_piecewise_from(
    dataset: &Dataset,
    knots: &[f64],
    lambda: f64,
    config: &PiecewiseConfig,
    initial: Option<&[GeodesicModel]>,
) -> Result<PiecewiseFit> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidSpec(format!(
            "lambda must be >= 0, got {lambda}"
        )));
    }
    let parts = split_by_knots(dataset, knots)?;
    let segments_n = parts.len();
    let mut segments: Vec<GeodesicModel> = match initial {
        Some(init) => {
            if init.len() != segments_n {
                return Err(Error::dims(format!(
                    "{} initial segments for {segments_n} intervals",
                    init.len()
                )));
            }
            if let Some(m) = init.iter().find(|m| m.dim() != dataset.dim()) {
                return Err(Error::dims(format!(
                    "segment dimension {} vs data {}",
                    m.dim(),
                    dataset.dim()
                )));
            }
            init.to_vec()
        }
        None => parts
            .iter()
            .map(|p| fit(p, &config.estimator).map(|r| r.model))
            .collect::<Result<_>>()?,
    };

    let mut history = vec![penalized_objective(&parts, &segments, lambda)?];
    let mut sweeps = 0;
    if lambda > 0.0 && segments_n > 1 {
        for sweep in 0..config.max_sweeps {
            let order: Vec<usize> = if sweep % 2 == 0 {
                (0..segments_n).collect()
            } else {
                (0..segments_n).rev().collect()
            };
            for j in order {
                let left = j.checked_sub(1).map(|l| &segments[l]);
                let right = segments.get(j + 1);
                let data = augmented(&parts[j], left, right, lambda);
                let cfg = config
                    .estimator
                    .clone()
                    .with_init(Init::Provided(segments[j].clone()));
                segments[j] = fit(&data, &cfg)?.model;
            }
            sweeps += 1;
            let current = penalized_objective(&parts, &segments, lambda)?;
            let prev = *history.last().expect("non-empty");
            history.push(current);
            if prev <= 0.0 || prev - current < config.rel_tol * prev {
                break;
            }
        }
    }
    Ok(PiecewiseFit {
        model: PiecewiseModel {
            knots: knots.to_vec(),
            segments,
            lambda,
        },
        objective_history: history,
        sweeps,
    })
}

/// Fits at each `λ` in turn, warm-starting every stage from the previous one.
pub fn fit_piecewise_continuation(
    dataset: &Dataset,
    knots: &[f64],
    lambdas: &[f64],
    config: &PiecewiseConfig,
) -> Result<Vec<PiecewiseFit>> {
    let mut stages: Vec<PiecewiseFit> = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let init = stages.last().map(|s| s.model.segments.clone());
        stages.push(fit_piecewise_from(
            dataset,
            knots,
            lambda,
            config,
            init.as_deref(),
        )?);
    }
    Ok(stages)
}

/// Geometric λ schedule `0, start, 10·start, …` up to and including `max`.
pub fn lambda_schedule(start: f64, max: f64) -> Vec<f64> {
    let mut out = vec![0.0];
    let mut l = start;
    while l <= max * (1.0 + 1e-12) {
        out.push(l);
        l *= 10.0;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::random_geodesic;
    use crate::synth::planted_instance;

    fn cfg(rank: usize) -> PiecewiseConfig {
        PiecewiseConfig::new(
            EstimatorConfig::new(Init::Random {
                rank,
                theta_max: 0.5,
                seed: 11,
            })
            .with_outer_iters(60),
        )
    }

    #[test]
    fn single_segment_matches_plain_fit() {
        let inst = planted_instance(10, 2, 1, 12, 1e-3, 1.0, 2).unwrap();
        let c = cfg(2);
        let pw = fit_piecewise(&inst.dataset, &[0.0, 1.0], 5.0, &c).unwrap();
        let plain = fit(&inst.dataset, &c.estimator).unwrap();
        assert_eq!(pw.model.segments[0], plain.model);
    }

    #[test]
    fn zero_lambda_is_independent_fits() {
        let inst = planted_instance(10, 1, 1, 20, 1e-3, 1.0, 3).unwrap();
        let knots = [0.0, 0.5, 1.0];
        let c = cfg(1);
        let pw = fit_piecewise(&inst.dataset, &knots, 0.0, &c).unwrap();
        let parts = split_by_knots(&inst.dataset, &knots).unwrap();
        for (seg, part) in pw.model.segments.iter().zip(&parts) {
            assert_eq!(*seg, fit(part, &c.estimator).unwrap().model);
        }
    }

    #[test]
    fn empty_interval_rejected() {
        let inst = planted_instance(8, 1, 1, 3, 0.0, 1.0, 1).unwrap();
        let err = fit_piecewise(&inst.dataset, &[0.0, 0.1, 0.2, 1.0], 1.0, &cfg(1)).unwrap_err();
        assert!(matches!(err, Error::EmptySegment(1)), "{err}");
    }

    #[test]
    fn gaps_of_identical_and_orthogonal_segments() {
        let m = random_geodesic(8, 2, 0.0, 5).unwrap();
        let pw = PiecewiseModel {
            knots: vec![0.0, 0.5, 1.0],
            segments: vec![m.clone(), m.clone()],
            lambda: 0.0,
        };
        assert!(continuity_gap(&pw).iter().all(|&g| g < 1e-15));
        let flipped = GeodesicModel::new(m.y().clone(), m.h().clone(), m.theta().clone()).unwrap();
        let pw = PiecewiseModel {
            knots: vec![0.0, 0.5, 1.0],
            segments: vec![m, flipped],
            lambda: 0.0,
        };
        assert!((continuity_gap(&pw)[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn gap_matches_projector_oracle() {
        let a = random_geodesic(7, 2, 1.0, 1).unwrap();
        let b = random_geodesic(7, 2, 1.0, 2).unwrap();
        let pw = PiecewiseModel {
            knots: vec![0.0, 0.3, 1.0],
            segments: vec![a.clone(), b.clone()],
            lambda: 1.0,
        };
        let pa = a.eval(1.0).projector();
        let pb = b.eval(0.0).projector();
        let oracle = (pa - pb).norm() / 2f64.sqrt() / 2f64.sqrt();
        assert!((continuity_gap(&pw)[0] - oracle).abs() < 1e-12);
    }

    #[test]
    fn per_timepoint_loss_sums_and_flags_outlier() {
        let inst = planted_instance(10, 2, 2, 8, 0.0, 1.0, 7).unwrap();
        let clean = loss_per_timepoint(&inst.dataset, &inst.truth).unwrap();
        assert!(clean.iter().all(|&l| l <= 1e-24));
        let mut samples = inst.dataset.samples().to_vec();
        samples[5].x[(0, 0)] += 3.0;
        let bad = Dataset::new(samples).unwrap();
        let profile = loss_per_timepoint(&bad, &inst.truth).unwrap();
        let total = crate::estimator::loss(&bad, &inst.truth).unwrap();
        assert!((profile.iter().sum::<f64>() - total).abs() <= 1e-12 * total);
        let worst = profile
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(worst, 5);
    }

    #[test]
    fn schedule() {
        assert_eq!(
            lambda_schedule(1.0, 1000.0),
            vec![0.0, 1.0, 10.0, 100.0, 1000.0]
        );
    }
}
