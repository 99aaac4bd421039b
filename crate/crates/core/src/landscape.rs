//! Rank-1 geodesics in the plane, where the loss is a function of two angles.
//!
//! With `H = [cos ω; sin ω]` and `Y = [−sin ω; cos ω]`, `U(t)` is the line at
//! angle `ω + θt`, and the loss is
//!
//! ```text
//! Σ‖X_i‖² − Σ_i (r_i cos(2θt_i − φ_i + 2ω) + b_i)
//! ```
//!
//! with `r, φ, b` built from the data at `[H Y] = I`.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{DMatrix, DVector};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::estimator::{fit_observed, theta_constants, EstimatorConfig, FitReport};
use crate::manifold::GeodesicModel;

/// The planar rank-1 model at coordinates `(ω, θ)`.
pub fn planar_model(omega: f64, theta: f64) -> GeodesicModel {
    let (s, c) = omega.sin_cos();
    GeodesicModel::from_parts(
        DMatrix::from_column_slice(2, 1, &[c, s]),
        DMatrix::from_column_slice(2, 1, &[-s, c]),
        DVector::from_element(1, theta),
    )
}

fn require_planar(dataset: &Dataset) -> Result<()> {
    if dataset.dim() != 2 {
        return Err(Error::dims(format!(
            "landscape needs d = 2, got {}",
            dataset.dim()
        )));
    }
    Ok(())
}

/// Loss values on the `(ω, θ)` grid; rows follow `omega_grid`, columns
/// follow `theta_grid`.
pub fn loss_surface_2d(
    dataset: &Dataset,
    omega_grid: &[f64],
    theta_grid: &[f64],
) -> Result<DMatrix<f64>> {
    require_planar(dataset)?;
    let identity = DMatrix::<f64>::identity(2, 2);
    let consts = theta_constants(
        dataset,
        &identity.columns(0, 1).into_owned(),
        &identity.columns(1, 1).into_owned(),
    )?;
    let energy = dataset.energy();
    let times = dataset.times();
    Ok(DMatrix::from_fn(
        omega_grid.len(),
        theta_grid.len(),
        |a, b| {
            let (omega, theta) = (omega_grid[a], theta_grid[b]);
            let captured: f64 = times
                .iter()
                .enumerate()
                .map(|(i, &t)| {
                    consts.r[(i, 0)] * (2.0 * theta * t - consts.phi[(i, 0)] + 2.0 * omega).cos()
                        + consts.b[(i, 0)]
                })
                .sum();
            energy - captured
        },
    ))
}

/// `n` evenly spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// Every time replaced by `t − t_H`.
pub fn recenter_times(dataset: &Dataset, t_h: f64) -> Dataset {
    dataset.shift_times(t_h)
}

/// `(ω, θ)` of a planar rank-1 model, with `ω ∈ (−π/2, π/2]` and the sign of
/// `Y` relative to `[−sin ω; cos ω]` folded into `θ`.
pub fn planar_coordinates(model: &GeodesicModel) -> Result<(f64, f64)> {
    if model.dim() != 2 || model.rank() != 1 {
        return Err(Error::dims(format!(
            "need a 2x1 model, got {}x{}",
            model.dim(),
            model.rank()
        )));
    }
    let (h0, h1) = (model.h()[(0, 0)], model.h()[(1, 0)]);
    let mut omega = h1.atan2(h0);
    let mut flip = 1.0;
    if omega > FRAC_PI_2 {
        omega -= PI;
        flip = -1.0;
    } else if omega <= -FRAC_PI_2 {
        omega += PI;
        flip = -1.0;
    }
    // H was negated by the branch shift; Y compared against the rotated normal
    let normal = [-omega.sin(), omega.cos()];
    let along = flip * (model.y()[(0, 0)] * normal[0] + model.y()[(1, 0)] * normal[1]);
    let theta = if along < 0.0 {
        -model.theta()[0]
    } else {
        model.theta()[0]
    };
    Ok((omega, theta))
}

/// Runs a fit and records `(ω, θ)` after every outer iteration, on the
/// working time axis (re-centered when `config.time_center` is set).
pub fn record_iterates(
    dataset: &Dataset,
    config: &EstimatorConfig,
) -> Result<(Vec<(f64, f64)>, FitReport)> {
    require_planar(dataset)?;
    if config.init.rank() != 1 {
        return Err(Error::dims("landscape iterates need rank 1"));
    }
    let mut points = Vec::new();
    let report = fit_observed(dataset, config, |state| {
        points.push(planar_coordinates(state.model).expect("planar rank-1 model"));
    })?;
    Ok((points, report))
}
