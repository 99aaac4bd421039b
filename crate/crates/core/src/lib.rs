//! Geodesic subspace estimation on the Grassmannian.
//!
//! A time-varying subspace is modeled as a single geodesic
//! `U(t) = H cos(Θt) + Y sin(Θt)` and fitted to batched observations
//! `{(t_i, X_i)}` by alternating a Stiefel-projected `[H Y]` update with
//! per-angle quadratic majorize-minimize steps on `Θ`. Every step is
//! monotone in the least-squares loss.

// Negated comparisons are how NaN gets rejected alongside out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod dataset;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod io;
pub mod landscape;
pub mod linalg;
pub mod manifold;
pub mod metrics;
pub mod piecewise;
pub mod synth;

pub use dataset::{Dataset, Sample};
pub use error::{Error, Result};
pub use estimator::{fit, loss, reconstruct, EstimatorConfig, FitReport, Init};
pub use manifold::{connect, random_geodesic, GeodesicModel, OrthonormalBasis};
pub use metrics::{geodesic_error, subspace_error};
pub use piecewise::{PiecewiseConfig, PiecewiseModel};
pub use synth::{planted_instance, PlantedInstance};

pub use nalgebra::{DMatrix, DVector};
