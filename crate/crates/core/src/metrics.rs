//! Subspace and reconstruction error metrics.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::manifold::{GeodesicModel, OrthonormalBasis};

/// Default number of uniform grid points used by [`geodesic_error`].
pub const DEFAULT_QUADRATURE_POINTS: usize = 201;

/// A named metric value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub name: String,
    pub value: f64,
    pub n_quadrature: Option<usize>,
}

/// `(1/√(2k))·‖UUᵀ − VVᵀ‖_F`, in `[0, 1]`.
///
/// Uses `‖UUᵀ − VVᵀ‖_F² = 2‖(I − UUᵀ)V‖_F²` (equal ranks), which equals
/// `2k − 2‖UᵀV‖_F²` but does not cancel catastrophically for nearby spans.
pub fn subspace_error(u: &OrthonormalBasis, v: &OrthonormalBasis) -> Result<f64> {
    subspace_error_matrices(u.matrix(), v.matrix())
}

pub(crate) fn subspace_error_matrices(u: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<f64> {
    if u.shape() != v.shape() {
        return Err(Error::dims(format!(
            "bases are {:?} and {:?}",
            u.shape(),
            v.shape()
        )));
    }
    let k = u.ncols() as f64;
    let residual = crate::linalg::residual_norm_sq(u, v);
    Ok((residual / k).sqrt().min(1.0))
}

/// Root-mean-square subspace error along `n_quad` uniformly spaced times in
/// `[0, 1]`, endpoints included.
pub fn geodesic_error(m1: &GeodesicModel, m2: &GeodesicModel, n_quad: usize) -> Result<f64> {
    if m1.dim() != m2.dim() || m1.rank() != m2.rank() {
        return Err(Error::dims(format!(
            "models are {}x{} and {}x{}",
            m1.dim(),
            m1.rank(),
            m2.dim(),
            m2.rank()
        )));
    }
    if n_quad < 2 {
        return Err(Error::dims(format!(
            "need at least 2 quadrature points, got {n_quad}"
        )));
    }
    let mut acc = 0.0;
    for i in 0..n_quad {
        let t = i as f64 / (n_quad - 1) as f64;
        let e = subspace_error_matrices(&m1.eval_matrix(t), &m2.eval_matrix(t))?;
        acc += e * e;
    }
    Ok((acc / n_quad as f64).sqrt())
}

pub fn geodesic_error_report(
    m1: &GeodesicModel,
    m2: &GeodesicModel,
    n_quad: usize,
) -> Result<MetricReport> {
    Ok(MetricReport {
        name: "geodesic_error".into(),
        value: geodesic_error(m1, m2, n_quad)?,
        n_quadrature: Some(n_quad),
    })
}

/// `√(Σ‖X̂_i − X_i‖²) / √(Σ‖X_i‖²)`, relative to the clean data.
pub fn data_error(reconstructed: &[DMatrix<f64>], clean: &[DMatrix<f64>]) -> Result<f64> {
    if reconstructed.len() != clean.len() {
        return Err(Error::dims(format!(
            "{} reconstructed samples vs {} clean",
            reconstructed.len(),
            clean.len()
        )));
    }
    let mut residual = 0.0;
    let mut energy = 0.0;
    for (i, (r, c)) in reconstructed.iter().zip(clean).enumerate() {
        if r.shape() != c.shape() {
            return Err(Error::dims(format!(
                "sample {i}: {:?} vs {:?}",
                r.shape(),
                c.shape()
            )));
        }
        residual += (r - c).norm_squared();
        energy += c.norm_squared();
    }
    Ok((residual / energy).sqrt())
}

/// Peak signal-to-noise ratio in dB for 8-bit pixel scale. Identical frames
/// give `+∞`.
pub fn psnr(reconstructed: &DMatrix<f64>, clean: &DMatrix<f64>) -> Result<f64> {
    if reconstructed.shape() != clean.shape() {
        return Err(Error::dims(format!(
            "{:?} vs {:?}",
            reconstructed.shape(),
            clean.shape()
        )));
    }
    let n = (clean.nrows() * clean.ncols()) as f64;
    let rmse = (clean - reconstructed).norm() / n.sqrt();
    if rmse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(20.0 * (255.0 / rmse).log10())
}
