//! Per-angle quadratic majorize-minimize update for `Θ`.
//!
//! For fixed `(H, Y)` the loss separates over the diagonal of `Θ` into sums
//! of terms `f(θ) = −r cos(2θt − φ) + b`. Each term is majorized by a
//! quadratic with the translated Huber curvature
//!
//! ```text
//! w(θ') = f'(θ') / δ(θ'),   δ(θ') = mod(θ' − φ/(2t) + π/(2t), π/t) − π/(2t)
//! ```
//!
//! whose vertex sits at the term's minimizer `φ/(2t)` (mod `π/t`). Summing the
//! quadratics over samples and minimizing gives `θ ← θ − Σf' / Σw`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Coefficients of the separable `Θ` loss, one row per sample and one
/// column per angle.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaConstants {
    pub alpha: DMatrix<f64>,
    pub beta: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub phi: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl ThetaConstants {
    pub fn samples(&self) -> usize {
        self.alpha.nrows()
    }

    pub fn angles(&self) -> usize {
        self.alpha.ncols()
    }

    /// Builds `r, φ, b` from the three quadratic-form diagonals.
    pub fn from_quadratic_forms(
        alpha: DMatrix<f64>,
        beta: DMatrix<f64>,
        gamma: DMatrix<f64>,
    ) -> Self {
        let half_diff = (&alpha - &gamma) * 0.5;
        let r = half_diff.zip_map(&beta, |a, b| a.hypot(b));
        let phi = half_diff.zip_map(&beta, |a, b| b.atan2(a));
        let b = (&alpha + &gamma) * 0.5;
        Self {
            alpha,
            beta,
            gamma,
            r,
            phi,
            b,
        }
    }

    /// `Σ_i f_{i,j}(θ)`; the per-angle objective minimized by the MM step.
    pub fn separable_loss(&self, j: usize, theta: f64, times: &[f64]) -> f64 {
        times
            .iter()
            .enumerate()
            .map(|(i, &t)| term_value(theta, t, self.r[(i, j)], self.phi[(i, j)], self.b[(i, j)]))
            .sum()
    }

    /// `Σ_i f'_{i,j}(θ)`.
    pub fn separable_gradient(&self, j: usize, theta: f64, times: &[f64]) -> f64 {
        times
            .iter()
            .enumerate()
            .map(|(i, &t)| derivative(theta, t, self.r[(i, j)], self.phi[(i, j)]))
            .sum()
    }
}

/// `α, β, γ` are the diagonals of `HᵀXXᵀH`, `YᵀXXᵀH`, `YᵀXXᵀY`, computed from
/// the `k × ℓ` products `HᵀX` and `YᵀX`.
pub fn theta_constants(
    dataset: &Dataset,
    h: &DMatrix<f64>,
    y: &DMatrix<f64>,
) -> Result<ThetaConstants> {
    if h.shape() != y.shape() || h.nrows() != dataset.dim() {
        return Err(Error::dims(format!(
            "H {:?} / Y {:?} incompatible with data dimension {}",
            h.shape(),
            y.shape(),
            dataset.dim()
        )));
    }
    let (n, k) = (dataset.len(), h.ncols());
    let mut alpha = DMatrix::zeros(n, k);
    let mut beta = DMatrix::zeros(n, k);
    let mut gamma = DMatrix::zeros(n, k);
    for (i, s) in dataset.iter().enumerate() {
        let hx = h.tr_mul(&s.x);
        let yx = y.tr_mul(&s.x);
        for j in 0..k {
            let (hr, yr) = (hx.row(j), yx.row(j));
            alpha[(i, j)] = hr.dot(&hr);
            beta[(i, j)] = yr.dot(&hr);
            gamma[(i, j)] = yr.dot(&yr);
        }
    }
    Ok(ThetaConstants::from_quadratic_forms(alpha, beta, gamma))
}

/// `f(θ) = −r cos(2θt − φ) + b`.
pub fn term_value(theta: f64, t: f64, r: f64, phi: f64, b: f64) -> f64 {
    -r * (2.0 * theta * t - phi).cos() + b
}

/// `f'(θ) = 2rt sin(2θt − φ)`.
pub fn derivative(theta: f64, t: f64, r: f64, phi: f64) -> f64 {
    2.0 * r * t * (2.0 * theta * t - phi).sin()
}

/// Signed offset of `θ` from the nearest minimizer `(φ + 2πm)/(2t)`, wrapped
/// into `[−π/(2t), π/(2t))`.
pub fn wrapped_offset(theta: f64, t: f64, phi: f64) -> f64 {
    let half_period = PI / (2.0 * t);
    ((theta - phi / (2.0 * t)) + half_period).rem_euclid(2.0 * half_period) - half_period
}

/// Translated Huber curvature `w(θ) = f'(θ)/δ(θ)` with the limit `4t²r` at
/// the touch points. Evaluated as `4t²r · sinc(2tδ)`, which is the same
/// quantity without the `0/0` near the minimizer.
pub fn curvature(theta: f64, t: f64, r: f64, phi: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::NonpositiveTime(t));
    }
    Ok(curvature_unchecked(theta, t, r, phi))
}

fn curvature_unchecked(theta: f64, t: f64, r: f64, phi: f64) -> f64 {
    let x = 2.0 * t * wrapped_offset(theta, t, phi);
    4.0 * t * t * r * sinc(x)
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// The quadratic `q(θ; θ') = f(θ') + f'(θ')(θ − θ') + ½ w(θ')(θ − θ')²`.
pub fn majorizer(theta: f64, anchor: f64, t: f64, r: f64, phi: f64, b: f64) -> Result<f64> {
    let w = curvature(anchor, t, r, phi)?;
    let step = theta - anchor;
    Ok(term_value(anchor, t, r, phi, b)
        + derivative(anchor, t, r, phi) * step
        + 0.5 * w * step * step)
}

/// One MM step for every angle. Samples at `t = 0` are constant in `θ` and
/// skipped; negative times are folded onto `t > 0` via `(t, φ) → (−t, −φ)`.
/// An angle whose curvature sum vanishes is left unchanged.
pub fn theta_mm_step(
    constants: &ThetaConstants,
    theta: &DVector<f64>,
    times: &[f64],
) -> DVector<f64> {
    assert_eq!(times.len(), constants.samples(), "one time per sample");
    assert_eq!(theta.len(), constants.angles(), "one angle per column");
    let mut next = theta.clone();
    for j in 0..constants.angles() {
        let th = theta[j];
        let mut grad = 0.0;
        let mut weight = 0.0;
        for (i, &t) in times.iter().enumerate() {
            if t == 0.0 {
                continue;
            }
            let r = constants.r[(i, j)];
            let phi = constants.phi[(i, j)];
            let (t, phi) = if t < 0.0 { (-t, -phi) } else { (t, phi) };
            grad += derivative(th, t, r, phi);
            weight += curvature_unchecked(th, t, r, phi);
        }
        if weight > 0.0 && weight.is_finite() {
            next[j] = th - grad / weight;
        }
    }
    next
}
