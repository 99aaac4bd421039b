//! Points and geodesics on the Grassmannian.
//!
//! A geodesic is stored as the triple `(H, Y, θ)` and evaluated as
//!
//! ```text
//! U(t) = H·diag(cos θ_j t) + Y·diag(sin θ_j t)
//! ```
//!
//! where `H` and `Y` are `d × k` with orthonormal columns and `HᵀY = 0`.
//! Only the span of `U(t)` is meaningful, so column permutations and the
//! joint sign flip `(y_j, θ_j) → (−y_j, −θ_j)` describe the same curve.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::error::{Error, Result};
use crate::linalg;

/// Tolerance used when validating user-supplied bases.
pub const CONSTRUCTION_TOL: f64 = 1e-8;

/// A `d × r` matrix with orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthonormalBasis(DMatrix<f64>);

impl OrthonormalBasis {
    /// Validates orthonormality to [`CONSTRUCTION_TOL`].
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.ncols() == 0 || m.ncols() > m.nrows() {
            return Err(Error::dims(format!(
                "basis must have 1 <= r <= d, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let deviation = linalg::orthonormality_deviation(&m);
        if !(deviation <= CONSTRUCTION_TOL) {
            return Err(Error::NotOrthonormal { deviation });
        }
        Ok(Self(m))
    }

    /// Orthonormalizes an arbitrary full-column-rank matrix.
    pub fn orthonormalize(m: &DMatrix<f64>) -> Result<Self> {
        Self::new(linalg::orthonormalize(m))
    }

    pub(crate) fn from_trusted(m: DMatrix<f64>) -> Self {
        debug_assert!(linalg::orthonormality_deviation(&m) < 1e-6);
        Self(m)
    }

    /// Ambient dimension `d`.
    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    /// Number of columns `r`.
    pub fn rank(&self) -> usize {
        self.0.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    /// Orthogonal projector `UUᵀ` (d × d). Intended for tests and small `d`.
    pub fn projector(&self) -> DMatrix<f64> {
        &self.0 * self.0.transpose()
    }
}

impl AsRef<DMatrix<f64>> for OrthonormalBasis {
    fn as_ref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Geodesic `U(t) = H cos(Θt) + Y sin(Θt)` on the Grassmannian.
#[derive(Debug, Clone, PartialEq)]
pub struct GeodesicModel {
    h: OrthonormalBasis,
    y: OrthonormalBasis,
    theta: DVector<f64>,
}

impl GeodesicModel {
    /// Builds a validated model. `h` and `y` must be `d × k` with orthonormal
    /// columns, `2k ≤ d`, and `HᵀY = 0` to within [`CONSTRUCTION_TOL`].
    pub fn new(h: DMatrix<f64>, y: DMatrix<f64>, theta: impl Into<DVector<f64>>) -> Result<Self> {
        let theta = theta.into();
        if h.shape() != y.shape() {
            return Err(Error::dims(format!(
                "H is {:?} but Y is {:?}",
                h.shape(),
                y.shape()
            )));
        }
        let (d, k) = h.shape();
        if k == 0 || 2 * k > d {
            return Err(Error::dims(format!(
                "geodesic needs 1 <= k and 2k <= d, got d={d} k={k}"
            )));
        }
        if theta.len() != k {
            return Err(Error::dims(format!(
                "theta has {} entries, expected {k}",
                theta.len()
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::dims("theta must be finite".to_string()));
        }
        let h = OrthonormalBasis::new(h)?;
        let y = OrthonormalBasis::new(y)?;
        let deviation = h.0.tr_mul(&y.0).amax();
        if !(deviation <= CONSTRUCTION_TOL) {
            return Err(Error::NotTangent { deviation });
        }
        Ok(Self { h, y, theta })
    }

    pub(crate) fn from_parts(h: DMatrix<f64>, y: DMatrix<f64>, theta: DVector<f64>) -> Self {
        Self {
            h: OrthonormalBasis::from_trusted(h),
            y: OrthonormalBasis::from_trusted(y),
            theta,
        }
    }

    pub fn dim(&self) -> usize {
        self.h.dim()
    }

    pub fn rank(&self) -> usize {
        self.h.rank()
    }

    pub fn h(&self) -> &DMatrix<f64> {
        self.h.matrix()
    }

    pub fn y(&self) -> &DMatrix<f64> {
        self.y.matrix()
    }

    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    /// The stacked `[H Y]` (d × 2k).
    pub fn stacked(&self) -> DMatrix<f64> {
        let (d, k) = (self.dim(), self.rank());
        let mut q = DMatrix::zeros(d, 2 * k);
        q.columns_mut(0, k).copy_from(self.h());
        q.columns_mut(k, k).copy_from(self.y());
        q
    }

    /// Same `Θ`, new `(H, Y)`.
    pub(crate) fn with_frame(&self, h: DMatrix<f64>, y: DMatrix<f64>) -> Self {
        Self::from_parts(h, y, self.theta.clone())
    }

    pub(crate) fn with_theta(&self, theta: DVector<f64>) -> Self {
        Self {
            h: self.h.clone(),
            y: self.y.clone(),
            theta,
        }
    }

    /// `U(t)` as a raw matrix.
    pub fn eval_matrix(&self, t: f64) -> DMatrix<f64> {
        let mut u = self.h().clone();
        for j in 0..self.rank() {
            let (s, c) = (self.theta[j] * t).sin_cos();
            let mut col = u.column_mut(j);
            col *= c;
            col.axpy(s, &self.y().column(j), 1.0);
        }
        u
    }

    /// Evaluates the geodesic at `t` (any real `t`).
    pub fn eval(&self, t: f64) -> OrthonormalBasis {
        OrthonormalBasis::from_trusted(self.eval_matrix(t))
    }

    /// The same curve re-parameterized so that the new model at `s` equals the
    /// old model at `s + offset`.
    pub fn shifted(&self, offset: f64) -> Self {
        let mut h = self.h().clone();
        let mut y = self.y().clone();
        for j in 0..self.rank() {
            let (s, c) = (self.theta[j] * offset).sin_cos();
            let hj = self.h().column(j);
            let yj = self.y().column(j);
            h.set_column(j, &(hj * c + yj * s));
            y.set_column(j, &(yj * c - hj * s));
        }
        Self::from_parts(h, y, self.theta.clone())
    }

    /// Makes every `θ_j` non-negative (negating the matching `Y` column) and
    /// orders columns by descending `θ`. The projector path is unchanged.
    pub fn canonicalize(&self) -> Self {
        let k = self.rank();
        let mut y = self.y().clone();
        let mut theta = self.theta.clone();
        for j in 0..k {
            if theta[j] < 0.0 {
                theta[j] = -theta[j];
                y.column_mut(j).neg_mut();
            }
        }
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| theta[b].total_cmp(&theta[a]));
        let h = DMatrix::from_fn(self.dim(), k, |i, j| self.h()[(i, order[j])]);
        let y = DMatrix::from_fn(self.dim(), k, |i, j| y[(i, order[j])]);
        let theta = DVector::from_fn(k, |j, _| theta[order[j]]);
        Self::from_parts(h, y, theta)
    }

    /// A constant geodesic at `span(u)`; `Y` is an orthonormal completion.
    pub fn constant(u: &OrthonormalBasis) -> Result<Self> {
        let (d, k) = (u.dim(), u.rank());
        if 2 * k > d {
            return Err(Error::dims(format!(
                "geodesic needs 2k <= d, got d={d} k={k}"
            )));
        }
        let y = linalg::orthonormal_completion(u.matrix(), k);
        Ok(Self::from_parts(u.matrix().clone(), y, DVector::zeros(k)))
    }
}

/// Geodesic with `span U(0) = span(start)` and `span U(1) = span(end)`.
///
/// With `Uₛᵀ Uₑ = A cos(Θ) Bᵀ`, the base point is `H = Uₛ A` and the columns of
/// `(I − Uₛ Uₛᵀ) Uₑ B` have norms `sin θ_j`; normalizing them gives `Y`.
/// Directions with `θ_j = 0` get an arbitrary orthonormal completion.
pub fn connect(start: &OrthonormalBasis, end: &OrthonormalBasis) -> Result<GeodesicModel> {
    if start.dim() != end.dim() || start.rank() != end.rank() {
        return Err(Error::dims(format!(
            "endpoints are {}x{} and {}x{}",
            start.dim(),
            start.rank(),
            end.dim(),
            end.rank()
        )));
    }
    let (d, k) = (start.dim(), start.rank());
    if 2 * k > d {
        return Err(Error::dims(format!(
            "geodesic needs 2k <= d, got d={d} k={k}"
        )));
    }
    let cross = start.matrix().tr_mul(end.matrix());
    let svd = linalg::thin_svd(&cross);
    let h = start.matrix() * &svd.u;
    let end_rot = end.matrix() * svd.v_t.transpose();
    let mut cosines = svd.singular_values.clone();
    // residual of the rotated end basis against span(H); columns mutually orthogonal
    let mut diff = &end_rot - &h * DMatrix::from_diagonal(&cosines);
    for j in 0..k {
        let mut col = diff.column(j).into_owned();
        linalg::project_out(&h, &mut col);
        diff.set_column(j, &col);
    }

    const COINCIDENT: f64 = 1e-13;
    let mut y = DMatrix::zeros(d, k);
    let mut theta = DVector::zeros(k);
    let mut frame = h.clone();
    let mut pending = Vec::new();
    for j in 0..k {
        let mut col = diff.column(j).into_owned();
        let sine = col.norm();
        cosines[j] = cosines[j].min(1.0);
        theta[j] = sine.atan2(cosines[j]);
        if sine <= COINCIDENT {
            theta[j] = 0.0;
            pending.push(j);
            continue;
        }
        col /= sine;
        linalg::project_out(&frame, &mut col);
        col.normalize_mut();
        y.set_column(j, &col);
        let n = frame.ncols();
        frame = frame.insert_column(n, 0.0);
        let last = frame.ncols() - 1;
        frame.set_column(last, &col);
    }
    if !pending.is_empty() {
        let completion = linalg::orthonormal_completion(&frame, pending.len());
        for (c, &j) in pending.iter().enumerate() {
            y.set_column(j, &completion.column(c));
        }
    }
    Ok(GeodesicModel::from_parts(h, y, theta))
}

/// Random geodesic: `[H Y]` from an orthonormalized `d × 2k` standard normal
/// matrix, `θ_j ~ U[−theta_max, theta_max]`. Deterministic in `seed`.
pub fn random_geodesic(d: usize, k: usize, theta_max: f64, seed: u64) -> Result<GeodesicModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_geodesic_with(d, k, theta_max, &mut rng)
}

pub(crate) fn random_geodesic_with(
    d: usize,
    k: usize,
    theta_max: f64,
    rng: &mut ChaCha8Rng,
) -> Result<GeodesicModel> {
    if k == 0 || 2 * k > d {
        return Err(Error::dims(format!(
            "geodesic needs 1 <= k and 2k <= d, got d={d} k={k}"
        )));
    }
    if !(0.0..=std::f64::consts::FRAC_PI_2).contains(&theta_max) {
        return Err(Error::dims(format!(
            "theta_max must lie in [0, pi/2], got {theta_max}"
        )));
    }
    let gauss = DMatrix::from_fn(d, 2 * k, |_, _| StandardNormal.sample(rng));
    let q = linalg::orthonormalize(&gauss);
    let angle = Uniform::new_inclusive(-theta_max, theta_max).expect("finite bounds");
    let theta = DVector::from_fn(k, |_, _| angle.sample(rng));
    Ok(GeodesicModel::from_parts(
        q.columns(0, k).into_owned(),
        q.columns(k, k).into_owned(),
        theta,
    ))
}
