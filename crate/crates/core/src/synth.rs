//! Planted-model data generation.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::dataset::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::manifold::{random_geodesic_with, GeodesicModel};
use crate::piecewise::PiecewiseModel;

/// Synthetic data `X_i = U(t_i) G_i + N_i` from a known geodesic.
#[derive(Debug, Clone)]
pub struct PlantedInstance {
    pub dataset: Dataset,
    pub truth: GeodesicModel,
    /// `U(t_i) G_i` before noise.
    pub clean: Vec<DMatrix<f64>>,
    pub sigma: f64,
    pub seed: u64,
}

/// Equispaced `t_i = i/(T−1)` (a single sample sits at `t = 0`).
pub fn uniform_times(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}

/// Draws a random geodesic with `|θ_j| ≤ theta_max`, standard normal loadings
/// and i.i.d. `N(0, σ²)` noise. Deterministic in `seed`.
pub fn planted_instance(
    d: usize,
    k: usize,
    ell: usize,
    n_samples: usize,
    sigma: f64,
    theta_max: f64,
    seed: u64,
) -> Result<PlantedInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth = random_geodesic_with(d, k, theta_max, &mut rng)?;
    planted_from_truth(truth, ell, n_samples, sigma, seed)
}

/// As [`planted_instance`] but with a caller-chosen truth. Loadings and noise
/// come from the same seeded stream.
pub fn planted_from_truth(
    truth: GeodesicModel,
    ell: usize,
    n_samples: usize,
    sigma: f64,
    seed: u64,
) -> Result<PlantedInstance> {
    if n_samples == 0 || ell == 0 {
        return Err(Error::dims("need T >= 1 and ell >= 1"));
    }
    if !(sigma >= 0.0) {
        return Err(Error::dims(format!("sigma must be >= 0, got {sigma}")));
    }
    let (d, k) = (truth.dim(), truth.rank());
    let mut data_rng = ChaCha8Rng::seed_from_u64(seed);
    data_rng.set_stream(1);
    let noise = Normal::new(0.0, sigma).expect("sigma validated");

    let mut samples = Vec::with_capacity(n_samples);
    let mut clean = Vec::with_capacity(n_samples);
    for t in uniform_times(n_samples) {
        let g = DMatrix::from_fn(k, ell, |_, _| StandardNormal.sample(&mut data_rng));
        let x_clean = truth.eval_matrix(t) * g;
        // noise is always drawn so the loadings do not depend on sigma
        let n = DMatrix::from_fn(d, ell, |_, _| noise.sample(&mut data_rng));
        let x = if sigma > 0.0 {
            &x_clean + n
        } else {
            x_clean.clone()
        };
        samples.push(Sample::new(t, x));
        clean.push(x_clean);
    }
    Ok(PlantedInstance {
        dataset: Dataset::new(samples)?,
        truth,
        clean,
        sigma,
        seed,
    })
}

/// Synthetic data from a continuous piecewise geodesic.
#[derive(Debug, Clone)]
pub struct PlantedPiecewise {
    pub dataset: Dataset,
    pub truth: PiecewiseModel,
    pub clean: Vec<DMatrix<f64>>,
}

/// Each segment starts where the previous one ends and leaves in a fresh
/// random tangent direction, so the truth is continuous at every knot.
#[allow(clippy::too_many_arguments)]
pub fn planted_piecewise(
    d: usize,
    k: usize,
    ell: usize,
    n_samples: usize,
    sigma: f64,
    theta_max: f64,
    knots: &[f64],
    seed: u64,
) -> Result<PlantedPiecewise> {
    if knots.len() < 2 || knots[0] != 0.0 || knots[knots.len() - 1] != 1.0 {
        return Err(Error::InvalidSpec("knots must run from 0 to 1".into()));
    }
    if knots.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidSpec(
            "knots must be strictly increasing".into(),
        ));
    }
    if n_samples == 0 || ell == 0 || !(sigma >= 0.0) {
        return Err(Error::dims("need T >= 1, ell >= 1 and sigma >= 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut segments = vec![random_geodesic_with(d, k, theta_max, &mut rng)?];
    let angle = rand_distr::Uniform::new_inclusive(-theta_max, theta_max).expect("finite bounds");
    for _ in 1..knots.len() - 1 {
        let start = segments.last().expect("non-empty").eval_matrix(1.0);
        let gauss = DMatrix::from_fn(d, k, |_, _| StandardNormal.sample(&mut rng));
        let q = crate::linalg::orthonormalize(&DMatrix::from_fn(d, 2 * k, |i, j| {
            if j < k {
                start[(i, j)]
            } else {
                gauss[(i, j - k)]
            }
        }));
        let theta = nalgebra::DVector::from_fn(k, |_, _| angle.sample(&mut rng));
        segments.push(GeodesicModel::new(
            start,
            q.columns(k, k).into_owned(),
            theta,
        )?);
    }
    let truth = PiecewiseModel {
        knots: knots.to_vec(),
        segments,
        lambda: 0.0,
    };

    let mut data_rng = ChaCha8Rng::seed_from_u64(seed);
    data_rng.set_stream(1);
    let noise = Normal::new(0.0, sigma).expect("sigma validated");
    let mut samples = Vec::with_capacity(n_samples);
    let mut clean = Vec::with_capacity(n_samples);
    for t in uniform_times(n_samples) {
        let g = DMatrix::from_fn(k, ell, |_, _| StandardNormal.sample(&mut data_rng));
        let x_clean = truth.eval_matrix(t) * g;
        let n = DMatrix::from_fn(d, ell, |_, _| noise.sample(&mut data_rng));
        samples.push(Sample::new(
            t,
            if sigma > 0.0 {
                &x_clean + n
            } else {
                x_clean.clone()
            },
        ));
        clean.push(x_clean);
    }
    Ok(PlantedPiecewise {
        dataset: Dataset::new(samples)?,
        truth,
        clean,
    })
}

/// Data isotropic in a random `r`-dimensional subspace (no temporal
/// structure), plus noise. Returns the dataset and the subspace basis.
pub fn isotropic_instance(
    d: usize,
    r: usize,
    ell: usize,
    n_samples: usize,
    sigma: f64,
    seed: u64,
) -> Result<(Dataset, DMatrix<f64>)> {
    if r == 0 || r > d || n_samples == 0 || ell == 0 {
        return Err(Error::dims(format!("invalid isotropic shape d={d} r={r}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let basis = crate::linalg::orthonormalize(&DMatrix::from_fn(d, r, |_, _| {
        StandardNormal.sample(&mut rng)
    }));
    let noise = Normal::new(0.0, sigma).map_err(|_| Error::dims("sigma must be >= 0"))?;
    let samples = uniform_times(n_samples)
        .into_iter()
        .map(|t| {
            let g = DMatrix::from_fn(r, ell, |_, _| StandardNormal.sample(&mut rng));
            let n = DMatrix::from_fn(d, ell, |_, _| noise.sample(&mut rng));
            Sample::new(t, &basis * g + n)
        })
        .collect();
    Ok((Dataset::new(samples)?, basis))
}

/// Shuffles which matrix is observed at which time; the time grid is kept.
pub fn permute_times(dataset: &Dataset, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng);
    let samples = dataset
        .iter()
        .zip(order)
        .map(|(slot, src)| Sample::new(slot.t, dataset.samples()[src].x.clone()))
        .collect();
    Dataset::from_parts(samples, dataset.dim())
}
