use nalgebra::DMatrix;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg;
use crate::manifold::{connect, GeodesicModel, OrthonormalBasis};

/// Pools the columns of the first and last `⌈pool_fraction·T⌉` samples, takes
/// the rank-`k` SVD of each pool and connects the two subspaces.
pub fn init_endpoints(dataset: &Dataset, k: usize, pool_fraction: f64) -> Result<GeodesicModel> {
    if !(pool_fraction > 0.0 && pool_fraction <= 0.5) {
        return Err(Error::InitFailure(format!(
            "pool_fraction {pool_fraction} not in (0, 0.5]"
        )));
    }
    let d = dataset.dim();
    if k == 0 || 2 * k > d {
        return Err(Error::dims(format!(
            "geodesic needs 1 <= k and 2k <= d, got d={d} k={k}"
        )));
    }
    let n = dataset.len();
    // guard against 0.1 * 30 = 3.0000000000000004
    let pool = ((pool_fraction * n as f64) - 1e-9).ceil().max(1.0) as usize;
    let pool = pool.min(n);
    let first = pool_basis(&dataset.samples()[..pool], d, k, "first")?;
    let last = pool_basis(&dataset.samples()[n - pool..], d, k, "last")?;
    connect(&first, &last)
}

fn pool_basis(
    samples: &[crate::dataset::Sample],
    d: usize,
    k: usize,
    which: &str,
) -> Result<OrthonormalBasis> {
    let cols: usize = samples.iter().map(|s| s.x.ncols()).sum();
    if cols < k {
        return Err(Error::InitFailure(format!(
            "{which} pool has {cols} columns, fewer than rank {k}"
        )));
    }
    let mut stacked = DMatrix::zeros(d, cols);
    let mut offset = 0;
    for s in samples {
        stacked.columns_mut(offset, s.x.ncols()).copy_from(&s.x);
        offset += s.x.ncols();
    }
    Ok(OrthonormalBasis::from_trusted(
        linalg::leading_left_singular_vectors(&stacked, k),
    ))
}
