//! Static SVD subspace baselines.

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg;
use crate::manifold::{GeodesicModel, OrthonormalBasis};

/// Top-`r` left singular vectors of the stacked data `[X_1 … X_T]` and the
/// residual `Σ_i ‖X_i − UUᵀX_i‖_F²` of that static subspace. No centering.
pub fn batch_svd_subspace(dataset: &Dataset, r: usize) -> Result<(OrthonormalBasis, f64)> {
    let available = dataset.dim().min(dataset.total_columns());
    if r == 0 || r > available {
        return Err(Error::RankTooLarge {
            requested: r,
            available,
        });
    }
    let u = linalg::leading_left_singular_vectors(&dataset.stacked(), r);
    let loss = dataset
        .iter()
        .map(|s| linalg::residual_norm_sq(&u, &s.x))
        .sum();
    Ok((OrthonormalBasis::from_trusted(u), loss))
}

/// The constant geodesic at `span(u)`.
pub fn static_as_geodesic(u: &OrthonormalBasis) -> Result<GeodesicModel> {
    GeodesicModel::constant(u)
}

/// Independent rank-`k` SVD of every sample.
pub fn per_timepoint_svd(dataset: &Dataset, k: usize) -> Result<Vec<OrthonormalBasis>> {
    dataset
        .iter()
        .map(|s| {
            let available = s.x.ncols().min(s.x.nrows());
            if k == 0 || k > available {
                return Err(Error::RankTooLarge {
                    requested: k,
                    available,
                });
            }
            Ok(OrthonormalBasis::from_trusted(
                linalg::leading_left_singular_vectors(&s.x, k),
            ))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::loss;
    use crate::metrics::subspace_error;
    use crate::synth::planted_instance;

    #[test]
    fn static_noiseless_rank_k_is_exact() {
        let inst = planted_instance(12, 3, 2, 6, 0.0, 0.0, 1).unwrap();
        let (_, l) = batch_svd_subspace(&inst.dataset, 3).unwrap();
        assert!(l <= 1e-20 * inst.dataset.energy());
    }

    #[test]
    fn geodesic_noiseless_rank_2k_is_exact() {
        let inst = planted_instance(15, 2, 1, 20, 0.0, 1.3, 2).unwrap();
        let (_, l2) = batch_svd_subspace(&inst.dataset, 4).unwrap();
        let (_, l1) = batch_svd_subspace(&inst.dataset, 2).unwrap();
        assert!(l2 <= 1e-20 * inst.dataset.energy());
        assert!(l1 > l2);
    }

    #[test]
    fn nested_ranks_order_losses() {
        let inst = planted_instance(10, 2, 2, 9, 0.3, 1.0, 3).unwrap();
        let (_, a) = batch_svd_subspace(&inst.dataset, 2).unwrap();
        let (_, b) = batch_svd_subspace(&inst.dataset, 4).unwrap();
        assert!(b <= a);
    }

    #[test]
    fn rank_too_large() {
        let inst = planted_instance(10, 2, 1, 3, 0.3, 1.0, 3).unwrap();
        assert!(matches!(
            batch_svd_subspace(&inst.dataset, 4),
            Err(Error::RankTooLarge { .. })
        ));
        assert!(matches!(
            per_timepoint_svd(&inst.dataset, 2),
            Err(Error::RankTooLarge { .. })
        ));
    }

    #[test]
    fn static_geodesic_reproduces_svd_loss() {
        let inst = planted_instance(11, 2, 2, 10, 0.05, 1.0, 4).unwrap();
        let (u, l) = batch_svd_subspace(&inst.dataset, 2).unwrap();
        let g = static_as_geodesic(&u).unwrap();
        assert!(GeodesicModel::new(g.h().clone(), g.y().clone(), g.theta().clone()).is_ok());
        let lg = loss(&inst.dataset, &g).unwrap();
        assert!((lg - l).abs() <= 1e-10 * l);
        for t in [0.0, 0.6, 1.0] {
            assert!(subspace_error(&g.eval(t), &u).unwrap() < 1e-12);
        }
    }

    #[test]
    fn per_timepoint_exact_when_noiseless() {
        let inst = planted_instance(10, 2, 2, 5, 0.0, 1.0, 6).unwrap();
        let bases = per_timepoint_svd(&inst.dataset, 2).unwrap();
        for (b, s) in bases.iter().zip(inst.dataset.iter()) {
            assert!(subspace_error(b, &inst.truth.eval(s.t)).unwrap() < 1e-10);
        }
    }
}
