//! Damped Gauss-Newton refinement on the Stiefel frame and angles.
//!
//! The residual of sample `i` is `R_i = X_i − U_i U_iᵀ X_i`. Steps solve the
//! damped normal equations on the tangent space by conjugate gradients with
//! matrix-free Jacobian products, and the frame is pulled back by its polar
//! factor. A step is kept only when it lowers the loss.

use nalgebra::{DMatrix, DVector};

use crate::dataset::Dataset;
use crate::error::Result;
use crate::linalg;
use crate::manifold::GeodesicModel;

use super::loss;

const CG_MAX_ITERS: usize = 250;
const CG_REL_TOL: f64 = 1e-10;
const MAX_DAMPING_TRIES: usize = 12;
/// Above this many parameters the normal equations are solved by conjugate
/// gradients instead of a dense Cholesky factorization.
const DENSE_MAX_PARAMS: usize = 1500;

/// Linearization of the residual at one model.
struct Linearization<'a> {
    data: &'a Dataset,
    model: &'a GeodesicModel,
    u: Vec<DMatrix<f64>>,
    g: Vec<DMatrix<f64>>,
    r: Vec<DMatrix<f64>>,
    cos: Vec<DVector<f64>>,
    sin: Vec<DVector<f64>>,
    /// `∂U_i/∂θ_j / t_i`, column by column.
    w: Vec<DMatrix<f64>>,
}

impl<'a> Linearization<'a> {
    fn new(data: &'a Dataset, model: &'a GeodesicModel) -> Self {
        let n = data.len();
        let mut lin = Self {
            data,
            model,
            u: Vec::with_capacity(n),
            g: Vec::with_capacity(n),
            r: Vec::with_capacity(n),
            cos: Vec::with_capacity(n),
            sin: Vec::with_capacity(n),
            w: Vec::with_capacity(n),
        };
        for s in data {
            let c = model.theta().map(|th| (th * s.t).cos());
            let sn = model.theta().map(|th| (th * s.t).sin());
            let mut u = model.h().clone();
            let mut w = model.y().clone();
            for j in 0..model.rank() {
                u.set_column(
                    j,
                    &(model.h().column(j) * c[j] + model.y().column(j) * sn[j]),
                );
                w.set_column(
                    j,
                    &(model.y().column(j) * c[j] - model.h().column(j) * sn[j]),
                );
            }
            let g = u.transpose() * &s.x;
            let r = &s.x - &u * &g;
            lin.u.push(u);
            lin.g.push(g);
            lin.r.push(r);
            lin.cos.push(c);
            lin.sin.push(sn);
            lin.w.push(w);
        }
        lin
    }

    fn dims(&self) -> (usize, usize) {
        (self.model.dim(), self.model.rank())
    }

    fn residual_norm_sq(&self) -> f64 {
        self.r.iter().map(|r| r.norm_squared()).sum()
    }

    /// `dU_i` for a packed direction `[dH | dY | dθ]`.
    fn du(&self, i: usize, xi: &DVector<f64>) -> DMatrix<f64> {
        let (d, k) = self.dims();
        let t = self.data.samples()[i].t;
        DMatrix::from_fn(d, k, |a, j| {
            xi[j * d + a] * self.cos[i][j]
                + xi[(k + j) * d + a] * self.sin[i][j]
                + self.w[i][(a, j)] * t * xi[2 * d * k + j]
        })
    }

    fn apply(&self, xi: &DVector<f64>) -> Vec<DMatrix<f64>> {
        (0..self.u.len())
            .map(|i| {
                let du = self.du(i, xi);
                let dug = &du * &self.g[i];
                let proj = &self.u[i] * (self.u[i].transpose() * &dug);
                -(dug - proj) - &self.u[i] * (du.transpose() * &self.r[i])
            })
            .collect()
    }

    fn apply_transpose(&self, z: &[DMatrix<f64>]) -> DVector<f64> {
        let (d, k) = self.dims();
        let mut out = DVector::zeros(2 * d * k + k);
        for (i, zi) in z.iter().enumerate() {
            let u = &self.u[i];
            let perp = zi - u * (u.transpose() * zi);
            let a = -(perp * self.g[i].transpose() + &self.r[i] * (zi.transpose() * u));
            let t = self.data.samples()[i].t;
            for j in 0..k {
                let col = a.column(j);
                for row in 0..d {
                    out[j * d + row] += col[row] * self.cos[i][j];
                    out[(k + j) * d + row] += col[row] * self.sin[i][j];
                }
                out[2 * d * k + j] += t * col.dot(&self.w[i].column(j));
            }
        }
        out
    }

    /// Removes the normal component `Q sym(Qᵀ ξ_Q)` of the frame part.
    fn project(&self, xi: &mut DVector<f64>) {
        let (d, k) = self.dims();
        let q = self.model.stacked();
        let dq = DMatrix::from_column_slice(d, 2 * k, &xi.as_slice()[..2 * d * k]);
        let qt_dq = q.transpose() * &dq;
        let sym = (&qt_dq + qt_dq.transpose()) * 0.5;
        let tangent = dq - q * sym;
        xi.as_mut_slice()[..2 * d * k].copy_from_slice(tangent.as_slice());
    }

    fn normal_op(&self, xi: &DVector<f64>, mu: f64) -> DVector<f64> {
        let mut out = self.apply_transpose(&self.apply(xi));
        self.project(&mut out);
        out + xi * mu
    }

    /// Explicit Jacobian restricted to the tangent space, one row per
    /// residual entry.
    #[cfg(test)]
    fn jacobian(&self) -> DMatrix<f64> {
        let (d, k) = self.dims();
        let n = 2 * d * k + k;
        let rows: usize = self.r.iter().map(|r| r.len()).sum();
        let mut jac = DMatrix::zeros(rows, n);
        let mut offset = 0;
        for (i, s) in self.data.iter().enumerate() {
            let (u, g, r, w) = (&self.u[i], &self.g[i], &self.r[i], &self.w[i]);
            let perp = DMatrix::identity(d, d) - u * u.transpose();
            let perp_w = &perp * w;
            let wt_r = w.transpose() * r;
            for c in 0..r.ncols() {
                for b in 0..d {
                    let row = offset + c * d + b;
                    for j in 0..k {
                        let (cos, sin) = (self.cos[i][j], self.sin[i][j]);
                        let gj = g[(j, c)];
                        let ubj = u[(b, j)];
                        for a in 0..d {
                            let base = perp[(b, a)] * gj + ubj * r[(a, c)];
                            jac[(row, j * d + a)] = -cos * base;
                            jac[(row, (k + j) * d + a)] = -sin * base;
                        }
                        jac[(row, 2 * d * k + j)] =
                            -s.t * (perp_w[(b, j)] * gj + ubj * wt_r[(j, c)]);
                    }
                }
            }
            offset += r.len();
        }
        let q = self.model.stacked();
        for mut row in jac.row_iter_mut() {
            let dq = DMatrix::from_fn(d, 2 * k, |a, j| row[j * d + a]);
            let qt_dq = q.transpose() * &dq;
            let tangent = &dq - &q * ((&qt_dq + qt_dq.transpose()) * 0.5);
            for j in 0..2 * k {
                for a in 0..d {
                    row[j * d + a] = tangent[(a, j)];
                }
            }
        }
        jac
    }

    /// Matrix-free conjugate gradients on the damped normal equations.
    fn solve_cg(&self, b: &DVector<f64>, mu: f64) -> DVector<f64> {
        let mut x = DVector::zeros(b.len());
        let mut res = b.clone();
        let mut p = res.clone();
        let mut rr = res.norm_squared();
        let stop = CG_REL_TOL * CG_REL_TOL * rr;
        for _ in 0..CG_MAX_ITERS {
            if rr <= stop || rr == 0.0 {
                break;
            }
            let ap = self.normal_op(&p, mu);
            let curvature = p.dot(&ap);
            if !(curvature > 0.0) {
                break;
            }
            let alpha = rr / curvature;
            x.axpy(alpha, &p, 1.0);
            res.axpy(-alpha, &ap, 1.0);
            let next = res.norm_squared();
            p = &res + &p * (next / rr);
            rr = next;
        }
        x
    }

    /// `P JᵀJ P` with `P` the tangent projector.
    ///
    /// In terms of `dU_i`, `JᵀJ` is `GGᵀ ⊗ (I − P_i) + I ⊗ RRᵀ`, so the frame
    /// block is assembled from `(2k × 2k) ⊗ (d × d)` Kronecker terms without
    /// forming `J`.
    fn normal_system(&self) -> DMatrix<f64> {
        let (d, k) = self.dims();
        let nq = 2 * d * k;
        let n = nq + k;
        let mut a = DMatrix::zeros(n, n);
        // frame block: Σ_i O_i ⊗ (I − P_i) + Oo_i ⊗ R_iR_iᵀ as one product
        // of stacked (2k)² and d² coefficient vectors
        let terms = 2 * self.u.len();
        let mut small = DMatrix::zeros(4 * k * k, terms);
        let mut big = DMatrix::zeros(d * d, terms);
        let mut per_sample = Vec::with_capacity(self.u.len());
        for i in 0..self.u.len() {
            let u = &self.u[i];
            let gg = &self.g[i] * self.g[i].transpose();
            let rr = &self.r[i] * self.r[i].transpose();
            let perp = DMatrix::identity(d, d) - u * u.transpose();
            // Φ = [C; S] stacks the per-column cos and sin weights
            let phi = DMatrix::from_fn(2 * k, k, |row, col| match row {
                r if r == col => self.cos[i][col],
                r if r == col + k => self.sin[i][col],
                _ => 0.0,
            });
            small
                .column_mut(2 * i)
                .copy_from_slice((&phi * &gg * phi.transpose()).as_slice());
            small
                .column_mut(2 * i + 1)
                .copy_from_slice((&phi * phi.transpose()).as_slice());
            big.column_mut(2 * i).copy_from_slice(perp.as_slice());
            big.column_mut(2 * i + 1).copy_from_slice(rr.as_slice());
            per_sample.push((gg, rr, perp, phi));
        }
        let kron = small * big.transpose();
        for bd in 0..2 * k {
            for bc in 0..2 * k {
                let coeffs = kron.row(bd * 2 * k + bc);
                for b in 0..d {
                    for a_ in 0..d {
                        a[(bc * d + a_, bd * d + b)] = coeffs[b * d + a_];
                    }
                }
            }
        }
        for (i, (gg, rr, perp, phi)) in per_sample.into_iter().enumerate() {
            let t = self.data.samples()[i].t;
            let w = &self.w[i];
            let perp_w = &perp * w;
            let rr_w = &rr * w;
            let phi_gg = &phi * &gg;
            for j in 0..k {
                for bc in 0..2 * k {
                    let col =
                        (perp_w.column(j) * phi_gg[(bc, j)] + rr_w.column(j) * phi[(bc, j)]) * t;
                    let mut target = a.view_mut((bc * d, nq + j), (d, 1));
                    target += &col;
                }
                for m in 0..k {
                    let mut v = gg[(j, m)] * w.column(j).dot(&perp_w.column(m));
                    if j == m {
                        v += w.column(j).dot(&rr_w.column(j));
                    }
                    a[(nq + j, nq + m)] += t * t * v;
                }
            }
        }
        for j in 0..k {
            for row in 0..nq {
                a[(nq + j, row)] = a[(row, nq + j)];
            }
        }
        self.project_columns(&mut a);
        let mut at = a.transpose();
        self.project_columns(&mut at);
        at
    }

    /// `−P Jᵀr`, half the negative Riemannian gradient.
    fn descent_rhs(&self) -> DVector<f64> {
        let mut rhs = -self.apply_transpose(&self.r);
        self.project(&mut rhs);
        rhs
    }

    /// Applies the tangent projector to every row of `m`, which has one
    /// column per packed parameter.
    fn project_columns(&self, m: &mut DMatrix<f64>) {
        let (d, k) = self.dims();
        let q = self.model.stacked();
        // s[j][r, c] = (Qᵀ D_r)[c, j] for the d×2k reshaped row D_r
        let s: Vec<DMatrix<f64>> = (0..2 * k).map(|j| m.columns(j * d, d) * &q).collect();
        for j in 0..2 * k {
            let sym =
                DMatrix::from_fn(m.nrows(), 2 * k, |r, c| 0.5 * (s[j][(r, c)] + s[c][(r, j)]));
            let mut block = m.columns_mut(j * d, d);
            block.gemm(-1.0, &sym, &q.transpose(), 1.0);
        }
    }

    fn retract(&self, xi: &DVector<f64>) -> GeodesicModel {
        let (d, k) = self.dims();
        let q = self.model.stacked()
            + DMatrix::from_column_slice(d, 2 * k, &xi.as_slice()[..2 * d * k]);
        let svd = linalg::thin_svd(&q);
        let q = &svd.u * &svd.v_t;
        GeodesicModel::from_parts(
            q.columns(0, k).into_owned(),
            q.columns(k, k).into_owned(),
            self.model.theta() + xi.rows(2 * d * k, k),
        )
    }
}

/// Solves `(A + μI) x = b` by a dense Cholesky factorization.
fn damped_solve(a: &DMatrix<f64>, b: &DVector<f64>, mu: f64) -> Option<DVector<f64>> {
    use faer::linalg::solvers::Solve;
    let n = a.nrows();
    let m = faer::Mat::from_fn(n, n, |i, j| a[(i, j)] + if i == j { mu } else { 0.0 });
    let llt = m.llt(faer::Side::Lower).ok()?;
    let x = llt.solve(faer::Mat::from_fn(n, 1, |i, _| b[i]));
    Some(DVector::from_fn(n, |i, _| x[(i, 0)]))
}

/// Levenberg-Marquardt damping carried across refinement steps, updated by
/// the gain ratio as in Nielsen's rule.
#[derive(Debug, Clone)]
pub(crate) struct Refiner {
    damping: Option<f64>,
    growth: f64,
}

impl Refiner {
    pub(crate) fn new() -> Self {
        Self {
            damping: None,
            growth: 2.0,
        }
    }

    /// One accepted step, or `None` when no damping level lowers the loss.
    pub(crate) fn step(
        &mut self,
        data: &Dataset,
        model: &GeodesicModel,
        current: f64,
    ) -> Result<Option<(GeodesicModel, f64)>> {
        let lin = Linearization::new(data, model);
        let (d, k) = lin.dims();
        let gram = (2 * d * k + k <= DENSE_MAX_PARAMS).then(|| lin.normal_system());
        let rhs = lin.descent_rhs();
        let base = current.min(lin.residual_norm_sq());
        let mut mu = self
            .damping
            .unwrap_or_else(|| 1e-3 * data.energy() / data.len() as f64)
            .max(f64::MIN_POSITIVE);
        for _ in 0..MAX_DAMPING_TRIES {
            let xi = match &gram {
                Some(a) => damped_solve(a, &rhs, mu),
                None => Some(lin.solve_cg(&rhs, mu)),
            };
            if let Some(xi) = xi.filter(|x| x.iter().all(|v| v.is_finite())) {
                let candidate = lin.retract(&xi);
                let l = loss(data, &candidate)?;
                let predicted = xi.dot(&rhs) + mu * xi.norm_squared();
                if l < base && predicted > 0.0 {
                    let rho = (base - l) / predicted;
                    self.damping = Some(mu * (1.0 - (2.0 * rho - 1.0).powi(3)).max(1.0 / 3.0));
                    self.growth = 2.0;
                    return Ok(Some((candidate, l)));
                }
            }
            mu *= self.growth;
            self.growth *= 2.0;
        }
        self.damping = Some(mu);
        Ok(None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::loss;
    use crate::manifold::random_geodesic;
    use crate::synth::planted_instance;

    fn pack_random(n: usize, seed: u64) -> DVector<f64> {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn transpose_is_adjoint() {
        let inst = planted_instance(7, 2, 3, 5, 0.2, 1.0, 4).unwrap();
        let m = random_geodesic(7, 2, 1.0, 9).unwrap();
        let lin = Linearization::new(&inst.dataset, &m);
        let xi = pack_random(2 * 7 * 2 + 2, 1);
        let z: Vec<DMatrix<f64>> = inst
            .dataset
            .iter()
            .enumerate()
            .map(|(i, s)| {
                DMatrix::from_column_slice(
                    7,
                    s.x.ncols(),
                    pack_random(7 * s.x.ncols(), 10 + i as u64).as_slice(),
                )
            })
            .collect();
        let lhs: f64 = lin.apply(&xi).iter().zip(&z).map(|(a, b)| a.dot(b)).sum();
        let rhs = xi.dot(&lin.apply_transpose(&z));
        assert!(
            (lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0),
            "{lhs} vs {rhs}"
        );
    }

    #[test]
    fn kronecker_gram_matches_explicit_jacobian() {
        let inst = planted_instance(6, 2, 2, 5, 0.3, 1.0, 12).unwrap();
        let m = random_geodesic(6, 2, 0.9, 13).unwrap();
        let lin = Linearization::new(&inst.dataset, &m);
        let jac = lin.jacobian();
        let r = DVector::from_iterator(jac.nrows(), lin.r.iter().flat_map(|r| r.iter().copied()));
        let (a, b) = (lin.normal_system(), lin.descent_rhs());
        let a_ref = jac.transpose() * &jac;
        let b_ref = -(jac.transpose() * r);
        assert!(
            (&a - &a_ref).amax() <= 1e-12 * a_ref.amax(),
            "{}",
            (&a - &a_ref).amax()
        );
        assert!((&b - &b_ref).amax() <= 1e-12 * b_ref.amax().max(1.0));
    }

    #[test]
    fn jacobian_matches_finite_difference_along_tangent() {
        let inst = planted_instance(8, 2, 2, 6, 0.3, 1.0, 2).unwrap();
        let m = random_geodesic(8, 2, 0.8, 5).unwrap();
        let lin = Linearization::new(&inst.dataset, &m);
        let mut xi = pack_random(2 * 8 * 2 + 2, 3);
        lin.project(&mut xi);
        let h = 1e-6;
        let plus = loss(&inst.dataset, &lin.retract(&(&xi * h))).unwrap();
        let minus = loss(&inst.dataset, &lin.retract(&(&xi * -h))).unwrap();
        let fd = (plus - minus) / (2.0 * h);
        let analytic = 2.0 * xi.dot(&lin.apply_transpose(&lin.r));
        assert!(
            (fd - analytic).abs() <= 1e-6 * analytic.abs().max(1.0),
            "{fd} vs {analytic}"
        );
    }

    #[test]
    fn steps_descend_to_truth_on_clean_data() {
        let inst = planted_instance(12, 2, 1, 10, 0.0, 1.0, 6).unwrap();
        let mut model = crate::estimator::init::init_endpoints(&inst.dataset, 2, 0.5).unwrap();
        let mut current = loss(&inst.dataset, &model).unwrap();
        let mut refiner = Refiner::new();
        for _ in 0..60 {
            match refiner.step(&inst.dataset, &model, current).unwrap() {
                Some((m, l)) => {
                    assert!(l < current);
                    model = m;
                    current = l;
                }
                None => break,
            }
        }
        assert!(current <= 1e-16 * inst.dataset.energy(), "{current}");
    }
}
