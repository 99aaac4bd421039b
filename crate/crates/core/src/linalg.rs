//! Small dense linear-algebra helpers shared by the estimator and the baselines.

use nalgebra::{DMatrix, DVector, SVD};

/// Max-abs deviation of `mᵀm` from the identity.
pub fn orthonormality_deviation(m: &DMatrix<f64>) -> f64 {
    let gram = m.tr_mul(m);
    let mut worst = 0.0_f64;
    for j in 0..gram.ncols() {
        for i in 0..gram.nrows() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((gram[(i, j)] - target).abs());
        }
    }
    worst
}

/// Householder QR with the sign of each column of Q fixed so that the
/// diagonal of R is non-negative. Returns the thin Q factor.
pub fn orthonormalize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let qr = m.clone().qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..q.ncols().min(r.nrows()) {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Thin SVD with singular values sorted in descending order.
pub struct ThinSvd {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub v_t: DMatrix<f64>,
}

pub fn thin_svd(m: &DMatrix<f64>) -> ThinSvd {
    let svd = SVD::new(m.clone(), true, true);
    ThinSvd {
        u: svd.u.expect("u requested"),
        singular_values: svd.singular_values,
        v_t: svd.v_t.expect("v_t requested"),
    }
}

/// Top-`r` left singular vectors of `m`, each column signed so that its
/// largest-magnitude entry is positive.
pub fn leading_left_singular_vectors(m: &DMatrix<f64>, r: usize) -> DMatrix<f64> {
    let svd = thin_svd(m);
    let mut u = svd.u.columns(0, r).into_owned();
    fix_column_signs(&mut u);
    u
}

/// Deterministic sign convention: largest-magnitude entry of every column positive
/// (first index wins ties).
pub fn fix_column_signs(m: &mut DMatrix<f64>) {
    for j in 0..m.ncols() {
        let mut pivot = 0.0_f64;
        for i in 0..m.nrows() {
            if m[(i, j)].abs() > pivot.abs() {
                pivot = m[(i, j)];
            }
        }
        if pivot < 0.0 {
            m.column_mut(j).neg_mut();
        }
    }
}

/// Removes the component of `v` lying in the span of the orthonormal columns of
/// `basis`, twice (classical Gram-Schmidt with reorthogonalization).
pub fn project_out(basis: &DMatrix<f64>, v: &mut DVector<f64>) {
    if basis.ncols() == 0 {
        return;
    }
    for _ in 0..2 {
        let coeffs = basis.tr_mul(v);
        *v -= basis * coeffs;
    }
}

/// `count` orthonormal columns orthogonal to the orthonormal columns of `basis`,
/// taken from projected canonical basis vectors in index order.
pub fn orthonormal_completion(basis: &DMatrix<f64>, count: usize) -> DMatrix<f64> {
    let d = basis.nrows();
    assert!(
        basis.ncols() + count <= d,
        "completion exceeds ambient dimension"
    );
    let mut acc = basis.clone();
    let mut out = DMatrix::zeros(d, count);
    let mut filled = 0;
    for e in 0..d {
        if filled == count {
            break;
        }
        let mut v = DVector::zeros(d);
        v[e] = 1.0;
        project_out(&acc, &mut v);
        let norm = v.norm();
        // a canonical vector keeps at least 1/sqrt(d) of its norm for some index
        if norm > 0.5 / (d as f64).sqrt() {
            v /= norm;
            out.set_column(filled, &v);
            let n = acc.ncols();
            acc = acc.insert_column(n, 0.0);
            let last = acc.ncols() - 1;
            acc.set_column(last, &v);
            filled += 1;
        }
    }
    assert_eq!(filled, count, "failed to complete orthonormal basis");
    out
}

/// Squared Frobenius norm of `x - u uᵀ x` without forming the projector.
pub fn residual_norm_sq(u: &DMatrix<f64>, x: &DMatrix<f64>) -> f64 {
    let coeffs = u.tr_mul(x);
    (x - u * coeffs).norm_squared()
}
