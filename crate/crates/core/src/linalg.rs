//! Complex dense linear algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

/// `v v^H`.
pub fn outer(v: &CVec) -> CMat {
    v * v.adjoint()
}

/// `Re tr(A B)`; for Hermitian arguments the trace is already real.
pub fn trace_product(a: &CMat, b: &CMat) -> f64 {
    assert_eq!(a.ncols(), b.nrows());
    assert_eq!(a.nrows(), b.ncols());
    let mut acc = 0.0;
    for i in 0..a.nrows() {
        for k in 0..a.ncols() {
            acc += (a[(i, k)] * b[(k, i)]).re;
        }
    }
    acc
}

/// `Re(v^H M v)`.
pub fn quad_form(m: &CMat, v: &CVec) -> f64 {
    v.dotc(&(m * v)).re
}

/// `|a^H b|^2`.
pub fn inner_sq(a: &CVec, b: &CVec) -> f64 {
    a.dotc(b).norm_sqr()
}

pub fn trace_re(m: &CMat) -> f64 {
    m.diagonal().iter().map(|z| z.re).sum()
}

pub fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()) * C64::new(0.5, 0.0)
}

pub fn is_hermitian(m: &CMat, tol: f64) -> bool {
    m.is_square() && (m - m.adjoint()).iter().all(|z| z.norm() <= tol)
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues in descending order.
pub fn hermitian_eigen(m: &CMat) -> (Vec<f64>, CMat) {
    let n = m.nrows();
    if n == 0 {
        return (Vec::new(), CMat::zeros(0, 0));
    }
    let eig = hermitian_part(m).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMat::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Largest eigenvalue and a unit eigenvector for it.
pub fn leading_eigenpair(m: &CMat) -> (f64, CVec) {
    let (vals, vecs) = hermitian_eigen(m);
    (vals[0], vecs.column(0).into_owned())
}

/// Unit vector along the first coordinate.
pub fn e1(n: usize) -> CVec {
    let mut v = CVec::zeros(n);
    if n > 0 {
        v[0] = C64::new(1.0, 0.0);
    }
    v
}

/// Real symmetric embedding `[[Re M, -Im M], [Im M, Re M]]`.
///
/// `M` is PSD iff the embedding is PSD, and every eigenvalue of `M` appears
/// twice in the spectrum of the embedding.
pub fn real_embedding(m: &CMat) -> DMatrix<f64> {
    let (r, c) = m.shape();
    DMatrix::from_fn(2 * r, 2 * c, |i, j| {
        let z = m[(i % r, j % c)];
        match (i < r, j < c) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    })
}

/// Inverse of [`real_embedding`], reading the left block column.
pub fn from_real_embedding(e: &DMatrix<f64>) -> CMat {
    let r = e.nrows() / 2;
    let c = e.ncols() / 2;
    CMat::from_fn(r, c, |i, j| C64::new(e[(i, j)], e[(i + r, j)]))
}

pub fn from_diag(d: &[f64]) -> CMat {
    let n = d.len();
    CMat::from_fn(n, n, |i, j| if i == j { C64::new(d[i], 0.0) } else { C64::new(0.0, 0.0) })
}
