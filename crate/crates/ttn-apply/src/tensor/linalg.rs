//! Dense matrix kernels backing the tensor operations.
//!
//! Everything here works on `DMatrix<Complex64>`; the tensor layer handles
//! leg bookkeeping and row-major reshapes. The iterative decompositions
//! (SVD, Hermitian eigensolve) go through faer; nalgebra's complex SVD
//! mis-factors some nearly rank-deficient inputs.

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::TensorError;

pub(crate) type Mat = DMatrix<Complex64>;

/// C (row-major m×n) = A (row-major m×k) · B (row-major k×n).
///
/// A row-major buffer of shape (r, c) is the column-major buffer of the
/// transposed (c, r) matrix, so we compute Cᵀ = Bᵀ·Aᵀ without copying the
/// inputs.
pub(crate) fn matmul_row_major(
    m: usize,
    k: usize,
    n: usize,
    a: Vec<Complex64>,
    b: Vec<Complex64>,
) -> Vec<Complex64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let at = faer::MatRef::from_column_major_slice(&a, k, m);
    let bt = faer::MatRef::from_column_major_slice(&b, n, k);
    let mut ct = faer::Mat::<Complex64>::zeros(n, m);
    faer::linalg::matmul::matmul(
        ct.as_mut(),
        faer::Accum::Replace,
        bt,
        at,
        Complex64::new(1.0, 0.0),
        faer::Par::Seq,
    );
    let mut out = Vec::with_capacity(m * n);
    for col in 0..m {
        out.extend_from_slice(ct.col_as_slice(col));
    }
    out
}

pub(crate) fn mat_from_row_major(rows: usize, cols: usize, data: &[Complex64]) -> Mat {
    Mat::from_row_iterator(rows, cols, data.iter().copied())
}

pub(crate) fn row_major_from_mat(m: &Mat) -> Vec<Complex64> {
    let (rows, cols) = m.shape();
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            out.push(m[(i, j)]);
        }
    }
    out
}

fn to_faer(m: &Mat) -> faer::Mat<Complex64> {
    faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Thin SVD with singular values sorted in descending order.
pub(crate) fn svd_desc(m: Mat) -> Result<(Mat, Vec<f64>, Mat), TensorError> {
    let (rows, cols) = m.shape();
    let k = rows.min(cols);
    let f = to_faer(&m);
    let svd = f
        .thin_svd()
        .map_err(|_| TensorError::Decomposition("svd did not converge".into()))?;
    let fu = svd.U();
    let fv = svd.V();
    let fs = svd.S();
    let u = Mat::from_fn(rows, k, |i, j| fu[(i, j)]);
    let s: Vec<f64> = (0..k).map(|i| fs[i].re).collect();
    let vt = Mat::from_fn(k, cols, |i, j| fv[(j, i)].conj());
    debug_assert!(s.windows(2).all(|w| w[0] >= w[1]));
    Ok((u, s, vt))
}

/// Decompose m = r·q with the rows of q orthonormal and the diagonal of r
/// real and nonnegative.
pub(crate) fn lq_pos(m: &Mat) -> (Mat, Mat) {
    let qr = m.adjoint().qr();
    let (mut q0, mut r0) = (qr.q(), qr.r());
    // m† = q0·r0; fix phases so diag(r0) is real nonnegative.
    let k = r0.nrows();
    for i in 0..k {
        let d = r0[(i, i)];
        if d.norm() > 0.0 {
            let p = d / d.norm();
            let pc = p.conj();
            for j in 0..r0.ncols() {
                r0[(i, j)] *= pc;
            }
            for j in 0..q0.nrows() {
                q0[(j, i)] *= p;
            }
        }
    }
    (r0.adjoint(), q0.adjoint())
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues sorted descending.
/// Columns of the returned matrix are the eigenvectors.
pub(crate) fn eigh_desc(m: Mat) -> (Vec<f64>, Mat) {
    let n = m.nrows();
    let f = to_faer(&m);
    let eig = f
        .self_adjoint_eigen(faer::Side::Lower)
        .expect("hermitian eigendecomposition");
    let fu = eig.U();
    let fs = eig.S();
    // ascending from faer; flip to descending
    let vals: Vec<f64> = (0..n).rev().map(|i| fs[i].re).collect();
    let vecs = Mat::from_fn(n, n, |i, j| fu[(i, n - 1 - j)]);
    debug_assert!(vals.windows(2).all(|w| w[0] >= w[1]));
    (vals, vecs)
}

/// Hermitian part (g + g†)/2.
pub(crate) fn hermitize(g: &Mat) -> Mat {
    (g + g.adjoint()).scale(0.5)
}
