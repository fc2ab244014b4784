//! Small dense helpers shared by the channel, Fisher and sensing code.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;
pub type RMat = DMatrix<f64>;

pub const J: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Largest entrywise deviation `|m - m^H|`.
pub fn hermitian_deviation(m: &CMat) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for k in i..n {
            worst = worst.max((m[(i, k)] - m[(k, i)].conj()).norm());
        }
    }
    worst
}

pub fn check_hermitian(m: &CMat, tol: f64) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            context: "square matrix",
            expected: m.nrows(),
            found: m.ncols(),
        });
    }
    let scale = 1.0 + m.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let dev = hermitian_deviation(m);
    if dev > tol * scale {
        return Err(Error::NotHermitian { deviation: dev });
    }
    Ok(())
}

pub fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()).scale(0.5)
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues ascending.
pub fn hermitian_eigen(m: &CMat) -> (Vec<f64>, CMat) {
    let n = m.nrows();
    let eig = hermitian_part(m).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMat::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Real symmetric eigen-decomposition, eigenvalues ascending.
pub fn symmetric_eigen(m: &RMat) -> (Vec<f64>, RMat) {
    let n = m.nrows();
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = RMat::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

pub fn min_eigenvalue(m: &RMat) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    symmetric_eigen(m).0[0]
}

/// Projects a Hermitian matrix onto the PSD cone by clipping eigenvalues.
pub fn psd_projection(m: &CMat) -> CMat {
    let (vals, vecs) = hermitian_eigen(m);
    let d = CVec::from_iterator(
        vals.len(),
        vals.iter().map(|&v| Complex64::new(v.max(0.0), 0.0)),
    );
    &vecs * CMat::from_diagonal(&d) * vecs.adjoint()
}

/// Hermitian PSD square root (negative eigenvalues clipped to zero).
pub fn psd_sqrt(m: &CMat) -> CMat {
    let (vals, vecs) = hermitian_eigen(m);
    let d = CVec::from_iterator(
        vals.len(),
        vals.iter().map(|&v| Complex64::new(v.max(0.0).sqrt(), 0.0)),
    );
    &vecs * CMat::from_diagonal(&d) * vecs.adjoint()
}

/// `[Re M, -Im M; Im M, Re M]`, the real symmetric image of a Hermitian matrix.
pub fn lift_hermitian(m: &CMat) -> RMat {
    let n = m.nrows();
    let mut out = RMat::zeros(2 * n, 2 * n);
    for i in 0..n {
        for k in 0..n {
            let z = m[(i, k)];
            out[(i, k)] = z.re;
            out[(n + i, n + k)] = z.re;
            out[(n + i, k)] = z.im;
            out[(i, n + k)] = -z.im;
        }
    }
    out
}

pub fn frobenius(m: &RMat) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn relative_frobenius(a: &RMat, b: &RMat) -> f64 {
    let denom = frobenius(b).max(f64::MIN_POSITIVE);
    frobenius(&(a - b)) / denom
}

/// Number of real parameters of an `n x n` Hermitian matrix.
pub fn hermitian_dim(n: usize) -> usize {
    n * n
}

/// Real parameterisation of Hermitian matrices: diagonal entries first,
/// then `(Re, Im)` of each strictly-upper entry in row-major order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HermitianCoord {
    Diag(usize),
    Re(usize, usize),
    Im(usize, usize),
}

pub fn hermitian_coords(n: usize) -> Vec<HermitianCoord> {
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        out.push(HermitianCoord::Diag(i));
    }
    for i in 0..n {
        for k in i + 1..n {
            out.push(HermitianCoord::Re(i, k));
            out.push(HermitianCoord::Im(i, k));
        }
    }
    out
}

/// The basis matrix associated with one real coordinate.
pub fn hermitian_basis(n: usize, coord: HermitianCoord) -> CMat {
    let mut m = CMat::zeros(n, n);
    match coord {
        HermitianCoord::Diag(i) => m[(i, i)] = Complex64::new(1.0, 0.0),
        HermitianCoord::Re(i, k) => {
            m[(i, k)] = Complex64::new(1.0, 0.0);
            m[(k, i)] = Complex64::new(1.0, 0.0);
        }
        HermitianCoord::Im(i, k) => {
            m[(i, k)] = J;
            m[(k, i)] = -J;
        }
    }
    m
}

pub fn hermitian_from_params(n: usize, params: &[f64]) -> CMat {
    let mut m = CMat::zeros(n, n);
    for (coord, &v) in hermitian_coords(n).into_iter().zip(params) {
        match coord {
            HermitianCoord::Diag(i) => m[(i, i)] += Complex64::new(v, 0.0),
            HermitianCoord::Re(i, k) => {
                m[(i, k)] += Complex64::new(v, 0.0);
                m[(k, i)] += Complex64::new(v, 0.0);
            }
            HermitianCoord::Im(i, k) => {
                m[(i, k)] += Complex64::new(0.0, v);
                m[(k, i)] += Complex64::new(0.0, -v);
            }
        }
    }
    m
}

pub fn hermitian_to_params(m: &CMat) -> Vec<f64> {
    let n = m.nrows();
    hermitian_coords(n)
        .into_iter()
        .map(|c| match c {
            HermitianCoord::Diag(i) => m[(i, i)].re,
            HermitianCoord::Re(i, k) => m[(i, k)].re,
            HermitianCoord::Im(i, k) => m[(i, k)].im,
        })
        .collect()
}

/// Parameter indices of entry `(i, k)`: the real-part index and, off the
/// diagonal, the imaginary-part index with the sign it enters with.
pub fn hermitian_entry(n: usize, i: usize, k: usize) -> (usize, Option<(usize, f64)>) {
    if i == k {
        return (i, None);
    }
    let (a, b, sign) = if i < k { (i, k, 1.0) } else { (k, i, -1.0) };
    let pair = a * n - a * (a + 1) / 2 + (b - a - 1);
    (n + 2 * pair, Some((n + 2 * pair + 1, sign)))
}

/// Coefficients `tr(Q B_c)` of the linear functional `W -> tr(Q W)` over the
/// real parameters of a Hermitian `W`.
pub fn hermitian_trace_coeffs(q: &CMat) -> Vec<f64> {
    hermitian_coords(q.nrows())
        .into_iter()
        .map(|c| match c {
            HermitianCoord::Diag(i) => q[(i, i)].re,
            HermitianCoord::Re(i, k) => 2.0 * q[(i, k)].re,
            HermitianCoord::Im(i, k) => 2.0 * q[(i, k)].im,
        })
        .collect()
}
