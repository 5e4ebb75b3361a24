//! Dense real linear algebra: eigendecomposition, SVD, least squares and
//! the nuclear norm.

mod eig;
mod matrix;

pub use eig::{eig, EigResult};
pub(crate) use matrix::gemm;
pub use matrix::Matrix;
pub use num_complex::Complex64;

use thiserror::Error;

/// Complex dense matrix, used for eigenvector bases.
pub type CMatrix = nalgebra::DMatrix<Complex64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("matrix must be square, got {0}x{1}")]
    NotSquare(usize, usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("matrix has non-finite entries")]
    NonFinite,
    #[error("{0} failed to converge")]
    NoConvergence(&'static str),
    #[error("matrix is singular")]
    Singular,
}

/// Thin singular value decomposition `A = U diag(sigma) V^T`.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub u: Matrix,
    /// Nonincreasing, nonnegative.
    pub sigma: Vec<f64>,
    pub v: Matrix,
}

impl SvdResult {
    pub fn reconstruct(&self) -> Matrix {
        let scaled = Matrix::from_fn(self.u.rows(), self.u.cols(), |i, j| self.u[(i, j)] * self.sigma[j]);
        scaled.matmul(&self.v.transpose()).expect("svd factors are conformant")
    }
}

pub fn svd(a: &Matrix) -> Result<SvdResult, NumericsError> {
    if !a.is_finite() {
        return Err(NumericsError::NonFinite);
    }
    let (m, n) = a.shape();
    let p = m.min(n);
    if p == 0 {
        return Ok(SvdResult { u: Matrix::zeros(m, 0), sigma: Vec::new(), v: Matrix::zeros(n, 0) });
    }
    let decomp = nalgebra::SVD::try_new(a.to_nalgebra(), true, true, f64::EPSILON, 10_000)
        .ok_or(NumericsError::NoConvergence("svd"))?;
    let u = decomp.u.ok_or(NumericsError::NoConvergence("svd"))?;
    let vt = decomp.v_t.ok_or(NumericsError::NoConvergence("svd"))?;
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&i, &j| decomp.singular_values[j].total_cmp(&decomp.singular_values[i]));
    let sigma = order.iter().map(|&k| decomp.singular_values[k].max(0.0)).collect();
    let u = Matrix::from_fn(m, p, |i, j| u[(i, order[j])]);
    let v = Matrix::from_fn(n, p, |i, j| vt[(order[j], i)]);
    Ok(SvdResult { u, sigma, v })
}

/// Default numerical-rank cutoff for singular values.
fn rank_tolerance(shape: (usize, usize), sigma_max: f64) -> f64 {
    shape.0.max(shape.1) as f64 * f64::EPSILON * sigma_max
}

/// Nuclear norm `sum(sigma)` with the subgradient `U V^T` built from the
/// singular directions above the rank cutoff.
#[derive(Debug, Clone)]
pub struct NuclearNorm {
    pub value: f64,
    pub subgradient: Matrix,
}

pub fn nuclear_norm(a: &Matrix) -> Result<NuclearNorm, NumericsError> {
    let s = svd(a)?;
    let value = s.sigma.iter().sum();
    let tol = rank_tolerance(a.shape(), s.sigma.first().copied().unwrap_or(0.0));
    let mut subgradient = Matrix::zeros(a.rows(), a.cols());
    for (k, &sigma) in s.sigma.iter().enumerate() {
        if sigma <= tol || sigma == 0.0 {
            continue;
        }
        for i in 0..a.rows() {
            let uik = s.u[(i, k)];
            for j in 0..a.cols() {
                subgradient[(i, j)] += uik * s.v[(j, k)];
            }
        }
    }
    Ok(NuclearNorm { value, subgradient })
}

/// Minimum-norm least-squares solution of `A X = B`.
#[derive(Debug, Clone)]
pub struct LstsqSolution {
    pub x: Matrix,
    pub rank: usize,
    /// `rank < A.cols()`: the minimum-norm solution was selected.
    pub rank_deficient: bool,
    pub singular_values: Vec<f64>,
}

pub fn lstsq(a: &Matrix, b: &Matrix) -> Result<LstsqSolution, NumericsError> {
    if a.rows() != b.rows() {
        return Err(NumericsError::Shape(format!(
            "lstsq: A has {} rows but B has {}",
            a.rows(),
            b.rows()
        )));
    }
    let s = svd(a)?;
    let tol = rank_tolerance(a.shape(), s.sigma.first().copied().unwrap_or(0.0));
    let rank = s.sigma.iter().filter(|&&v| v > tol && v > 0.0).count();
    // X = V_r diag(1/sigma_r) U_r^T B
    let ut_b = s.u.slice_cols(0, rank).transpose().matmul(b)?;
    let scaled = Matrix::from_fn(rank, b.cols(), |i, j| ut_b[(i, j)] / s.sigma[i]);
    let x = s.v.slice_cols(0, rank).matmul(&scaled)?;
    Ok(LstsqSolution { x, rank, rank_deficient: rank < a.cols(), singular_values: s.sigma })
}

/// Inverse of a complex square matrix by LU with partial pivoting.
pub fn complex_inverse(v: &CMatrix) -> Result<CMatrix, NumericsError> {
    if v.nrows() != v.ncols() {
        return Err(NumericsError::NotSquare(v.nrows(), v.ncols()));
    }
    v.clone().try_inverse().ok_or(NumericsError::Singular)
}

/// Moore-Penrose pseudoinverse of a complex matrix.
pub fn complex_pinv(v: &CMatrix) -> Result<CMatrix, NumericsError> {
    let decomp = nalgebra::SVD::try_new(v.clone(), true, true, f64::EPSILON, 10_000)
        .ok_or(NumericsError::NoConvergence("complex svd"))?;
    let smax = decomp.singular_values.iter().fold(0.0f64, |m, &s| m.max(s));
    let tol = rank_tolerance((v.nrows(), v.ncols()), smax).max(f64::MIN_POSITIVE);
    decomp.pseudo_inverse(tol).map_err(|_| NumericsError::NoConvergence("complex pseudoinverse"))
}

/// 2-norm condition number `sigma_max / sigma_min` (infinite when singular).
pub fn complex_condition_number(v: &CMatrix) -> Result<f64, NumericsError> {
    if v.nrows() == 0 {
        return Ok(1.0);
    }
    let sv = nalgebra::SVD::try_new(v.clone(), false, false, f64::EPSILON, 10_000)
        .ok_or(NumericsError::NoConvergence("complex svd"))?
        .singular_values;
    let smax = sv.iter().fold(0.0f64, |m, &s| m.max(s));
    let smin = sv.iter().fold(f64::INFINITY, |m, &s| m.min(s));
    Ok(if smin == 0.0 { f64::INFINITY } else { smax / smin })
}

pub fn to_complex(a: &Matrix) -> CMatrix {
    CMatrix::from_fn(a.rows(), a.cols(), |i, j| Complex64::new(a[(i, j)], 0.0))
}

/// Splits a complex matrix into its real part and the largest imaginary
/// magnitude.
pub fn real_part(c: &CMatrix) -> (Matrix, f64) {
    let leak = c.iter().fold(0.0f64, |m, z| m.max(z.im.abs()));
    (Matrix::from_fn(c.nrows(), c.ncols(), |i, j| c[(i, j)].re), leak)
}
