//! Dense linear-algebra helpers shared by the analysis modules.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Smallest eigenvalue below which a Gram matrix is treated as singular.
pub const DEFAULT_SINGULAR_TOL: f64 = 1e-8;

/// Relative jitter added to the diagonal when a near-singular solve is allowed.
pub const JITTER_SCALE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SolvePolicy {
    pub singular_tol: f64,
    pub allow_near_singular: bool,
}

impl Default for SolvePolicy {
    fn default() -> Self {
        Self {
            singular_tol: DEFAULT_SINGULAR_TOL,
            allow_near_singular: false,
        }
    }
}

impl SolvePolicy {
    pub fn permissive() -> Self {
        Self {
            allow_near_singular: true,
            ..Self::default()
        }
    }
}

/// Max |a_ij - a_ji|.
pub fn asymmetry(a: &Matrix) -> f64 {
    let mut worst: f64 = 0.0;
    for j in 0..a.ncols() {
        for i in 0..j {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

pub fn ensure_symmetric(a: &Matrix) -> Result<()> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch {
            what: "square matrix",
            expected: a.nrows(),
            found: a.ncols(),
        });
    }
    let scale = a.amax().max(1.0);
    let asym = asymmetry(a);
    if asym > 1e-12 * scale {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    Ok(())
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn sym_eigenvalues(a: &Matrix) -> Result<Vec<f64>> {
    ensure_symmetric(a)?;
    let mut vals: Vec<f64> = SymmetricEigen::new(a.clone()).eigenvalues.iter().copied().collect();
    vals.sort_by(|x, y| x.total_cmp(y));
    Ok(vals)
}

/// Eigenpairs of a symmetric matrix, eigenvalues ascending, vectors as columns.
pub fn sym_eigen(a: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    ensure_symmetric(a)?;
    let eig = SymmetricEigen::new(a.clone());
    let mut order: Vec<usize> = (0..a.nrows()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = Matrix::from_fn(a.nrows(), a.nrows(), |r, c| eig.eigenvectors[(r, order[c])]);
    Ok((vals, vecs))
}

/// Cholesky factor of a symmetric positive-definite matrix, with the
/// diagonal jitter that was needed (zero when none).
#[derive(Debug, Clone)]
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
    pub jitter: f64,
    pub lambda_min: f64,
}

impl SpdFactor {
    pub fn new(a: &Matrix, what: &'static str, policy: SolvePolicy) -> Result<Self> {
        let eigs = sym_eigenvalues(a)?;
        let n = a.nrows();
        if n == 0 {
            return Err(Error::invalid(format!("{what} is empty")));
        }
        let lambda_min = eigs[0];
        let base_jitter = JITTER_SCALE * a.trace().abs() / n as f64;
        if lambda_min < policy.singular_tol {
            if !policy.allow_near_singular {
                return Err(Error::NearSingular {
                    what,
                    lambda_min,
                    suggested_jitter: base_jitter.max(policy.singular_tol - lambda_min),
                });
            }
        } else if let Some(chol) = Cholesky::new(a.clone()) {
            return Ok(Self {
                chol,
                jitter: 0.0,
                lambda_min,
            });
        }
        // Jittered path: escalate until the factorization succeeds.
        let mut jitter = base_jitter.max(f64::MIN_POSITIVE);
        if lambda_min < 0.0 {
            jitter = jitter.max(-lambda_min * 2.0);
        }
        for _ in 0..40 {
            let shifted = a + Matrix::identity(n, n) * jitter;
            if let Some(chol) = Cholesky::new(shifted) {
                return Ok(Self {
                    chol,
                    jitter,
                    lambda_min,
                });
            }
            jitter *= 10.0;
        }
        Err(Error::NearSingular {
            what,
            lambda_min,
            suggested_jitter: jitter,
        })
    }

    pub fn solve(&self, b: &Vector) -> Vector {
        self.chol.solve(b)
    }
}

pub fn frobenius(a: &Matrix) -> f64 {
    a.norm()
}

pub fn frobenius_distance(a: &Matrix, b: &Matrix) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Haar-distributed random orthogonal matrix (QR of a Gaussian matrix with
/// the sign of R's diagonal folded into Q).
pub fn random_orthogonal(d: usize, rng: &mut Stream) -> Matrix {
    let g = Matrix::from_fn(d, d, |_, _| rng::normal(rng));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Max |(R^T R - I)_ij|.
pub fn orthogonality_defect(r: &Matrix) -> f64 {
    let n = r.ncols();
    let rtr = r.transpose() * r;
    (rtr - Matrix::identity(n, n)).amax()
}

/// Planar rotation by `angle` in coordinates (i, j) of R^d.
pub fn planar_rotation(d: usize, i: usize, j: usize, angle: f64) -> Matrix {
    let mut r = Matrix::identity(d, d);
    let (s, c) = angle.sin_cos();
    r[(i, i)] = c;
    r[(j, j)] = c;
    r[(i, j)] = -s;
    r[(j, i)] = s;
    r
}

/// Row-major flattening of a matrix.
pub fn to_row_major(a: &Matrix) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len());
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            out.push(a[(i, j)]);
        }
    }
    out
}

pub fn from_row_major(rows: usize, cols: usize, data: &[f64]) -> Result<Matrix> {
    if data.len() != rows * cols {
        return Err(Error::DimensionMismatch {
            what: "row-major payload",
            expected: rows * cols,
            found: data.len(),
        });
    }
    Ok(Matrix::from_row_slice(rows, cols, data))
}
