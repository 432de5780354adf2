//! Reference implementations used as test oracles. Everything here is
//! written from the formulas with plain loops over `Vec`s and shares no
//! code with the library beyond seeded sampling.

#![allow(dead_code, clippy::needless_range_loop)]

use std::f64::consts::PI;

use transferlab::linalg::Matrix;
use transferlab::rng;

pub fn kernel(c: f64) -> f64 {
    let c = c.clamp(-1.0, 1.0);
    c * (PI - c.acos()) / (2.0 * PI)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub fn cols(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.ncols()).map(|j| m.column(j).iter().copied().collect()).collect()
}

pub fn from_rows(r: &[Vec<f64>]) -> Matrix {
    Matrix::from_fn(r.len(), r[0].len(), |i, j| r[i][j])
}

pub fn naive_gram(xa: &[Vec<f64>], xb: &[Vec<f64>]) -> Vec<Vec<f64>> {
    xa.iter()
        .map(|a| xb.iter().map(|b| kernel(dot(a, b))).collect())
        .collect()
}

/// `n` seeded unit vectors in R^d.
pub fn unit_vectors(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut s = rng::stream(seed, 0xfeed);
    (0..n)
        .map(|_| {
            let v = rng::normal_vec(&mut s, d);
            let r = norm(&v);
            v.iter().map(|x| x / r).collect()
        })
        .collect()
}

pub fn gaussian(n: usize, seed: u64) -> Vec<f64> {
    rng::normal_vec(&mut rng::stream(seed, 0xbeef), n)
}

/// `(1/sqrt(m)) sum_r a_r relu(w_r . x)` with units given as vectors.
pub fn shallow_forward(units: &[Vec<f64>], a: &[f64], x: &[Vec<f64>]) -> Vec<f64> {
    let m = units.len() as f64;
    x.iter()
        .map(|xi| {
            units
                .iter()
                .zip(a)
                .map(|(w, ar)| ar * dot(w, xi).max(0.0))
                .sum::<f64>()
                / m.sqrt()
        })
        .collect()
}

/// Plain forward pass of a ReLU MLP; layers are given as `W_k[i][j]`
/// (input i, output j). The last layer is linear.
pub fn mlp_forward(layers: &[Vec<Vec<f64>>], x: &[f64]) -> f64 {
    let mut h = x.to_vec();
    for (k, w) in layers.iter().enumerate() {
        let out = w[0].len();
        let mut z = vec![0.0; out];
        for (i, row) in w.iter().enumerate() {
            for j in 0..out {
                z[j] += h[i] * row[j];
            }
        }
        if k + 1 < layers.len() {
            for v in &mut z {
                *v = v.max(0.0);
            }
        }
        h = z;
    }
    h[0]
}

pub fn half_sq(u: &[f64], y: &[f64]) -> f64 {
    0.5 * u.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
}

/// Central differences of `f` at `theta`.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, theta: &[f64], h: f64) -> Vec<f64> {
    let mut t = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            t[i] = theta[i] + h;
            let fp = f(&t);
            t[i] = theta[i] - h;
            let fm = f(&t);
            t[i] = theta[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Dense Hessian from central differences of a gradient, symmetrized.
pub fn fd_hessian(grad: impl Fn(&[f64]) -> Vec<f64>, theta: &[f64], h: f64) -> Vec<Vec<f64>> {
    let p = theta.len();
    let mut t = theta.to_vec();
    let mut hess = vec![vec![0.0; p]; p];
    for j in 0..p {
        t[j] = theta[j] + h;
        let gp = grad(&t);
        t[j] = theta[j] - h;
        let gm = grad(&t);
        t[j] = theta[j];
        for i in 0..p {
            hess[i][j] = (gp[i] - gm[i]) / (2.0 * h);
        }
    }
    for i in 0..p {
        for j in 0..i {
            let s = 0.5 * (hess[i][j] + hess[j][i]);
            hess[i][j] = s;
            hess[j][i] = s;
        }
    }
    hess
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix: eigenvalues
/// descending, with eigenvectors as the matching columns of the second
/// result (`vecs[i][k]` is component i of eigenvector k).
pub fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = if theta == 0.0 {
                    1.0
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k][p], v[k][q]);
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a[y][y].total_cmp(&a[x][x]));
    let vals = order.iter().map(|&i| a[i][i]).collect();
    let vecs = (0..n).map(|i| order.iter().map(|&k| v[i][k]).collect()).collect();
    (vals, vecs)
}

pub fn jacobi_eigenvalues(a: Vec<Vec<f64>>) -> Vec<f64> {
    jacobi_eigen(a).0
}

/// Singular values from the eigenvalues of `A^T A`.
pub fn singular_values(a: &[Vec<f64>]) -> Vec<f64> {
    let c = a[0].len();
    let ata: Vec<Vec<f64>> = (0..c)
        .map(|i| (0..c).map(|j| a.iter().map(|r| r[i] * r[j]).sum()).collect())
        .collect();
    jacobi_eigenvalues(ata).into_iter().map(|l| l.max(0.0).sqrt()).collect()
}

/// Gauss-Jordan inverse with partial pivoting.
pub fn inverse(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut row = r.clone();
            row.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            row
        })
        .collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs())).unwrap();
        m.swap(col, piv);
        let d = m[col][col];
        for v in &mut m[col] {
            *v /= d;
        }
        for r in 0..n {
            if r != col {
                let f = m[r][col];
                if f != 0.0 {
                    let pivot_row = m[col].clone();
                    for (v, p) in m[r].iter_mut().zip(&pivot_row) {
                        *v -= f * p;
                    }
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

pub fn mat_vec(a: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    a.iter().map(|r| dot(r, v)).collect()
}

pub fn transpose(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

/// Spearman correlation by the rank-difference formula (no ties).
pub fn spearman_no_ties(x: &[f64], y: &[f64]) -> f64 {
    let rank = |v: &[f64]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        for (k, &i) in idx.iter().enumerate() {
            r[i] = k as f64;
        }
        r
    };
    let (rx, ry) = (rank(x), rank(y));
    let n = x.len() as f64;
    let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b).powi(2)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}
