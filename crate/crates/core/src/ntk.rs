//! Infinite-width Gram matrices of a two-layer ReLU network and the task
//! quantities derived from them.
//!
//! For unit inputs x, x' the kernel entry is
//! `E_w[x.x' 1{w.x >= 0, w.x' >= 0}] = c (pi - arccos c) / (2 pi)` with
//! `c = x.x'`. From the source Gram `H_P`, target Gram `H_Q` and cross Gram
//! `H_PQ` we form the transformed labels `y_{P->Q} = H_PQ^T H_P^{-1} y_P`
//! and the task-similarity residual `y_Q - y_{P->Q}`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{self, Csv};
use crate::linalg::{self, Matrix, SolvePolicy, SpdFactor, Vector};
use crate::rng::{self, streams};
use crate::shallow::ShallowNet;
use crate::tasks::TaskDataset;

/// Inputs must have unit norm to this tolerance.
pub const UNIT_TOL: f64 = 1e-9;
const MC_BATCH: u64 = 4096;

/// `c (pi - arccos c) / (2 pi)` with `c` clamped to [-1, 1].
pub fn arccos_kernel(c: f64) -> f64 {
    let c = c.clamp(-1.0, 1.0);
    c * (PI - c.acos()) / (2.0 * PI)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum GramKind {
    ExactInfinite,
    MonteCarlo { samples: u64, seed: u64 },
    EmpiricalFinite { width: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub values: Matrix,
    pub kind: GramKind,
    /// Per-entry standard error (Monte-Carlo only).
    pub stderr: Option<Matrix>,
}

impl GramMatrix {
    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }
    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    fn to_file(&self) -> GramFile {
        GramFile {
            kind: self.kind,
            rows: self.nrows(),
            cols: self.ncols(),
            values: linalg::to_row_major(&self.values),
            stderr: self.stderr.as_ref().map(linalg::to_row_major),
        }
    }

    fn from_file(f: GramFile) -> Result<Self> {
        Ok(Self {
            values: linalg::from_row_major(f.rows, f.cols, &f.values)?,
            kind: f.kind,
            stderr: f
                .stderr
                .map(|s| linalg::from_row_major(f.rows, f.cols, &s))
                .transpose()?,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct GramFile {
    kind: GramKind,
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    stderr: Option<Vec<f64>>,
}

fn check_unit_rows(x: &Matrix, what: &'static str) -> Result<()> {
    for i in 0..x.nrows() {
        let norm = x.row(i).norm();
        if !((norm - 1.0).abs() <= UNIT_TOL) {
            return Err(Error::invalid(format!("{what} row {i} has norm {norm}, expected 1")));
        }
    }
    Ok(())
}

fn check_same_dim(xa: &Matrix, xb: &Matrix) -> Result<()> {
    if xa.ncols() != xb.ncols() {
        return Err(Error::DimensionMismatch {
            what: "input dimension",
            expected: xa.ncols(),
            found: xb.ncols(),
        });
    }
    Ok(())
}

/// Exact infinite-width Gram matrix between the rows of `xa` and `xb`.
///
/// When both arguments hold the same inputs the result is exactly
/// symmetric with diagonal 1/2.
pub fn gram_exact(xa: &Matrix, xb: &Matrix) -> Result<GramMatrix> {
    check_same_dim(xa, xb)?;
    check_unit_rows(xa, "X_A")?;
    check_unit_rows(xb, "X_B")?;
    let values = if xa == xb {
        let n = xa.nrows();
        let mut h = Matrix::zeros(n, n);
        for i in 0..n {
            h[(i, i)] = 0.5;
            for j in (i + 1)..n {
                let v = arccos_kernel(xa.row(i).dot(&xa.row(j)));
                h[(i, j)] = v;
                h[(j, i)] = v;
            }
        }
        h
    } else {
        let dots = xa * xb.transpose();
        dots.map(arccos_kernel)
    };
    Ok(GramMatrix {
        values,
        kind: GramKind::ExactInfinite,
        stderr: None,
    })
}

/// Monte-Carlo estimate of the Gram matrix from `samples` standard-normal
/// draws of w, with per-entry standard errors.
///
/// Samples are drawn in fixed-size batches, each from its own stream, and
/// tallied as integer counts, so the result does not depend on how batches
/// are scheduled.
pub fn gram_monte_carlo(xa: &Matrix, xb: &Matrix, samples: u64, seed: u64) -> Result<GramMatrix> {
    check_same_dim(xa, xb)?;
    if samples == 0 {
        return Err(Error::invalid("Monte-Carlo Gram needs at least one sample"));
    }
    let (na, nb, d) = (xa.nrows(), xb.nrows(), xa.ncols());
    let mut counts = vec![0u64; na * nb];
    let mut w = Vector::zeros(d);
    let mut act_a = Vec::with_capacity(na);
    let mut act_b = Vec::with_capacity(nb);
    let batches = samples.div_ceil(MC_BATCH);
    for b in 0..batches {
        let mut s = rng::stream(rng::child_seed(seed, b), streams::MONTE_CARLO);
        let in_batch = MC_BATCH.min(samples - b * MC_BATCH);
        for _ in 0..in_batch {
            for k in 0..d {
                w[k] = rng::normal(&mut s);
            }
            act_a.clear();
            act_b.clear();
            act_a.extend((0..na).filter(|&i| xa.row(i).transpose().dot(&w) >= 0.0));
            act_b.extend((0..nb).filter(|&j| xb.row(j).transpose().dot(&w) >= 0.0));
            for &i in &act_a {
                for &j in &act_b {
                    counts[i * nb + j] += 1;
                }
            }
        }
    }
    let dots = xa * xb.transpose();
    let nf = samples as f64;
    let mut values = Matrix::zeros(na, nb);
    let mut stderr = Matrix::zeros(na, nb);
    for i in 0..na {
        for j in 0..nb {
            let c = dots[(i, j)];
            let p = counts[i * nb + j] as f64 / nf;
            values[(i, j)] = c * p;
            if samples > 1 {
                stderr[(i, j)] = c.abs() * (p * (1.0 - p) / (nf - 1.0)).sqrt();
            }
        }
    }
    Ok(GramMatrix {
        values,
        kind: GramKind::MonteCarlo { samples, seed },
        stderr: Some(stderr),
    })
}

/// Finite-width Gram matrix `H_ij = (1/m) x_i.x_j sum_r 1{w_r.x_i > 0} 1{w_r.x_j > 0}`
/// using the network's current hidden weights.
///
/// The activation indicator uses the same convention as the network's
/// gradient (a unit at exactly zero is inactive), so `Z^T Z` equals this
/// matrix for the same network and inputs.
pub fn gram_empirical(net: &ShallowNet, xa: &Matrix, xb: &Matrix) -> Result<GramMatrix> {
    check_same_dim(xa, xb)?;
    if xa.ncols() != net.d() {
        return Err(Error::DimensionMismatch {
            what: "network input dimension",
            expected: net.d(),
            found: xa.ncols(),
        });
    }
    let ia = net.activation_pattern(xa);
    let ib = net.activation_pattern(xb);
    let shared = (&ia * ib.transpose()) / net.m() as f64;
    let values = (xa * xb.transpose()).component_mul(&shared);
    Ok(GramMatrix {
        values,
        kind: GramKind::EmpiricalFinite { width: net.m() },
        stderr: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinEigen {
    pub value: f64,
    pub near_singular: bool,
}

/// Smallest eigenvalue of a symmetric Gram matrix; flags values below
/// `singular_tol` as near-singular.
pub fn min_eigenvalue(g: &Matrix, singular_tol: f64) -> Result<MinEigen> {
    let eigs = linalg::sym_eigenvalues(g)?;
    let value = *eigs
        .first()
        .ok_or_else(|| Error::invalid("empty matrix has no eigenvalues"))?;
    Ok(MinEigen {
        value,
        near_singular: value <= singular_tol,
    })
}

/// `y_{P->Q} = H_PQ^T H_P^{-1} y_P`, solved through a Cholesky factor of
/// `H_P`. Returns the transformed labels and the diagonal jitter used.
pub fn transformed_labels(
    h_p: &Matrix,
    h_pq: &Matrix,
    y_p: &Vector,
    policy: SolvePolicy,
) -> Result<(Vector, f64)> {
    let n_p = h_p.nrows();
    if h_pq.nrows() != n_p {
        return Err(Error::DimensionMismatch {
            what: "H_PQ rows",
            expected: n_p,
            found: h_pq.nrows(),
        });
    }
    if y_p.len() != n_p {
        return Err(Error::DimensionMismatch {
            what: "source labels",
            expected: n_p,
            found: y_p.len(),
        });
    }
    let factor = SpdFactor::new(h_p, "H_P", policy)?;
    let z = factor.solve(y_p);
    Ok((h_pq.transpose() * z, factor.jitter))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Similarity {
    /// `||y_Q - y_{P->Q}||_2`
    pub l2: f64,
    /// `(y_Q - y_{P->Q})^T H_Q^{-1} (y_Q - y_{P->Q})`
    pub quadform: f64,
    pub jitter: f64,
}

/// Norm and `H_Q^{-1}`-weighted quadratic form of `y_Q - y_transformed`.
/// The quadratic form goes through a Cholesky solve, never an explicit
/// inverse.
pub fn task_similarity(
    y_q: &Vector,
    y_transformed: &Vector,
    h_q: &Matrix,
    policy: SolvePolicy,
) -> Result<Similarity> {
    if y_q.len() != y_transformed.len() || y_q.len() != h_q.nrows() {
        return Err(Error::DimensionMismatch {
            what: "target labels",
            expected: h_q.nrows(),
            found: if y_q.len() != h_q.nrows() { y_q.len() } else { y_transformed.len() },
        });
    }
    let delta = y_q - y_transformed;
    let factor = SpdFactor::new(h_q, "H_Q", policy)?;
    let z = factor.solve(&delta);
    let quadform = delta.dot(&z).max(0.0);
    Ok(Similarity {
        l2: delta.norm(),
        quadform,
        jitter: factor.jitter,
    })
}

/// Everything the bounds need for one (source, target) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct GramBundle {
    pub h_p: GramMatrix,
    pub h_q: GramMatrix,
    pub h_pq: GramMatrix,
    pub lambda_p: f64,
    pub lambda_q: f64,
    pub y_source: Vector,
    pub y_target: Vector,
    pub y_transformed: Vector,
    pub similarity_l2: f64,
    pub similarity_quadform: f64,
    /// `y_Q^T H_Q^{-1} y_Q`, the from-scratch counterpart of the quadform.
    pub scratch_quadform: f64,
    pub jitter_used: f64,
}

impl GramBundle {
    pub fn build(source: &TaskDataset, target: &TaskDataset, policy: SolvePolicy) -> Result<Self> {
        let h_p = gram_exact(source.inputs(), source.inputs())?;
        let h_q = gram_exact(target.inputs(), target.inputs())?;
        let h_pq = gram_exact(source.inputs(), target.inputs())?;
        let lambda_p = min_eigenvalue(&h_p.values, policy.singular_tol)?.value;
        let lambda_q = min_eigenvalue(&h_q.values, policy.singular_tol)?.value;
        for (what, lambda) in [("H_P", lambda_p), ("H_Q", lambda_q)] {
            if !(lambda > 0.0) {
                return Err(Error::NearSingular {
                    what,
                    lambda_min: lambda,
                    suggested_jitter: linalg::JITTER_SCALE.max(-2.0 * lambda),
                });
            }
        }
        let (y_transformed, jitter_p) =
            transformed_labels(&h_p.values, &h_pq.values, source.labels(), policy)?;
        let sim = task_similarity(target.labels(), &y_transformed, &h_q.values, policy)?;
        let scratch = task_similarity(
            target.labels(),
            &Vector::zeros(target.n()),
            &h_q.values,
            policy,
        )?;
        Ok(Self {
            h_p,
            h_q,
            h_pq,
            lambda_p,
            lambda_q,
            y_source: source.labels().clone(),
            y_target: target.labels().clone(),
            y_transformed,
            similarity_l2: sim.l2,
            similarity_quadform: sim.quadform,
            scratch_quadform: scratch.quadform,
            jitter_used: jitter_p.max(sim.jitter),
        })
    }

    pub fn delta(&self) -> Vector {
        &self.y_target - &self.y_transformed
    }

    pub fn to_json_string(&self) -> Result<String> {
        io::to_json_string(&BundleFile {
            h_p: self.h_p.to_file(),
            h_q: self.h_q.to_file(),
            h_pq: self.h_pq.to_file(),
            lambda_p: self.lambda_p,
            lambda_q: self.lambda_q,
            y_source: self.y_source.iter().copied().collect(),
            y_target: self.y_target.iter().copied().collect(),
            y_transformed: self.y_transformed.iter().copied().collect(),
            similarity_l2: self.similarity_l2,
            similarity_quadform: self.similarity_quadform,
            scratch_quadform: self.scratch_quadform,
            theorem2_bound: theorem2_bound(self),
            jitter_used: self.jitter_used,
        })
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let f: BundleFile = serde_json::from_str(s)?;
        Ok(Self {
            h_p: GramMatrix::from_file(f.h_p)?,
            h_q: GramMatrix::from_file(f.h_q)?,
            h_pq: GramMatrix::from_file(f.h_pq)?,
            lambda_p: f.lambda_p,
            lambda_q: f.lambda_q,
            y_source: Vector::from_vec(f.y_source),
            y_target: Vector::from_vec(f.y_target),
            y_transformed: Vector::from_vec(f.y_transformed),
            similarity_l2: f.similarity_l2,
            similarity_quadform: f.similarity_quadform,
            scratch_quadform: f.scratch_quadform,
            jitter_used: f.jitter_used,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct BundleFile {
    h_p: GramFile,
    h_q: GramFile,
    h_pq: GramFile,
    lambda_p: f64,
    lambda_q: f64,
    y_source: Vec<f64>,
    y_target: Vec<f64>,
    y_transformed: Vec<f64>,
    similarity_l2: f64,
    similarity_quadform: f64,
    scratch_quadform: f64,
    theorem2_bound: f64,
    jitter_used: f64,
}

/// Leading term of the weight-movement bound, `sqrt(delta^T H_Q^{-1} delta)`.
/// The O(kappa) and poly/m^{1/4} slack terms are not evaluated.
pub fn theorem2_bound(bundle: &GramBundle) -> f64 {
    bundle.similarity_quadform.sqrt()
}

/// From-scratch counterpart, `sqrt(y_Q^T H_Q^{-1} y_Q)`.
pub fn scratch_bound(bundle: &GramBundle) -> f64 {
    bundle.scratch_quadform.sqrt()
}

/// Leading-term prediction of `||dL(W(P))/dX1||^2` on the target:
/// `grad_sq_at_init - y_Q^T y_Q + ||y_Q - y_{P->Q}||^2`.
pub fn theorem1_prediction(bundle: &GramBundle, grad_sq_at_init: f64) -> f64 {
    grad_sq_at_init - bundle.y_target.norm_squared() + bundle.similarity_l2.powi(2)
}

/// Sweep table with one row per labelled bundle.
pub fn bundle_csv<'a>(rows: impl IntoIterator<Item = (&'a str, &'a GramBundle)>) -> Csv {
    let mut csv = Csv::with_header(&[
        "pair_id",
        "lambda_p",
        "lambda_q",
        "similarity_l2",
        "quadform",
        "theorem2_bound",
    ]);
    for (id, b) in rows {
        csv.row(&[
            id.to_string(),
            io::fmt_f64(b.lambda_p),
            io::fmt_f64(b.lambda_q),
            io::fmt_f64(b.similarity_l2),
            io::fmt_f64(b.similarity_quadform),
            io::fmt_f64(theorem2_bound(b)),
        ]);
    }
    csv
}
