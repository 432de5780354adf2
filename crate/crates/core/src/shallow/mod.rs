//! Two-layer ReLU network `f(x) = (1/sqrt(m)) a^T relu(W^T x)` with fixed
//! output signs `a`, trained on the squared loss by full-batch gradient
//! descent.
//!
//! `W` is stored as a d x m matrix whose columns are the hidden units
//! `w_r`. The ReLU derivative at exactly zero is taken as 0, and the same
//! convention defines the activation indicators everywhere in this module.

mod checkpoint;
mod train;
mod verify;

pub(crate) use checkpoint::{decode_f64s, encode_f64s, split_header};
pub use checkpoint::{
    checkpoint_bytes, checkpoint_from_bytes, read_checkpoint, write_checkpoint, CHECKPOINT_FORMAT,
};
pub use train::{
    default_eta, default_kappa, epoch_sweep_transfer, pretrain_then_transfer, train_gd,
    train_scratch, NetConfig, DIVERGENCE_FACTOR, SweepReport, SweepRow, TrainConfig, TransferReport,
};
pub use verify::{
    verify_convergence, verify_theorem1, verify_theorem2, ConvergenceConfig, ConvergenceReport,
    SeedContraction, Verdict, VerificationReport, VerifyConfig, VerifyRow, WidthSummary,
};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::rng::{self, streams};

/// Default cap on the number of entries of an explicit Z matrix.
pub const Z_ENTRY_BUDGET: usize = 1 << 26;

#[derive(Debug, Clone, PartialEq)]
pub struct ShallowNet {
    w: Matrix,
    a: Vector,
    kappa: f64,
    w_init: Matrix,
    seed: u64,
    step: usize,
}

/// `dL/dX1 = (1/sqrt(m)) a (u - y)^T` and its squared Frobenius norm.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationGrad {
    pub values: Matrix,
    pub squared_norm: f64,
}

/// `w_r(0) ~ N(0, kappa^2 I)`, `a_r ~ unif{-1, +1}`.
pub fn init_net(d: usize, m: usize, kappa: f64, seed: u64) -> Result<ShallowNet> {
    if d < 2 {
        return Err(Error::invalid("input dimension must be at least 2"));
    }
    if m < 1 {
        return Err(Error::invalid("need at least one hidden unit"));
    }
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::invalid(format!("kappa must be positive, got {kappa}")));
    }
    let mut ws = rng::stream(seed, streams::NET_WEIGHTS);
    // column-major fill: unit r occupies entries r*d .. (r+1)*d
    let w = Matrix::from_iterator(d, m, (0..d * m).map(|_| kappa * rng::normal(&mut ws)));
    let mut signs = rng::stream(seed, streams::NET_SIGNS);
    let a = Vector::from_iterator(m, (0..m).map(|_| rng::sign(&mut signs)));
    Ok(ShallowNet {
        w_init: w.clone(),
        w,
        a,
        kappa,
        seed,
        step: 0,
    })
}

impl ShallowNet {
    /// Network from explicit weights; the initialization snapshot is `w`.
    pub fn from_parts(w: Matrix, a: Vector, kappa: f64) -> Result<Self> {
        if a.len() != w.ncols() {
            return Err(Error::DimensionMismatch {
                what: "output signs",
                expected: w.ncols(),
                found: a.len(),
            });
        }
        if let Some(r) = a.iter().position(|&s| s != 1.0 && s != -1.0) {
            return Err(Error::invalid(format!("a[{r}] = {} is not +-1", a[r])));
        }
        Ok(Self {
            w_init: w.clone(),
            w,
            a,
            kappa,
            seed: 0,
            step: 0,
        })
    }

    pub(crate) fn from_checkpoint_parts(
        w: Matrix,
        w_init: Matrix,
        a: Vector,
        kappa: f64,
        seed: u64,
        step: usize,
    ) -> Result<Self> {
        let mut net = Self::from_parts(w, a, kappa)?;
        if w_init.shape() != net.w.shape() {
            return Err(Error::Format("W_init shape differs from W".into()));
        }
        net.w_init = w_init;
        net.seed = seed;
        net.step = step;
        Ok(net)
    }

    pub fn d(&self) -> usize {
        self.w.nrows()
    }
    pub fn m(&self) -> usize {
        self.w.ncols()
    }
    pub fn w(&self) -> &Matrix {
        &self.w
    }
    pub fn a(&self) -> &Vector {
        &self.a
    }
    pub fn kappa(&self) -> f64 {
        self.kappa
    }
    pub fn w_init(&self) -> &Matrix {
        &self.w_init
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    /// Gradient steps taken since initialization.
    pub fn step(&self) -> usize {
        self.step
    }

    /// Copy with hidden weights replaced; `a`, `W_init` and the step count
    /// are kept.
    pub fn with_weights(&self, w: Matrix) -> Result<Self> {
        if w.shape() != self.w.shape() {
            return Err(Error::DimensionMismatch {
                what: "hidden weights",
                expected: self.w.len(),
                found: w.len(),
            });
        }
        Ok(Self { w, ..self.clone() })
    }

    pub(crate) fn set_weights_unchecked(&mut self, w: Matrix, steps_taken: usize) {
        self.w = w;
        self.step += steps_taken;
    }

    fn check_inputs(&self, x: &Matrix) -> Result<()> {
        if x.ncols() != self.d() {
            return Err(Error::DimensionMismatch {
                what: "input dimension",
                expected: self.d(),
                found: x.ncols(),
            });
        }
        Ok(())
    }

    fn check_labels(x: &Matrix, y: &Vector) -> Result<()> {
        if y.len() != x.nrows() {
            return Err(Error::DimensionMismatch {
                what: "label count",
                expected: x.nrows(),
                found: y.len(),
            });
        }
        Ok(())
    }

    /// `X W`, n x m.
    pub fn pre_activations(&self, x: &Matrix) -> Matrix {
        x * &self.w
    }

    /// n x m matrix of `1{w_r . x_i > 0}`.
    pub fn activation_pattern(&self, x: &Matrix) -> Matrix {
        self.pre_activations(x).map(|v| if v > 0.0 { 1.0 } else { 0.0 })
    }

    fn output_from_pre(&self, pre: &Matrix) -> Vector {
        let hidden = pre.map(|v| v.max(0.0));
        (hidden * &self.a) / (self.m() as f64).sqrt()
    }

    /// `u_i = (1/sqrt(m)) sum_r a_r relu(w_r . x_i)`.
    pub fn forward(&self, x: &Matrix) -> Result<Vector> {
        self.check_inputs(x)?;
        Ok(self.output_from_pre(&self.pre_activations(x)))
    }

    /// `0.5 ||y - u||^2`.
    pub fn loss(&self, x: &Matrix, y: &Vector) -> Result<f64> {
        Self::check_labels(x, y)?;
        let u = self.forward(x)?;
        Ok(0.5 * (y - u).norm_squared())
    }

    /// Gradient from cached pre-activations and residual `u - y`.
    fn grad_from(&self, x: &Matrix, pre: &Matrix, residual: &Vector) -> Matrix {
        let scale = 1.0 / (self.m() as f64).sqrt();
        let (n, m) = pre.shape();
        let mut coeff = Matrix::zeros(n, m);
        for r in 0..m {
            let ar = self.a[r] * scale;
            for i in 0..n {
                if pre[(i, r)] > 0.0 {
                    coeff[(i, r)] = residual[i] * ar;
                }
            }
        }
        x.transpose() * coeff
    }

    /// `dL/dw_r = (1/sqrt(m)) a_r sum_i (u_i - y_i) 1{w_r . x_i > 0} x_i`, as a
    /// d x m matrix.
    pub fn grad_w(&self, x: &Matrix, y: &Vector) -> Result<Matrix> {
        self.check_inputs(x)?;
        Self::check_labels(x, y)?;
        let pre = self.pre_activations(x);
        let u = self.output_from_pre(&pre);
        Ok(self.grad_from(x, &pre, &(u - y)))
    }

    /// Gradient of the loss with respect to the hidden activations,
    /// `(1/sqrt(m)) a (u - y)^T` (m x n).
    pub fn grad_activations(&self, x: &Matrix, y: &Vector) -> Result<ActivationGrad> {
        Self::check_labels(x, y)?;
        let u = self.forward(x)?;
        Ok(self.activation_grad_from(&(u - y)))
    }

    fn activation_grad_from(&self, residual: &Vector) -> ActivationGrad {
        let scale = 1.0 / (self.m() as f64).sqrt();
        let values = (&self.a * scale) * residual.transpose();
        let squared_norm = values.norm_squared();
        ActivationGrad {
            values,
            squared_norm,
        }
    }

    /// The md x n matrix `Z` with block (r, i) equal to
    /// `(1/sqrt(m)) 1{w_r . x_i > 0} a_r x_i`, so that
    /// `vec(grad_w) = Z (u - y)` and `Z^T Z` is the finite-width Gram matrix.
    pub fn z_matrix(&self, x: &Matrix, entry_budget: usize) -> Result<Matrix> {
        self.check_inputs(x)?;
        let (n, d, m) = (x.nrows(), self.d(), self.m());
        let required = m.saturating_mul(d).saturating_mul(n);
        if required > entry_budget {
            return Err(Error::MemoryBudget {
                required,
                budget: entry_budget,
            });
        }
        let pre = self.pre_activations(x);
        let scale = 1.0 / (m as f64).sqrt();
        let mut z = Matrix::zeros(m * d, n);
        for i in 0..n {
            for r in 0..m {
                if pre[(i, r)] > 0.0 {
                    let c = scale * self.a[r];
                    for k in 0..d {
                        z[(r * d + k, i)] = c * x[(i, k)];
                    }
                }
            }
        }
        Ok(z)
    }

    /// `max_r ||w_r - w_r(0)||_2`.
    pub fn max_neuron_movement(&self) -> f64 {
        (0..self.m())
            .map(|r| (self.w.column(r) - self.w_init.column(r)).norm())
            .fold(0.0, f64::max)
    }
}

/// Fraction of (unit, sample) pairs whose activation indicator differs
/// between two networks of the same shape.
pub fn activation_flip_fraction(now: &ShallowNet, reference: &ShallowNet, x: &Matrix) -> Result<f64> {
    if now.w.shape() != reference.w.shape() {
        return Err(Error::DimensionMismatch {
            what: "network shapes",
            expected: reference.w.len(),
            found: now.w.len(),
        });
    }
    now.check_inputs(x)?;
    Ok(flip_fraction(&now.pre_activations(x), &reference.pre_activations(x)))
}

pub(crate) fn flip_fraction(pre_now: &Matrix, pre_ref: &Matrix) -> f64 {
    if pre_now.is_empty() {
        return 0.0;
    }
    let flips = pre_now
        .iter()
        .zip(pre_ref.iter())
        .filter(|(a, b)| (**a > 0.0) != (**b > 0.0))
        .count();
    flips as f64 / pre_now.len() as f64
}
