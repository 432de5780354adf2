//! Measurements on trained models: loss landscapes, loss variation along
//! the gradient, top Hessian eigenvalues, gradient SVD projections and
//! distances between checkpoints.
//!
//! Probes see a model only through [`Probeable`]: a flat parameter vector
//! made of the layer matrices in order, each stored column-major.

mod distance;
mod hessian;
mod landscape;
mod svd;
mod variation;

pub use distance::{checkpoint_distance_matrix, weight_deviation_series, DistanceMatrix};
pub use hessian::{hessian_topk, hvp, HessianConfig, HessianSpectrum};
pub use landscape::{landscape_grid, LandscapeConfig, LandscapeGrid, Normalization};
pub use svd::{grad_svd_projection, project_onto_gradient, SvdProjection};
pub use variation::{loss_variation_along_gradient, VariationConfig, VariationRow, VariationSeries};

use crate::deepnet::DeepNet;
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::shallow::ShallowNet;
use crate::tasks::TaskDataset;

pub trait Probeable {
    /// `(rows, cols)` of each trainable layer; columns are output neurons.
    fn layer_shapes(&self) -> Vec<(usize, usize)>;
    fn params(&self) -> Vec<f64>;
    fn set_params(&mut self, theta: &[f64]) -> Result<()>;
    fn batch_loss(&self, batch: &TaskDataset) -> Result<f64>;
    fn batch_gradient(&self, batch: &TaskDataset) -> Result<Vec<f64>>;

    fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(r, c)| r * c).sum()
    }
}

/// Offset of each layer in the flat parameter vector.
pub fn layer_offsets(shapes: &[(usize, usize)]) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(shapes.len());
    let mut at = 0;
    for (r, c) in shapes {
        offsets.push(at);
        at += r * c;
    }
    offsets
}

/// The layer matrices of a model.
pub fn layers_of(model: &impl Probeable) -> Vec<Matrix> {
    split_layers(&model.layer_shapes(), &model.params())
}

fn split_layers(shapes: &[(usize, usize)], theta: &[f64]) -> Vec<Matrix> {
    let offsets = layer_offsets(shapes);
    shapes
        .iter()
        .zip(offsets)
        .map(|(&(r, c), o)| Matrix::from_column_slice(r, c, &theta[o..o + r * c]))
        .collect()
}

fn check_len(model: &impl Probeable, theta: &[f64]) -> Result<()> {
    if theta.len() != model.param_count() {
        return Err(Error::DimensionMismatch {
            what: "parameter vector",
            expected: model.param_count(),
            found: theta.len(),
        });
    }
    Ok(())
}

pub(crate) fn check_layer(model: &impl Probeable, layer: usize) -> Result<(usize, usize)> {
    model.layer_shapes().get(layer).copied().ok_or_else(|| {
        Error::invalid(format!(
            "layer {layer} does not exist (model has {})",
            model.layer_shapes().len()
        ))
    })
}

impl Probeable for ShallowNet {
    fn layer_shapes(&self) -> Vec<(usize, usize)> {
        vec![(self.d(), self.m())]
    }
    fn params(&self) -> Vec<f64> {
        self.w().as_slice().to_vec()
    }
    fn set_params(&mut self, theta: &[f64]) -> Result<()> {
        check_len(self, theta)?;
        *self = self.with_weights(Matrix::from_column_slice(self.d(), self.m(), theta))?;
        Ok(())
    }
    fn batch_loss(&self, batch: &TaskDataset) -> Result<f64> {
        self.loss(batch.inputs(), batch.labels())
    }
    fn batch_gradient(&self, batch: &TaskDataset) -> Result<Vec<f64>> {
        Ok(self.grad_w(batch.inputs(), batch.labels())?.as_slice().to_vec())
    }
}

impl Probeable for DeepNet {
    fn layer_shapes(&self) -> Vec<(usize, usize)> {
        self.weights().iter().map(|w| w.shape()).collect()
    }
    fn params(&self) -> Vec<f64> {
        self.weights().iter().flat_map(|w| w.iter().copied()).collect()
    }
    fn set_params(&mut self, theta: &[f64]) -> Result<()> {
        check_len(self, theta)?;
        *self = self.with_weights(split_layers(&self.layer_shapes(), theta))?;
        Ok(())
    }
    fn batch_loss(&self, batch: &TaskDataset) -> Result<f64> {
        self.loss(batch.inputs(), batch.labels())
    }
    fn batch_gradient(&self, batch: &TaskDataset) -> Result<Vec<f64>> {
        let bw = self.forward_backward(batch.inputs(), batch.labels())?;
        Ok(bw.weight_grads.iter().flat_map(|g| g.iter().copied()).collect())
    }
}

/// `L(theta) = 0.5 (theta - c)^T A (theta - c)`, one layer of shape P x 1.
/// The batch is ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticModel {
    pub a: Matrix,
    pub center: Vector,
    pub theta: Vector,
}

impl QuadraticModel {
    pub fn new(a: Matrix, center: Vector, theta: Vector) -> Result<Self> {
        crate::linalg::ensure_symmetric(&a)?;
        if center.len() != a.nrows() || theta.len() != a.nrows() {
            return Err(Error::DimensionMismatch {
                what: "quadratic model vectors",
                expected: a.nrows(),
                found: theta.len(),
            });
        }
        Ok(Self { a, center, theta })
    }

    pub fn diagonal(diag: &[f64], theta: &[f64]) -> Result<Self> {
        let p = diag.len();
        Self::new(
            Matrix::from_diagonal(&Vector::from_column_slice(diag)),
            Vector::zeros(p),
            Vector::from_column_slice(theta),
        )
    }
}

impl Probeable for QuadraticModel {
    fn layer_shapes(&self) -> Vec<(usize, usize)> {
        vec![(self.theta.len(), 1)]
    }
    fn params(&self) -> Vec<f64> {
        self.theta.as_slice().to_vec()
    }
    fn set_params(&mut self, theta: &[f64]) -> Result<()> {
        check_len(self, theta)?;
        self.theta.copy_from_slice(theta);
        Ok(())
    }
    fn batch_loss(&self, _batch: &TaskDataset) -> Result<f64> {
        let e = &self.theta - &self.center;
        Ok(0.5 * e.dot(&(&self.a * &e)))
    }
    fn batch_gradient(&self, _batch: &TaskDataset) -> Result<Vec<f64>> {
        Ok((&self.a * (&self.theta - &self.center)).as_slice().to_vec())
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn axpy(theta: &[f64], alpha: f64, dir: &[f64]) -> Vec<f64> {
    theta.iter().zip(dir).map(|(t, d)| t + alpha * d).collect()
}
