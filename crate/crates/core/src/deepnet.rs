//! Fully-connected ReLU stack `X^k = relu(X^{k-1} W_k)` with a linear last
//! layer of width 1, trained on the squared loss.
//!
//! Samples are rows, so `W_k` is `d_{k-1} x d_k` and its columns are the
//! output neurons of layer k. As in [`crate::shallow`] the ReLU derivative
//! at zero is 0.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::linalg::{self, Matrix, Vector};
use crate::rng::{self, streams};
use crate::shallow::{TrainConfig, DIVERGENCE_FACTOR};
use crate::shallow::ShallowNet;
use crate::tasks::TaskDataset;
use crate::trace::{DeviationRef, TraceRecord, TrainTrace};

pub const DEEP_CHECKPOINT_FORMAT: &str = "transferlab-deep-v1";

/// Per-layer standard deviation of the Gaussian init.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "rule")]
pub enum Scale {
    /// Same scale for every layer.
    Fixed { scale: f64 },
    /// `gain * sqrt(2 / d_in)`.
    He { gain: f64 },
    PerLayer { scales: Vec<f64> },
}

impl Scale {
    pub fn resolve(&self, layer_dims: &[usize]) -> Result<Vec<f64>> {
        let layers = layer_dims.len().saturating_sub(1);
        let scales = match self {
            Scale::Fixed { scale } => vec![*scale; layers],
            Scale::He { gain } => layer_dims[..layers]
                .iter()
                .map(|&d| gain * (2.0 / d as f64).sqrt())
                .collect(),
            Scale::PerLayer { scales } => {
                if scales.len() != layers {
                    return Err(Error::DimensionMismatch {
                        what: "per-layer scales",
                        expected: layers,
                        found: scales.len(),
                    });
                }
                scales.clone()
            }
        };
        if let Some(s) = scales.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
            return Err(Error::invalid(format!("init scale must be finite and >= 0, got {s}")));
        }
        Ok(scales)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum InitKind {
    RandomGaussian { scales: Vec<f64> },
    PretrainedFrom { run_id: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeepNet {
    layer_dims: Vec<usize>,
    weights: Vec<Matrix>,
    init_snapshot: Vec<Matrix>,
    init_kind: InitKind,
    seed: u64,
    step: usize,
}

fn check_dims(layer_dims: &[usize]) -> Result<()> {
    if layer_dims.len() < 3 {
        return Err(Error::invalid("need at least two layers (three dims)"));
    }
    if layer_dims.contains(&0) {
        return Err(Error::invalid("layer widths must be positive"));
    }
    if *layer_dims.last().unwrap() != 1 {
        return Err(Error::invalid("output layer must have width 1"));
    }
    Ok(())
}

/// Gaussian init with `W_k` entries `N(0, s_k^2)`.
pub fn init_deep(layer_dims: &[usize], scale: &Scale, seed: u64) -> Result<DeepNet> {
    check_dims(layer_dims)?;
    let scales = scale.resolve(layer_dims)?;
    let weights: Vec<Matrix> = scales
        .iter()
        .enumerate()
        .map(|(k, &s)| {
            let (rows, cols) = (layer_dims[k], layer_dims[k + 1]);
            let mut g = rng::stream(rng::child_seed(seed, k as u64), streams::DEEP_WEIGHTS);
            Matrix::from_iterator(rows, cols, (0..rows * cols).map(|_| s * rng::normal(&mut g)))
        })
        .collect();
    Ok(DeepNet {
        layer_dims: layer_dims.to_vec(),
        init_snapshot: weights.clone(),
        weights,
        init_kind: InitKind::RandomGaussian { scales },
        seed,
        step: 0,
    })
}

/// Everything one forward and backward pass produces.
#[derive(Debug, Clone, PartialEq)]
pub struct Backward {
    pub loss: f64,
    pub output: Vector,
    /// `dL/dW_k`, one per layer.
    pub weight_grads: Vec<Matrix>,
    /// `dL/dX^k` for k = 0..=L; the last entry is the residual `u - y`.
    pub activation_grads: Vec<Matrix>,
    /// ReLU indicators of the L-1 hidden layers.
    pub masks: Vec<Matrix>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerGrad {
    pub grad_fro_norm: f64,
    /// `||dL/dX^{k-1}||_F`
    pub activation_grad_norm: f64,
    /// `||dL/dX^{k-1}|| / ||dL/dX^k||`, 0 when the denominator vanishes.
    pub scaling_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerGradReport {
    pub layers: Vec<LayerGrad>,
}

impl LayerGradReport {
    /// Geometric mean of the positive scaling ratios.
    pub fn geometric_mean_ratio(&self) -> f64 {
        let logs: Vec<f64> = self
            .layers
            .iter()
            .filter(|l| l.scaling_ratio > 0.0)
            .map(|l| l.scaling_ratio.ln())
            .collect();
        if logs.is_empty() {
            return 0.0;
        }
        (logs.iter().sum::<f64>() / logs.len() as f64).exp()
    }

    pub fn to_csv(&self) -> io::Csv {
        let mut csv = io::Csv::with_header(&["layer", "grad_norm", "activation_grad_norm", "scaling_ratio"]);
        for (k, l) in self.layers.iter().enumerate() {
            csv.row(&[
                (k + 1).to_string(),
                io::fmt_f64(l.grad_fro_norm),
                io::fmt_f64(l.activation_grad_norm),
                io::fmt_f64(l.scaling_ratio),
            ]);
        }
        csv
    }
}

impl DeepNet {
    /// Network from explicit weights; `W_k` must be `d_{k-1} x d_k`.
    pub fn from_weights(weights: Vec<Matrix>, init_kind: InitKind) -> Result<Self> {
        let mut dims = Vec::with_capacity(weights.len() + 1);
        if let Some(first) = weights.first() {
            dims.push(first.nrows());
        }
        for (k, w) in weights.iter().enumerate() {
            if w.nrows() != dims[k] {
                return Err(Error::DimensionMismatch {
                    what: "layer input width",
                    expected: dims[k],
                    found: w.nrows(),
                });
            }
            dims.push(w.ncols());
        }
        check_dims(&dims)?;
        Ok(Self {
            layer_dims: dims,
            init_snapshot: weights.clone(),
            weights,
            init_kind,
            seed: 0,
            step: 0,
        })
    }

    /// The two-layer net `(1/sqrt(m)) a^T relu(W^T x)` as a deep net with
    /// `W_2 = a / sqrt(m)`.
    pub fn from_shallow(net: &ShallowNet) -> Result<Self> {
        let a = net.a() / (net.m() as f64).sqrt();
        let last = Matrix::from_column_slice(net.m(), 1, a.as_slice());
        let mut deep = Self::from_weights(
            vec![net.w().clone(), last],
            InitKind::RandomGaussian {
                scales: vec![net.kappa(), 1.0 / (net.m() as f64).sqrt()],
            },
        )?;
        deep.seed = net.seed();
        Ok(deep)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }
    pub fn depth(&self) -> usize {
        self.weights.len()
    }
    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }
    pub fn init_snapshot(&self) -> &[Matrix] {
        &self.init_snapshot
    }
    pub fn init_kind(&self) -> &InitKind {
        &self.init_kind
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn step(&self) -> usize {
        self.step
    }
    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum()
    }

    /// Copy with the weights replaced; shapes must match.
    pub fn with_weights(&self, weights: Vec<Matrix>) -> Result<Self> {
        if weights.len() != self.weights.len()
            || weights.iter().zip(&self.weights).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::DimensionMismatch {
                what: "layer weights",
                expected: self.param_count(),
                found: weights.iter().map(|w| w.len()).sum(),
            });
        }
        Ok(Self {
            weights,
            ..self.clone()
        })
    }

    /// Treat the current weights as a fresh init taken from run `run_id`.
    pub fn as_pretrained(&self, run_id: impl Into<String>) -> Self {
        Self {
            init_snapshot: self.weights.clone(),
            init_kind: InitKind::PretrainedFrom { run_id: run_id.into() },
            step: 0,
            ..self.clone()
        }
    }

    fn check_inputs(&self, x: &Matrix) -> Result<()> {
        if x.ncols() != self.layer_dims[0] {
            return Err(Error::DimensionMismatch {
                what: "input dimension",
                expected: self.layer_dims[0],
                found: x.ncols(),
            });
        }
        Ok(())
    }

    /// Pre-activations `X^{k-1} W_k` of every layer.
    fn pre_activations(&self, x: &Matrix) -> Vec<Matrix> {
        let mut pres = Vec::with_capacity(self.depth());
        let mut h = x.clone();
        for (k, w) in self.weights.iter().enumerate() {
            let z = &h * w;
            if k + 1 < self.depth() {
                h = z.map(|v| v.max(0.0));
            }
            pres.push(z);
        }
        pres
    }

    pub fn forward(&self, x: &Matrix) -> Result<Vector> {
        self.check_inputs(x)?;
        let pres = self.pre_activations(x);
        Ok(pres.last().unwrap().column(0).into_owned())
    }

    pub fn loss(&self, x: &Matrix, y: &Vector) -> Result<f64> {
        check_labels(x, y)?;
        Ok(0.5 * (self.forward(x)? - y).norm_squared())
    }

    pub fn forward_backward(&self, x: &Matrix, y: &Vector) -> Result<Backward> {
        self.check_inputs(x)?;
        check_labels(x, y)?;
        let depth = self.depth();
        let pres = self.pre_activations(x);
        let masks: Vec<Matrix> = pres[..depth - 1]
            .iter()
            .map(|z| z.map(|v| if v > 0.0 { 1.0 } else { 0.0 }))
            .collect();
        let output = pres[depth - 1].column(0).into_owned();
        let residual = &output - y;
        let loss = 0.5 * residual.norm_squared();

        let mut weight_grads = vec![Matrix::zeros(0, 0); depth];
        let mut activation_grads = vec![Matrix::zeros(0, 0); depth + 1];
        activation_grads[depth] = Matrix::from_column_slice(residual.len(), 1, residual.as_slice());
        for k in (1..=depth).rev() {
            // delta = dL/dZ^k
            let delta = if k == depth {
                activation_grads[k].clone()
            } else {
                activation_grads[k].component_mul(&masks[k - 1])
            };
            let input = if k == 1 {
                x.clone()
            } else {
                pres[k - 2].map(|v| v.max(0.0))
            };
            weight_grads[k - 1] = input.transpose() * &delta;
            activation_grads[k - 1] = delta * self.weights[k - 1].transpose();
        }
        Ok(Backward {
            loss,
            output,
            weight_grads,
            activation_grads,
            masks,
        })
    }

    pub fn layer_grad_scale(&self, x: &Matrix, y: &Vector) -> Result<LayerGradReport> {
        let bw = self.forward_backward(x, y)?;
        let norms: Vec<f64> = bw.activation_grads.iter().map(|a| a.norm()).collect();
        let layers = (1..=self.depth())
            .map(|k| LayerGrad {
                grad_fro_norm: bw.weight_grads[k - 1].norm(),
                activation_grad_norm: norms[k - 1],
                scaling_ratio: if norms[k] > 0.0 { norms[k - 1] / norms[k] } else { 0.0 },
            })
            .collect();
        Ok(LayerGradReport { layers })
    }

    /// `sum_k ||W_k - R_k||_F` against the given reference weights.
    pub fn layer_deviation_sum(&self, reference: &[Matrix]) -> Result<f64> {
        if reference.len() != self.weights.len()
            || reference.iter().zip(&self.weights).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::invalid("reference weights have different shapes"));
        }
        Ok(self
            .weights
            .iter()
            .zip(reference)
            .map(|(w, r)| linalg::frobenius_distance(w, r))
            .sum())
    }

    fn masks(&self, x: &Matrix) -> Vec<Matrix> {
        let pres = self.pre_activations(x);
        pres[..self.depth() - 1]
            .iter()
            .map(|z| z.map(|v| if v > 0.0 { 1.0 } else { 0.0 }))
            .collect()
    }
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

fn mask_flip_fraction(now: &[Matrix], reference: &[Matrix]) -> f64 {
    let total: usize = now.iter().map(|m| m.len()).sum();
    if total == 0 {
        return 0.0;
    }
    let flips: usize = now
        .iter()
        .zip(reference)
        .map(|(a, b)| a.iter().zip(b.iter()).filter(|(p, q)| p != q).count())
        .sum();
    flips as f64 / total as f64
}

/// Full-batch gradient descent; the trace deviation is the sum of per-layer
/// Frobenius deviations divided by `sqrt(n)`.
pub fn train_deep(
    net: &DeepNet,
    task: &TaskDataset,
    cfg: &TrainConfig,
    deviation_ref: DeviationRef,
) -> Result<(DeepNet, TrainTrace)> {
    cfg.check()?;
    let (x, y) = (task.inputs(), task.labels());
    let reference: Vec<Matrix> = match deviation_ref {
        DeviationRef::Init => net.init_snapshot.clone(),
        DeviationRef::Pretrained => net.weights.clone(),
    };
    let ref_net = net.with_weights(reference.clone())?;
    let ref_masks = ref_net.masks(x);
    let sqrt_n = (task.n() as f64).sqrt();
    let mut work = net.clone();
    let mut trace = TrainTrace::new(deviation_ref, cfg.eta);
    let mut initial = None;
    let mut taken = 0;
    for k in 0..=cfg.steps {
        let bw = work.forward_backward(x, y)?;
        let res_norm = (2.0 * bw.loss).sqrt();
        let init = *initial.get_or_insert(res_norm);
        if !res_norm.is_finite() || (init > 0.0 && res_norm > DIVERGENCE_FACTOR * init) {
            return Err(Error::Diverged {
                step: k,
                residual: res_norm,
                initial: init,
            });
        }
        let stop = res_norm < cfg.stop_residual;
        let last = k == cfg.steps || stop;
        if k % cfg.record_every == 0 || last {
            let grad_sq: f64 = bw.weight_grads.iter().map(|g| g.norm_squared()).sum();
            trace.records.push(TraceRecord {
                step: k,
                loss: bw.loss,
                residual_norm: res_norm,
                weight_deviation: work.layer_deviation_sum(&reference)? / sqrt_n,
                grad_fro_norm: grad_sq.sqrt(),
                activation_flip_fraction: mask_flip_fraction(&bw.masks, &ref_masks),
            });
        }
        if last {
            trace.stopped_early = stop && k < cfg.steps;
            break;
        }
        if cfg.eta != 0.0 {
            for (w, g) in work.weights.iter_mut().zip(&bw.weight_grads) {
                *w -= g * cfg.eta;
            }
        }
        taken += 1;
    }
    trace.steps_taken = taken;
    work.step = net.step + taken;
    Ok((work, trace))
}

/// Halve `cfg.eta` until a run's loss is non-increasing at every step
/// (at most `max_halvings` times). Returns the accepted learning rate.
pub fn train_deep_line_search(
    net: &DeepNet,
    task: &TaskDataset,
    cfg: &TrainConfig,
    deviation_ref: DeviationRef,
    max_halvings: usize,
) -> Result<(DeepNet, TrainTrace, f64)> {
    let mut eta = cfg.eta;
    let mut every_step = *cfg;
    every_step.record_every = 1;
    for _ in 0..=max_halvings {
        every_step.eta = eta;
        match train_deep(net, task, &every_step, deviation_ref) {
            Ok((out, trace)) => {
                let losses = trace.losses();
                if losses.windows(2).all(|w| w[1] <= w[0]) {
                    let mut kept = trace.clone();
                    kept.records.retain(|r| {
                        r.step % cfg.record_every == 0 || r.step == trace.steps_taken
                    });
                    return Ok((out, kept, eta));
                }
            }
            Err(Error::Diverged { .. }) => {}
            Err(e) => return Err(e),
        }
        eta *= 0.5;
    }
    Err(Error::invalid(format!(
        "loss still increases after {max_halvings} halvings of the learning rate"
    )))
}

#[derive(Debug, Serialize, Deserialize)]
struct DeepHeader {
    format: String,
    layer_dims: Vec<usize>,
    seed: u64,
    step: usize,
    init_kind: InitKind,
    payload: Vec<String>,
}

pub fn deep_checkpoint_bytes(net: &DeepNet) -> Result<Vec<u8>> {
    let header = DeepHeader {
        format: DEEP_CHECKPOINT_FORMAT.into(),
        layer_dims: net.layer_dims.clone(),
        seed: net.seed,
        step: net.step,
        init_kind: net.init_kind.clone(),
        payload: vec!["weights".into(), "init_snapshot".into()],
    };
    let mut out = serde_json::to_vec(&header)?;
    out.push(b'\n');
    for w in net.weights.iter().chain(&net.init_snapshot) {
        crate::shallow::encode_f64s(&mut out, w.as_slice());
    }
    Ok(out)
}

pub fn deep_checkpoint_from_bytes(bytes: &[u8]) -> Result<DeepNet> {
    let (head, payload) = crate::shallow::split_header(bytes)?;
    let header: DeepHeader = serde_json::from_slice(head)?;
    if header.format != DEEP_CHECKPOINT_FORMAT {
        return Err(Error::Format(format!("unknown checkpoint format {}", header.format)));
    }
    check_dims(&header.layer_dims)
        .map_err(|e| Error::Format(format!("bad layer dims in checkpoint: {e}")))?;
    let values = crate::shallow::decode_f64s(payload)?;
    let dims = &header.layer_dims;
    let sizes: Vec<usize> = dims.windows(2).map(|w| w[0] * w[1]).collect();
    let per_copy: usize = sizes.iter().sum();
    if values.len() != 2 * per_copy {
        return Err(Error::Format(format!(
            "payload has {} values, header implies {}",
            values.len(),
            2 * per_copy
        )));
    }
    let mut offset = 0;
    let mut read = |k: usize| {
        let m = Matrix::from_column_slice(dims[k], dims[k + 1], &values[offset..offset + sizes[k]]);
        offset += sizes[k];
        m
    };
    let weights: Vec<Matrix> = (0..sizes.len()).map(&mut read).collect();
    let init_snapshot: Vec<Matrix> = (0..sizes.len()).map(&mut read).collect();
    Ok(DeepNet {
        layer_dims: header.layer_dims,
        weights,
        init_snapshot,
        init_kind: header.init_kind,
        seed: header.seed,
        step: header.step,
    })
}

pub fn write_deep_checkpoint(net: &DeepNet, path: &Path) -> Result<()> {
    io::write_atomic(path, &deep_checkpoint_bytes(net)?)
}

pub fn read_deep_checkpoint(path: &Path) -> Result<DeepNet> {
    deep_checkpoint_from_bytes(&std::fs::read(path)?)
}

/// Load a checkpoint as the starting point of a new run.
pub fn load_pretrained(path: &Path, run_id: impl Into<String>) -> Result<DeepNet> {
    Ok(read_deep_checkpoint(path)?.as_pretrained(run_id))
}
