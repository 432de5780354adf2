use serde::{Deserialize, Serialize};

use super::{check_layer, layer_offsets, norm, Probeable};
use crate::error::{Error, Result};
use crate::io::{self, Csv};
use crate::linalg::Matrix;
use crate::rng::{self, streams};
use crate::tasks::TaskDataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandscapeConfig {
    #[serde(default)]
    pub layer: usize,
    #[serde(default = "default_grid")]
    pub grid_size: usize,
    pub step_scale: f64,
    pub seed: u64,
}

fn default_grid() -> usize {
    200
}

/// How the raw directions were rescaled, one entry per output neuron of
/// the probed layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub scales: [Vec<f64>; 2],
    /// Neurons with zero weight norm, scaled by the layer-wide ratio instead.
    pub fallback_neurons: Vec<usize>,
    pub global_scales: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandscapeGrid {
    pub center_loss: f64,
    /// `grid[(i, j)]` is the loss at `theta + alpha_i d1 + alpha_j d2`.
    pub grid: Matrix,
    pub alphas: Vec<f64>,
    /// Orthogonal raw directions over the probed layer, before scaling.
    pub directions: [Vec<f64>; 2],
    pub normalization: Normalization,
    pub layer: usize,
    pub step_scale: f64,
    pub batch_id: String,
    pub seed: u64,
}

#[derive(Serialize)]
struct Sidecar<'a> {
    center_loss: f64,
    grid_size: usize,
    layer: usize,
    step_scale: f64,
    alphas: &'a [f64],
    batch_id: &'a str,
    seed: u64,
    directions_sha256: String,
    normalization: &'a Normalization,
}

impl LandscapeGrid {
    /// G rows of G values, no header.
    pub fn to_csv(&self) -> Csv {
        let mut csv = Csv::default();
        for i in 0..self.grid.nrows() {
            csv.num_row(&self.grid.row(i).iter().copied().collect::<Vec<_>>());
        }
        csv
    }

    pub fn directions_hash(&self) -> String {
        let mut bytes = Vec::new();
        for d in &self.directions {
            for v in d {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        io::sha256_hex(&bytes)
    }

    pub fn sidecar_json(&self) -> Result<String> {
        io::to_json_string(&Sidecar {
            center_loss: self.center_loss,
            grid_size: self.grid.nrows(),
            layer: self.layer,
            step_scale: self.step_scale,
            alphas: &self.alphas,
            batch_id: &self.batch_id,
            seed: self.seed,
            directions_sha256: self.directions_hash(),
            normalization: &self.normalization,
        })
    }
}

/// Scale each output-neuron block of `dir` to the norm of the matching
/// weight column. Zero-norm columns fall back to the layer-wide ratio.
fn filter_normalize(dir: &[f64], weights: &[f64], rows: usize, cols: usize, fallback: &mut Vec<usize>) -> (Vec<f64>, Vec<f64>, f64) {
    let global = {
        let (wn, dn) = (norm(weights), norm(dir));
        if wn > 0.0 && dn > 0.0 { wn / dn } else { 1.0 }
    };
    let mut out = dir.to_vec();
    let mut scales = Vec::with_capacity(cols);
    for c in 0..cols {
        let block = c * rows..(c + 1) * rows;
        let (wn, dn) = (norm(&weights[block.clone()]), norm(&dir[block.clone()]));
        let s = if wn > 0.0 && dn > 0.0 {
            wn / dn
        } else {
            if !fallback.contains(&c) {
                fallback.push(c);
            }
            global
        };
        for v in &mut out[block] {
            *v *= s;
        }
        scales.push(s);
    }
    (out, scales, global)
}

/// Loss on a G x G grid spanned by two random, filter-normalized
/// directions over one layer; all other layers stay fixed. The model is
/// restored bitwise before returning.
pub fn landscape_grid<M: Probeable>(model: &mut M, batch: &TaskDataset, cfg: &LandscapeConfig) -> Result<LandscapeGrid> {
    if batch.n() == 0 {
        return Err(Error::invalid("landscape batch is empty"));
    }
    if cfg.grid_size == 0 {
        return Err(Error::invalid("grid size must be at least 1"));
    }
    if !cfg.step_scale.is_finite() {
        return Err(Error::invalid("step scale must be finite"));
    }
    let (rows, cols) = check_layer(model, cfg.layer)?;
    let shapes = model.layer_shapes();
    let offset = layer_offsets(&shapes)[cfg.layer];
    let len = rows * cols;
    let theta = model.params();
    let weights = &theta[offset..offset + len];

    let mut g = rng::stream(cfg.seed, streams::DIRECTIONS);
    let d1 = rng::normal_vec(&mut g, len);
    let mut d2 = rng::normal_vec(&mut g, len);
    let proj = dot(&d1, &d2) / dot(&d1, &d1);
    for (b, a) in d2.iter_mut().zip(&d1) {
        *b -= proj * a;
    }
    let mut fallback = Vec::new();
    let (n1, s1, g1) = filter_normalize(&d1, weights, rows, cols, &mut fallback);
    let (n2, s2, g2) = filter_normalize(&d2, weights, rows, cols, &mut fallback);
    fallback.sort_unstable();

    let size = cfg.grid_size;
    let half = (size / 2) as f64;
    let alphas: Vec<f64> = (0..size).map(|i| (i as f64 - half) * cfg.step_scale).collect();
    let center_loss = model.batch_loss(batch)?;
    let mut grid = Matrix::zeros(size, size);
    let mut point = theta.clone();
    let result = (|| -> Result<()> {
        for (i, &a) in alphas.iter().enumerate() {
            for (j, &b) in alphas.iter().enumerate() {
                for k in 0..len {
                    point[offset + k] = weights[k] + a * n1[k] + b * n2[k];
                }
                model.set_params(&point)?;
                grid[(i, j)] = model.batch_loss(batch)?;
            }
        }
        Ok(())
    })();
    model.set_params(&theta)?;
    result?;
    Ok(LandscapeGrid {
        center_loss,
        grid,
        alphas,
        directions: [d1, d2],
        normalization: Normalization {
            scales: [s1, s2],
            fallback_neurons: fallback,
            global_scales: [g1, g2],
        },
        layer: cfg.layer,
        step_scale: cfg.step_scale,
        batch_id: batch.name().to_string(),
        seed: cfg.seed,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
