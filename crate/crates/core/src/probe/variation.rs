use serde::{Deserialize, Serialize};

use super::{axpy, norm, Probeable};
use crate::error::{Error, Result};
use crate::io::{fmt_f64, Csv};
use crate::shallow::TrainConfig;
use crate::stats;
use crate::tasks::TaskDataset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariationConfig {
    /// The probe moves `s = ||g|| * unit_step` along `-g / ||g||`.
    pub unit_step: f64,
    /// Evaluation points on the segment, excluding its start.
    #[serde(default = "default_points")]
    pub points: usize,
}

fn default_points() -> usize {
    10
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariationRow {
    pub step: usize,
    pub loss: f64,
    pub grad_norm: f64,
    /// `max |L(theta - t s g/||g||) - L(theta)|` over the probe points.
    pub max_variation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationSeries {
    pub rows: Vec<VariationRow>,
}

impl VariationSeries {
    pub fn median_variation(&self) -> f64 {
        stats::median(&self.rows.iter().map(|r| r.max_variation).collect::<Vec<_>>())
    }

    pub fn to_csv(&self) -> Csv {
        let mut csv = Csv::with_header(&["step", "loss", "grad_norm", "max_variation"]);
        for r in &self.rows {
            csv.row(&[
                r.step.to_string(),
                fmt_f64(r.loss),
                fmt_f64(r.grad_norm),
                fmt_f64(r.max_variation),
            ]);
        }
        csv
    }
}

/// Largest loss change along the gradient direction at the current point.
/// The model is restored exactly.
pub fn probe_variation<M: Probeable>(model: &mut M, batch: &TaskDataset, cfg: &VariationConfig) -> Result<(f64, f64, f64)> {
    let theta = model.params();
    let loss = model.batch_loss(batch)?;
    let g = model.batch_gradient(batch)?;
    let gn = norm(&g);
    if gn == 0.0 {
        return Ok((loss, 0.0, 0.0));
    }
    let mut worst: f64 = 0.0;
    let out = (|| -> Result<()> {
        for j in 1..=cfg.points {
            let t = j as f64 / cfg.points as f64;
            // -t * s * g / ||g|| with s = ||g|| * unit_step
            model.set_params(&axpy(&theta, -t * cfg.unit_step, &g))?;
            worst = worst.max((model.batch_loss(batch)? - loss).abs());
        }
        Ok(())
    })();
    model.set_params(&theta)?;
    out?;
    Ok((loss, gn, worst))
}

/// Full-batch gradient descent, probing the loss variation along the
/// gradient at every recorded step.
pub fn loss_variation_along_gradient<M: Probeable>(
    model: &mut M,
    task: &TaskDataset,
    train: &TrainConfig,
    cfg: &VariationConfig,
) -> Result<VariationSeries> {
    train.check()?;
    if cfg.points == 0 || !(cfg.unit_step.is_finite() && cfg.unit_step >= 0.0) {
        return Err(Error::invalid("variation probe needs points >= 1 and a finite unit step >= 0"));
    }
    let mut rows = Vec::new();
    for k in 0..=train.steps {
        if k % train.record_every == 0 || k == train.steps {
            let (loss, grad_norm, max_variation) = probe_variation(model, task, cfg)?;
            rows.push(VariationRow {
                step: k,
                loss,
                grad_norm,
                max_variation,
            });
        }
        if k == train.steps {
            break;
        }
        let theta = model.params();
        let g = model.batch_gradient(task)?;
        model.set_params(&axpy(&theta, -train.eta, &g))?;
    }
    Ok(VariationSeries { rows })
}
