use serde::{Deserialize, Serialize};

use super::{check_layer, layer_offsets, Probeable};
use crate::error::Result;
use crate::io::{fmt_f64, Csv};
use crate::linalg::Matrix;
use crate::tasks::TaskDataset;

/// Singular values below this fraction of the largest are dropped.
const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvdProjection {
    pub layer: usize,
    /// Descending singular values of the layer gradient.
    pub sigmas: Vec<f64>,
    /// `||W^T u_i||_2`
    pub projections: Vec<f64>,
    /// `u_i^T W v_i`; `sum_i sigma_i u_i^T W v_i = <W, G>`.
    pub bilinear: Vec<f64>,
    pub zero_gradient: bool,
}

impl SvdProjection {
    pub fn to_csv(&self) -> Csv {
        let mut csv = Csv::with_header(&["index", "sigma", "projection", "bilinear"]);
        for i in 0..self.sigmas.len() {
            csv.row(&[
                i.to_string(),
                fmt_f64(self.sigmas[i]),
                fmt_f64(self.projections[i]),
                fmt_f64(self.bilinear[i]),
            ]);
        }
        csv
    }
}

/// Project a weight matrix onto the singular directions of a gradient of
/// the same shape.
pub fn project_onto_gradient(w: &Matrix, g: &Matrix) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let svd = g.clone().svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let smax = order.first().map(|&i| svd.singular_values[i]).unwrap_or(0.0);
    let (mut sigmas, mut proj, mut bil) = (Vec::new(), Vec::new(), Vec::new());
    if smax == 0.0 {
        return (sigmas, proj, bil);
    }
    for i in order {
        let s = svd.singular_values[i];
        if s <= RANK_TOL * smax {
            continue;
        }
        let ui = u.column(i);
        let vi = v_t.row(i).transpose();
        sigmas.push(s);
        proj.push((w.transpose() * ui).norm());
        bil.push((ui.transpose() * w * vi)[(0, 0)]);
    }
    (sigmas, proj, bil)
}

pub fn grad_svd_projection<M: Probeable>(model: &M, batch: &TaskDataset, layer: usize) -> Result<SvdProjection> {
    let (rows, cols) = check_layer(model, layer)?;
    let offset = layer_offsets(&model.layer_shapes())[layer];
    let theta = model.params();
    let grad = model.batch_gradient(batch)?;
    let w = Matrix::from_column_slice(rows, cols, &theta[offset..offset + rows * cols]);
    let g = Matrix::from_column_slice(rows, cols, &grad[offset..offset + rows * cols]);
    let (sigmas, projections, bilinear) = project_onto_gradient(&w, &g);
    Ok(SvdProjection {
        layer,
        zero_gradient: sigmas.is_empty(),
        sigmas,
        projections,
        bilinear,
    })
}
