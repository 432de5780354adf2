use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{fmt_f64, Csv};
use crate::linalg::{self, Matrix};

fn check_shapes(a: &[Matrix], b: &[Matrix]) -> Result<()> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.shape() != y.shape()) {
        return Err(Error::invalid("checkpoints have different layer shapes"));
    }
    Ok(())
}

/// `(step, sum_k ||W_k - R_k||_F / sqrt(n))` for each checkpoint.
pub fn weight_deviation_series(
    checkpoints: &[(usize, Vec<Matrix>)],
    reference: &[Matrix],
    n: usize,
) -> Result<Vec<(usize, f64)>> {
    if n == 0 {
        return Err(Error::invalid("sample count must be positive"));
    }
    let sqrt_n = (n as f64).sqrt();
    checkpoints
        .iter()
        .map(|(step, layers)| {
            check_shapes(layers, reference)?;
            let dev: f64 = layers
                .iter()
                .zip(reference)
                .map(|(w, r)| linalg::frobenius_distance(w, r))
                .sum();
            Ok((*step, dev / sqrt_n))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    pub labels: Vec<String>,
    /// Row-major pairwise distances.
    pub values: Vec<Vec<f64>>,
}

impl DistanceMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i][j]
    }

    /// Symmetry, zero diagonal and the triangle inequality within `tol`.
    pub fn check(&self, tol: f64) -> Result<()> {
        let n = self.labels.len();
        for i in 0..n {
            if self.values[i][i] != 0.0 {
                return Err(Error::Format(format!("nonzero diagonal at {i}")));
            }
            for j in 0..n {
                if self.values[i][j] != self.values[j][i] {
                    return Err(Error::Format(format!("asymmetric at ({i}, {j})")));
                }
                for k in 0..n {
                    if self.values[i][j] > self.values[i][k] + self.values[k][j] + tol {
                        return Err(Error::Format(format!("triangle inequality fails for ({i}, {j}, {k})")));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> Csv {
        let mut header = vec!["label".to_string()];
        header.extend(self.labels.iter().cloned());
        let mut csv = Csv::with_header(&header);
        for (label, row) in self.labels.iter().zip(&self.values) {
            let mut cells = vec![label.clone()];
            cells.extend(row.iter().map(|&v| fmt_f64(v)));
            csv.row(&cells);
        }
        csv
    }
}

/// Pairwise Frobenius distances between flattened checkpoints.
pub fn checkpoint_distance_matrix(labels: &[String], checkpoints: &[Vec<Matrix>]) -> Result<DistanceMatrix> {
    if checkpoints.len() < 2 {
        return Err(Error::invalid("need at least two checkpoints"));
    }
    if labels.len() != checkpoints.len() {
        return Err(Error::DimensionMismatch {
            what: "checkpoint labels",
            expected: checkpoints.len(),
            found: labels.len(),
        });
    }
    let n = checkpoints.len();
    let mut values = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            check_shapes(&checkpoints[i], &checkpoints[j])?;
            let d = checkpoints[i]
                .iter()
                .zip(&checkpoints[j])
                .map(|(a, b)| (a - b).norm_squared())
                .sum::<f64>()
                .sqrt();
            values[i][j] = d;
            values[j][i] = d;
        }
    }
    let dm = DistanceMatrix {
        labels: labels.to_vec(),
        values,
    };
    dm.check(1e-8)?;
    Ok(dm)
}
