use serde::{Deserialize, Serialize};

use super::{axpy, norm, Probeable};
use crate::error::{Error, Result};
use crate::rng::{self, streams};
use crate::tasks::TaskDataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HessianConfig {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    pub seed: u64,
}

fn default_k() -> usize {
    20
}

fn default_tol() -> f64 {
    1e-6
}

fn default_max_iter() -> usize {
    10_000
}

impl HessianConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            tol: default_tol(),
            max_iter: default_max_iter(),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HessianSpectrum {
    /// Descending.
    pub eigenvalues: Vec<f64>,
    pub iterations: Vec<usize>,
    /// `||Hv - lambda v|| / |lambda|` of each pair.
    pub residuals: Vec<f64>,
    pub converged: Vec<bool>,
    #[serde(skip)]
    pub eigenvectors: Vec<Vec<f64>>,
    pub batch_id: String,
}

impl HessianSpectrum {
    pub fn all_converged(&self) -> bool {
        self.converged.iter().all(|&c| c)
    }
}

/// `Hv` by central differences of the gradient with
/// `eps = 1e-4 (1 + ||theta||) / ||v||`. The model is restored exactly.
pub fn hvp<M: Probeable>(model: &mut M, batch: &TaskDataset, v: &[f64]) -> Result<Vec<f64>> {
    let theta = model.params();
    let vn = norm(v);
    if vn == 0.0 {
        return Ok(vec![0.0; v.len()]);
    }
    let eps = 1e-4 * (1.0 + norm(&theta)) / vn;
    let run = |model: &mut M| -> Result<Vec<f64>> {
        model.set_params(&axpy(&theta, eps, v))?;
        let plus = model.batch_gradient(batch)?;
        model.set_params(&axpy(&theta, -eps, v))?;
        let minus = model.batch_gradient(batch)?;
        Ok(plus.iter().zip(&minus).map(|(p, m)| (p - m) / (2.0 * eps)).collect())
    };
    let out = run(model);
    model.set_params(&theta)?;
    out
}

fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let c: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
        for (x, y) in v.iter_mut().zip(b) {
            *x -= c * y;
        }
    }
}

/// The `k` eigenvalues of largest magnitude by power iteration with
/// explicit deflation against the pairs already found, returned in
/// descending order. Pairs that miss `tol` within `max_iter` are kept and
/// flagged.
pub fn hessian_topk<M: Probeable>(model: &mut M, batch: &TaskDataset, cfg: &HessianConfig) -> Result<HessianSpectrum> {
    let p = model.param_count();
    if cfg.k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if cfg.k > p {
        return Err(Error::invalid(format!("k = {} exceeds the {p} parameters", cfg.k)));
    }
    let mut found: Vec<(f64, Vec<f64>, usize, f64, bool)> = Vec::with_capacity(cfg.k);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(cfg.k);
    for i in 0..cfg.k {
        let mut g = rng::stream(rng::child_seed(cfg.seed, i as u64), streams::POWER_ITERATION);
        let mut v = rng::normal_vec(&mut g, p);
        orthogonalize(&mut v, &basis);
        scale_to_unit(&mut v);
        let (mut lambda, mut residual, mut iters, mut ok) = (0.0, f64::INFINITY, 0, false);
        while iters < cfg.max_iter {
            iters += 1;
            let mut w = hvp(model, batch, &v)?;
            orthogonalize(&mut w, &basis);
            lambda = v.iter().zip(&w).map(|(a, b)| a * b).sum();
            let r: f64 = w.iter().zip(&v).map(|(a, b)| (a - lambda * b).powi(2)).sum::<f64>().sqrt();
            let wn = norm(&w);
            if wn == 0.0 {
                // v lies in the null space of the deflated operator
                residual = 0.0;
                ok = true;
                break;
            }
            residual = if lambda != 0.0 { r / lambda.abs() } else { f64::INFINITY };
            if residual <= cfg.tol {
                ok = true;
                break;
            }
            v = w;
            orthogonalize(&mut v, &basis);
            scale_to_unit(&mut v);
        }
        basis.push(v.clone());
        found.push((lambda, v, iters, residual, ok));
    }
    found.sort_by(|a, b| b.0.total_cmp(&a.0));
    Ok(HessianSpectrum {
        eigenvalues: found.iter().map(|f| f.0).collect(),
        iterations: found.iter().map(|f| f.2).collect(),
        residuals: found.iter().map(|f| f.3).collect(),
        converged: found.iter().map(|f| f.4).collect(),
        eigenvectors: found.into_iter().map(|f| f.1).collect(),
        batch_id: batch.name().to_string(),
    })
}

fn scale_to_unit(v: &mut [f64]) {
    let n = norm(v);
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probe::QuadraticModel;
    use crate::tasks::{gen_task, LabelFnSpec};

    fn batch() -> TaskDataset {
        gen_task(2, 2, &LabelFnSpec::constant(0.0), 1).unwrap()
    }

    #[test]
    fn diagonal_quadratic() {
        let mut q = QuadraticModel::diagonal(&[3.0, 1.0], &[0.3, -0.2]).unwrap();
        let s = hessian_topk(&mut q, &batch(), &HessianConfig::new(2, 4)).unwrap();
        assert!((s.eigenvalues[0] - 3.0).abs() < 1e-6);
        assert!((s.eigenvalues[1] - 1.0).abs() < 1e-6);
        assert!(s.all_converged());
    }

    #[test]
    fn k_bounds() {
        let mut q = QuadraticModel::diagonal(&[3.0, 1.0], &[0.0, 0.0]).unwrap();
        assert!(hessian_topk(&mut q, &batch(), &HessianConfig::new(3, 0)).is_err());
        assert!(hessian_topk(&mut q, &batch(), &HessianConfig::new(0, 0)).is_err());
    }
}
