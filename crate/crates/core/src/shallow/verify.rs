//! Empirical checks of the transfer theorems by sweeping the hidden width.
//!
//! The theorems carry unspecified polynomial constants, so every verdict
//! here is a trend over widths or seeds rather than an absolute inequality,
//! except the contraction check which uses the stated rate directly.

use serde::{Deserialize, Serialize};

use super::train::{train_gd, TrainConfig};
use super::{activation_flip_fraction, init_net};
use crate::error::{Error, Result};
use crate::io::{fmt_f64, Csv};
use crate::linalg::{self, SolvePolicy};
use crate::ntk::{self, GramBundle};
use crate::stats;
use crate::tasks::TaskDataset;
use crate::trace::DeviationRef;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    pub m_list: Vec<usize>,
    pub kappa: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    pub seeds: Vec<u64>,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    /// Also train each target from the random init (theorem 2 only).
    #[serde(default)]
    pub scratch: bool,
    /// Fraction of seeds whose rank correlation must reach `min_spearman`.
    #[serde(default = "default_seed_fraction")]
    pub seed_fraction: f64,
    #[serde(default = "default_min_spearman")]
    pub min_spearman: f64,
}

fn default_delta() -> f64 {
    0.1
}

fn default_seed_fraction() -> f64 {
    0.8
}

fn default_min_spearman() -> f64 {
    0.9
}

impl VerifyConfig {
    pub fn new(m_list: Vec<usize>, kappa: f64, seeds: Vec<u64>, pretrain: TrainConfig, finetune: TrainConfig) -> Self {
        Self {
            m_list,
            kappa,
            delta: default_delta(),
            seeds,
            pretrain,
            finetune,
            scratch: false,
            seed_fraction: default_seed_fraction(),
            min_spearman: default_min_spearman(),
        }
    }

    fn check(&self) -> Result<()> {
        if self.m_list.len() < 3 {
            return Err(Error::invalid("width sweep needs at least 3 values of m"));
        }
        if self.m_list.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("m_list must be strictly increasing"));
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid("need at least one seed"));
        }
        self.pretrain.check()?;
        self.finetune.check()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Verdict {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }

    pub fn line(&self) -> String {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        format!("{tag} {}: {}", self.name, self.detail)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyRow {
    pub m: usize,
    pub seed: u64,
    pub target: usize,
    pub measured: f64,
    /// The closed-form quantity `measured` is compared against.
    pub reference: f64,
    pub gap: f64,
    /// Activation flips of the pretrained net relative to its init, on the
    /// source inputs.
    pub flip_fraction: f64,
    pub max_movement: f64,
    pub scratch_measured: Option<f64>,
    pub scratch_reference: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WidthSummary {
    pub m: usize,
    pub median_measured: f64,
    pub median_reference: f64,
    pub median_gap: f64,
    pub median_flip_fraction: f64,
    pub median_max_movement: f64,
    /// Theorem 2 only: fraction of seeds with rank correlation at least
    /// `min_spearman`.
    pub spearman_pass_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub name: String,
    pub rows: Vec<VerifyRow>,
    pub widths: Vec<WidthSummary>,
    /// Per (m, seed) rank correlation, theorem 2 only.
    pub spearman: Vec<(usize, u64, f64)>,
    pub verdicts: Vec<Verdict>,
    pub passed: bool,
}

impl VerificationReport {
    pub fn to_csv(&self) -> Csv {
        let mut csv = Csv::with_header(&[
            "m",
            "seed",
            "target",
            "measured",
            "reference",
            "gap",
            "flip_fraction",
            "max_movement",
            "scratch_measured",
            "scratch_reference",
        ]);
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        for r in &self.rows {
            csv.row(&[
                r.m.to_string(),
                r.seed.to_string(),
                r.target.to_string(),
                fmt_f64(r.measured),
                fmt_f64(r.reference),
                fmt_f64(r.gap),
                fmt_f64(r.flip_fraction),
                fmt_f64(r.max_movement),
                opt(r.scratch_measured),
                opt(r.scratch_reference),
            ]);
        }
        csv
    }

    pub fn rows_for(&self, m: usize) -> impl Iterator<Item = &VerifyRow> {
        self.rows.iter().filter(move |r| r.m == m)
    }
}

fn summarize(rows: &[VerifyRow], m: usize) -> WidthSummary {
    let pick = |f: fn(&VerifyRow) -> f64| -> f64 {
        let v: Vec<f64> = rows.iter().filter(|r| r.m == m).map(f).collect();
        stats::median(&v)
    };
    WidthSummary {
        m,
        median_measured: pick(|r| r.measured),
        median_reference: pick(|r| r.reference),
        median_gap: pick(|r| r.gap),
        median_flip_fraction: pick(|r| r.flip_fraction),
        median_max_movement: pick(|r| r.max_movement),
        spearman_pass_fraction: None,
    }
}

fn trend_verdict(name: &str, widths: &[WidthSummary], f: fn(&WidthSummary) -> f64) -> Verdict {
    let series: Vec<f64> = widths.iter().map(f).collect();
    let detail = widths
        .iter()
        .zip(&series)
        .map(|(w, v)| format!("m={} {v:.4e}", w.m))
        .collect::<Vec<_>>()
        .join(", ");
    Verdict::new(name, stats::non_increasing(&series, 0.0), detail)
}

/// Measured `||dL(W(P))/dX1||^2` on the target against the Lipschitzness
/// prediction `||dL(W(0))/dX1||^2 - y_Q^T y_Q + ||y_Q - y_{P->Q}||^2`.
///
/// The verdict is that the median gap does not grow with `m`.
pub fn verify_theorem1(
    source: &TaskDataset,
    target: &TaskDataset,
    cfg: &VerifyConfig,
) -> Result<VerificationReport> {
    cfg.check()?;
    let bundle = GramBundle::build(source, target, SolvePolicy::permissive())?;
    let (xq, yq) = (target.inputs(), target.labels());
    let mut rows = Vec::new();
    for &m in &cfg.m_list {
        for &seed in &cfg.seeds {
            let init = init_net(source.d(), m, cfg.kappa, seed)?;
            let grad_sq_init = init.grad_activations(xq, yq)?.squared_norm;
            let (pre, _) = train_gd(&init, source, &cfg.pretrain, DeviationRef::Init)?;
            let measured = pre.grad_activations(xq, yq)?.squared_norm;
            let prediction = ntk::theorem1_prediction(&bundle, grad_sq_init);
            rows.push(VerifyRow {
                m,
                seed,
                target: 0,
                measured,
                reference: prediction,
                gap: (measured - prediction).abs(),
                flip_fraction: activation_flip_fraction(&pre, &init, source.inputs())?,
                max_movement: pre.max_neuron_movement(),
                scratch_measured: None,
                scratch_reference: None,
            });
        }
    }
    let widths: Vec<WidthSummary> = cfg.m_list.iter().map(|&m| summarize(&rows, m)).collect();
    let verdicts = vec![trend_verdict("median gap non-increasing in m", &widths, |w| w.median_gap)];
    Ok(VerificationReport {
        name: "theorem1".into(),
        passed: verdicts.iter().all(|v| v.passed),
        rows,
        widths,
        spearman: Vec::new(),
        verdicts,
    })
}

/// Fine-tuning distance `||W(Q) - W(P)||_F` against
/// `sqrt((y_Q - y_{P->Q})^T H_Q^-1 (y_Q - y_{P->Q}))` over a family of
/// targets sharing one source.
///
/// Verdicts: the median excess of measured over bound does not grow with
/// `m`, and at the largest width at least `seed_fraction` of the seeds rank
/// the targets the same way as the bound (Spearman >= `min_spearman`).
pub fn verify_theorem2(
    source: &TaskDataset,
    targets: &[TaskDataset],
    cfg: &VerifyConfig,
) -> Result<VerificationReport> {
    cfg.check()?;
    if targets.is_empty() {
        return Err(Error::invalid("need at least one target"));
    }
    let bundles = targets
        .iter()
        .map(|t| GramBundle::build(source, t, SolvePolicy::permissive()))
        .collect::<Result<Vec<_>>>()?;
    let bounds: Vec<f64> = bundles.iter().map(ntk::theorem2_bound).collect();
    let mut rows = Vec::new();
    let mut spearman = Vec::new();
    for &m in &cfg.m_list {
        for &seed in &cfg.seeds {
            let init = init_net(source.d(), m, cfg.kappa, seed)?;
            let (pre, _) = train_gd(&init, source, &cfg.pretrain, DeviationRef::Init)?;
            let flip_fraction = activation_flip_fraction(&pre, &init, source.inputs())?;
            let mut measured_all = Vec::with_capacity(targets.len());
            for (j, target) in targets.iter().enumerate() {
                let (tuned, _) = train_gd(&pre, target, &cfg.finetune, DeviationRef::Pretrained)?;
                let measured = linalg::frobenius_distance(tuned.w(), pre.w());
                let (scratch_measured, scratch_reference) = if cfg.scratch {
                    let (s, _) = train_gd(&init, target, &cfg.finetune, DeviationRef::Init)?;
                    (
                        Some(linalg::frobenius_distance(s.w(), init.w())),
                        Some(ntk::scratch_bound(&bundles[j])),
                    )
                } else {
                    (None, None)
                };
                measured_all.push(measured);
                rows.push(VerifyRow {
                    m,
                    seed,
                    target: j,
                    measured,
                    reference: bounds[j],
                    gap: (measured - bounds[j]).max(0.0),
                    flip_fraction,
                    max_movement: tuned.max_neuron_movement(),
                    scratch_measured,
                    scratch_reference,
                });
            }
            if targets.len() >= 2 {
                spearman.push((m, seed, stats::spearman(&measured_all, &bounds)));
            }
        }
    }
    let mut widths: Vec<WidthSummary> = cfg.m_list.iter().map(|&m| summarize(&rows, m)).collect();
    for w in &mut widths {
        let at_m: Vec<f64> = spearman.iter().filter(|s| s.0 == w.m).map(|s| s.2).collect();
        if !at_m.is_empty() {
            let good = at_m.iter().filter(|&&r| r >= cfg.min_spearman).count();
            w.spearman_pass_fraction = Some(good as f64 / at_m.len() as f64);
        }
    }
    let mut verdicts = vec![trend_verdict("median excess over bound non-increasing in m", &widths, |w| {
        w.median_gap
    })];
    if let Some(last) = widths.last().and_then(|w| w.spearman_pass_fraction.map(|f| (w.m, f))) {
        verdicts.push(Verdict::new(
            "rank correlation with bound",
            last.1 >= cfg.seed_fraction,
            format!(
                "m={}: {:.0}% of seeds reach spearman >= {} (need {:.0}%)",
                last.0,
                100.0 * last.1,
                cfg.min_spearman,
                100.0 * cfg.seed_fraction
            ),
        ));
    }
    Ok(VerificationReport {
        name: "theorem2".into(),
        passed: verdicts.iter().all(|v| v.passed),
        rows,
        widths,
        spearman,
        verdicts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceConfig {
    pub m: usize,
    pub kappa: f64,
    /// Defaults to `lambda_Q / (2 n^2)`.
    #[serde(default)]
    pub eta: Option<f64>,
    pub steps: usize,
    #[serde(default = "one")]
    pub record_every: usize,
    pub seeds: Vec<u64>,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_required")]
    pub required_fraction: f64,
}

fn one() -> usize {
    1
}

fn default_tolerance() -> f64 {
    1e-6
}

fn default_required() -> f64 {
    0.9
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedContraction {
    pub seed: u64,
    pub holds: bool,
    /// `max_k residual^2(k) / bound(k)` over recorded steps.
    pub worst_ratio: f64,
    pub first_violation: Option<usize>,
    pub initial_residual: f64,
    pub final_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub lambda_q: f64,
    pub eta: f64,
    /// Per-step contraction factor `1 - eta lambda_Q / 2`.
    pub rate: f64,
    pub seeds: Vec<SeedContraction>,
    pub passing: usize,
    pub verdict: Verdict,
}

impl ConvergenceReport {
    pub fn to_csv(&self) -> Csv {
        let mut csv = Csv::with_header(&[
            "seed",
            "holds",
            "worst_ratio",
            "first_violation",
            "initial_residual",
            "final_residual",
        ]);
        for s in &self.seeds {
            csv.row(&[
                s.seed.to_string(),
                s.holds.to_string(),
                fmt_f64(s.worst_ratio),
                s.first_violation.map(|k| k.to_string()).unwrap_or_default(),
                fmt_f64(s.initial_residual),
                fmt_f64(s.final_residual),
            ]);
        }
        csv
    }
}

/// Check `residual^2(k) <= (1 - eta lambda_Q / 2)^k residual^2(0) (1 + tol)`
/// at every recorded step of a from-scratch run, per seed.
pub fn verify_convergence(task: &TaskDataset, cfg: &ConvergenceConfig) -> Result<ConvergenceReport> {
    if cfg.seeds.is_empty() {
        return Err(Error::invalid("need at least one seed"));
    }
    let h = ntk::gram_exact(task.inputs(), task.inputs())?;
    let lambda_q = ntk::min_eigenvalue(&h.values, 0.0)?.value;
    if lambda_q <= 0.0 {
        return Err(Error::NearSingular {
            what: "H_Q",
            lambda_min: lambda_q,
            suggested_jitter: linalg::JITTER_SCALE,
        });
    }
    let n = task.n() as f64;
    let eta = cfg.eta.unwrap_or(lambda_q / (2.0 * n * n));
    let rate = 1.0 - eta * lambda_q / 2.0;
    if !(rate > 0.0) {
        return Err(Error::invalid(format!(
            "eta * lambda_Q / 2 = {} leaves no positive contraction factor",
            eta * lambda_q / 2.0
        )));
    }
    let train_cfg = TrainConfig::new(eta, cfg.steps).record_every(cfg.record_every);
    let mut seeds = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let net = init_net(task.d(), cfg.m, cfg.kappa, seed)?;
        let (_, trace) = train_gd(&net, task, &train_cfg, DeviationRef::Init)?;
        let r0 = trace.records[0].residual_norm;
        let mut worst_ratio: f64 = 0.0;
        let mut first_violation = None;
        for rec in &trace.records {
            let bound = r0 * r0 * (rec.step as f64 * rate.ln()).exp() * (1.0 + cfg.tolerance);
            let r2 = rec.residual_norm * rec.residual_norm;
            let ratio = if bound > 0.0 { r2 / bound } else if r2 > 0.0 { f64::INFINITY } else { 0.0 };
            worst_ratio = worst_ratio.max(ratio);
            if ratio > 1.0 && first_violation.is_none() {
                first_violation = Some(rec.step);
            }
        }
        seeds.push(SeedContraction {
            seed,
            holds: first_violation.is_none(),
            worst_ratio,
            first_violation,
            initial_residual: r0,
            final_residual: trace.last().map(|r| r.residual_norm).unwrap_or(r0),
        });
    }
    let passing = seeds.iter().filter(|s| s.holds).count();
    let needed = (cfg.required_fraction * seeds.len() as f64).ceil() as usize;
    let verdict = Verdict::new(
        "contraction at every recorded step",
        passing >= needed,
        format!("{passing}/{} seeds hold (need {needed}), rate {rate:.6e}", seeds.len()),
    );
    Ok(ConvergenceReport {
        lambda_q,
        eta,
        rate,
        seeds,
        passing,
        verdict,
    })
}
