use serde::{Deserialize, Serialize};

use super::{flip_fraction, init_net, ShallowNet};
use crate::error::{Error, Result};
use crate::linalg::{self, SolvePolicy};
use crate::ntk::{self, GramBundle};
use crate::tasks::TaskDataset;
use crate::trace::{DeviationRef, TraceRecord, TrainTrace};

/// Residual growth (relative to the first step) treated as divergence.
pub const DIVERGENCE_FACTOR: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub eta: f64,
    pub steps: usize,
    /// Stop once `||u - y||_2` falls below this.
    #[serde(default)]
    pub stop_residual: f64,
    #[serde(default = "one")]
    pub record_every: usize,
    /// Failure-probability budget; carried into reports only.
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Check `||dL/dX1||^2 == ||u - y||^2` at every step.
    #[serde(default)]
    pub check_identity: bool,
}

fn one() -> usize {
    1
}

fn default_delta() -> f64 {
    0.1
}

impl TrainConfig {
    pub fn new(eta: f64, steps: usize) -> Self {
        Self {
            eta,
            steps,
            stop_residual: 0.0,
            record_every: 1,
            delta: default_delta(),
            check_identity: false,
        }
    }

    pub fn record_every(mut self, every: usize) -> Self {
        self.record_every = every;
        self
    }

    pub fn check(&self) -> Result<()> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be >= 0, got {}", self.eta)));
        }
        if self.record_every == 0 {
            return Err(Error::invalid("record_every must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub m: usize,
    pub kappa: f64,
    pub seed: u64,
}

/// `eta = lambda_Q / (2 n^2)` from the exact Gram matrix of `task`.
pub fn default_eta(task: &TaskDataset) -> Result<f64> {
    let h = ntk::gram_exact(task.inputs(), task.inputs())?;
    let lambda = ntk::min_eigenvalue(&h.values, 0.0)?.value;
    let n = task.n() as f64;
    Ok(lambda / (2.0 * n * n))
}

/// `min(0.1, lambda_P^2 delta / (n_P^2 sqrt(n_Q)))`, floored at 1e-4.
pub fn default_kappa(lambda_p: f64, delta: f64, n_p: usize, n_q: usize) -> f64 {
    let rule = lambda_p * lambda_p * delta / ((n_p * n_p) as f64 * (n_q as f64).sqrt());
    rule.clamp(1e-4, 0.1)
}

/// Full-batch gradient descent on the squared loss.
///
/// Runs `cfg.steps` updates or stops early once the residual drops below
/// `cfg.stop_residual`. Step 0 (before any update) is always recorded, as
/// is the final state.
pub fn train_gd(
    net: &ShallowNet,
    task: &TaskDataset,
    cfg: &TrainConfig,
    deviation_ref: DeviationRef,
) -> Result<(ShallowNet, TrainTrace)> {
    cfg.check()?;
    let x = task.inputs();
    let y = task.labels();
    net.check_inputs(x)?;
    let w_ref = match deviation_ref {
        DeviationRef::Init => net.w_init().clone(),
        DeviationRef::Pretrained => net.w().clone(),
    };
    let pre_ref = x * &w_ref;
    let sqrt_n = (task.n() as f64).sqrt();

    let mut work = net.clone();
    let mut trace = TrainTrace::new(deviation_ref, cfg.eta);
    let mut initial_residual = None;
    let mut max_identity: f64 = 0.0;
    let mut taken = 0;
    for k in 0..=cfg.steps {
        let pre = work.pre_activations(x);
        let u = work.output_from_pre(&pre);
        let residual = &u - y;
        let res_norm = residual.norm();
        let initial = *initial_residual.get_or_insert(res_norm);
        if !res_norm.is_finite() || (initial > 0.0 && res_norm > DIVERGENCE_FACTOR * initial) {
            return Err(Error::Diverged {
                step: k,
                residual: res_norm,
                initial,
            });
        }
        let grad = work.grad_from(x, &pre, &residual);
        if cfg.check_identity || cfg!(debug_assertions) {
            let ag = work.activation_grad_from(&residual);
            let err = (ag.squared_norm - residual.norm_squared()).abs();
            debug_assert!(err <= 1e-12 * (1.0 + residual.norm_squared()));
            max_identity = max_identity.max(err);
        }
        let stop = res_norm < cfg.stop_residual;
        let last = k == cfg.steps || stop;
        if k % cfg.record_every == 0 || last {
            trace.records.push(TraceRecord {
                step: k,
                loss: 0.5 * res_norm * res_norm,
                residual_norm: res_norm,
                weight_deviation: linalg::frobenius_distance(&work.w, &w_ref) / sqrt_n,
                grad_fro_norm: grad.norm(),
                activation_flip_fraction: flip_fraction(&pre, &pre_ref),
            });
        }
        if last {
            trace.stopped_early = stop && k < cfg.steps;
            break;
        }
        if cfg.eta != 0.0 {
            work.w -= grad * cfg.eta;
        }
        taken += 1;
    }
    trace.steps_taken = taken;
    if cfg.check_identity {
        trace.max_identity_error = Some(max_identity);
    }
    let mut out = net.clone();
    out.set_weights_unchecked(work.w, taken);
    Ok((out, trace))
}

/// Train a freshly initialized network on `task` (the from-scratch arm).
pub fn train_scratch(
    task: &TaskDataset,
    net_cfg: &NetConfig,
    cfg: &TrainConfig,
) -> Result<(ShallowNet, TrainTrace)> {
    let net = init_net(task.d(), net_cfg.m, net_cfg.kappa, net_cfg.seed)?;
    train_gd(&net, task, cfg, DeviationRef::Init)
}

#[derive(Debug, Clone)]
pub struct TransferReport {
    pub initial: ShallowNet,
    pub pretrained: ShallowNet,
    pub finetuned: ShallowNet,
    pub pretrain_trace: TrainTrace,
    pub finetune_trace: TrainTrace,
    /// `||W(P) - W(0)||_F`
    pub pretrain_deviation: f64,
    /// `||W(Q) - W(P)||_F`
    pub transfer_deviation: f64,
    /// `||u_Q(0) - y_Q||_2`, the target residual of the random init.
    pub target_residual_at_init: f64,
    /// `||u_Q(P) - y_Q||_2`, the target residual of the pretrained net.
    pub target_residual_at_pretrained: f64,
    pub bundle: Option<GramBundle>,
}

impl TransferReport {
    pub fn theorem2_bound(&self) -> Option<f64> {
        self.bundle.as_ref().map(ntk::theorem2_bound)
    }
}

/// Pretrain on `source` from a random init, then fine-tune on `target`
/// starting from the pretrained weights.
pub fn pretrain_then_transfer(
    source: &TaskDataset,
    target: &TaskDataset,
    net_cfg: &NetConfig,
    pre_cfg: &TrainConfig,
    fine_cfg: &TrainConfig,
) -> Result<TransferReport> {
    if source.d() != target.d() {
        return Err(Error::DimensionMismatch {
            what: "target input dimension",
            expected: source.d(),
            found: target.d(),
        });
    }
    let initial = init_net(source.d(), net_cfg.m, net_cfg.kappa, net_cfg.seed)?;
    let (pretrained, pretrain_trace) = train_gd(&initial, source, pre_cfg, DeviationRef::Init)?;
    let (finetuned, finetune_trace) =
        train_gd(&pretrained, target, fine_cfg, DeviationRef::Pretrained)?;
    let y_q = target.labels();
    let target_residual_at_init = (initial.forward(target.inputs())? - y_q).norm();
    let target_residual_at_pretrained = (pretrained.forward(target.inputs())? - y_q).norm();
    let bundle = GramBundle::build(source, target, SolvePolicy::permissive()).ok();
    Ok(TransferReport {
        pretrain_deviation: linalg::frobenius_distance(pretrained.w(), initial.w()),
        transfer_deviation: linalg::frobenius_distance(finetuned.w(), pretrained.w()),
        initial,
        pretrained,
        finetuned,
        pretrain_trace,
        finetune_trace,
        target_residual_at_init,
        target_residual_at_pretrained,
        bundle,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub pretrain_steps: usize,
    pub source_residual: f64,
    /// Target residual of the pretrained net before fine-tuning.
    pub target_residual_before: f64,
    /// Target residual after the fixed fine-tuning budget.
    pub target_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// Index of the row with the smallest target residual.
    pub best_index: usize,
    /// True when the best checkpoint is neither the first nor the last.
    pub interior_minimum: bool,
}

impl SweepReport {
    pub fn to_csv(&self) -> crate::io::Csv {
        let mut csv = crate::io::Csv::with_header(&[
            "pretrain_steps",
            "source_residual",
            "target_residual_before",
            "target_residual",
        ]);
        for r in &self.rows {
            csv.row(&[
                r.pretrain_steps.to_string(),
                crate::io::fmt_f64(r.source_residual),
                crate::io::fmt_f64(r.target_residual_before),
                crate::io::fmt_f64(r.target_residual),
            ]);
        }
        csv
    }
}

/// For each pretraining length in `checkpoints` (increasing), fine-tune a
/// copy of the pretrained net on `target` with `fine_cfg` and record the
/// residuals. Checkpoint 0 is the from-scratch arm.
pub fn epoch_sweep_transfer(
    source: &TaskDataset,
    target: &TaskDataset,
    net_cfg: &NetConfig,
    pretrain_eta: f64,
    checkpoints: &[usize],
    fine_cfg: &TrainConfig,
) -> Result<SweepReport> {
    if checkpoints.is_empty() {
        return Err(Error::invalid("need at least one checkpoint"));
    }
    if checkpoints.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("checkpoints must be strictly increasing"));
    }
    let mut net = init_net(source.d(), net_cfg.m, net_cfg.kappa, net_cfg.seed)?;
    let mut done = 0;
    let mut rows = Vec::with_capacity(checkpoints.len());
    for &c in checkpoints {
        if c > done {
            let cfg = TrainConfig::new(pretrain_eta, c - done).record_every(c - done);
            net = train_gd(&net, source, &cfg, DeviationRef::Init)?.0;
            done = c;
        }
        let source_residual = (net.forward(source.inputs())? - source.labels()).norm();
        let target_residual_before = (net.forward(target.inputs())? - target.labels()).norm();
        let (tuned, _) = train_gd(&net, target, fine_cfg, DeviationRef::Pretrained)?;
        let target_residual = (tuned.forward(target.inputs())? - target.labels()).norm();
        rows.push(SweepRow {
            pretrain_steps: c,
            source_residual,
            target_residual_before,
            target_residual,
        });
    }
    let best_index = rows
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.target_residual.total_cmp(&b.1.target_residual))
        .map(|(i, _)| i)
        .unwrap_or(0);
    Ok(SweepReport {
        interior_minimum: best_index > 0 && best_index + 1 < rows.len(),
        best_index,
        rows,
    })
}
