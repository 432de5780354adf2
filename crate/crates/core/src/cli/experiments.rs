use serde::Serialize;
use serde_json::json;

use super::config::{hessian_config, Experiment, ExperimentConfig, ModelSpec, TaskSource, TrainSpec};
use super::manifest::RunWriter;
use crate::deepnet::{self, DeepNet};
use crate::error::{Error, Result};
use crate::io::{fmt_f64, Csv};
use crate::linalg::{Matrix, SolvePolicy};
use crate::ntk::{self, GramBundle};
use crate::probe::{self, Probeable};
use crate::shallow::{self, ShallowNet, TrainConfig, Verdict, VerifyConfig};
use crate::stats;
use crate::tasks::TaskDataset;
use crate::trace::{DeviationRef, TrainTrace};

/// A shallow or deep model behind one interface.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    Shallow(ShallowNet),
    Deep(DeepNet),
}

impl AnyModel {
    /// Fresh model for inputs of dimension `source.d()`. A missing shallow
    /// `kappa` follows the scale rule for the (source, target) pair.
    pub fn init(spec: &ModelSpec, source: &TaskDataset, target: &TaskDataset, seed: u64) -> Result<Self> {
        match spec {
            ModelSpec::Shallow { m, kappa } => {
                let kappa = match kappa {
                    Some(k) => *k,
                    None => {
                        let h = ntk::gram_exact(source.inputs(), source.inputs())?;
                        let lambda = ntk::min_eigenvalue(&h.values, 0.0)?.value;
                        shallow::default_kappa(lambda, 0.1, source.n(), target.n())
                    }
                };
                Ok(AnyModel::Shallow(shallow::init_net(source.d(), *m, kappa, seed)?))
            }
            ModelSpec::Deep { hidden, scale } => {
                let mut dims = vec![source.d()];
                dims.extend(hidden);
                dims.push(1);
                Ok(AnyModel::Deep(deepnet::init_deep(&dims, scale, seed)?))
            }
        }
    }

    pub fn train(&self, task: &TaskDataset, cfg: &TrainConfig, reference: DeviationRef) -> Result<(Self, TrainTrace)> {
        match self {
            AnyModel::Shallow(n) => shallow::train_gd(n, task, cfg, reference).map(|(n, t)| (AnyModel::Shallow(n), t)),
            AnyModel::Deep(n) => deepnet::train_deep(n, task, cfg, reference).map(|(n, t)| (AnyModel::Deep(n), t)),
        }
    }

    pub fn checkpoint_bytes(&self) -> Result<Vec<u8>> {
        match self {
            AnyModel::Shallow(n) => shallow::checkpoint_bytes(n),
            AnyModel::Deep(n) => deepnet::deep_checkpoint_bytes(n),
        }
    }

    pub fn forward(&self, x: &Matrix) -> Result<crate::linalg::Vector> {
        match self {
            AnyModel::Shallow(n) => n.forward(x),
            AnyModel::Deep(n) => n.forward(x),
        }
    }

    fn residual(&self, task: &TaskDataset) -> Result<f64> {
        Ok((self.forward(task.inputs())? - task.labels()).norm())
    }

    fn distance(&self, other: &Self) -> f64 {
        let (a, b) = (probe::layers_of(self), probe::layers_of(other));
        a.iter()
            .zip(&b)
            .map(|(x, y)| (x - y).norm_squared())
            .sum::<f64>()
            .sqrt()
    }
}

impl Probeable for AnyModel {
    fn layer_shapes(&self) -> Vec<(usize, usize)> {
        match self {
            AnyModel::Shallow(n) => n.layer_shapes(),
            AnyModel::Deep(n) => n.layer_shapes(),
        }
    }
    fn params(&self) -> Vec<f64> {
        match self {
            AnyModel::Shallow(n) => n.params(),
            AnyModel::Deep(n) => n.params(),
        }
    }
    fn set_params(&mut self, theta: &[f64]) -> Result<()> {
        match self {
            AnyModel::Shallow(n) => n.set_params(theta),
            AnyModel::Deep(n) => n.set_params(theta),
        }
    }
    fn batch_loss(&self, batch: &TaskDataset) -> Result<f64> {
        match self {
            AnyModel::Shallow(n) => n.batch_loss(batch),
            AnyModel::Deep(n) => n.batch_loss(batch),
        }
    }
    fn batch_gradient(&self, batch: &TaskDataset) -> Result<Vec<f64>> {
        match self {
            AnyModel::Shallow(n) => n.batch_gradient(batch),
            AnyModel::Deep(n) => n.batch_gradient(batch),
        }
    }
}

/// The first `k` samples of a task (all of them when `k` is `None`).
fn head(task: &TaskDataset, k: Option<usize>) -> Result<TaskDataset> {
    match k {
        None => Ok(task.clone()),
        Some(0) => Err(Error::invalid("batch size must be at least 1")),
        Some(k) => {
            let k = k.min(task.n());
            TaskDataset::new(
                format!("{}-head{k}", task.name()),
                task.seed(),
                task.inputs().rows(0, k).into_owned(),
                task.labels().rows(0, k).into_owned(),
            )
        }
    }
}

fn write_tasks(w: &mut RunWriter, source: &TaskDataset, target: &TaskDataset) -> Result<()> {
    w.write_str("data/source.json", &source.to_json_string()?)?;
    w.write_str("data/target.json", &target.to_json_string()?)
}

fn write_trace(w: &mut RunWriter, rel: &str, trace: &TrainTrace) -> Result<()> {
    w.write_str(rel, trace.to_csv().as_str())
}

fn write_json<T: Serialize>(w: &mut RunWriter, rel: &str, value: &T) -> Result<()> {
    w.write_json(rel, value)
}

fn resolve(spec: &TrainSpec, task: &TaskDataset) -> Result<TrainConfig> {
    spec.resolve(task)
}

/// Execute one experiment, writing every artifact through `w`.
/// Returns the verdicts (empty for experiments without one).
pub fn run_experiment(cfg: &ExperimentConfig, w: &mut RunWriter) -> Result<Vec<Verdict>> {
    let seeds = &cfg.seeds;
    match &cfg.experiment {
        Experiment::Gram { tasks } => gram(w, tasks),
        Experiment::Pretrain { tasks, model, train } => {
            let (source, target) = tasks.build()?;
            write_tasks(w, &source, &target)?;
            let tc = resolve(train, &source)?;
            for &seed in seeds {
                let init = AnyModel::init(model, &source, &target, seed)?;
                let (trained, trace) = init.train(&source, &tc, DeviationRef::Init)?;
                write_trace(w, &format!("seed-{seed}/trace.csv"), &trace)?;
                w.write(&format!("seed-{seed}/pretrained.ckpt"), &trained.checkpoint_bytes()?)?;
            }
            Ok(vec![])
        }
        Experiment::Transfer {
            tasks,
            model,
            pretrain,
            finetune,
        } => {
            let (source, target) = tasks.build()?;
            write_tasks(w, &source, &target)?;
            let bundle = GramBundle::build(&source, &target, SolvePolicy::permissive())?;
            w.write_str("bundle.json", &bundle.to_json_string()?)?;
            let (pc, fc) = (resolve(pretrain, &source)?, resolve(finetune, &target)?);
            let mut csv = Csv::with_header(&[
                "seed",
                "pretrain_deviation",
                "transfer_deviation",
                "target_residual_init",
                "target_residual_pretrained",
                "target_residual_final",
                "theorem2_bound",
            ]);
            for &seed in seeds {
                let init = AnyModel::init(model, &source, &target, seed)?;
                let (pre, pt) = init.train(&source, &pc, DeviationRef::Init)?;
                let (fine, ft) = pre.train(&target, &fc, DeviationRef::Pretrained)?;
                write_trace(w, &format!("seed-{seed}/pretrain_trace.csv"), &pt)?;
                write_trace(w, &format!("seed-{seed}/finetune_trace.csv"), &ft)?;
                w.write(&format!("seed-{seed}/pretrained.ckpt"), &pre.checkpoint_bytes()?)?;
                w.write(&format!("seed-{seed}/finetuned.ckpt"), &fine.checkpoint_bytes()?)?;
                csv.row(&[
                    seed.to_string(),
                    fmt_f64(pre.distance(&init)),
                    fmt_f64(fine.distance(&pre)),
                    fmt_f64(init.residual(&target)?),
                    fmt_f64(pre.residual(&target)?),
                    fmt_f64(fine.residual(&target)?),
                    fmt_f64(ntk::theorem2_bound(&bundle)),
                ]);
            }
            w.write_str("transfer.csv", csv.as_str())?;
            Ok(vec![])
        }
        Experiment::VerifyThm1 {
            tasks,
            m_list,
            kappa,
            delta,
            pretrain,
        } => {
            let (source, target) = tasks.build()?;
            write_tasks(w, &source, &target)?;
            let pc = resolve(pretrain, &source)?;
            let mut vc = VerifyConfig::new(m_list.clone(), *kappa, seeds.clone(), pc, pc);
            vc.delta = *delta;
            let report = shallow::verify_theorem1(&source, &target, &vc)?;
            w.write_str("theorem1.csv", report.to_csv().as_str())?;
            write_json(w, "theorem1.json", &report)?;
            Ok(report.verdicts)
        }
        Experiment::VerifyThm2 {
            family,
            m_list,
            kappa,
            delta,
            pretrain,
            finetune,
            scratch,
        } => {
            let (source, targets) = family.build()?;
            w.write_str("data/source.json", &source.to_json_string()?)?;
            for (j, t) in targets.iter().enumerate() {
                w.write_str(&format!("data/target-{j}.json"), &t.to_json_string()?)?;
            }
            let (pc, fc) = (resolve(pretrain, &source)?, resolve(finetune, &targets[0])?);
            let mut vc = VerifyConfig::new(m_list.clone(), *kappa, seeds.clone(), pc, fc);
            vc.delta = *delta;
            vc.scratch = *scratch;
            let report = shallow::verify_theorem2(&source, &targets, &vc)?;
            w.write_str("theorem2.csv", report.to_csv().as_str())?;
            write_json(w, "theorem2.json", &report)?;
            Ok(report.verdicts)
        }
        Experiment::VerifyConvergence {
            tasks,
            m,
            kappa,
            eta,
            steps,
            record_every,
        } => {
            let (_, target) = tasks.build()?;
            w.write_str("data/target.json", &target.to_json_string()?)?;
            let cc = shallow::ConvergenceConfig {
                m: *m,
                kappa: *kappa,
                eta: *eta,
                steps: *steps,
                record_every: *record_every,
                seeds: seeds.clone(),
                tolerance: 1e-6,
                required_fraction: 0.9,
            };
            let report = shallow::verify_convergence(&target, &cc)?;
            w.write_str("convergence.csv", report.to_csv().as_str())?;
            write_json(w, "convergence.json", &report)?;
            Ok(vec![report.verdict])
        }
        Experiment::ProbeLandscape {
            tasks,
            model,
            train,
            landscape,
            batch,
        } => {
            let (source, target) = tasks.build()?;
            write_tasks(w, &source, &target)?;
            let tc = resolve(train, &source)?;
            let b = head(&source, *batch)?;
            for &seed in seeds {
                let init = AnyModel::init(model, &source, &target, seed)?;
                let (mut trained, _) = init.train(&source, &tc, DeviationRef::Init)?;
                let grid = probe::landscape_grid(&mut trained, &b, &landscape.resolve(tc.eta, seed))?;
                w.write_str(&format!("seed-{seed}/landscape.csv"), grid.to_csv().as_str())?;
                w.write_str(&format!("seed-{seed}/landscape.json"), &grid.sidecar_json()?)?;
            }
            Ok(vec![])
        }
        Experiment::ProbeHessian {
            tasks,
            model,
            train,
            k,
            tol,
            max_iter,
            batch,
        } => {
            let (source, target) = tasks.build()?;
            write_tasks(w, &source, &target)?;
            let tc = resolve(train, &source)?;
            let b = head(&source, *batch)?;
            for &seed in seeds {
                let init = AnyModel::init(model, &source, &target, seed)?;
                let (mut trained, _) = init.train(&source, &tc, DeviationRef::Init)?;
                let spec = probe::hessian_topk(&mut trained, &b, &hessian_config(*k, *tol, *max_iter, seed))?;
                write_json(w, &format!("seed-{seed}/hessian.json"), &spec)?;
            }
            Ok(vec![])
        }
        Experiment::ProbeGradvar {
            tasks,
            model,
            pretrain,
            finetune,
            variation,
        } => {
            let (source, target) = tasks.build()?;
            write_tasks(w, &source, &target)?;
            let (pc, fc) = (resolve(pretrain, &source)?, resolve(finetune, &target)?);
            let mut csv = Csv::with_header(&["seed", "pretrained_median", "scratch_median"]);
            for &seed in seeds {
                let init = AnyModel::init(model, &source, &target, seed)?;
                let (mut pre, _) = init.train(&source, &pc, DeviationRef::Init)?;
                let mut scratch = init.clone();
                let a = probe::loss_variation_along_gradient(&mut pre, &target, &fc, variation)?;
                let b = probe::loss_variation_along_gradient(&mut scratch, &target, &fc, variation)?;
                w.write_str(&format!("seed-{seed}/pretrained_variation.csv"), a.to_csv().as_str())?;
                w.write_str(&format!("seed-{seed}/scratch_variation.csv"), b.to_csv().as_str())?;
                csv.row(&[
                    seed.to_string(),
                    fmt_f64(a.median_variation()),
                    fmt_f64(b.median_variation()),
                ]);
            }
            w.write_str("gradvar_summary.csv", csv.as_str())?;
            Ok(vec![])
        }
        Experiment::ProbeSvdproj {
            tasks,
            model,
            pretrain,
            layer,
        } => {
            let (source, target) = tasks.build()?;
            write_tasks(w, &source, &target)?;
            let pc = resolve(pretrain, &source)?;
            for &seed in seeds {
                let init = AnyModel::init(model, &source, &target, seed)?;
                let (pre, _) = init.train(&source, &pc, DeviationRef::Init)?;
                for (arm, m) in [("pretrained", &pre), ("scratch", &init)] {
                    let p = probe::grad_svd_projection(m, &target, *layer)?;
                    w.write_str(&format!("seed-{seed}/{arm}_svdproj.csv"), p.to_csv().as_str())?;
                    if let AnyModel::Deep(net) = m {
                        let scale = net.layer_grad_scale(target.inputs(), target.labels())?;
                        w.write_str(&format!("seed-{seed}/{arm}_grad_scale.csv"), scale.to_csv().as_str())?;
                    }
                }
            }
            Ok(vec![])
        }
        Experiment::ProbeDistmat {
            family,
            model,
            pretrain,
            finetune,
        } => {
            let (source, targets) = family.build()?;
            let pc = resolve(pretrain, &source)?;
            let mut csv = Csv::with_header(&["seed", "max_intra_distance", "min_scratch_distance", "clustered"]);
            for &seed in seeds {
                let init = AnyModel::init(model, &source, &targets[0], seed)?;
                let (pre, pt) = init.train(&source, &pc, DeviationRef::Init)?;
                write_trace(w, &format!("seed-{seed}/pretrain_trace.csv"), &pt)?;
                let mut labels = Vec::new();
                let mut layers = Vec::new();
                for (j, t) in targets.iter().enumerate() {
                    let (tuned, _) = pre.train(t, &resolve(finetune, t)?, DeviationRef::Pretrained)?;
                    labels.push(format!("finetune-{j}"));
                    layers.push(probe::layers_of(&tuned));
                }
                let (scratch, _) = init.train(&targets[0], &resolve(finetune, &targets[0])?, DeviationRef::Init)?;
                labels.push("scratch".into());
                layers.push(probe::layers_of(&scratch));
                let dm = probe::checkpoint_distance_matrix(&labels, &layers)?;
                w.write_str(&format!("seed-{seed}/distances.csv"), dm.to_csv().as_str())?;
                let k = targets.len();
                let mut intra: f64 = 0.0;
                let mut cross = f64::INFINITY;
                for i in 0..k {
                    for j in 0..k {
                        intra = intra.max(dm.get(i, j));
                    }
                    cross = cross.min(dm.get(i, k));
                }
                csv.row(&[seed.to_string(), fmt_f64(intra), fmt_f64(cross), (intra < cross).to_string()]);
            }
            w.write_str("clusters.csv", csv.as_str())?;
            Ok(vec![])
        }
        Experiment::SweepEpochs {
            tasks,
            m,
            kappa,
            pretrain_eta,
            checkpoints,
            finetune,
        } => {
            let (source, target) = tasks.build()?;
            write_tasks(w, &source, &target)?;
            let fc = resolve(finetune, &target)?;
            for &seed in seeds {
                let net = shallow::NetConfig {
                    m: *m,
                    kappa: *kappa,
                    seed,
                };
                let report = shallow::epoch_sweep_transfer(&source, &target, &net, *pretrain_eta, checkpoints, &fc)?;
                w.write_str(&format!("seed-{seed}/sweep.csv"), report.to_csv().as_str())?;
            }
            Ok(vec![])
        }
        Experiment::SweepSimilarity {
            family,
            model,
            pretrain,
            finetune,
        } => {
            let (source, targets) = family.build()?;
            let bundles = targets
                .iter()
                .map(|t| GramBundle::build(&source, t, SolvePolicy::permissive()))
                .collect::<Result<Vec<_>>>()?;
            let ids: Vec<String> = (0..targets.len()).map(|j| format!("target-{j}")).collect();
            w.write_str(
                "bundles.csv",
                ntk::bundle_csv(ids.iter().map(|s| s.as_str()).zip(&bundles)).as_str(),
            )?;
            let pc = resolve(pretrain, &source)?;
            let mut csv = Csv::with_header(&["seed", "target", "distortion", "theorem2_bound", "measured"]);
            let mut summary = Vec::new();
            for &seed in seeds {
                let init = AnyModel::init(model, &source, &targets[0], seed)?;
                let (pre, _) = init.train(&source, &pc, DeviationRef::Init)?;
                let mut measured = Vec::new();
                for (j, t) in targets.iter().enumerate() {
                    let (tuned, _) = pre.train(t, &resolve(finetune, t)?, DeviationRef::Pretrained)?;
                    let d = tuned.distance(&pre);
                    measured.push(d);
                    csv.row(&[
                        seed.to_string(),
                        j.to_string(),
                        fmt_f64(family.distortions[j]),
                        fmt_f64(ntk::theorem2_bound(&bundles[j])),
                        fmt_f64(d),
                    ]);
                }
                let bounds: Vec<f64> = bundles.iter().map(ntk::theorem2_bound).collect();
                summary.push(json!({ "seed": seed, "spearman": stats::spearman(&measured, &bounds) }));
            }
            w.write_str("similarity.csv", csv.as_str())?;
            write_json(w, "similarity_summary.json", &summary)?;
            Ok(vec![])
        }
    }
}

fn gram(w: &mut RunWriter, tasks: &TaskSource) -> Result<Vec<Verdict>> {
    let (source, target) = tasks.build()?;
    write_tasks(w, &source, &target)?;
    let bundle = GramBundle::build(&source, &target, SolvePolicy::permissive())?;
    w.write_str("bundle.json", &bundle.to_json_string()?)?;
    w.write_str("bundle.csv", ntk::bundle_csv([("pair", &bundle)]).as_str())?;
    let h = &bundle.h_q.values;
    let mut csv = Csv::default();
    for i in 0..h.nrows() {
        csv.num_row(&h.row(i).iter().copied().collect::<Vec<_>>());
    }
    w.write_str("h_target.csv", csv.as_str())?;
    Ok(vec![])
}
