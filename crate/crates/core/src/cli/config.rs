//! Experiment configuration: one JSON document with a schema version.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::deepnet::Scale;
use crate::error::{Error, Result};
use crate::probe::{HessianConfig, LandscapeConfig, VariationConfig};
use crate::shallow::{self, TrainConfig};
use crate::tasks::{self, LabelFnSpec, TaskDataset, TaskPairSpec};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub name: Option<String>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub experiment: Experiment,
}

/// Where the task(s) come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "type", deny_unknown_fields)]
pub enum TaskSource {
    /// One generated task, used as both source and target.
    Single {
        n: usize,
        d: usize,
        labels: LabelFnSpec,
        seed: u64,
    },
    Pair(TaskPairSpec),
    SpecificNoise {
        n_source: usize,
        n_target: usize,
        d: usize,
        noise: f64,
        seed: u64,
    },
}

impl TaskSource {
    pub fn build(&self) -> Result<(TaskDataset, TaskDataset)> {
        match self {
            TaskSource::Single { n, d, labels, seed } => {
                let t = tasks::gen_task(*n, *d, labels, *seed)?;
                Ok((t.clone(), t))
            }
            TaskSource::Pair(spec) => tasks::make_task_pair(spec),
            TaskSource::SpecificNoise {
                n_source,
                n_target,
                d,
                noise,
                seed,
            } => tasks::make_specific_noise_pair(*n_source, *n_target, *d, *noise, *seed),
        }
    }
}

/// A source and several targets of increasing label distortion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySpec {
    pub pair: TaskPairSpec,
    pub distractor: LabelFnSpec,
    pub distortions: Vec<f64>,
}

impl FamilySpec {
    pub fn build(&self) -> Result<(TaskDataset, Vec<TaskDataset>)> {
        tasks::distortion_family(&self.pair, &self.distractor, &self.distortions)
    }
}

/// Training settings with optional data-dependent defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    /// Defaults to `lambda / (2 n^2)` on the task being trained.
    #[serde(default)]
    pub eta: Option<f64>,
    pub steps: usize,
    #[serde(default = "one")]
    pub record_every: usize,
    #[serde(default)]
    pub stop_residual: f64,
}

fn one() -> usize {
    1
}

impl TrainSpec {
    pub fn resolve(&self, task: &TaskDataset) -> Result<TrainConfig> {
        let eta = match self.eta {
            Some(e) => e,
            None => shallow::default_eta(task)?,
        };
        let mut cfg = TrainConfig::new(eta, self.steps).record_every(self.record_every);
        cfg.stop_residual = self.stop_residual;
        cfg.check()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "type", deny_unknown_fields)]
pub enum ModelSpec {
    Shallow {
        m: usize,
        /// Defaults to the scale rule from the task pair.
        #[serde(default)]
        kappa: Option<f64>,
    },
    Deep {
        /// Hidden widths; input and output widths come from the task.
        hidden: Vec<usize>,
        scale: Scale,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum Experiment {
    Gram {
        tasks: TaskSource,
    },
    Pretrain {
        tasks: TaskSource,
        model: ModelSpec,
        train: TrainSpec,
    },
    Transfer {
        tasks: TaskSource,
        model: ModelSpec,
        pretrain: TrainSpec,
        finetune: TrainSpec,
    },
    #[serde(rename = "verify-thm1")]
    VerifyThm1 {
        tasks: TaskSource,
        m_list: Vec<usize>,
        kappa: f64,
        #[serde(default = "default_delta")]
        delta: f64,
        pretrain: TrainSpec,
    },
    #[serde(rename = "verify-thm2")]
    VerifyThm2 {
        family: FamilySpec,
        m_list: Vec<usize>,
        kappa: f64,
        #[serde(default = "default_delta")]
        delta: f64,
        pretrain: TrainSpec,
        finetune: TrainSpec,
        #[serde(default)]
        scratch: bool,
    },
    VerifyConvergence {
        tasks: TaskSource,
        m: usize,
        kappa: f64,
        #[serde(default)]
        eta: Option<f64>,
        steps: usize,
        #[serde(default = "one")]
        record_every: usize,
    },
    ProbeLandscape {
        tasks: TaskSource,
        model: ModelSpec,
        train: TrainSpec,
        landscape: LandscapeOptions,
        #[serde(default)]
        batch: Option<usize>,
    },
    ProbeHessian {
        tasks: TaskSource,
        model: ModelSpec,
        train: TrainSpec,
        #[serde(default = "default_k")]
        k: usize,
        #[serde(default = "default_tol")]
        tol: f64,
        #[serde(default = "default_max_iter")]
        max_iter: usize,
        #[serde(default)]
        batch: Option<usize>,
    },
    ProbeGradvar {
        tasks: TaskSource,
        model: ModelSpec,
        pretrain: TrainSpec,
        finetune: TrainSpec,
        variation: VariationConfig,
    },
    ProbeSvdproj {
        tasks: TaskSource,
        model: ModelSpec,
        pretrain: TrainSpec,
        #[serde(default)]
        layer: usize,
    },
    ProbeDistmat {
        family: FamilySpec,
        model: ModelSpec,
        pretrain: TrainSpec,
        finetune: TrainSpec,
    },
    SweepEpochs {
        tasks: TaskSource,
        m: usize,
        kappa: f64,
        pretrain_eta: f64,
        checkpoints: Vec<usize>,
        finetune: TrainSpec,
    },
    SweepSimilarity {
        family: FamilySpec,
        model: ModelSpec,
        pretrain: TrainSpec,
        finetune: TrainSpec,
    },
}

fn default_delta() -> f64 {
    0.1
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

/// Landscape settings without the seed, which comes from the run's seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandscapeOptions {
    #[serde(default)]
    pub layer: usize,
    #[serde(default = "default_grid")]
    pub grid_size: usize,
    /// Defaults to ten times the training learning rate.
    #[serde(default)]
    pub step_scale: Option<f64>,
}

fn default_grid() -> usize {
    200
}

impl LandscapeOptions {
    pub fn resolve(&self, train_eta: f64, seed: u64) -> LandscapeConfig {
        LandscapeConfig {
            layer: self.layer,
            grid_size: self.grid_size,
            step_scale: self.step_scale.unwrap_or(10.0 * train_eta),
            seed,
        }
    }
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::Gram { .. } => "gram",
            Experiment::Pretrain { .. } => "pretrain",
            Experiment::Transfer { .. } => "transfer",
            Experiment::VerifyThm1 { .. } => "verify-thm1",
            Experiment::VerifyThm2 { .. } => "verify-thm2",
            Experiment::VerifyConvergence { .. } => "verify-convergence",
            Experiment::ProbeLandscape { .. } => "probe-landscape",
            Experiment::ProbeHessian { .. } => "probe-hessian",
            Experiment::ProbeGradvar { .. } => "probe-gradvar",
            Experiment::ProbeSvdproj { .. } => "probe-svdproj",
            Experiment::ProbeDistmat { .. } => "probe-distmat",
            Experiment::SweepEpochs { .. } => "sweep-epochs",
            Experiment::SweepSimilarity { .. } => "sweep-similarity",
        }
    }
}

pub fn hessian_config(k: usize, tol: f64, max_iter: usize, seed: u64) -> HessianConfig {
    HessianConfig { k, tol, max_iter, seed }
}

fn config_error(path: &str, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.to_string(),
        message: message.into(),
    }
}

/// Tagged enums buffer their content, so errors inside them only carry the
/// enum's path. For unknown fields, find the key below that path.
fn refine_path(text: &str, path: &str, message: &str) -> String {
    let Some(field) = message
        .strip_prefix("unknown field `")
        .and_then(|rest| rest.split('`').next())
    else {
        return path.to_string();
    };
    let Ok(root) = serde_json::from_str::<serde_json::Value>(text) else {
        return path.to_string();
    };
    let mut node = &root;
    if path != "." {
        for seg in path.split('.') {
            match node.get(seg) {
                Some(next) => node = next,
                None => return path.to_string(),
            }
        }
    }
    fn find(v: &serde_json::Value, field: &str, at: String) -> Option<String> {
        match v {
            serde_json::Value::Object(map) => {
                if map.contains_key(field) {
                    return Some(if at.is_empty() { field.to_string() } else { format!("{at}.{field}") });
                }
                map.iter().find_map(|(k, child)| {
                    find(child, field, if at.is_empty() { k.clone() } else { format!("{at}.{k}") })
                })
            }
            serde_json::Value::Array(items) => items
                .iter()
                .enumerate()
                .find_map(|(i, child)| find(child, field, format!("{at}[{i}]"))),
            _ => None,
        }
    }
    let base = if path == "." { String::new() } else { path.to_string() };
    find(node, field, base).unwrap_or_else(|| path.to_string())
}

impl ExperimentConfig {
    /// Parse and validate; schema errors name the offending field.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let message = e.into_inner().to_string();
            config_error(&refine_path(text, &path, &message), message)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, Vec<u8>)> {
        let raw = std::fs::read(path)?;
        let text = std::str::from_utf8(&raw).map_err(|_| config_error(".", "config is not UTF-8"))?;
        Ok((Self::from_json_str(text)?, raw))
    }

    /// Checks that do not require building any task.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(config_error(
                "schema_version",
                format!("unsupported version {} (expected {SCHEMA_VERSION})", self.schema_version),
            ));
        }
        if self.seeds.is_empty() {
            return Err(config_error("seeds", "at least one seed is required"));
        }
        let e = &self.experiment;
        let train_ok = |path: &str, t: &TrainSpec| -> Result<()> {
            if t.record_every == 0 {
                return Err(config_error(&format!("experiment.{path}.record_every"), "must be >= 1"));
            }
            if let Some(eta) = t.eta {
                if !(eta >= 0.0 && eta.is_finite()) {
                    return Err(config_error(&format!("experiment.{path}.eta"), "must be finite and >= 0"));
                }
            }
            Ok(())
        };
        let model_ok = |m: &ModelSpec| -> Result<()> {
            match m {
                ModelSpec::Shallow { m, kappa } => {
                    if *m == 0 {
                        return Err(config_error("experiment.model.m", "must be >= 1"));
                    }
                    if let Some(k) = kappa {
                        if !(*k > 0.0 && k.is_finite()) {
                            return Err(config_error("experiment.model.kappa", "must be > 0"));
                        }
                    }
                }
                ModelSpec::Deep { hidden, .. } => {
                    if hidden.is_empty() || hidden.contains(&0) {
                        return Err(config_error("experiment.model.hidden", "need >= 1 positive hidden width"));
                    }
                }
            }
            Ok(())
        };
        let m_list_ok = |m_list: &[usize]| -> Result<()> {
            if m_list.len() < 3 || m_list.windows(2).any(|w| w[1] <= w[0]) {
                return Err(config_error("experiment.m_list", "need >= 3 strictly increasing widths"));
            }
            Ok(())
        };
        match e {
            Experiment::Gram { .. } => {}
            Experiment::Pretrain { model, train, .. } => {
                model_ok(model)?;
                train_ok("train", train)?;
            }
            Experiment::Transfer {
                model,
                pretrain,
                finetune,
                ..
            }
            | Experiment::ProbeGradvar {
                model,
                pretrain,
                finetune,
                ..
            }
            | Experiment::ProbeDistmat {
                model,
                pretrain,
                finetune,
                ..
            }
            | Experiment::SweepSimilarity {
                model,
                pretrain,
                finetune,
                ..
            } => {
                model_ok(model)?;
                train_ok("pretrain", pretrain)?;
                train_ok("finetune", finetune)?;
            }
            Experiment::VerifyThm1 { m_list, pretrain, .. } => {
                m_list_ok(m_list)?;
                train_ok("pretrain", pretrain)?;
            }
            Experiment::VerifyThm2 {
                m_list,
                pretrain,
                finetune,
                family,
                ..
            } => {
                m_list_ok(m_list)?;
                train_ok("pretrain", pretrain)?;
                train_ok("finetune", finetune)?;
                if family.distortions.is_empty() {
                    return Err(config_error("experiment.family.distortions", "need at least one target"));
                }
            }
            Experiment::VerifyConvergence { m, record_every, .. } => {
                if *m == 0 {
                    return Err(config_error("experiment.m", "must be >= 1"));
                }
                if *record_every == 0 {
                    return Err(config_error("experiment.record_every", "must be >= 1"));
                }
            }
            Experiment::ProbeLandscape {
                model, train, landscape, ..
            } => {
                model_ok(model)?;
                train_ok("train", train)?;
                if landscape.grid_size == 0 {
                    return Err(config_error("experiment.landscape.grid_size", "must be >= 1"));
                }
            }
            Experiment::ProbeHessian { model, train, k, .. } => {
                model_ok(model)?;
                train_ok("train", train)?;
                if *k == 0 {
                    return Err(config_error("experiment.k", "must be >= 1"));
                }
            }
            Experiment::ProbeSvdproj { model, pretrain, .. } => {
                model_ok(model)?;
                train_ok("pretrain", pretrain)?;
            }
            Experiment::SweepEpochs { checkpoints, finetune, .. } => {
                train_ok("finetune", finetune)?;
                if checkpoints.is_empty() || checkpoints.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(config_error("experiment.checkpoints", "must be non-empty and strictly increasing"));
                }
            }
        }
        Ok(())
    }

    pub fn with_seed_override(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.seeds = vec![s];
        }
        self
    }
}
