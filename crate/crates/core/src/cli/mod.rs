//! Command-line orchestration: `run`, `report` and `validate-config`.
//!
//! Exit codes: 0 on success, 1 on an execution or integrity error, 2 when
//! the run finished but a verification verdict failed.

pub mod config;
mod experiments;
pub mod manifest;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

pub use config::{ExperimentConfig, SCHEMA_VERSION};
pub use experiments::{run_experiment, AnyModel};
pub use manifest::{read_manifest, report_text, verify_artifacts, RunManifest, RunWriter};

use crate::error::{Error, Result};
use crate::io;

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "TRANSFERLAB_OUTPUT_ROOT";

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_VERDICT_FAILED: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "transferlab", version, about = "Seeded transfer-learning experiments on small ReLU networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the experiment described by a config file.
    Run {
        config: PathBuf,
        /// Replace the config's seed list with this single seed.
        #[arg(long)]
        seed_override: Option<u64>,
        /// Run every seed and arm sequentially on one thread.
        #[arg(long)]
        single_thread: bool,
        /// Output directory (overrides the config and the environment).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Verify a run directory and print its verdicts.
    Report { run_dir: PathBuf },
    /// Parse and check a config without running it.
    ValidateConfig { config: PathBuf },
}

/// Where a run writes: `--out`, then the config's `output_dir`, then
/// `$TRANSFERLAB_OUTPUT_ROOT/<name>`, then `runs/<name>`.
pub fn output_dir(cfg: &ExperimentConfig, config_hash: &str, out: Option<&Path>) -> PathBuf {
    if let Some(o) = out {
        return o.to_path_buf();
    }
    if let Some(o) = &cfg.output_dir {
        return o.clone();
    }
    let name = cfg
        .name
        .clone()
        .unwrap_or_else(|| format!("{}-{}", cfg.experiment.kind(), &config_hash[..12]));
    let root = std::env::var_os(OUTPUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"));
    root.join(name)
}

#[derive(Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub manifest: RunManifest,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.manifest.status != "complete" {
            EXIT_ERROR
        } else if self.manifest.passed() {
            EXIT_OK
        } else {
            EXIT_VERDICT_FAILED
        }
    }
}

/// Run a config file. Runs are always sequential, so `single_thread` only
/// documents intent. An execution error still writes a manifest, marked
/// partial, listing whatever was written.
pub fn run(config_path: &Path, seed_override: Option<u64>, out: Option<&Path>) -> Result<RunOutcome> {
    let (cfg, raw) = ExperimentConfig::load(config_path)?;
    let cfg = cfg.with_seed_override(seed_override);
    let config_hash = io::sha256_hex(&raw);
    let dir = output_dir(&cfg, &config_hash, out);
    let mut writer = RunWriter::create(&dir)?;
    let started = manifest::now_ms();
    writer.write(manifest::CONFIG_FILE, &raw)?;
    let result = run_experiment(&cfg, &mut writer);
    let (status, error, verdicts) = match result {
        Ok(v) => ("complete", None, v),
        Err(e) => ("partial", Some(e.to_string()), Vec::new()),
    };
    let manifest = writer.finish(RunManifest {
        tool: "transferlab".into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        generator: crate::rng::GENERATOR_ID.into(),
        experiment: cfg.experiment.kind().into(),
        seeds: cfg.seeds.clone(),
        config_sha256: config_hash,
        started_at_ms: started,
        finished_at_ms: 0,
        status: status.into(),
        error,
        artifacts: Vec::new(),
        verdicts,
    })?;
    Ok(RunOutcome { dir, manifest })
}

/// Dispatch a parsed command, printing to stdout/stderr; returns the exit code.
pub fn execute(cli: Cli) -> i32 {
    match cli.command {
        Command::Run {
            config,
            seed_override,
            single_thread: _,
            out,
        } => match run(&config, seed_override, out.as_deref()) {
            Ok(outcome) => {
                println!("wrote {}", outcome.dir.display());
                if let Some(e) = &outcome.manifest.error {
                    eprintln!("error: {e}");
                }
                for v in &outcome.manifest.verdicts {
                    println!("{}", v.line());
                }
                outcome.exit_code()
            }
            Err(e) => {
                eprintln!("error: {e}");
                EXIT_ERROR
            }
        },
        Command::Report { run_dir } => match report_text(&run_dir) {
            Ok((text, manifest)) => {
                print!("{text}");
                if manifest.status != "complete" {
                    EXIT_ERROR
                } else if manifest.passed() {
                    EXIT_OK
                } else {
                    EXIT_VERDICT_FAILED
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                EXIT_ERROR
            }
        },
        Command::ValidateConfig { config } => match ExperimentConfig::load(&config) {
            Ok((cfg, _)) => {
                println!("ok: {} experiment, {} seed(s)", cfg.experiment.kind(), cfg.seeds.len());
                EXIT_OK
            }
            Err(e @ Error::Config { .. }) => {
                eprintln!("invalid config: {e}");
                EXIT_ERROR
            }
            Err(e) => {
                eprintln!("error: {e}");
                EXIT_ERROR
            }
        },
    }
}
