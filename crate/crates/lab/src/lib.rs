//! Experiment runner for local Hölder density estimates of one-dimensional
//! SDEs: a scenario registry, TOML configs, six experiments and
//! reproducible run manifests.

pub mod config;
pub mod error;
pub mod experiments;
pub mod manifest;
pub mod registry;

use std::path::{Path, PathBuf};
use std::time::Instant;

pub use config::{Config, ExperimentKind};
pub use error::LabError;
pub use experiments::{Check, Outcome};
pub use manifest::{Manifest, ManifestHead, OutputFile};
pub use registry::{Registry, Scenario};

use config::ScenarioSection;

/// Environment variable holding the worker count.
pub const WORKERS_ENV: &str = "LAB_WORKERS";

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub outdir: PathBuf,
    pub manifest: Manifest,
}

impl RunSummary {
    pub fn pass(&self) -> bool {
        self.manifest.pass
    }
}

/// Resolves the scenario, runs the experiment on the current rayon pool and
/// writes the artifacts plus `manifest.json` to `outdir` (the configured one
/// when `None`).
pub fn run(cfg: &Config, registry: &mut Registry, outdir: Option<&Path>) -> Result<RunSummary, LabError> {
    let started = Instant::now();
    cfg.check()?;
    let scenario = cfg.scenario.resolve(registry)?;
    let outcome = experiments::run_experiment(cfg, &scenario)?;
    let outdir = outdir.map(Path::to_path_buf).unwrap_or_else(|| cfg.experiment.outdir.clone());
    std::fs::create_dir_all(&outdir)?;
    let mut outputs = Vec::with_capacity(outcome.artifacts.len());
    for a in &outcome.artifacts {
        std::fs::write(outdir.join(&a.name), &a.bytes)?;
        outputs.push(OutputFile::of(&a.name, &a.bytes));
    }
    let mut echo = cfg.clone();
    echo.scenario = ScenarioSection::inline(&scenario);
    let manifest = Manifest {
        experiment: cfg.experiment.kind.id().into(),
        scenario,
        config: echo,
        code_digest: manifest::code_digest(),
        version: env!("CARGO_PKG_VERSION").into(),
        workers: rayon::current_num_threads(),
        outputs,
        pass: outcome.pass(),
        checks: outcome.checks,
        results: outcome.results,
        wall_clock_s: started.elapsed().as_secs_f64(),
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    std::fs::write(outdir.join("manifest.json"), text)?;
    Ok(RunSummary { outdir, manifest })
}

/// Outcome of re-running a manifest.
#[derive(Debug, Clone)]
pub struct RerunSummary {
    pub run: RunSummary,
    pub code_digest_matches: bool,
    /// `(file, recorded sha256, new sha256)` for every output that differs.
    pub mismatches: Vec<(String, String, String)>,
}

impl RerunSummary {
    pub fn reproduced(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Re-runs the manifest's configuration and compares output digests.
pub fn rerun(manifest_path: &Path, outdir: Option<&Path>) -> Result<RerunSummary, LabError> {
    let head = ManifestHead::load(manifest_path)?;
    // The echoed scenario is inline and self-contained.
    let mut registry = Registry::empty();
    let run = run(&head.config, &mut registry, outdir)?;
    let mut mismatches = Vec::new();
    for old in &head.outputs {
        let new = run.manifest.outputs.iter().find(|o| o.file == old.file);
        let new_sha = new.map(|o| o.sha256.clone()).unwrap_or_else(|| "missing".into());
        if new_sha != old.sha256 {
            mismatches.push((old.file.clone(), old.sha256.clone(), new_sha));
        }
    }
    Ok(RerunSummary {
        code_digest_matches: head.code_digest == run.manifest.code_digest,
        run,
        mismatches,
    })
}

/// Worker count from [`WORKERS_ENV`], falling back to the available parallelism.
pub fn workers_from_env() -> Result<usize, LabError> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(LabError::Config(format!("{WORKERS_ENV} must be a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Runs `f` on a dedicated pool of `workers` threads.
pub fn with_workers<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> Result<R, LabError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| LabError::Config(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(f))
}
