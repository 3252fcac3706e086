//! Run manifests: everything needed to re-run an experiment and verify its outputs.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::error::LabError;
use crate::experiments::Check;
use crate::registry::Scenario;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputFile {
    pub file: String,
    pub sha256: String,
    pub bytes: usize,
}

impl OutputFile {
    pub fn of(file: &str, bytes: &[u8]) -> Self {
        Self {
            file: file.into(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub experiment: String,
    pub scenario: Scenario,
    /// The configuration with the scenario written inline, so a re-run does
    /// not depend on the registry.
    pub config: Config,
    pub code_digest: String,
    pub version: String,
    pub workers: usize,
    pub outputs: Vec<OutputFile>,
    pub checks: Vec<Check>,
    pub results: serde_json::Value,
    pub pass: bool,
    pub wall_clock_s: f64,
}

/// The parts of a manifest a re-run needs.
#[derive(Debug, Clone, Deserialize)]
pub struct ManifestHead {
    pub experiment: String,
    pub config: Config,
    pub code_digest: String,
    pub outputs: Vec<OutputFile>,
}

impl ManifestHead {
    pub fn load(path: &Path) -> Result<Self, LabError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| LabError::Config(format!("bad manifest {}: {e}", path.display())))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    holderlab_core::sde::hex(&Sha256::digest(bytes))
}

/// Digest of the library sources that determine the numbers.
pub fn code_digest() -> String {
    const SOURCES: &[&str] = &[
        include_str!("../../core/src/charfn.rs"),
        include_str!("../../core/src/coeffs.rs"),
        include_str!("../../core/src/density.rs"),
        include_str!("../../core/src/girsanov.rs"),
        include_str!("../../core/src/malliavin.rs"),
        include_str!("../../core/src/mollifier.rs"),
        include_str!("../../core/src/plot.rs"),
        include_str!("../../core/src/quad.rs"),
        include_str!("../../core/src/rng.rs"),
        include_str!("../../core/src/sde.rs"),
        include_str!("../../core/src/stats.rs"),
        include_str!("experiments/mod.rs"),
        include_str!("experiments/e1.rs"),
        include_str!("experiments/e2.rs"),
        include_str!("experiments/e3.rs"),
        include_str!("experiments/e4.rs"),
        include_str!("experiments/e5.rs"),
        include_str!("experiments/e6.rs"),
    ];
    let mut h = Sha256::new();
    for s in SOURCES {
        h.update((s.len() as u64).to_le_bytes());
        h.update(s.as_bytes());
    }
    holderlab_core::sde::hex(&h.finalize())
}
