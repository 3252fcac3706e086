//! The six experiments. Each returns its checks, a JSON summary and the
//! artifacts to write; persistence is left to the caller.

mod e1;
mod e2;
mod e3;
mod e4;
mod e5;
mod e6;

use holderlab_core::rng::NoiseSource;
use holderlab_core::sde::{simulate_euler_from, Record};
use holderlab_core::{SimGrid, TruncatedCoeffs};
use serde::{Deserialize, Serialize};

use crate::config::{Config, ExperimentKind};
use crate::error::LabError;
use crate::registry::Scenario;

/// Grid used to validate the assumptions before truncating.
pub const VALIDATION_GRID: usize = 1201;

/// One pass/fail judgement with the numbers behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub observed: f64,
    pub target: f64,
    /// Allowed `|observed − target|`, or zero for one-sided checks.
    pub tolerance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub se: Option<f64>,
    pub pass: bool,
}

impl Check {
    /// `|observed − target| ≤ tolerance`.
    pub fn within(name: impl Into<String>, observed: f64, target: f64, tolerance: f64, se: Option<f64>) -> Self {
        Self {
            name: name.into(),
            observed,
            target,
            tolerance,
            se,
            pass: (observed - target).abs() <= tolerance,
        }
    }

    /// `observed ≤ bound`.
    pub fn at_most(name: impl Into<String>, observed: f64, bound: f64, se: Option<f64>) -> Self {
        Self {
            name: name.into(),
            observed,
            target: bound,
            tolerance: 0.0,
            se,
            pass: observed <= bound,
        }
    }

    /// `lo ≤ observed ≤ hi`, recorded as target `(lo+hi)/2` with half-width tolerance.
    pub fn between(name: impl Into<String>, observed: f64, lo: f64, hi: f64, se: Option<f64>) -> Self {
        Self {
            name: name.into(),
            observed,
            target: 0.5 * (lo + hi),
            tolerance: 0.5 * (hi - lo),
            se,
            pass: observed >= lo && observed <= hi,
        }
    }

    pub fn line(&self) -> String {
        let se = self.se.map(|s| format!(" se={s:.3e}")).unwrap_or_default();
        format!(
            "{} {}: observed={:.6e} target={:.6e} tol={:.3e}{se}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.observed,
            self.target,
            self.tolerance
        )
    }
}

/// A named output file.
#[derive(Debug, Clone)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl Artifact {
    pub fn new(name: &str, contents: impl Into<Vec<u8>>) -> Self {
        Self {
            name: name.into(),
            bytes: contents.into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub checks: Vec<Check>,
    pub results: serde_json::Value,
    pub artifacts: Vec<Artifact>,
}

impl Outcome {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

pub(crate) struct Ctx<'a> {
    pub cfg: &'a Config,
    pub scenario: &'a Scenario,
    pub tc: TruncatedCoeffs,
}

impl Ctx<'_> {
    fn noise(&self, lane: u64) -> NoiseSource {
        NoiseSource::new(self.cfg.experiment.seed).with_lane(lane)
    }

    fn n_paths(&self) -> usize {
        self.cfg.mc.n_paths
    }

    /// `X_{t0}` for every path under the original coefficients, reached with
    /// steps close to `dt`; a single broadcast start when `t0 = 0`.
    fn stage(&self, t0: f64, dt: f64, lane: u64) -> Result<Vec<f64>, LabError> {
        let spec = &self.scenario.spec;
        if t0 <= 0.0 {
            return Ok(vec![spec.x0]);
        }
        let grid = SimGrid::with_step(0.0, t0, dt)?;
        Ok(simulate_euler_from(spec, &[spec.x0], grid, self.n_paths(), self.noise(lane), Record::Terminal)?.states_x)
    }
}

/// Runs the configured experiment on an already resolved scenario.
pub fn run_experiment(cfg: &Config, scenario: &Scenario) -> Result<Outcome, LabError> {
    let tc = holderlab_core::coeffs::build_truncated(scenario.spec.clone(), VALIDATION_GRID)?;
    let ctx = Ctx { cfg, scenario, tc };
    match cfg.experiment.kind {
        ExperimentKind::E1 => e1::run(&ctx),
        ExperimentKind::E2 => e2::run(&ctx),
        ExperimentKind::E3 => e3::run(&ctx),
        ExperimentKind::E4 => e4::run(&ctx),
        ExperimentKind::E5 => e5::run(&ctx),
        ExperimentKind::E6 => e6::run(&ctx),
    }
}

/// `2^{-lo} … 2^{-hi}` scaled by `min(t, 1)`.
pub(crate) fn dyadic_ladder(lo: i32, hi: i32, t: f64) -> Vec<f64> {
    (lo..=hi).map(|k| 2f64.powi(-k) * t.min(1.0)).collect()
}

/// Header plus one line per row, fields joined by commas.
pub(crate) fn csv(header: &str, rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut s = String::from(header);
    s.push('\n');
    for r in rows {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    s
}

pub(crate) fn f(v: f64) -> String {
    format!("{v}")
}

pub(crate) fn json_pretty(v: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json value serializes");
    s.push('\n');
    s
}

/// Sample mean and variance with standard errors (variance SE from the
/// fourth central moment).
pub(crate) struct Moments {
    pub mean: f64,
    pub mean_se: f64,
    pub var: f64,
    pub var_se: f64,
}

pub(crate) fn moments(xs: &[f64]) -> Moments {
    let n = xs.len() as f64;
    let mean = holderlab_core::stats::mean_se(xs);
    let var = holderlab_core::stats::variance(xs);
    let m4 = xs.iter().map(|x| (x - mean.mean).powi(4)).sum::<f64>() / n;
    Moments {
        mean: mean.mean,
        mean_se: mean.se,
        var,
        var_se: ((m4 - var * var).max(0.0) / n).sqrt(),
    }
}
