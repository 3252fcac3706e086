//! Experiment configuration files.
//!
//! ```toml
//! [experiment]
//! kind = "e2"
//! outdir = "out/gaussian"
//! seed = 7
//! theta_cutoff = 8.0
//!
//! [scenario]
//! name = "gaussian"
//!
//! [mc]
//! n_paths = 100000
//! n_steps = 100
//! ```
//!
//! A scenario either names a registry entry (optionally overriding numeric
//! fields) or is defined inline with `sigma` and `b` expressions, in which
//! case every numeric field is required.

use std::path::PathBuf;

use holderlab_core::coeffs::Expr;
use holderlab_core::density::TailModel;
use holderlab_core::CoefficientSpec;
use serde::{Deserialize, Serialize};

use crate::error::LabError;
use crate::registry::{Oracle, Registry, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    /// Decay of the localized characteristic function and the final estimate's rates.
    E1,
    /// Lévy inversion against closed-form densities and a kernel estimate.
    E2,
    /// Change-of-measure weights: martingale mean, moment bound, reweighting.
    E3,
    /// Sup-increment event rates and the event decomposition.
    E4,
    /// Integration-by-parts identities and weight-norm scaling.
    E5,
    /// Approximation rate of the drift term under the change of measure.
    E6,
}

impl ExperimentKind {
    pub fn id(self) -> &'static str {
        match self {
            ExperimentKind::E1 => "e1",
            ExperimentKind::E2 => "e2",
            ExperimentKind::E3 => "e3",
            ExperimentKind::E4 => "e4",
            ExperimentKind::E5 => "e5",
            ExperimentKind::E6 => "e6",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub experiment: ExperimentSection,
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub mc: McSection,
}

/// Experiment parameters. Each experiment reads the subset it needs; unset
/// values take the documented defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub kind: ExperimentKind,
    pub outdir: PathBuf,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Geometric frequency grid (E1).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_decade: Option<usize>,
    /// Inversion (E2).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_cutoff: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_theta: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_points: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail: Option<TailModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sup_tol: Option<f64>,
    /// Target decay and schedule (E1).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal_c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal_gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plausible_c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n2: Option<u32>,
    /// Window lengths (E3 to E6).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deltas: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage_dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moments: Option<Vec<f64>>,
    /// Window length of the integration-by-parts sweep (E5).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ibp_delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slope_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_boot: Option<usize>,
}

fn default_seed() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSection {
    #[serde(default = "default_paths")]
    pub n_paths: usize,
    #[serde(default = "default_steps")]
    pub n_steps: usize,
}

fn default_paths() -> usize {
    10_000
}

fn default_steps() -> usize {
    100
}

impl Default for McSection {
    fn default() -> Self {
        Self {
            n_paths: default_paths(),
            n_steps: default_steps(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Expr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Expr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holder_const: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<Oracle>,
}

impl ScenarioSection {
    /// Section that reproduces `s` exactly as an inline definition.
    pub fn inline(s: &Scenario) -> Self {
        let p = &s.spec;
        Self {
            name: s.name.clone(),
            description: Some(s.description.clone()),
            sigma: Some(p.sigma.clone()),
            b: Some(p.b.clone()),
            x0: Some(p.x0),
            y0: Some(p.y0),
            eps: Some(p.eps),
            sigma0: Some(p.sigma0),
            alpha: Some(p.alpha),
            holder_const: Some(p.holder_const),
            horizon: Some(p.horizon),
            t: Some(p.t),
            sigma_bound: p.sigma_bound,
            b_bound: p.b_bound,
            oracle: s.oracle,
        }
    }

    /// Looks the scenario up (applying overrides) or registers the inline
    /// definition; an inline name that is already registered is an error.
    pub fn resolve(&self, registry: &mut Registry) -> Result<Scenario, LabError> {
        if self.sigma.is_some() || self.b.is_some() {
            let need = |v: Option<f64>, key: &str| {
                v.ok_or_else(|| LabError::Config(format!("missing key `scenario.{key}` in inline scenario `{}`", self.name)))
            };
            let t = need(self.t, "t")?;
            let spec = CoefficientSpec {
                sigma: self.sigma.clone().ok_or_else(|| LabError::Config("missing key `scenario.sigma`".into()))?,
                b: self.b.clone().ok_or_else(|| LabError::Config("missing key `scenario.b`".into()))?,
                x0: need(self.x0, "x0")?,
                y0: need(self.y0, "y0")?,
                eps: need(self.eps, "eps")?,
                sigma0: need(self.sigma0, "sigma0")?,
                alpha: need(self.alpha, "alpha")?,
                holder_const: need(self.holder_const, "holder_const")?,
                horizon: self.horizon.unwrap_or(t),
                t,
                sigma_bound: self.sigma_bound,
                b_bound: self.b_bound,
            };
            let s = Scenario {
                name: self.name.clone(),
                description: self.description.clone().unwrap_or_default(),
                spec,
                oracle: self.oracle,
            };
            registry.add(s.clone())?;
            return Ok(s);
        }
        let mut s = registry
            .get(&self.name)
            .cloned()
            .ok_or_else(|| LabError::ScenarioNotFound(self.name.clone()))?;
        let p = &mut s.spec;
        let set = |dst: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        set(&mut p.x0, self.x0);
        set(&mut p.y0, self.y0);
        set(&mut p.eps, self.eps);
        set(&mut p.sigma0, self.sigma0);
        set(&mut p.alpha, self.alpha);
        set(&mut p.holder_const, self.holder_const);
        set(&mut p.horizon, self.horizon);
        set(&mut p.t, self.t);
        if p.t > p.horizon && self.horizon.is_none() {
            p.horizon = p.t;
        }
        p.sigma_bound = self.sigma_bound.or(p.sigma_bound);
        p.b_bound = self.b_bound.or(p.b_bound);
        if self.oracle.is_some() {
            s.oracle = self.oracle;
        }
        if let Some(d) = &self.description {
            s.description = d.clone();
        }
        Ok(s)
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, LabError> {
        let cfg: Config = toml::from_str(text).map_err(|e| LabError::Config(e.message().to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, LabError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LabError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Range checks; `parse` applies them, configs built in code should too.
    pub fn check(&self) -> Result<(), LabError> {
        let bad = |key: &str, why: &str| Err(LabError::Config(format!("`{key}` {why}")));
        // TOML integers are i64.
        if self.experiment.seed > i64::MAX as u64 {
            return bad("experiment.seed", "must be at most 2^63 - 1");
        }
        if self.mc.n_paths < 2 {
            return bad("mc.n_paths", "must be at least 2");
        }
        if self.mc.n_steps == 0 {
            return bad("mc.n_steps", "must be positive");
        }
        let e = &self.experiment;
        let positive = [
            ("experiment.theta_min", e.theta_min),
            ("experiment.theta_max", e.theta_max),
            ("experiment.theta_cutoff", e.theta_cutoff),
            ("experiment.bandwidth", e.bandwidth),
            ("experiment.density_tol", e.density_tol),
            ("experiment.sup_tol", e.sup_tol),
            ("experiment.goal_c", e.goal_c),
            ("experiment.goal_gamma", e.goal_gamma),
            ("experiment.stage_dt", e.stage_dt),
            ("experiment.ibp_delta", e.ibp_delta),
            ("experiment.slope_tol", e.slope_tol),
        ];
        for (key, v) in positive {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return bad(key, "must be positive and finite");
                }
            }
        }
        if let (Some(lo), Some(hi)) = (e.theta_min, e.theta_max) {
            if lo >= hi {
                return bad("experiment.theta_min", "must be below theta_max");
            }
        }
        if let Some(n) = e.n_theta {
            if n < 4 || n % 2 != 0 {
                return bad("experiment.n_theta", "must be an even number of at least 4");
            }
        }
        if e.grid_points.is_some_and(|n| n < 64) {
            return bad("experiment.grid_points", "must be at least 64");
        }
        if let Some(d) = &e.deltas {
            if d.iter().any(|&v| !(v > 0.0 && v < 1.0)) {
                return bad("experiment.deltas", "must lie in (0, 1)");
            }
        }
        if e.window_steps == Some(0) || e.per_decade == Some(0) {
            return bad("experiment.window_steps", "and per_decade must be positive");
        }
        Ok(())
    }
}
