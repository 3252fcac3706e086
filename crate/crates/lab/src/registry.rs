//! Named scenarios.

use holderlab_core::coeffs::Expr;
use holderlab_core::CoefficientSpec;
use serde::{Deserialize, Serialize};

use crate::error::LabError;

/// Closed-form law of `X_t`, when one exists.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Oracle {
    /// Constant coefficients: `X_t = x0 + b t + σ W_t`.
    Brownian,
    /// `dX = −κ X dt + σ dW`.
    OrnsteinUhlenbeck { kappa: f64 },
}

impl Oracle {
    /// Mean and variance of `X_t` (of the exact process, not the Euler scheme).
    pub fn law(&self, spec: &CoefficientSpec) -> Option<(f64, f64)> {
        let sigma = match spec.sigma {
            Expr::Const { value } => value,
            _ => return None,
        };
        let t = spec.t;
        match *self {
            Oracle::Brownian => match spec.b {
                Expr::Const { value } => Some((spec.x0 + value * t, sigma * sigma * t)),
                _ => None,
            },
            Oracle::OrnsteinUhlenbeck { kappa } => Some((
                spec.x0 * (-kappa * t).exp(),
                sigma * sigma * (1.0 - (-2.0 * kappa * t).exp()) / (2.0 * kappa),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub description: String,
    pub spec: CoefficientSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<Oracle>,
}

#[derive(Debug, Clone)]
pub struct Registry {
    scenarios: Vec<Scenario>,
}

fn spec(sigma: Expr, b: Expr, x0: f64, eps: f64, sigma0: f64, alpha: f64, holder_const: f64) -> CoefficientSpec {
    CoefficientSpec {
        sigma,
        b,
        x0,
        y0: 0.0,
        eps,
        sigma0,
        alpha,
        holder_const,
        horizon: 1.0,
        t: 1.0,
        sigma_bound: None,
        b_bound: None,
    }
}

fn weierstrass(alpha: f64) -> Expr {
    Expr::Weierstrass {
        amp: 0.5,
        alpha,
        terms: 16,
        center: 0.0,
    }
}

fn two_plus_sin() -> Expr {
    Expr::sum(vec![Expr::constant(2.0), Expr::Sin { amp: 1.0, freq: 1.0, phase: 0.0 }])
}

impl Default for Registry {
    fn default() -> Self {
        let sqrt = |alpha: f64| Expr::AbsPow {
            center: 0.0,
            power: alpha,
            scale: 1.0,
        };
        let s = |name: &str, description: &str, spec: CoefficientSpec, oracle: Option<Oracle>| Scenario {
            name: name.into(),
            description: description.into(),
            spec,
            oracle,
        };
        Self {
            scenarios: vec![
                s(
                    "gaussian",
                    "Brownian motion (sigma = 1, b = 0), window covering six standard deviations",
                    spec(Expr::constant(1.0), Expr::constant(0.0), 0.0, 6.0, 0.5, 0.5, 1.0),
                    Some(Oracle::Brownian),
                ),
                s(
                    "ou",
                    "Ornstein-Uhlenbeck (sigma = 1, b = -x) from x0 = 0.5",
                    spec(Expr::constant(1.0), Expr::linear(0.0, -1.0), 0.5, 1.0, 0.5, 0.5, 3.5),
                    Some(Oracle::OrnsteinUhlenbeck { kappa: 1.0 }),
                ),
                s(
                    "holder05",
                    "sigma = 1, b = |x - y0|^(1/2)",
                    spec(Expr::constant(1.0), sqrt(0.5), 0.0, 0.5, 0.5, 0.5, 1.0),
                    None,
                ),
                s(
                    "holder-var",
                    "sigma = 2 + sin x, b = |x - y0|^(1/2)",
                    spec(two_plus_sin(), sqrt(0.5), 0.0, 0.5, 0.9, 0.5, 1.0),
                    None,
                ),
                s(
                    "rough05",
                    "sigma = 1, Weierstrass drift with exponent 1/2 (rough at every scale)",
                    spec(Expr::constant(1.0), weierstrass(0.5), 0.0, 1.0, 0.5, 0.5, 2.5),
                    None,
                ),
                s(
                    "rough075",
                    "sigma = 1, Weierstrass drift with exponent 3/4",
                    spec(Expr::constant(1.0), weierstrass(0.75), 0.0, 1.0, 0.5, 0.75, 2.0),
                    None,
                ),
                s(
                    "const-drift",
                    "sigma = 1, b = 0.5 (constant drift-to-diffusion ratio)",
                    spec(Expr::constant(1.0), Expr::constant(0.5), 0.0, 1.0, 0.5, 0.5, 1.0),
                    Some(Oracle::Brownian),
                ),
            ],
        }
    }
}

impl Registry {
    pub fn empty() -> Self {
        Self { scenarios: Vec::new() }
    }

    pub fn add(&mut self, s: Scenario) -> Result<(), LabError> {
        if self.get(&s.name).is_some() {
            return Err(LabError::Config(format!("scenario `{}` is already registered", s.name)));
        }
        self.scenarios.push(s);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Scenario> {
        self.scenarios.iter().find(|s| s.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Scenario> {
        self.scenarios.iter()
    }
}
