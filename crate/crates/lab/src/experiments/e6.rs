//! Rate of the drift approximation term
//! `E_P[∫_{t−δ}^t |ψ(X̄_u) Z_u − ψ(X_{t−δ})|² du]^{1/2}` over a window ladder.

use holderlab_core::girsanov::simulate_weighted;
use holderlab_core::plot::{line_chart, Axes, Series};
use holderlab_core::stats::{loglog_fit, mean_se};
use holderlab_core::SimGrid;
use serde_json::json;

use super::{csv, dyadic_ladder, f, Artifact, Check, Ctx, Outcome};
use crate::error::LabError;

pub(crate) fn run(ctx: &Ctx) -> Result<Outcome, LabError> {
    let e = &ctx.cfg.experiment;
    let spec = &ctx.scenario.spec;
    let deltas = e.deltas.clone().unwrap_or_else(|| dyadic_ladder(4, 9, spec.t));
    if deltas.len() < 3 {
        return Err(LabError::Config("`experiment.deltas` needs at least 3 window lengths".into()));
    }
    let m = e.window_steps.unwrap_or(64);
    let stage_dt = e.stage_dt.unwrap_or(1e-2);
    let mut rows = Vec::with_capacity(deltas.len());
    for (i, &delta) in deltas.iter().enumerate() {
        if !(delta < spec.t.min(1.0)) {
            return Err(LabError::Config(format!("window length {delta} must be below min(t, 1)")));
        }
        let lane = 2 * i as u64;
        let starts = ctx.stage(spec.t - delta, stage_dt, lane)?;
        let grid = SimGrid::new(spec.t - delta, spec.t, m)?;
        let w = simulate_weighted(&ctx.tc, &starts, grid, ctx.n_paths(), ctx.noise(lane + 1))?;
        let g = mean_se(&w.gap);
        let rms = g.mean.sqrt();
        rows.push((delta, rms, g.se / (2.0 * rms)));
    }
    let x: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let fit = loglog_fit(&x, &y);
    let expected = 0.5 * (1.0 + spec.alpha);
    let checks = vec![Check::within(
        "approximation_rate_slope",
        fit.slope,
        expected,
        e.slope_tol.unwrap_or(0.15),
        Some(fit.slope_se),
    )];
    let fitted: Vec<(f64, f64)> = x.iter().map(|&d| (d, (fit.intercept + fit.slope * d.ln()).exp())).collect();
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.0, r.1)).collect();
    let svg = line_chart(
        &format!("approximation term: {}", ctx.scenario.name),
        "delta",
        "rms",
        Axes { log_x: true, log_y: true },
        &[Series { name: "Monte Carlo", points: &pts }, Series { name: "fit", points: &fitted }],
    );
    Ok(Outcome {
        checks,
        results: json!({
            "slope": fit.slope,
            "slope_se": fit.slope_se,
            "slope_ci": fit.slope_interval(1.96),
            "expected": expected,
            "alpha": spec.alpha,
            "window_steps": m,
        }),
        artifacts: vec![
            Artifact::new("rates.csv", csv("delta,rms,se", rows.iter().map(|r| vec![f(r.0), f(r.1), f(r.2)]))),
            Artifact::new("rates.svg", svg),
        ],
    })
}
