//! Sup-increment event rates over a window ladder, with the event labels
//! checked for disjointness and coverage.

use holderlab_core::plot::{line_chart, Axes, Series};
use holderlab_core::sde::{estimate_event_rate, EventRateOptions, DECOMPOSITION_LIMIT};
use serde_json::json;

use super::{csv, dyadic_ladder, f, Artifact, Check, Ctx, Outcome};
use crate::error::LabError;

pub(crate) fn run(ctx: &Ctx) -> Result<Outcome, LabError> {
    let e = &ctx.cfg.experiment;
    let spec = &ctx.scenario.spec;
    let deltas = e.deltas.clone().unwrap_or_else(|| dyadic_ladder(4, 9, spec.t));
    // Violations are judged here so that a breach is a failed check, not an error.
    let opts = EventRateOptions {
        stage_dt: e.stage_dt.unwrap_or(1e-3),
        window_steps: e.window_steps.unwrap_or(64),
        seed: e.seed,
        limit: 1.0,
    };
    let report = estimate_event_rate(&ctx.tc, &deltas, ctx.n_paths(), opts)?;
    let mut checks = Vec::new();
    for r in &report.rows {
        let c = &r.counts;
        let tag = format!("delta={}", r.delta);
        checks.push(Check::within(
            format!("labels_partition_localized ({tag}, A + C + exceptions)"),
            (c.a + c.c + c.violations) as f64,
            c.localized as f64,
            0.0,
            None,
        ));
        checks.push(Check::at_most(
            format!("decomposition_exceptions ({tag})"),
            c.violation_fraction(),
            DECOMPOSITION_LIMIT,
            None,
        ));
        let se = (r.probability * (1.0 - r.probability) / r.n.max(1) as f64).sqrt();
        checks.push(Check::at_most(
            format!("event_probability_below_oracle ({tag})"),
            r.probability,
            r.oracle,
            Some(se),
        ));
    }
    let text = csv(
        "delta,hits,entered,probability,ci_lo,ci_hi,paper_shape,oracle,n_paths,localized,a,c,exceptions",
        report.rows.iter().map(|r| {
            vec![
                f(r.delta),
                r.hits.to_string(),
                r.n.to_string(),
                f(r.probability),
                f(r.ci.0),
                f(r.ci.1),
                f(r.paper_shape),
                f(r.oracle),
                r.counts.n_paths.to_string(),
                r.counts.localized.to_string(),
                r.counts.a.to_string(),
                r.counts.c.to_string(),
                r.counts.violations.to_string(),
            ]
        }),
    );
    let prob: Vec<(f64, f64)> = report.rows.iter().map(|r| (r.delta, r.probability)).collect();
    let oracle: Vec<(f64, f64)> = report.rows.iter().map(|r| (r.delta, r.oracle)).collect();
    let shape: Vec<(f64, f64)> = report.rows.iter().map(|r| (r.delta, r.paper_shape)).collect();
    let svg = line_chart(
        &format!("sup-increment event rate: {}", ctx.scenario.name),
        "delta",
        "probability",
        Axes { log_x: true, log_y: true },
        &[
            Series { name: "empirical", points: &prob },
            Series { name: "sub-Gaussian oracle", points: &oracle },
            Series { name: "delta + delta^2", points: &shape },
        ],
    );
    Ok(Outcome {
        checks,
        results: json!({
            "slope": report.slope,
            "grid_sup_lower_bound": report.grid_sup_lower_bound,
            "sup_sigma_bar": ctx.tc.sup_sigma_bar,
            "sup_b_bar": ctx.tc.sup_b_bar,
        }),
        artifacts: vec![Artifact::new("rates.csv", text), Artifact::new("rates.svg", svg)],
    })
}
