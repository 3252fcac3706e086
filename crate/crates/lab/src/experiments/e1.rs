//! Decay of the localized characteristic function, the β window and the
//! rates of the four terms of the final estimate under `δ = θ^{-β}`.

use holderlab_core::charfn::{
    beta_window, check_goal_criterion, delta_schedule, est7_bound, est7_exponents, fit_decay, geometric_grid,
    localized_charfn, BoundParams, PLAUSIBLE_C,
};
use holderlab_core::girsanov::compute_c_alpha;
use holderlab_core::plot::{line_chart, Axes, Series};
use holderlab_core::sde::{simulate_euler, Record};
use holderlab_core::stats::loglog_fit;
use holderlab_core::{Mollifier, SimGrid};
use serde_json::json;
use statrs::distribution::{ContinuousCDF, Normal};

use super::{csv, f, Artifact, Check, Ctx, Outcome};
use crate::error::LabError;

/// Oracle comparisons are made up to this frequency.
const ORACLE_THETA_MAX: f64 = 3.0;

/// Terms of the final estimate are tabulated up to this frequency.
const RATES_THETA_MAX: f64 = 1e4;

pub(crate) fn run(ctx: &Ctx) -> Result<Outcome, LabError> {
    let e = &ctx.cfg.experiment;
    let spec = &ctx.scenario.spec;
    let alpha = spec.alpha;
    let grid = SimGrid::new(0.0, spec.t, ctx.cfg.mc.n_steps)?;
    let ens = simulate_euler(spec, grid, ctx.n_paths(), e.seed, Record::Terminal)?;
    let xs = ens.terminals();

    let mut thetas = vec![0.0];
    thetas.extend(geometric_grid(
        e.theta_min.unwrap_or(0.1),
        e.theta_max.unwrap_or(30.0),
        e.per_decade.unwrap_or(32),
    ));
    let phi = Mollifier::new(spec.eps)?;
    let table = localized_charfn(&xs, None, &thetas, &phi, spec.y0, spec.t)?;
    let mut checks = Vec::new();
    let mut results = serde_json::Map::new();
    results.insert("m0".into(), json!(table.m0()));

    let law = ctx.scenario.oracle.and_then(|o| o.law(spec));
    let mut oracle_pts = Vec::new();
    if let Some((mean, var)) = law {
        let sd = var.sqrt();
        let n = Normal::new(mean, sd).map_err(|err| LabError::Config(err.to_string()))?;
        let p_out = n.cdf(spec.y0 - spec.eps) + 1.0 - n.cdf(spec.y0 + spec.eps);
        let trunc = p_out.max(1e-6);
        let mut worst: Option<Check> = None;
        for k in 0..table.len() {
            let th = table.thetas[k];
            let (s, c) = (th * mean).sin_cos();
            let amp = (-0.5 * th * th * var).exp();
            oracle_pts.push((th, amp));
            if th > ORACLE_THETA_MAX {
                continue;
            }
            let err = ((table.re[k] - amp * c).powi(2) + (table.im[k] - amp * s).powi(2)).sqrt();
            let tol = 4.0 * table.se[k] + trunc;
            if worst.as_ref().map_or(true, |w| err / tol > w.observed / w.tolerance) {
                worst = Some(Check {
                    name: format!("cf_matches_oracle (worst at theta={th:.4})"),
                    observed: err,
                    target: 0.0,
                    tolerance: tol,
                    se: Some(table.se[k]),
                    pass: err <= tol,
                });
            }
        }
        results.insert("oracle_mass_outside_window".into(), json!(p_out));
        checks.extend(worst);
    }

    let n_boot = e.n_boot.unwrap_or(200);
    let fit = fit_decay(&table, n_boot, e.seed);
    let fit_json = match &fit {
        Ok(fit) => serde_json::to_value(fit)?,
        Err(err) => json!({ "error": err.to_string() }),
    };
    results.insert("decay_fit".into(), fit_json);

    let gamma = e.gamma.unwrap_or(0.5 * alpha);
    let window = beta_window(alpha, gamma);
    let mut artifacts = vec![Artifact::new("cf.csv", table.to_csv())];
    let mut rate_pts: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    match window {
        Err(err) => {
            results.insert("beta_window".into(), json!({ "error": err.to_string() }));
            checks.push(Check::at_most("beta_window_nonempty (gamma below alpha)", gamma, alpha, None));
        }
        Ok((lo, hi)) => {
            let beta = e.beta.unwrap_or(0.5 * (lo + hi));
            results.insert("beta_window".into(), json!({ "gamma": gamma, "lower": lo, "upper": hi, "beta": beta }));
            checks.push(Check::between("beta_in_window", beta, lo, hi, None));
            let (csv_text, rates_json, pts, rate_checks) = rates(ctx, beta)?;
            checks.extend(rate_checks);
            results.insert("rates".into(), rates_json);
            artifacts.push(Artifact::new("rates.csv", csv_text));
            rate_pts = pts;
        }
    }

    let goal = check_goal_criterion(
        &table,
        e.goal_c.unwrap_or(10.0),
        e.goal_gamma.unwrap_or(0.99),
        e.plausible_c.unwrap_or(PLAUSIBLE_C),
    )?;
    let worst = goal.rows.iter().map(|r| r.margin).fold(f64::INFINITY, f64::min);
    checks.push(Check {
        name: "goal_criterion (min margin over theta >= 1)".into(),
        observed: worst,
        target: 0.0,
        tolerance: 0.0,
        se: None,
        pass: goal.pass,
    });
    results.insert(
        "goal".into(),
        json!({
            "c": goal.c,
            "gamma": goal.gamma,
            "pass": goal.pass,
            "first_violation": goal.first_violation,
            "implausible_c": goal.implausible_c,
            "rows": goal.rows.len(),
        }),
    );

    let modulus: Vec<(f64, f64)> = (0..table.len()).map(|k| (table.thetas[k], table.modulus(k))).collect();
    let bound: Vec<(f64, f64)> = goal.rows.iter().map(|r| (r.theta, r.bound)).collect();
    let mut series = vec![
        Series { name: "|cf|", points: &modulus },
        Series { name: "goal bound", points: &bound },
    ];
    if !oracle_pts.is_empty() {
        series.push(Series { name: "oracle", points: &oracle_pts });
    }
    artifacts.push(Artifact::new(
        "cf.svg",
        line_chart(
            &format!("localized characteristic function: {}", ctx.scenario.name),
            "theta",
            "modulus",
            Axes { log_x: true, log_y: true },
            &series,
        ),
    ));
    if !rate_pts.is_empty() {
        let series: Vec<Series> = rate_pts.iter().map(|(n, p)| Series { name: n, points: p }).collect();
        artifacts.push(Artifact::new(
            "rates.svg",
            line_chart("terms of the final estimate", "theta", "term", Axes { log_x: true, log_y: true }, &series),
        ));
    }
    Ok(Outcome {
        checks,
        results: serde_json::Value::Object(results),
        artifacts,
    })
}

type Rates = (String, serde_json::Value, Vec<(String, Vec<(f64, f64)>)>, Vec<Check>);

/// Tabulates the four terms along the schedule and compares their log-log
/// slopes with the predicted exponents.
fn rates(ctx: &Ctx, beta: f64) -> Result<Rates, LabError> {
    let e = &ctx.cfg.experiment;
    let spec = &ctx.scenario.spec;
    let (n, n2) = (e.n.unwrap_or(1), e.n2.unwrap_or(2));
    let threshold = spec.t.min(1.0).powf(-1.0 / beta);
    let thetas = geometric_grid((2.0 * threshold).max(2.0), RATES_THETA_MAX, 8);
    // Z norms grow with δ, so the constant at the largest window covers all.
    let delta_max = delta_schedule(thetas[0], beta, spec.t)?;
    let c_alpha = compute_c_alpha(&ctx.tc, delta_max, spec.alpha)?;
    let params = BoundParams::new(n, n2, c_alpha.value);
    let mut rows = Vec::with_capacity(thetas.len());
    for &th in &thetas {
        let delta = delta_schedule(th, beta, spec.t)?;
        rows.push((th, delta, est7_bound(&params, th, delta, spec.alpha, &ctx.tc)?));
    }
    let text = csv(
        "theta,delta,localization,ibp,approximation,drift_ibp,total",
        rows.iter().map(|(th, d, r)| {
            vec![f(*th), f(*d), f(r.localization), f(r.ibp), f(r.approximation), f(r.drift_ibp), f(r.total)]
        }),
    );
    let x: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let slope = |pick: fn(&holderlab_core::charfn::Est7Terms) -> f64| {
        let y: Vec<f64> = rows.iter().map(|r| pick(&r.2)).collect();
        loglog_fit(&x, &y).slope
    };
    let ex = est7_exponents(n, n2, beta, spec.alpha);
    let tol = 1e-9;
    let loc = slope(|r| r.localization);
    let mut checks = vec![
        Check::between("localization_slope", loc, ex[1] - tol, ex[0] + tol, None),
        Check::within("ibp_slope", slope(|r| r.ibp), ex[2], tol, None),
        Check::within("approximation_slope", slope(|r| r.approximation), ex[3], tol, None),
    ];
    if ctx.tc.sup_psi > 0.0 {
        checks.push(Check::within("drift_ibp_slope", slope(|r| r.drift_ibp), ex[2], tol, None));
    }
    let total = slope(|r| r.total);
    let pts = |name: &str, pick: fn(&holderlab_core::charfn::Est7Terms) -> f64| {
        (name.to_string(), rows.iter().map(|r| (r.0, pick(&r.2))).collect::<Vec<_>>())
    };
    let series = vec![
        pts("localization", |r| r.localization),
        pts("ibp", |r| r.ibp),
        pts("approximation", |r| r.approximation),
        pts("drift ibp", |r| r.drift_ibp),
        pts("total", |r| r.total),
    ];
    let summary = serde_json::json!({
        "n": n,
        "n2": n2,
        "beta": beta,
        "c_alpha": c_alpha,
        "predicted_exponents": ex,
        "total_slope": total,
        "slowest_exponent": ex.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    });
    Ok((text, summary, series, checks))
}
