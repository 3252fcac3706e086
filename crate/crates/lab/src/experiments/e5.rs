//! Integration-by-parts identities for every supported pair, the Hermite
//! closed forms and the scaling of the weight norms in `δ`.

use holderlab_core::coeffs::Expr;
use holderlab_core::malliavin::{
    check_pair, ibp_weight, simulate_driftless, verify_ibp, weight_norm_scaling, Functional, Multiplier, TestFn,
};
use holderlab_core::plot::{line_chart, Axes, Series};
use serde_json::json;

use super::{csv, dyadic_ladder, f, json_pretty, Artifact, Check, Ctx, Outcome};
use crate::error::LabError;

/// Pathwise agreement required of the closed-form Hermite weights, relative
/// to `max(1, |closed form|)`.
const HERMITE_TOL: f64 = 1e-12;

pub(crate) fn run(ctx: &Ctx) -> Result<Outcome, LabError> {
    let e = &ctx.cfg.experiment;
    let spec = &ctx.scenario.spec;
    let delta = e.ibp_delta.unwrap_or(0.1);
    let m = e.window_steps.unwrap_or(16);
    let start = spec.y0;
    let ws = simulate_driftless(&ctx.tc, start, delta, m, ctx.n_paths(), ctx.noise(0))?;
    let const_sigma = matches!(spec.sigma, Expr::Const { .. });

    let mut checks = Vec::new();
    let mut reports = Vec::new();
    let mut skipped = Vec::new();
    for functional in [Functional::Increment, Functional::Terminal] {
        let center = match functional {
            Functional::Increment => 0.0,
            Functional::Terminal => start,
        };
        let tests = [
            TestFn::Sin { theta: 2.0 },
            TestFn::Poly { coeffs: vec![0.0, 0.5, 0.0, 1.0] },
            TestFn::Bump { eps: 0.25, center },
        ];
        for g in [Multiplier::One, Multiplier::Phi, Multiplier::PhiIncrement] {
            for order in [1u8, 2] {
                if let Err(err) = check_pair(&ctx.tc, functional, g, order) {
                    skipped.push(json!({ "functional": functional, "multiplier": g, "order": order, "reason": err.to_string() }));
                    continue;
                }
                for t in &tests {
                    let r = verify_ibp(&ws, &ctx.tc, functional, g, order, t)?;
                    checks.push(Check::within(
                        format!("ibp {functional:?}/{g:?}/order {order}/{}", test_name(t)),
                        r.lhs.mean,
                        r.rhs.mean,
                        r.tolerance,
                        Some(r.combined_se),
                    ));
                    reports.push(r);
                }
            }
        }
    }

    let rows = ibp_weight(&ws, &ctx.tc, Functional::Increment, Multiplier::One, 2)?;
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
    let (mut err1, mut err2) = (0.0f64, 0.0f64);
    for &(w, _, h1, h2) in &rows {
        err1 = err1.max(rel(h1, w / delta));
        err2 = err2.max(rel(h2, (w * w - delta) / (delta * delta)));
    }
    checks.push(Check::at_most("hermite_h1_pathwise", err1, HERMITE_TOL, None));
    checks.push(Check::at_most("hermite_h2_pathwise", err2, HERMITE_TOL, None));

    let deltas = e.deltas.clone().unwrap_or_else(|| dyadic_ladder(4, 9, 1.0));
    let tol = e.slope_tol;
    let mut cases = vec![
        (Functional::Increment, 1u8, tol.unwrap_or(0.1)),
        (Functional::Increment, 2, tol.unwrap_or(0.1)),
    ];
    if const_sigma {
        cases.push((Functional::Terminal, 1, tol.unwrap_or(0.1)));
        cases.push((Functional::Terminal, 2, tol.unwrap_or(0.1)));
    } else {
        cases.push((Functional::Terminal, 1, tol.unwrap_or(0.15)));
    }
    let mut scaling = Vec::new();
    for (i, &(functional, order, tol)) in cases.iter().enumerate() {
        let noise = ctx.noise(100 * (i as u64 + 1));
        let s = weight_norm_scaling(&ctx.tc, functional, start, &deltas, order, m, ctx.n_paths(), noise)?;
        checks.push(Check::within(
            format!("weight_norm_slope {functional:?}/order {order}"),
            s.slope,
            s.expected,
            tol,
            None,
        ));
        scaling.push(s);
    }

    let text = csv(
        "functional,order,delta,l2_norm,se",
        scaling.iter().flat_map(|s| {
            s.rows.iter().map(move |r| {
                vec![format!("{:?}", s.functional).to_lowercase(), s.order.to_string(), f(r.delta), f(r.l2_norm), f(r.se)]
            })
        }),
    );
    let pts: Vec<(String, Vec<(f64, f64)>)> = scaling
        .iter()
        .map(|s| {
            (
                format!("{:?} order {}", s.functional, s.order),
                s.rows.iter().map(|r| (r.delta, r.l2_norm)).collect(),
            )
        })
        .collect();
    let series: Vec<Series> = pts.iter().map(|(n, p)| Series { name: n, points: p }).collect();
    let ibp = json!({
        "delta": delta,
        "n_steps": m,
        "n_paths": ctx.n_paths(),
        "start": start,
        "reports": reports,
        "skipped": skipped,
        "hermite": { "h1_max_rel_err": err1, "h2_max_rel_err": err2, "tolerance": HERMITE_TOL },
        "scaling": scaling,
    });
    let artifacts = vec![
        Artifact::new("ibp.json", json_pretty(&ibp)),
        Artifact::new("rates.csv", text),
        Artifact::new(
            "scaling.svg",
            line_chart(
                &format!("weight norms: {}", ctx.scenario.name),
                "delta",
                "L2 norm",
                Axes { log_x: true, log_y: true },
                &series,
            ),
        ),
    ];
    Ok(Outcome {
        checks,
        results: json!({
            "pairs_checked": reports.len(),
            "pairs_skipped": skipped.len(),
            "slopes": scaling.iter().map(|s| json!({
                "functional": s.functional, "order": s.order, "slope": s.slope, "ci": s.slope_ci, "expected": s.expected,
            })).collect::<Vec<_>>(),
        }),
        artifacts,
    })
}

fn test_name(t: &TestFn) -> String {
    match t {
        TestFn::Sin { theta } => format!("sin({theta}x)"),
        TestFn::Poly { coeffs } => format!("poly{coeffs:?}"),
        TestFn::Bump { eps, center } => format!("bump(eps={eps}, at {center})"),
    }
}
