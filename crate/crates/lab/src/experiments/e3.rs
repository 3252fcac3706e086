//! Change-of-measure weights on `[t − δ, t]`: martingale mean, moment bound
//! and a reweighting cross-check against the drifted localized equation.

use holderlab_core::charfn::localization_mass;
use holderlab_core::coeffs::Expr;
use holderlab_core::girsanov::{moment_bound_check, reweighted_expectation, simulate_weighted};
use holderlab_core::plot::{line_chart, Axes, Series};
use holderlab_core::sde::{simulate_euler_from, Record};
use holderlab_core::stats::mean_se;
use holderlab_core::{Mollifier, SimGrid};
use serde_json::json;

use super::{csv, f, Artifact, Check, Ctx, Outcome};
use crate::error::LabError;

const DEFAULT_DELTAS: [f64; 3] = [0.01, 0.04, 0.16];

pub(crate) fn run(ctx: &Ctx) -> Result<Outcome, LabError> {
    let e = &ctx.cfg.experiment;
    let spec = &ctx.scenario.spec;
    let deltas = e.deltas.clone().unwrap_or(DEFAULT_DELTAS.to_vec());
    let ps = e.moments.clone().unwrap_or(vec![2.0, 4.0]);
    let m = e.window_steps.unwrap_or(32);
    let stage_dt = e.stage_dt.unwrap_or(1e-2);
    let n_boot = e.n_boot.unwrap_or(200);
    let constant_psi = matches!((&spec.sigma, &spec.b), (Expr::Const { .. }, Expr::Const { .. }));
    let phi = Mollifier::new(spec.eps)?;

    let mut checks = Vec::new();
    let mut rows = Vec::new();
    let mut per_delta = Vec::new();
    for (i, &delta) in deltas.iter().enumerate() {
        if !(delta < spec.t.min(1.0)) {
            return Err(LabError::Config(format!("window length {delta} must be below min(t, 1)")));
        }
        let lane = 4 * i as u64;
        let starts = ctx.stage(spec.t - delta, stage_dt, lane)?;
        let grid = SimGrid::new(spec.t - delta, spec.t, m)?;
        let w = simulate_weighted(&ctx.tc, &starts, grid, ctx.n_paths(), ctx.noise(lane + 1))?;
        let zm = w.weights.mean();
        let tag = format!("delta={delta}");
        checks.push(Check::within(format!("martingale_mean ({tag})"), zm.mean, 1.0, 4.0 * zm.se, Some(zm.se)));
        for &p in &ps {
            let mc = moment_bound_check(&w.weights, p, n_boot, e.seed ^ ((i as u64) << 8));
            checks.push(Check::at_most(
                format!("moment_bound_p{p} ({tag}, vs 1.02 x bound)"),
                mc.empirical,
                mc.bound * 1.02,
                Some(mc.se),
            ));
            if constant_psi && p == 2.0 {
                checks.push(Check::within(
                    format!("moment_equality_p2 ({tag})"),
                    mc.empirical,
                    mc.bound,
                    2.0 * mc.se,
                    Some(mc.se),
                ));
            }
            rows.push(vec![
                f(delta),
                f(p),
                f(mc.empirical),
                f(mc.se),
                f(mc.ci.0),
                f(mc.ci.1),
                f(mc.bound),
                mc.pass.to_string(),
            ]);
        }

        // E_Q[φ(X_t − y0)] directly and as E_P[φ(X̄_t − y0) Z].
        let q = simulate_euler_from(&ctx.tc, &starts, grid, ctx.n_paths(), ctx.noise(lane + 2), Record::Terminal)?;
        let direct = localization_mass(&q.states_x, None, &phi, spec.y0)?;
        let vals: Vec<f64> = w.x_t.iter().map(|&x| phi.eval(x - spec.y0)).collect();
        let weighted = reweighted_expectation(&vals, &w.weights)?;
        let se = direct.se.hypot(weighted.se);
        checks.push(Check::within(
            format!("reweighting_matches_drifted ({tag})"),
            weighted.mean,
            direct.mean,
            4.0 * se,
            Some(se),
        ));
        let log_z = mean_se(&w.weights.log_z);
        per_delta.push(json!({
            "delta": delta,
            "mean_z": zm.mean,
            "mean_z_se": zm.se,
            "mean_log_z": log_z.mean,
            "form_gap_rms": w.weights.form_gap_rms(),
            "psi_sup": w.weights.psi_sup,
            "drifted": direct.mean,
            "reweighted": weighted.mean,
        }));
    }

    let mut series_data = Vec::new();
    for &p in &ps {
        let pick = |col: usize| -> Vec<(f64, f64)> {
            rows.iter()
                .filter(|r| r[1] == f(p))
                .map(|r| (r[0].parse().unwrap_or(f64::NAN), r[col].parse().unwrap_or(f64::NAN)))
                .collect()
        };
        series_data.push((format!("E[Z^{p}]"), pick(2)));
        series_data.push((format!("bound p={p}"), pick(6)));
    }
    let series: Vec<Series> = series_data.iter().map(|(n, p)| Series { name: n, points: p }).collect();
    let artifacts = vec![
        Artifact::new("rates.csv", csv("delta,p,empirical,se,ci_lo,ci_hi,bound,ci_below_bound", rows)),
        Artifact::new(
            "moments.svg",
            line_chart(
                &format!("weight moments: {}", ctx.scenario.name),
                "delta",
                "moment",
                Axes { log_x: true, log_y: false },
                &series,
            ),
        ),
    ];
    Ok(Outcome {
        checks,
        results: json!({ "constant_psi": constant_psi, "windows": per_delta, "psi_sup": ctx.tc.sup_psi }),
        artifacts,
    })
}
