//! Lévy inversion of the localized characteristic function against the
//! closed-form density and a kernel estimate.

use holderlab_core::charfn::localized_charfn_uniform;
use holderlab_core::density::{gaussian_density, holder_modulus, kde_oracle, levy_invert, linspace, local_density, TailModel};
use holderlab_core::sde::{simulate_euler, Record};
use holderlab_core::{Error, Mollifier, SimGrid};
use serde_json::json;

use super::{csv, f, json_pretty, moments, Artifact, Check, Ctx, Outcome};
use crate::error::LabError;

pub(crate) fn run(ctx: &Ctx) -> Result<Outcome, LabError> {
    let e = &ctx.cfg.experiment;
    let spec = &ctx.scenario.spec;
    let grid = SimGrid::new(0.0, spec.t, ctx.cfg.mc.n_steps)?;
    let ens = simulate_euler(spec, grid, ctx.n_paths(), e.seed, Record::Terminal)?;
    let samples = ens.terminals();

    let cutoff = e.theta_cutoff.unwrap_or(8.0);
    let n_theta = e.n_theta.unwrap_or(512);
    let tail = e.tail.unwrap_or(TailModel::None);
    let phi = Mollifier::new(spec.eps)?;
    let table = localized_charfn_uniform(&samples, None, cutoff / n_theta as f64, n_theta, &phi, spec.y0, spec.t)?;
    let m0 = table.m0().unwrap_or(0.0);
    if !(m0 > 0.0) {
        return Err(Error::InsufficientSignal {
            admissible: 0,
            noise_floor: table.se[0],
            max_usable_theta: 0.0,
        }
        .into());
    }
    let xs = linspace(spec.y0 - 2.0 * spec.eps, spec.y0 + 2.0 * spec.eps, e.grid_points.unwrap_or(81));
    let normalized = levy_invert(&table.scaled(1.0 / m0), &xs, cutoff, tail)?;
    let density = local_density(m0, &normalized, spec.eps, spec.y0)?;
    let kde = kde_oracle(&samples, e.bandwidth.unwrap_or(0.05), &xs)?;
    let holder = holder_modulus(&density, &table, spec.alpha, tail)?;

    let in_window = |x: f64| (x - spec.y0).abs() <= spec.eps * (1.0 + 1e-12);
    let sup_diff = |other: &dyn Fn(usize) -> f64| {
        (0..xs.len())
            .filter(|&i| in_window(xs[i]))
            .map(|i| (density.values[i] - other(i)).abs())
            .fold(0.0, f64::max)
    };
    let kde_sup = sup_diff(&|i| kde.values[i]);
    let mut checks = vec![Check::at_most(
        "holder_modulus_within_integral_bound",
        holder.empirical_modulus,
        holder.integral_bound + holder.slack,
        None,
    )];
    let mut results = serde_json::Map::new();
    results.insert("m0".into(), json!({ "mean": m0, "se": table.se[0] }));
    results.insert("density_at_y0".into(), json!(density.value_at(spec.y0)));
    results.insert("error_budget".into(), density.sidecar_json());
    results.insert("holder".into(), serde_json::to_value(&holder)?);
    results.insert("kde_sup_diff_on_window".into(), json!(kde_sup));

    let law = ctx.scenario.oracle.and_then(|o| o.law(spec));
    let oracle: Option<Vec<f64>> = law.map(|(mean, var)| xs.iter().map(|&x| gaussian_density(x, mean, var)).collect());
    if let (Some((mean, var)), Some(exact)) = (law, &oracle) {
        let at_y0 = density.value_at(spec.y0);
        let p_y0 = gaussian_density(spec.y0, mean, var);
        checks.push(Check::within(
            "density_at_y0_matches_oracle",
            at_y0,
            p_y0,
            e.density_tol.unwrap_or(5e-3),
            Some(density.mc_error_bound),
        ));
        checks.push(Check::at_most(
            "density_sup_error_on_window",
            sup_diff(&|i| exact[i]),
            e.sup_tol.unwrap_or(1e-2),
            Some(density.mc_error_bound),
        ));
        let m = moments(&samples);
        checks.push(Check::within("terminal_mean", m.mean, mean, 4.0 * m.mean_se, Some(m.mean_se)));
        checks.push(Check::within("terminal_variance", m.var, var, 4.0 * m.var_se, Some(m.var_se)));
    }

    let text = match &oracle {
        Some(exact) => csv(
            "x,value,kde,oracle",
            (0..xs.len()).map(|i| vec![f(xs[i]), f(density.values[i]), f(kde.values[i]), f(exact[i])]),
        ),
        None => csv(
            "x,value,kde",
            (0..xs.len()).map(|i| vec![f(xs[i]), f(density.values[i]), f(kde.values[i])]),
        ),
    };
    let reference: Vec<(f64, f64)> = match &oracle {
        Some(exact) => xs.iter().copied().zip(exact.iter().copied()).collect(),
        None => xs.iter().copied().zip(kde.values.iter().copied()).collect(),
    };
    let label = if oracle.is_some() { "closed form" } else { "kernel estimate" };
    let artifacts = vec![
        Artifact::new("density.csv", text),
        Artifact::new("density.json", json_pretty(&density.sidecar_json())),
        Artifact::new(
            "density.svg",
            density.to_svg(&format!("local density: {}", ctx.scenario.name), Some((label, &reference))),
        ),
    ];
    Ok(Outcome {
        checks,
        results: serde_json::Value::Object(results),
        artifacts,
    })
}
