//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero when any fails. Runtime limits count towards the verdict.

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use holderlab::{rerun, run, with_workers, Check, Config, Registry, RunSummary};
use holderlab_core::charfn::{beta_window, delta_schedule};
use holderlab_core::Mollifier;
use num_rational::Rational64;

type Verdict = Result<Vec<String>, String>;

struct Criterion {
    id: u8,
    name: &'static str,
    budget: Duration,
    body: fn(&Path) -> Verdict,
}

fn config(kind: &str, scenario: &str, seed: u64, n_paths: usize, n_steps: usize, extra: &str) -> Config {
    let text = format!(
        "[experiment]\nkind = \"{kind}\"\noutdir = \"unused\"\nseed = {seed}\n{extra}\n\n\
         [scenario]\nname = \"{scenario}\"\n\n[mc]\nn_paths = {n_paths}\nn_steps = {n_steps}\n"
    );
    Config::parse(&text).expect("acceptance config parses")
}

fn run_in(cfg: &Config, dir: &Path) -> Result<RunSummary, String> {
    with_workers(1, || run(cfg, &mut Registry::default(), Some(dir)))
        .map_err(|e| e.to_string())?
        .map_err(|e| e.to_string())
}

/// Requires every check of `s` whose name starts with one of `prefixes` to
/// pass, and at least one to exist per prefix. Other checks are reported.
fn require(s: &RunSummary, prefixes: &[&str], notes: &mut Vec<String>) -> Result<(), String> {
    let label = format!("{}/{}", s.manifest.experiment, s.manifest.scenario.name);
    for p in prefixes {
        let hits: Vec<&Check> = s.manifest.checks.iter().filter(|c| c.name.starts_with(p)).collect();
        if hits.is_empty() {
            return Err(format!("{label}: no `{p}` check"));
        }
        if let Some(bad) = hits.iter().find(|c| !c.pass) {
            return Err(format!("{label}: {}", bad.line()));
        }
        let last = hits.last().map(|c| c.line()).unwrap_or_default();
        notes.push(format!("{label}: {} x `{p}` pass, e.g. {last}", hits.len()));
    }
    for c in s.manifest.checks.iter().filter(|c| !c.pass) {
        notes.push(format!("{label}: note {}", c.line()));
    }
    Ok(())
}

fn check_value(s: &RunSummary, name: &str) -> Result<f64, String> {
    s.manifest
        .checks
        .iter()
        .find(|c| c.name.starts_with(name))
        .map(|c| c.observed)
        .ok_or_else(|| format!("no `{name}` check"))
}

fn mollifier(_: &Path) -> Verdict {
    let mut notes = Vec::new();
    for eps in [0.3, 1.0, 2.5] {
        let phi = Mollifier::new(eps).map_err(|e| e.to_string())?;
        let n = 10_000;
        let h = 1e-6 * eps;
        let mut worst = 0.0f64;
        for i in 0..n {
            let x = -3.0 * eps + 6.0 * eps * (i as f64 + 0.5) / n as f64;
            let v = phi.eval(x);
            let lower = if x.abs() < eps { 1.0 } else { 0.0 };
            let upper = if x.abs() < 2.0 * eps { 1.0 } else { 0.0 };
            if !(lower <= v && v <= upper) {
                return Err(format!("sandwich broken at eps={eps}, x={x}: {v}"));
            }
            let d1 = phi.deriv(x, 1).map_err(|e| e.to_string())?;
            let d2 = phi.deriv(x, 2).map_err(|e| e.to_string())?;
            let fd1 = (phi.eval(x + h) - phi.eval(x - h)) / (2.0 * h);
            let fd2 = (phi.deriv(x + h, 1).unwrap() - phi.deriv(x - h, 1).unwrap()) / (2.0 * h);
            // Relative above unit scale: derivatives grow like eps^-k.
            let e1 = (d1 - fd1).abs() / d1.abs().max(1.0);
            let e2 = (d2 - fd2).abs() / d2.abs().max(1.0);
            worst = worst.max(e1).max(e2);
        }
        if worst > 1e-5 {
            return Err(format!("derivative mismatch {worst:.3e} at eps={eps}"));
        }
        notes.push(format!("eps={eps}: 10^4 points, sandwich exact, max derivative gap {worst:.2e}"));
    }
    Ok(notes)
}

fn gaussian_pipeline(dir: &Path) -> Verdict {
    let mut notes = Vec::new();
    let e1 = run_in(&config("e1", "gaussian", 1, 1_000_000, 1, ""), &dir.join("e1"))?;
    require(&e1, &["cf_matches_oracle"], &mut notes)?;
    let e2 = run_in(
        &config("e2", "gaussian", 1, 1_000_000, 1, "theta_cutoff = 8.0\nn_theta = 512"),
        &dir.join("e2"),
    )?;
    require(&e2, &["density_at_y0_matches_oracle"], &mut notes)?;
    Ok(notes)
}

fn ou_oracle(dir: &Path) -> Verdict {
    let mut notes = Vec::new();
    let s = run_in(
        &config("e2", "ou", 2, 1_000_000, 500, "theta_cutoff = 12.0\nn_theta = 768"),
        dir,
    )?;
    require(&s, &["terminal_variance", "density_sup_error_on_window"], &mut notes)?;
    Ok(notes)
}

fn moment_bounds(dir: &Path) -> Verdict {
    let mut notes = Vec::new();
    for name in Registry::default().iter().map(|s| s.name.clone()) {
        let s = run_in(&config("e3", &name, 2, 50_000, 100, ""), &dir.join(&name))?;
        require(&s, &["moment_bound_p2", "moment_bound_p4"], &mut notes)?;
        if name == "const-drift" {
            require(&s, &["moment_equality_p2"], &mut notes)?;
        }
    }
    Ok(notes)
}

fn ibp(dir: &Path) -> Verdict {
    let mut notes = Vec::new();
    for name in ["gaussian", "holder-var"] {
        let s = run_in(
            &config("e5", name, 5, 100_000, 100, "ibp_delta = 0.1\nwindow_steps = 16"),
            &dir.join(name),
        )?;
        require(&s, &["ibp "], &mut notes)?;
        if name == "gaussian" {
            require(&s, &["hermite_h1_pathwise", "hermite_h2_pathwise"], &mut notes)?;
        }
    }
    Ok(notes)
}

fn weight_scaling(dir: &Path) -> Verdict {
    let mut notes = Vec::new();
    let g = run_in(&config("e5", "gaussian", 5, 100_000, 100, "window_steps = 16"), &dir.join("gaussian"))?;
    require(
        &g,
        &[
            "weight_norm_slope Increment/order 1",
            "weight_norm_slope Increment/order 2",
            "weight_norm_slope Terminal/order 1",
            "weight_norm_slope Terminal/order 2",
        ],
        &mut notes,
    )?;
    let v = run_in(&config("e5", "holder-var", 5, 100_000, 100, "window_steps = 16"), &dir.join("holder-var"))?;
    require(&v, &["weight_norm_slope Terminal/order 1"], &mut notes)?;
    Ok(notes)
}

fn approximation_rate(dir: &Path) -> Verdict {
    let mut notes = Vec::new();
    let mut slopes = Vec::new();
    for name in ["rough05", "rough075"] {
        let s = run_in(&config("e6", name, 6, 10_000, 100, "window_steps = 64"), &dir.join(name))?;
        require(&s, &["approximation_rate_slope"], &mut notes)?;
        slopes.push(check_value(&s, "approximation_rate_slope")?);
    }
    if !(slopes[1] > slopes[0]) {
        return Err(format!("slope does not grow with alpha: {} then {}", slopes[0], slopes[1]));
    }
    notes.push(format!("slope moves with alpha: {:.4} -> {:.4}", slopes[0], slopes[1]));
    Ok(notes)
}

fn events(dir: &Path) -> Verdict {
    let mut notes = Vec::new();
    let s = run_in(&config("e4", "holder05", 4, 50_000, 100, "stage_dt = 1e-3"), dir)?;
    require(
        &s,
        &["labels_partition_localized", "decomposition_exceptions", "event_probability_below_oracle"],
        &mut notes,
    )?;
    Ok(notes)
}

fn beta_arithmetic(_: &Path) -> Verdict {
    let r = |n, d| Rational64::new(n, d);
    let w = beta_window(r(1, 2), r(1, 4)).map_err(|e| e.to_string())?;
    if w != (r(5, 3), r(2, 1)) {
        return Err(format!("beta_window(1/2, 1/4) = {w:?}"));
    }
    for a in 1..20 {
        for g in 0..40 {
            let (alpha, gamma) = (r(a, 20), r(g, 20));
            let empty = beta_window(alpha, gamma).is_err();
            if empty != (gamma >= alpha) {
                return Err(format!("window emptiness wrong at alpha={alpha}, gamma={gamma}"));
            }
        }
    }
    for (t, beta) in [(1.0, 1.8), (0.25, 1.7), (0.5, 0.9), (3.0, 1.5)] {
        let threshold = f64::min(t, 1.0).powf(-1.0 / beta);
        for theta in [threshold, -threshold, 0.5 * threshold, 0.0] {
            if delta_schedule(theta, beta, t).is_ok() {
                return Err(format!("delta_schedule accepted theta={theta} (t={t}, beta={beta})"));
            }
        }
        let above = threshold * (1.0 + 1e-9);
        let d = delta_schedule(above, beta, t).map_err(|e| e.to_string())?;
        if !(d > 0.0 && d < f64::min(t, 1.0)) {
            return Err(format!("delta {d} outside (0, t^1) just above the threshold"));
        }
    }
    Ok(vec!["(5/3, 2) exact; emptiness iff gamma >= alpha on a 19 x 40 rational grid; thresholds rejected".into()])
}

fn reproducibility(dir: &Path) -> Verdict {
    let mut notes = Vec::new();
    let cases = [
        ("e1", "gaussian", 20_000, 1, ""),
        ("e3", "holder05", 5_000, 100, "deltas = [0.01, 0.04]"),
        ("e6", "rough05", 2_000, 100, "window_steps = 32\ndeltas = [0.0625, 0.03125, 0.015625]"),
    ];
    for (kind, scenario, n_paths, n_steps, extra) in cases {
        let base = dir.join(format!("{kind}-w1"));
        let first = with_workers(1, || run(&config(kind, scenario, 11, n_paths, n_steps, extra), &mut Registry::default(), Some(&base)))
            .map_err(|e| e.to_string())?
            .map_err(|e| e.to_string())?;
        let csvs: Vec<String> = first
            .manifest
            .outputs
            .iter()
            .map(|o| o.file.clone())
            .filter(|f| f.ends_with(".csv"))
            .collect();
        if csvs.is_empty() {
            return Err(format!("{kind}: no CSV outputs"));
        }
        for workers in [4, 16] {
            let out = dir.join(format!("{kind}-w{workers}"));
            let r = with_workers(workers, || rerun(&base.join("manifest.json"), Some(&out)))
                .map_err(|e| e.to_string())?
                .map_err(|e| e.to_string())?;
            if r.run.manifest.workers != workers {
                return Err(format!("{kind}: rerun used {} workers, wanted {workers}", r.run.manifest.workers));
            }
            for f in &csvs {
                let a = std::fs::read(base.join(f)).map_err(|e| e.to_string())?;
                let b = std::fs::read(out.join(f)).map_err(|e| e.to_string())?;
                if a != b {
                    return Err(format!("{kind}/{f} differs between 1 and {workers} workers"));
                }
            }
            if !r.mismatches.is_empty() {
                return Err(format!("{kind}: digest mismatches at {workers} workers: {:?}", r.mismatches));
            }
        }
        notes.push(format!("{kind}/{scenario}: {} identical across 1, 4, 16 workers", csvs.join(", ")));
    }
    Ok(notes)
}

fn main() -> ExitCode {
    let criteria = [
        Criterion { id: 1, name: "mollifier sandwich and derivatives", budget: Duration::from_secs(1), body: mollifier },
        Criterion { id: 2, name: "gaussian pipeline (cf and inverted density)", budget: Duration::from_secs(120), body: gaussian_pipeline },
        Criterion { id: 3, name: "OU variance and density sup error", budget: Duration::from_secs(120), body: ou_oracle },
        Criterion { id: 4, name: "weight moment bounds on every scenario", budget: Duration::from_secs(60), body: moment_bounds },
        Criterion { id: 5, name: "integration by parts and Hermite weights", budget: Duration::from_secs(60), body: ibp },
        Criterion { id: 6, name: "weight norm scaling in delta", budget: Duration::from_secs(120), body: weight_scaling },
        Criterion { id: 7, name: "approximation rate moves with alpha", budget: Duration::from_secs(300), body: approximation_rate },
        Criterion { id: 8, name: "event decomposition and sup-increment oracle", budget: Duration::from_secs(120), body: events },
        Criterion { id: 9, name: "beta window arithmetic", budget: Duration::from_secs(1), body: beta_arithmetic },
        Criterion { id: 10, name: "byte-identical CSVs across worker counts", budget: Duration::from_secs(60), body: reproducibility },
    ];
    let tmp = tempfile::tempdir().expect("temp dir");
    let mut failed = 0;
    for c in &criteria {
        let dir = tmp.path().join(format!("c{}", c.id));
        std::fs::create_dir_all(&dir).expect("criterion dir");
        let started = Instant::now();
        let verdict = (c.body)(&dir);
        let took = started.elapsed();
        let in_time = took <= c.budget;
        let ok = verdict.is_ok() && in_time;
        failed += !ok as usize;
        println!(
            "{} criterion {:>2}: {} ({:.2}s of {}s)",
            if ok { "PASS" } else { "FAIL" },
            c.id,
            c.name,
            took.as_secs_f64(),
            c.budget.as_secs()
        );
        match verdict {
            Ok(notes) => notes.iter().for_each(|n| println!("      {n}")),
            Err(why) => println!("      {why}"),
        }
        if !in_time {
            println!("      over the runtime budget");
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
