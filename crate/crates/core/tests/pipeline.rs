use holderlab_core::charfn::{localization_mass, localized_charfn, localized_charfn_uniform};
use holderlab_core::coeffs::{build_truncated, CoefficientSpec, Expr};
use holderlab_core::density::{gaussian_density, levy_invert, linspace, local_density, TailModel};
use holderlab_core::girsanov::{reweighted_expectation, simulate_weighted};
use holderlab_core::mollifier::Mollifier;
use holderlab_core::rng::NoiseSource;
use holderlab_core::sde::{simulate_euler, Record, SimGrid};

fn spec<T: holderlab_core::Real>(b: Expr) -> CoefficientSpec<T> {
    CoefficientSpec {
        sigma: Expr::constant(1.0),
        b,
        x0: T::lit(0.0),
        y0: T::lit(0.3),
        eps: T::lit(0.5),
        sigma0: T::lit(0.5),
        alpha: T::lit(0.5),
        holder_const: T::lit(1.0),
        horizon: T::lit(1.0),
        t: T::lit(1.0),
        sigma_bound: None,
        b_bound: None,
    }
}

#[test]
fn brownian_density_survives_simulation_localization_and_inversion() {
    let s = spec::<f64>(Expr::constant(0.0));
    let grid = SimGrid::new(0.0, 1.0, 1).unwrap();
    let xs = simulate_euler(&s, grid, 200_000, 17, Record::Terminal).unwrap().terminals();
    let phi = Mollifier::new(s.eps).unwrap();
    let table = localized_charfn_uniform(&xs, None, 40.0 / 1024.0, 1024, &phi, s.y0, s.t).unwrap();
    let m0 = table.m0().unwrap();
    let pts = linspace(s.y0 - s.eps, s.y0 + s.eps, 21);
    let inv = levy_invert(&table.scaled(1.0 / m0), &pts, 40.0, TailModel::None).unwrap();
    let p = local_density(m0, &inv, s.eps, s.y0).unwrap();
    for (x, v) in p.xs.iter().zip(&p.values) {
        let want = gaussian_density(*x, 0.0, 1.0);
        assert!((v - want).abs() < 0.02, "x={x}: {v} vs {want}");
    }
}

#[test]
fn zero_drift_weights_leave_expectations_unchanged() {
    let tc = build_truncated(spec::<f64>(Expr::constant(0.0)), 401).unwrap();
    let grid = SimGrid::new(0.9, 1.0, 16).unwrap();
    let w = simulate_weighted(&tc, &[0.3], grid, 2_000, NoiseSource::new(5)).unwrap();
    assert!(w.weights.z.iter().all(|&z| z == 1.0));
    let phi = Mollifier::new(0.5).unwrap();
    let vals: Vec<f64> = w.x_t.iter().map(|&x| phi.eval(x - 0.3)).collect();
    let plain = localization_mass(&w.x_t, None, &phi, 0.3).unwrap();
    let weighted = reweighted_expectation(&vals, &w.weights).unwrap();
    assert!((plain.mean - weighted.mean).abs() < 1e-12);
}

#[test]
fn results_do_not_depend_on_the_thread_count() {
    let s = spec::<f64>(Expr::linear(0.2, -0.5));
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let grid = SimGrid::new(0.0, 1.0, 50).unwrap();
            let xs = simulate_euler(&s, grid, 5_003, 9, Record::Terminal).unwrap().terminals();
            let phi = Mollifier::new(s.eps).unwrap();
            let t = localized_charfn(&xs, None, &[0.0, 0.5, 3.0, 11.0], &phi, s.y0, s.t).unwrap();
            (xs, t.re, t.im, t.se)
        })
    };
    let one = run(1);
    for threads in [2, 5] {
        assert_eq!(run(threads), one, "{threads} threads");
    }
}

#[test]
fn single_precision_tracks_double_precision() {
    let grid64 = SimGrid::new(0.0, 1.0, 20).unwrap();
    let grid32 = SimGrid::<f32>::new(0.0, 1.0, 20).unwrap();
    let b = Expr::linear(0.1, -1.0);
    let x64 = simulate_euler(&spec::<f64>(b.clone()), grid64, 500, 3, Record::Terminal).unwrap().terminals();
    let x32 = simulate_euler(&spec::<f32>(b), grid32, 500, 3, Record::Terminal).unwrap().terminals();
    for (a, b) in x64.iter().zip(&x32) {
        assert!((a - *b as f64).abs() < 1e-4, "{a} vs {b}");
    }
    let phi = Mollifier::<f32>::new(0.5).unwrap();
    assert_eq!(phi.eval(0.2), 1.0);
    assert_eq!(phi.eval(1.0), 0.0);
}
