//! Change of measure on the localization window: the exponential weight `Z`,
//! its moment bound, reweighted expectations and the constant `C_α`.
//!
//! Sign convention: under `P` the localized path is driftless,
//! `dX̄ = σ̄(X̄) dW`, and `Z = exp(∫ψ dW − ½∫ψ² du)` with `ψ = σ̄⁻¹b̄`, so that
//! `dQ = Z dP` restores the drift (`dB = dW − ψ du`).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coeffs::TruncatedCoeffs;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::NoiseSource;
use crate::sde::{PathEnsemble, SimGrid};
use crate::stats::{bootstrap_mean_ci, mean_se, MeanSe};

/// `|log Z|` beyond this is refused.
pub const LOG_GUARD: f64 = 700.0;

/// Weight along one path in both forms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathWeight<T> {
    /// `exp(Σψ ΔW − ½ Σψ² Δu)`, left-point rule.
    pub z: T,
    pub log_z: T,
    /// Euler solution of `dZ = Z ψ dW`, `Z = 1` at the window start.
    pub z_sde: T,
}

/// Weight of one driftless path `xbar` (`m + 1` nodes) driven by `incs`.
pub fn girsanov_weight<T: Real>(tc: &TruncatedCoeffs<T>, xbar: &[T], incs: &[T], dt: T) -> Result<PathWeight<T>> {
    if xbar.len() != incs.len() + 1 {
        return Err(Error::InvalidParams(format!(
            "path has {} nodes but {} increments",
            xbar.len(),
            incs.len()
        )));
    }
    let mut log_z = T::zero();
    let mut z_sde = T::one();
    let half = T::lit(0.5);
    for (x, &dw) in xbar.iter().zip(incs) {
        let psi = tc.psi(*x);
        log_z += psi * dw - half * psi * psi * dt;
        z_sde *= T::one() + psi * dw;
    }
    guard(log_z, tc, dt * T::from_count(incs.len()))?;
    Ok(PathWeight { z: log_z.exp(), log_z, z_sde })
}

fn guard<T: Real>(log_z: T, tc: &TruncatedCoeffs<T>, delta: T) -> Result<()> {
    if !(log_z.abs() <= T::lit(LOG_GUARD)) {
        return Err(Error::OverflowGuard {
            log_z: log_z.as_f64(),
            psi_sup: tc.sup_psi.as_f64(),
            delta: delta.as_f64(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GirsanovWeights<T = f64> {
    pub z: Vec<T>,
    pub log_z: Vec<T>,
    pub z_sde: Vec<T>,
    pub delta: T,
    pub psi_sup: T,
}

impl<T: Real> GirsanovWeights<T> {
    pub fn mean(&self) -> MeanSe<T> {
        mean_se(&self.z)
    }

    /// Root mean square of the relative gap between the two forms.
    pub fn form_gap_rms(&self) -> T {
        let sq: Vec<T> = self
            .z
            .iter()
            .zip(&self.z_sde)
            .map(|(&a, &b)| ((a - b) / a).powi(2))
            .collect();
        mean_se(&sq).mean.sqrt()
    }
}

/// Weights for a fully recorded driftless ensemble (as simulated with
/// [`crate::sde::Driftless`]).
pub fn weights_for<T: Real>(ens: &PathEnsemble<T>, tc: &TruncatedCoeffs<T>) -> Result<GirsanovWeights<T>> {
    let m = ens.grid.n_steps;
    if ens.stride != m + 1 || ens.inc_stride < m {
        return Err(Error::InvalidParams("weights need a fully recorded ensemble".into()));
    }
    let dt = ens.grid.dt();
    let rows: Vec<Result<PathWeight<T>>> = (0..ens.n_paths)
        .into_par_iter()
        .map(|p| girsanov_weight(tc, ens.path(p), &ens.path_increments(p)[..m], dt))
        .collect();
    collect_weights(rows, ens.grid.t_end - ens.grid.t_start, tc.sup_psi)
}

fn collect_weights<T: Real>(rows: Vec<Result<PathWeight<T>>>, delta: T, psi_sup: T) -> Result<GirsanovWeights<T>> {
    let mut w = GirsanovWeights {
        z: Vec::with_capacity(rows.len()),
        log_z: Vec::with_capacity(rows.len()),
        z_sde: Vec::with_capacity(rows.len()),
        delta,
        psi_sup,
    };
    for r in rows {
        let r = r?;
        w.z.push(r.z);
        w.log_z.push(r.log_z);
        w.z_sde.push(r.z_sde);
    }
    Ok(w)
}

/// Terminal values and weights of driftless localized paths on `grid`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedWindow<T = f64> {
    pub x_t: Vec<T>,
    pub weights: GirsanovWeights<T>,
    /// Per path `Σ_k |ψ(X̄_k) Z_k − ψ(y)|² Δu`, with `y` the start value.
    pub gap: Vec<T>,
}

/// Simulates the driftless localized equation under `P` from per-path starts
/// (one value is broadcast) and accumulates the weights on the fly.
pub fn simulate_weighted<T: Real>(
    tc: &TruncatedCoeffs<T>,
    starts: &[T],
    grid: SimGrid<T>,
    n_paths: usize,
    noise: NoiseSource,
) -> Result<WeightedWindow<T>> {
    if n_paths == 0 || starts.is_empty() || (starts.len() != 1 && starts.len() != n_paths) {
        return Err(Error::InvalidParams("need 1 or n_paths starting values".into()));
    }
    let dt = grid.dt();
    let m = grid.n_steps;
    let half = T::lit(0.5);
    let rows: Vec<Result<(T, PathWeight<T>, T)>> = (0..n_paths)
        .into_par_iter()
        .map_init(
            || vec![T::zero(); m],
            |buf, p| {
                noise.path(p).fill_increments(buf, dt);
                let y = if starts.len() == 1 { starts[0] } else { starts[p] };
                let psi_y = tc.psi(y);
                let mut x = y;
                let mut log_z = T::zero();
                let mut z_sde = T::one();
                let mut gap = T::zero();
                for (k, &dw) in buf.iter().enumerate() {
                    let (s, b) = tc.coefficients(x);
                    let psi = b / s;
                    let d = psi * log_z.exp() - psi_y;
                    gap += d * d * dt;
                    log_z += psi * dw - half * psi * psi * dt;
                    z_sde *= T::one() + psi * dw;
                    x = x + s * dw;
                    if !x.is_finite() {
                        return Err(Error::NanDivergence { path: p, step: k + 1 });
                    }
                }
                guard(log_z, tc, dt * T::from_count(m))?;
                Ok((x, PathWeight { z: log_z.exp(), log_z, z_sde }, gap))
            },
        )
        .collect();
    let mut x_t = Vec::with_capacity(n_paths);
    let mut gap = Vec::with_capacity(n_paths);
    let mut weights = Vec::with_capacity(n_paths);
    for r in rows {
        let (x, w, g) = r?;
        x_t.push(x);
        gap.push(g);
        weights.push(Ok(w));
    }
    Ok(WeightedWindow {
        x_t,
        weights: collect_weights(weights, grid.t_end - grid.t_start, tc.sup_psi)?,
        gap,
    })
}

/// `exp(p(p−1)/2 · δ · ‖ψ‖²)`.
pub fn lemma2_bound(p: f64, delta: f64, psi_sup: f64) -> f64 {
    (0.5 * p * (p - 1.0) * delta * psi_sup * psi_sup).exp()
}

/// Upper bound on `‖Z‖_{L^p}` implied by [`lemma2_bound`].
pub fn z_norm_bound(p: f64, delta: f64, psi_sup: f64) -> f64 {
    (0.5 * (p - 1.0) * delta * psi_sup * psi_sup).exp()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MomentCheck {
    pub p: f64,
    pub delta: f64,
    pub empirical: f64,
    pub se: f64,
    pub ci: (f64, f64),
    pub bound: f64,
    /// Upper CI at most `bound × 1.02`.
    pub pass: bool,
}

/// Empirical `E[Z^p]` with a 95% bootstrap interval against the moment bound.
pub fn moment_bound_check<T: Real>(w: &GirsanovWeights<T>, p: f64, n_boot: usize, seed: u64) -> MomentCheck {
    let zp: Vec<f64> = w.z.iter().map(|z| z.as_f64().powf(p)).collect();
    let m = mean_se(&zp);
    let ci = bootstrap_mean_ci(&zp, n_boot, seed, 0.95);
    let bound = lemma2_bound(p, w.delta.as_f64(), w.psi_sup.as_f64());
    MomentCheck {
        p,
        delta: w.delta.as_f64(),
        empirical: m.mean,
        se: m.se,
        ci,
        bound,
        pass: ci.1 <= bound * 1.02,
    }
}

/// `E_P[f · Z]` where `values[i]` already carries any event indicator.
pub fn reweighted_expectation<T: Real>(values: &[T], w: &GirsanovWeights<T>) -> Result<MeanSe<T>> {
    if values.len() != w.z.len() {
        return Err(Error::InvalidParams("values and weights differ in length".into()));
    }
    let prod: Vec<T> = values.iter().zip(&w.z).map(|(v, z)| *v * *z).collect();
    Ok(mean_se(&prod))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CAlpha {
    pub alpha: f64,
    pub delta: f64,
    /// Exponent `2/(1−α)` of the first norm.
    pub q: f64,
    pub z_norm_q: f64,
    pub z_norm_2: f64,
    /// `2/√(1+α) · H · ‖Z‖_q · ‖σ̄‖^α` with `H` the declared Hölder constant.
    pub holder_branch: f64,
    /// `‖ψ‖² · ‖Z‖_2`.
    pub drift_branch: f64,
    pub value: f64,
}

/// Plug-in upper bound for `C_α`, norms of `Z` bounded by the moment bound.
/// The paper normalizes the Hölder constant of `ψ` to 1; a declared constant
/// `H` enters the first branch linearly.
pub fn compute_c_alpha<T: Real>(tc: &TruncatedCoeffs<T>, delta: f64, alpha: f64) -> Result<CAlpha> {
    if !(alpha > 0.0 && alpha < 1.0) || !(delta > 0.0) {
        return Err(Error::InvalidParams(format!("need 0 < alpha < 1 and delta > 0, got {alpha}, {delta}")));
    }
    let psi = tc.sup_psi.as_f64();
    let q = 2.0 / (1.0 - alpha);
    let z_norm_q = z_norm_bound(q, delta, psi);
    let z_norm_2 = z_norm_bound(2.0, delta, psi);
    let h = tc.spec().holder_const.as_f64();
    let holder_branch = 2.0 / (1.0 + alpha).sqrt() * h * z_norm_q * tc.sup_sigma_bar.as_f64().powf(alpha);
    let drift_branch = psi * psi * z_norm_2;
    Ok(CAlpha {
        alpha,
        delta,
        q,
        z_norm_q,
        z_norm_2,
        holder_branch,
        drift_branch,
        value: holder_branch.max(drift_branch),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::{CoefficientSpec, Expr};
    use crate::sde::{simulate_euler_from, Driftless, Record};

    fn tc(sigma: Expr, b: Expr) -> TruncatedCoeffs<f64> {
        TruncatedCoeffs::unvalidated(CoefficientSpec {
            sigma,
            b,
            x0: 0.0,
            y0: 0.0,
            eps: 1.0,
            sigma0: 0.5,
            alpha: 0.5,
            holder_const: 1.0,
            horizon: 1.0,
            t: 1.0,
            sigma_bound: None,
            b_bound: None,
        })
        .unwrap()
    }

    fn const_drift(c: f64) -> TruncatedCoeffs<f64> {
        tc(Expr::constant(1.0), Expr::constant(c))
    }

    fn window(delta: f64, m: usize) -> SimGrid<f64> {
        SimGrid::new(1.0 - delta, 1.0, m).unwrap()
    }

    #[test]
    fn zero_drift_gives_unit_weights() {
        let t = const_drift(0.0);
        let w = simulate_weighted(&t, &[0.0], window(0.1, 16), 1000, NoiseSource::new(1)).unwrap();
        assert!(w.weights.z.iter().all(|&z| z == 1.0));
        assert!(w.weights.z_sde.iter().all(|&z| z == 1.0));
        let m = moment_bound_check(&w.weights, 2.0, 50, 1);
        assert_eq!((m.empirical, m.bound), (1.0, 1.0));
        assert!(m.pass);
    }

    #[test]
    fn constant_drift_second_moment_attains_the_bound() {
        let c = 1.0;
        let delta = 0.16;
        let t = const_drift(c);
        let w = simulate_weighted(&t, &[0.0], window(delta, 20), 200_000, NoiseSource::new(2)).unwrap();
        let m = moment_bound_check(&w.weights, 2.0, 100, 3);
        let exact = (c * c * delta).exp();
        assert!((m.bound - exact).abs() < 1e-12);
        assert!((m.empirical - exact).abs() <= 2.0 * m.se + 1e-3, "{m:?}");
        assert!(m.pass);
        let mz = w.weights.mean();
        assert!((mz.mean - 1.0).abs() <= 4.0 * mz.se);
    }

    #[test]
    fn weights_match_full_ensemble_route() {
        let t = tc(
            Expr::sum(vec![Expr::constant(2.0), Expr::Sin { amp: 1.0, freq: 1.0, phase: 0.0 }]),
            Expr::AbsPow { center: 0.0, power: 0.5, scale: 1.0 },
        );
        let g = window(0.05, 25);
        let noise = NoiseSource::new(5).with_lane(2);
        let ens = simulate_euler_from(&Driftless(&t), &[0.3], g, 500, noise, Record::Full).unwrap();
        let a = weights_for(&ens, &t).unwrap();
        let b = simulate_weighted(&t, &[0.3], g, 500, noise).unwrap();
        assert_eq!(a.z, b.weights.z);
        assert_eq!(ens.terminals(), b.x_t);
        assert!(a.z.iter().all(|&z| z > 0.0));
    }

    #[test]
    fn martingale_mean_across_window_lengths() {
        let t = tc(Expr::constant(1.0), Expr::Sin { amp: 1.5, freq: 2.0, phase: 0.3 });
        for (i, delta) in [0.01, 0.02, 0.04, 0.08, 0.16].into_iter().enumerate() {
            let w = simulate_weighted(&t, &[0.1], window(delta, 32), 50_000, NoiseSource::new(6).with_lane(i as u64))
                .unwrap();
            let m = w.weights.mean();
            assert!((m.mean - 1.0).abs() <= 4.0 * m.se, "delta={delta} {m:?}");
        }
    }

    #[test]
    fn non_constant_drift_stays_below_the_bound() {
        let t = tc(Expr::constant(1.0), Expr::AbsPow { center: 0.0, power: 0.5, scale: 1.0 });
        let w = simulate_weighted(&t, &[0.0], window(0.05, 50), 100_000, NoiseSource::new(7)).unwrap();
        for p in [2.0, 4.0] {
            let m = moment_bound_check(&w.weights, p, 100, 8);
            assert!(m.pass && m.empirical < m.bound, "{m:?}");
        }
    }

    #[test]
    fn reweighting_restores_the_drift() {
        let c = 0.7;
        let delta = 0.2;
        let t = const_drift(c);
        let w = simulate_weighted(&t, &[0.25], window(delta, 10), 200_000, NoiseSource::new(9)).unwrap();
        let est = reweighted_expectation(&w.x_t, &w.weights).unwrap();
        assert!((est.mean - (0.25 + c * delta)).abs() <= 4.0 * est.se, "{est:?}");
        let ones = vec![1.0; w.x_t.len()];
        let one = reweighted_expectation(&ones, &w.weights).unwrap();
        assert!((one.mean - 1.0).abs() <= 4.0 * one.se);
        assert!(reweighted_expectation(&ones[1..], &w.weights).is_err());
    }

    #[test]
    fn reweighted_and_direct_simulation_agree() {
        let t = tc(
            Expr::sum(vec![Expr::constant(2.0), Expr::Sin { amp: 1.0, freq: 1.0, phase: 0.0 }]),
            Expr::Weierstrass { amp: 0.8, alpha: 0.5, terms: 8, center: 0.0 },
        );
        let g = window(0.1, 40);
        let n = 100_000;
        let q = simulate_euler_from(&t, &[0.2], g, n, NoiseSource::new(10), Record::Terminal).unwrap();
        let direct = mean_se(&q.states_x.iter().map(|x| x.sin()).collect::<Vec<_>>());
        let w = simulate_weighted(&t, &[0.2], g, n, NoiseSource::new(11)).unwrap();
        let f: Vec<f64> = w.x_t.iter().map(|x| x.sin()).collect();
        let rw = reweighted_expectation(&f, &w.weights).unwrap();
        let tol = 4.0 * (direct.se.powi(2) + rw.se.powi(2)).sqrt();
        assert!((direct.mean - rw.mean).abs() <= tol);
    }

    #[test]
    fn exp_and_sde_forms_converge_under_refinement() {
        let t = tc(Expr::constant(1.0), Expr::Sin { amp: 1.0, freq: 1.0, phase: 0.5 });
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for m in [16usize, 32, 64, 128] {
            let w = simulate_weighted(&t, &[0.0], window(0.5, m), 20_000, NoiseSource::new(12)).unwrap();
            let gap = w.weights.form_gap_rms();
            xs.push((0.5 / m as f64).ln());
            ys.push((gap * gap).ln());
        }
        let fit = crate::stats::fit_line(&xs, &ys);
        assert!((fit.slope - 1.0).abs() < 0.15, "{fit:?}");
    }

    #[test]
    fn overflow_guard_trips_on_extreme_weights() {
        let t = const_drift(400.0);
        let r = simulate_weighted(&t, &[0.0], window(0.5, 10), 10, NoiseSource::new(1));
        assert!(matches!(r, Err(Error::OverflowGuard { .. })));
    }

    #[test]
    fn c_alpha_examples() {
        let zero = const_drift(0.0);
        let c = compute_c_alpha(&zero, 0.04, 0.5).unwrap();
        assert!((c.value - 2.0 / 1.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(c.drift_branch, 0.0);
        // growth as alpha approaches 1 is reported, not refused
        let near = compute_c_alpha(&const_drift(1.0), 0.04, 0.999).unwrap();
        assert!(near.value.is_finite() && near.value > compute_c_alpha(&const_drift(1.0), 0.04, 0.5).unwrap().value);
        assert!(compute_c_alpha(&zero, 0.04, 1.0).is_err());
    }

    #[test]
    fn c_alpha_dominates_monte_carlo_norms() {
        let t = tc(
            Expr::sum(vec![Expr::constant(2.0), Expr::Sin { amp: 1.0, freq: 1.0, phase: 0.0 }]),
            Expr::Sin { amp: 1.0, freq: 1.0, phase: 1.0 },
        );
        let delta = 0.04;
        let c = compute_c_alpha(&t, delta, 0.5).unwrap();
        let w = simulate_weighted(&t, &[0.0], window(delta, 40), 100_000, NoiseSource::new(13)).unwrap();
        let norm = |p: f64| mean_se(&w.weights.z.iter().map(|z| z.powf(p)).collect::<Vec<_>>()).mean.powf(1.0 / p);
        assert!(norm(c.q) <= c.z_norm_q * 1.001);
        assert!(norm(2.0) <= c.z_norm_2 * 1.001);
        let mc_holder = 2.0 / 1.5f64.sqrt() * norm(c.q) * t.sup_sigma_bar.sqrt();
        assert!(mc_holder <= c.holder_branch * 1.001);
    }
}
