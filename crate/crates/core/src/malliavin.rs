//! Discrete Malliavin calculus on the driftless localized Euler scheme.
//!
//! On a window of `m` steps of size `h` the Wiener functionals are smooth
//! functions of the increments `ΔW_0..ΔW_{m-1}`. The derivative is
//! `D_k F = ∂F/∂ΔW_k`, the inner product is `⟨u, v⟩ = h Σ u_k v_k`, and the
//! divergence `δ(u) = Σ u_k ΔW_k − h Σ ∂_k u_k` is its exact adjoint under the
//! Gaussian law of the increments. Integration-by-parts weights built from it
//! therefore satisfy `E[φ'(F)G] = E[φ(F)H₁]` without discretization bias.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coeffs::{Expr, TruncatedCoeffs};
use crate::error::{Error, Result};
use crate::mollifier::Mollifier;
use crate::real::Real;
use crate::rng::NoiseSource;
use crate::sde::{simulate_euler_from, Driftless, Record, SimGrid};
use crate::stats::{fit_line, mean_se, MeanSe};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Functional {
    /// `F = W_t − W_{t−δ}`.
    Increment,
    /// `F = X̄_t`.
    Terminal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Multiplier {
    One,
    /// `φ_ε(X̄_t − y0)`.
    Phi,
    /// `φ_ε(X̄_t − y0)(W_t − W_{t−δ})`.
    PhiIncrement,
}

/// Test functions for the integration-by-parts identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFn {
    Sin { theta: f64 },
    Poly { coeffs: Vec<f64> },
    Bump { eps: f64, center: f64 },
}

impl TestFn {
    /// `x ↦ [φ, φ', φ'']`.
    pub fn jet_fn(&self) -> Result<Box<dyn Fn(f64) -> [f64; 3] + Send + Sync>> {
        Ok(match self.clone() {
            TestFn::Sin { theta } => Box::new(move |x: f64| {
                let (s, c) = (theta * x).sin_cos();
                [s, theta * c, -theta * theta * s]
            }),
            TestFn::Poly { coeffs } => {
                let e = Expr::Poly { coeffs };
                Box::new(move |x| e.jet(x))
            }
            TestFn::Bump { eps, center } => {
                let phi = Mollifier::new(eps)?;
                Box::new(move |x| {
                    let (p, d1, d2) = phi.jet(x - center);
                    [p, d1, d2]
                })
            }
        })
    }
}

/// Driftless localized paths on one window, with their increments.
#[derive(Debug, Clone)]
pub struct WindowSample<T = f64> {
    pub h: T,
    pub m: usize,
    pub n_paths: usize,
    pub start: T,
    /// `n_paths × (m + 1)` states.
    pub xbar: Vec<T>,
    /// `n_paths × m` increments.
    pub incs: Vec<T>,
}

impl<T: Real> WindowSample<T> {
    pub fn delta(&self) -> T {
        self.h * T::from_count(self.m)
    }

    pub fn path(&self, p: usize) -> (&[T], &[T]) {
        (
            &self.xbar[p * (self.m + 1)..(p + 1) * (self.m + 1)],
            &self.incs[p * self.m..(p + 1) * self.m],
        )
    }
}

/// `dX̄ = σ̄(X̄) dW` over a window of length `delta` in `m` steps from `start`.
pub fn simulate_driftless<T: Real>(
    tc: &TruncatedCoeffs<T>,
    start: T,
    delta: T,
    m: usize,
    n_paths: usize,
    noise: NoiseSource,
) -> Result<WindowSample<T>> {
    let grid = SimGrid::new(T::zero(), delta, m)?;
    let ens = simulate_euler_from(&Driftless(tc), &[start], grid, n_paths, noise, Record::Full)?;
    Ok(WindowSample {
        h: grid.dt(),
        m,
        n_paths,
        start,
        xbar: ens.states_x,
        incs: ens.increments,
    })
}

/// `D_k F` for every path and the covariance `M_F = h Σ_k (D_k F)²`.
#[derive(Debug, Clone)]
pub struct DerivativeTable<T = f64> {
    pub functional: Functional,
    pub h: T,
    pub m: usize,
    pub n_paths: usize,
    pub d: Vec<T>,
    pub m_f: Vec<T>,
}

impl<T: Real> DerivativeTable<T> {
    pub fn row(&self, p: usize) -> &[T] {
        &self.d[p * self.m..(p + 1) * self.m]
    }
}

/// Derivatives of one driftless path.
#[derive(Debug, Clone, Copy)]
struct Jets<T> {
    /// `W_t − W_{t−δ}`.
    w: T,
    x: T,
    /// First and second derivatives of `X̄_t` along the direction `(1, …, 1)`.
    v1: T,
    u11: T,
    /// `Σ D_k X̄_t ΔW_k`, `Σ_k ∂_k D_k X̄_t` and the second derivative of `X̄_t`
    /// along its own gradient `D X̄_t`.
    d_dw: T,
    trace: T,
    u_dd: T,
    m_f: T,
}

/// Forward and backward sweeps over one path. With `s_k = σ̄(X̄_k)` and
/// `P_k = Π_{j≥k}(1 + s'_j ΔW_j)`: `D_k X̄_t = s_k P_{k+1}`, and the diagonal
/// second derivatives are `s_k² B_k` with
/// `B_{k−1} = s''_k ΔW_k P_{k+1} + (1 + s'_k ΔW_k)² B_k`.
fn path_jets<T: Real>(tc: &TruncatedCoeffs<T>, xs: &[T], dws: &[T], h: T, d_out: &mut [T]) -> Jets<T> {
    let m = dws.len();
    let jet: Vec<[T; 3]> = xs[..m].iter().map(|&x| tc.sigma_bar_jet(x)).collect();
    let two = T::lit(2.0);

    let mut p = T::one();
    let mut b = T::zero();
    let mut trace = T::zero();
    for k in (0..m).rev() {
        let [s, _, _] = jet[k];
        d_out[k] = s * p;
        trace += s * s * b;
        let [_, s1, s2] = jet[k];
        let f = T::one() + s1 * dws[k];
        b = s2 * dws[k] * p + f * f * b;
        p *= f;
    }

    let (mut v1, mut u11, mut vd, mut ud) = (T::zero(), T::zero(), T::zero(), T::zero());
    let mut w = T::zero();
    let mut d_dw = T::zero();
    let mut m_f = T::zero();
    for k in 0..m {
        let [s, s1, s2] = jet[k];
        let dw = dws[k];
        let a = d_out[k];
        w += dw;
        d_dw += a * dw;
        m_f += a * a;
        u11 = u11 + s2 * v1 * v1 * dw + s1 * u11 * dw + two * s1 * v1;
        v1 = v1 + s1 * v1 * dw + s;
        ud = ud + s2 * vd * vd * dw + s1 * ud * dw + two * s1 * vd * a;
        vd = vd + s1 * vd * dw + s * a;
    }
    Jets {
        w,
        x: xs[m],
        v1,
        u11,
        d_dw,
        trace,
        u_dd: ud,
        m_f: m_f * h,
    }
}

/// Discrete first variation: `D_k X̄_t = σ̄(X̄_k) Π_{j>k}(1 + σ̄'(X̄_j)ΔW_j)`,
/// or `D_k F = 1` for the increment functional.
pub fn first_variation<T: Real>(ws: &WindowSample<T>, tc: &TruncatedCoeffs<T>, functional: Functional) -> Result<DerivativeTable<T>> {
    let m = ws.m;
    let mut d = vec![T::zero(); ws.n_paths * m];
    d.par_chunks_mut(m).enumerate().for_each(|(p, row)| match functional {
        Functional::Increment => row.fill(T::one()),
        Functional::Terminal => {
            let (xs, dws) = ws.path(p);
            path_jets(tc, xs, dws, ws.h, row);
        }
    });
    if let Some(p) = d.iter().position(|v| !v.is_finite()) {
        return Err(Error::NanDivergence { path: p / m, step: p % m });
    }
    let mut table = DerivativeTable {
        functional,
        h: ws.h,
        m,
        n_paths: ws.n_paths,
        d,
        m_f: Vec::new(),
    };
    table.m_f = malliavin_covariance(&table)?;
    Ok(table)
}

/// `M_F = h Σ_k (D_k F)²` per path; fails on a non-positive value.
pub fn malliavin_covariance<T: Real>(table: &DerivativeTable<T>) -> Result<Vec<T>> {
    let m_f: Vec<T> = (0..table.n_paths)
        .map(|p| table.row(p).iter().map(|&v| v * v).sum::<T>() * table.h)
        .collect();
    match m_f.iter().position(|&v| !(v > T::zero())) {
        Some(path) => Err(Error::DegenerateCovariance { path }),
        None => Ok(m_f),
    }
}

/// `δ(u) = Σ u_k ΔW_k − h Σ ∂_k u_k`. For adapted `u` the correction vanishes
/// and this is the Itô sum.
pub fn skorokhod_divergence<T: Real>(u: &[T], diag_deriv: &[T], incs: &[T], h: T) -> T {
    let ito: T = u.iter().zip(incs).map(|(&a, &b)| a * b).sum();
    ito - h * diag_deriv.iter().copied().sum::<T>()
}

fn sigma_constant<T: Real>(tc: &TruncatedCoeffs<T>) -> Option<T> {
    match tc.spec().sigma {
        Expr::Const { value } => Some(T::lit(value)),
        _ => None,
    }
}

/// Checks that `(functional, multiplier, order)` is one of the supported pairs.
pub fn check_pair<T: Real>(tc: &TruncatedCoeffs<T>, functional: Functional, g: Multiplier, order: u8) -> Result<()> {
    if !(1..=2).contains(&order) {
        return Err(Error::UnsupportedOrder(order));
    }
    match (functional, sigma_constant(tc)) {
        (Functional::Increment, _) | (Functional::Terminal, Some(_)) => Ok(()),
        (Functional::Terminal, None) if g == Multiplier::One && order == 1 => Ok(()),
        _ => Err(Error::UnsupportedPair(format!(
            "{functional:?} with {g:?} at order {order} needs a constant diffusion coefficient"
        ))),
    }
}

/// Weight and functional value for one path.
fn path_weight<T: Real>(
    tc: &TruncatedCoeffs<T>,
    phi: &Mollifier<T>,
    xs: &[T],
    dws: &[T],
    h: T,
    functional: Functional,
    g: Multiplier,
    order: u8,
    buf: &mut [T],
) -> (T, T, T, T) {
    let j = path_jets(tc, xs, dws, h, buf);
    let m = T::from_count(dws.len());
    let delta = h * m;
    let y0 = tc.spec().y0;
    let (p0, p1, p2) = phi.jet(j.x - y0);
    // G together with its first and second derivatives along (1, …, 1).
    let (gv, g1, g11) = match g {
        Multiplier::One => (T::one(), T::zero(), T::zero()),
        Multiplier::Phi => (p0, p1 * j.v1, p2 * j.v1 * j.v1 + p1 * j.u11),
        Multiplier::PhiIncrement => (
            p0 * j.w,
            p1 * j.v1 * j.w + p0 * m,
            (p2 * j.v1 * j.v1 + p1 * j.u11) * j.w + T::lit(2.0) * p1 * j.v1 * m,
        ),
    };
    let f = match functional {
        Functional::Increment => j.w,
        Functional::Terminal => j.x,
    };
    let scale = match (functional, sigma_constant(tc)) {
        (Functional::Increment, _) => Some(T::one()),
        (Functional::Terminal, s) => s,
    };
    let (h1, h_n) = match scale {
        Some(sig) => {
            // D_k F = σ on every step: H₁ = (G W − h Σ∂_k G)/(σδ)
            let sd = sig * delta;
            let h1 = (gv * j.w - h * g1) / sd;
            let d1h1 = (g1 * j.w + gv * m - h * g11) / sd;
            let h2 = (h1 * j.w - h * d1h1) / sd;
            (h1, if order == 1 { h1 } else { h2 })
        }
        None => {
            let mf = j.m_f;
            let h1 = (j.d_dw - h * j.trace) / mf + T::lit(2.0) * h * h * j.u_dd / (mf * mf);
            (h1, h1)
        }
    };
    (f, gv, h1, h_n)
}

/// Per-path `(F, G, H₁, H_order)` for a supported pair.
pub fn ibp_weight<T: Real>(
    ws: &WindowSample<T>,
    tc: &TruncatedCoeffs<T>,
    functional: Functional,
    g: Multiplier,
    order: u8,
) -> Result<Vec<(T, T, T, T)>> {
    check_pair(tc, functional, g, order)?;
    let phi = Mollifier::new(tc.spec().eps)?;
    let rows: Vec<(T, T, T, T)> = (0..ws.n_paths)
        .into_par_iter()
        .map_init(
            || vec![T::zero(); ws.m],
            |buf, p| {
                let (xs, dws) = ws.path(p);
                path_weight(tc, &phi, xs, dws, ws.h, functional, g, order, buf)
            },
        )
        .collect();
    if let Some(p) = rows.iter().position(|r| !r.3.is_finite()) {
        return Err(Error::NanDivergence { path: p, step: ws.m });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IbpReport {
    pub functional: Functional,
    pub multiplier: Multiplier,
    pub order: u8,
    pub test_fn: TestFn,
    pub lhs: MeanSe<f64>,
    pub rhs: MeanSe<f64>,
    pub combined_se: f64,
    pub tolerance: f64,
    pub h1_l2_norm: f64,
    pub delta: f64,
    pub n_steps: usize,
    pub n_paths: usize,
    pub pass: bool,
}

/// Monte Carlo check of `E[φ^{(n)}(F) G] = E[φ(F) H_n]` within four combined SEs.
pub fn verify_ibp<T: Real>(
    ws: &WindowSample<T>,
    tc: &TruncatedCoeffs<T>,
    functional: Functional,
    g: Multiplier,
    order: u8,
    test_fn: &TestFn,
) -> Result<IbpReport> {
    let rows = ibp_weight(ws, tc, functional, g, order)?;
    let mut lhs = Vec::with_capacity(rows.len());
    let mut rhs = Vec::with_capacity(rows.len());
    let mut h1sq = Vec::with_capacity(rows.len());
    let jet_of = test_fn.jet_fn()?;
    for &(f, gv, h1, hn) in &rows {
        let jet = jet_of(f.as_f64());
        lhs.push(jet[order as usize] * gv.as_f64());
        rhs.push(jet[0] * hn.as_f64());
        h1sq.push(h1.as_f64().powi(2));
    }
    let l = mean_se(&lhs);
    let r = mean_se(&rhs);
    let combined_se = (l.se * l.se + r.se * r.se).sqrt();
    let tolerance = 4.0 * combined_se;
    Ok(IbpReport {
        functional,
        multiplier: g,
        order,
        test_fn: test_fn.clone(),
        pass: (l.mean - r.mean).abs() <= tolerance && l.mean.is_finite() && r.mean.is_finite(),
        lhs: l,
        rhs: r,
        combined_se,
        tolerance,
        h1_l2_norm: mean_se(&h1sq).mean.sqrt(),
        delta: ws.delta().as_f64(),
        n_steps: ws.m,
        n_paths: ws.n_paths,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingRow {
    pub delta: f64,
    pub l2_norm: f64,
    pub se: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingReport {
    pub functional: Functional,
    pub order: u8,
    pub rows: Vec<ScalingRow>,
    pub slope: f64,
    pub slope_ci: (f64, f64),
    pub expected: f64,
}

impl ScalingReport {
    pub fn within(&self, tol: f64) -> bool {
        (self.slope - self.expected).abs() <= tol
    }
}

/// Log-log regression of `‖H_{n₂}‖_{L²}` against `δ` with `G = 1`; the
/// prediction is slope `−n₂/2`. Each window uses `m` steps from `start`.
pub fn weight_norm_scaling<T: Real>(
    tc: &TruncatedCoeffs<T>,
    functional: Functional,
    start: T,
    deltas: &[f64],
    order: u8,
    m: usize,
    n_paths: usize,
    noise: NoiseSource,
) -> Result<ScalingReport> {
    let (lo, hi) = deltas
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &d| (a.min(d), b.max(d)));
    if deltas.len() < 4 || !(lo > 0.0) || (hi / lo).log10() < 1.5 {
        return Err(Error::InsufficientRange(format!(
            "need at least 4 window lengths spanning 1.5 decades, got {} over [{lo}, {hi}]",
            deltas.len()
        )));
    }
    check_pair(tc, functional, Multiplier::One, order)?;
    let mut rows = Vec::with_capacity(deltas.len());
    for (i, &delta) in deltas.iter().enumerate() {
        let ws = simulate_driftless(tc, start, T::lit(delta), m, n_paths, noise.with_lane(noise.lane + i as u64))?;
        let w = ibp_weight(&ws, tc, functional, Multiplier::One, order)?;
        let sq: Vec<f64> = w.iter().map(|r| r.3.as_f64().powi(2)).collect();
        let ms = mean_se(&sq);
        let norm = ms.mean.sqrt();
        rows.push(ScalingRow {
            delta,
            l2_norm: norm,
            se: ms.se / (2.0 * norm),
        });
    }
    let lx: Vec<f64> = rows.iter().map(|r| r.delta.ln()).collect();
    let ly: Vec<f64> = rows.iter().map(|r| r.l2_norm.ln()).collect();
    let fit = fit_line(&lx, &ly);
    Ok(ScalingReport {
        functional,
        order,
        rows,
        slope: fit.slope,
        slope_ci: fit.slope_interval(1.96),
        expected: -(order as f64) / 2.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::CoefficientSpec;

    fn tc(sigma: Expr) -> TruncatedCoeffs<f64> {
        TruncatedCoeffs::unvalidated(CoefficientSpec {
            sigma,
            b: Expr::constant(0.0),
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

    fn two_plus_sin() -> Expr {
        Expr::sum(vec![Expr::constant(2.0), Expr::Sin { amp: 1.0, freq: 1.0, phase: 0.0 }])
    }

    /// X̄_t as a function of the increments, for finite differences.
    fn terminal(tc: &TruncatedCoeffs<f64>, x0: f64, dws: &[f64]) -> f64 {
        dws.iter().fold(x0, |x, &dw| x + tc.sigma_bar(x) * dw)
    }

    #[test]
    fn constant_sigma_derivative_is_flat() {
        let t = tc(Expr::constant(1.7));
        let ws = simulate_driftless(&t, 0.2, 0.1, 20, 50, NoiseSource::new(1)).unwrap();
        let d = first_variation(&ws, &t, Functional::Terminal).unwrap();
        assert!(d.d.iter().all(|&v| v == 1.7));
        for &m in &d.m_f {
            assert!((m - 1.7 * 1.7 * 0.1).abs() < 1e-14);
        }
        let inc = first_variation(&ws, &t, Functional::Increment).unwrap();
        assert!(inc.m_f.iter().all(|&m| (m - 0.1).abs() < 1e-15));
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let t = tc(two_plus_sin());
        let ws = simulate_driftless(&t, 0.3, 0.2, 8, 3, NoiseSource::new(2)).unwrap();
        let d = first_variation(&ws, &t, Functional::Terminal).unwrap();
        for p in 0..3 {
            let (xs, dws) = ws.path(p);
            for k in 0..8 {
                let e = 1e-6;
                let mut a = dws.to_vec();
                let mut b = dws.to_vec();
                a[k] += e;
                b[k] -= e;
                let fd = (terminal(&t, xs[0], &a) - terminal(&t, xs[0], &b)) / (2.0 * e);
                assert!((fd - d.row(p)[k]).abs() < 1e-8, "{fd} vs {}", d.row(p)[k]);
            }
        }
    }

    #[test]
    fn general_weight_matches_brute_force_divergence() {
        let t = tc(two_plus_sin());
        let m = 6;
        let ws = simulate_driftless(&t, 0.3, 0.3, m, 4, NoiseSource::new(3)).unwrap();
        let w = ibp_weight(&ws, &t, Functional::Terminal, Multiplier::One, 1).unwrap();
        let h = ws.h;
        for p in 0..4 {
            let (xs, dws) = ws.path(p);
            let x0 = xs[0];
            let e = 1e-5;
            let grad = |v: &[f64]| -> Vec<f64> {
                (0..m)
                    .map(|k| {
                        let mut a = v.to_vec();
                        let mut b = v.to_vec();
                        a[k] += e;
                        b[k] -= e;
                        (terminal(&t, x0, &a) - terminal(&t, x0, &b)) / (2.0 * e)
                    })
                    .collect()
            };
            let u = |v: &[f64]| -> Vec<f64> {
                let g = grad(v);
                let mf: f64 = g.iter().map(|x| x * x).sum::<f64>() * h;
                g.iter().map(|x| x / mf).collect()
            };
            let u0 = u(dws);
            let e2 = 1e-4;
            let diag: Vec<f64> = (0..m)
                .map(|k| {
                    let mut a = dws.to_vec();
                    let mut b = dws.to_vec();
                    a[k] += e2;
                    b[k] -= e2;
                    (u(&a)[k] - u(&b)[k]) / (2.0 * e2)
                })
                .collect();
            let brute = skorokhod_divergence(&u0, &diag, dws, h);
            assert!((brute - w[p].2).abs() < 1e-4 * brute.abs().max(1.0), "{brute} vs {}", w[p].2);
        }
    }

    #[test]
    fn hermite_weights_are_exact_pathwise() {
        let t = tc(two_plus_sin());
        let ws = simulate_driftless(&t, 0.0, 0.05, 16, 200, NoiseSource::new(4)).unwrap();
        let d = ws.delta();
        let h1 = ibp_weight(&ws, &t, Functional::Increment, Multiplier::One, 1).unwrap();
        let h2 = ibp_weight(&ws, &t, Functional::Increment, Multiplier::One, 2).unwrap();
        for p in 0..ws.n_paths {
            let f = h1[p].0;
            assert!((h1[p].3 - f / d).abs() <= 1e-12 * (f / d).abs().max(1.0));
            let want = (f * f - d) / (d * d);
            assert!((h2[p].3 - want).abs() <= 1e-12 * want.abs().max(1.0));
        }
        let c = tc(Expr::constant(1.5));
        let ws = simulate_driftless(&c, 0.0, 0.05, 16, 50, NoiseSource::new(5)).unwrap();
        let w = ibp_weight(&ws, &c, Functional::Terminal, Multiplier::One, 1).unwrap();
        for p in 0..ws.n_paths {
            let inc: f64 = ws.path(p).1.iter().sum();
            assert!((w[p].3 - inc / (1.5 * 0.05)).abs() < 1e-12 * w[p].3.abs().max(1.0));
        }
    }

    #[test]
    fn unsupported_pairs_are_rejected() {
        let t = tc(two_plus_sin());
        let ws = simulate_driftless(&t, 0.0, 0.05, 4, 2, NoiseSource::new(6)).unwrap();
        assert!(matches!(
            ibp_weight(&ws, &t, Functional::Terminal, Multiplier::Phi, 1),
            Err(Error::UnsupportedPair(_))
        ));
        assert!(matches!(
            ibp_weight(&ws, &t, Functional::Terminal, Multiplier::One, 2),
            Err(Error::UnsupportedPair(_))
        ));
        assert!(matches!(
            ibp_weight(&ws, &t, Functional::Increment, Multiplier::One, 3),
            Err(Error::UnsupportedOrder(3))
        ));
    }

    #[test]
    fn ibp_identity_for_sine_and_quadratic() {
        let t = tc(Expr::constant(1.0));
        let ws = simulate_driftless(&t, 0.0, 0.25, 8, 40_000, NoiseSource::new(7)).unwrap();
        let r = verify_ibp(&ws, &t, Functional::Increment, Multiplier::One, 1, &TestFn::Sin { theta: 1.0 }).unwrap();
        assert!(r.pass, "{r:?}");
        assert!((r.lhs.mean - (-0.125f64).exp()).abs() < 4.0 * r.lhs.se);
        let q = TestFn::Poly { coeffs: vec![0.0, 0.0, 1.0] };
        let r = verify_ibp(&ws, &t, Functional::Increment, Multiplier::One, 2, &q).unwrap();
        assert_eq!(r.lhs.mean, 2.0);
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn ibp_identity_with_localizing_multipliers() {
        let t = tc(two_plus_sin());
        let ws = simulate_driftless(&t, 0.2, 0.1, 16, 40_000, NoiseSource::new(8)).unwrap();
        let f = TestFn::Sin { theta: 2.0 };
        for g in [Multiplier::One, Multiplier::Phi, Multiplier::PhiIncrement] {
            for order in [1, 2] {
                let r = verify_ibp(&ws, &t, Functional::Increment, g, order, &f).unwrap();
                assert!(r.pass, "{r:?}");
            }
        }
        let r = verify_ibp(&ws, &t, Functional::Terminal, Multiplier::One, 1, &f).unwrap();
        assert!(r.pass, "{r:?}");
        let c = tc(Expr::constant(1.0));
        let ws = simulate_driftless(&c, 0.2, 0.1, 16, 40_000, NoiseSource::new(9)).unwrap();
        let bump = TestFn::Bump { eps: 0.2, center: 0.2 };
        for g in [Multiplier::Phi, Multiplier::PhiIncrement] {
            let r = verify_ibp(&ws, &c, Functional::Terminal, g, 1, &bump).unwrap();
            assert!(r.pass, "{r:?}");
        }
    }

    #[test]
    fn covariance_envelope_for_variable_sigma() {
        let t = tc(two_plus_sin());
        let delta = 0.05;
        let ws = simulate_driftless(&t, 0.0, delta, 32, 5000, NoiseSource::new(10)).unwrap();
        let d = first_variation(&ws, &t, Functional::Terminal).unwrap();
        let mean = d.m_f.iter().sum::<f64>() / d.m_f.len() as f64 / delta;
        assert!(d.m_f.iter().all(|&m| m > 0.0));
        let (lo, hi) = (t.inf_sigma_bar, t.sup_sigma_bar);
        assert!(mean > lo * lo * 0.9 && mean < hi * hi * 1.1, "{mean}");
    }

    #[test]
    fn degenerate_covariance_is_reported() {
        let table = DerivativeTable {
            functional: Functional::Terminal,
            h: 0.1,
            m: 2,
            n_paths: 2,
            d: vec![1.0, 1.0, 0.0, 0.0],
            m_f: vec![],
        };
        assert!(matches!(malliavin_covariance(&table), Err(Error::DegenerateCovariance { path: 1 })));
    }

    #[test]
    fn adapted_divergence_is_the_ito_sum() {
        let incs = [0.1, -0.2, 0.05];
        let u = [1.0, 0.9, 0.7];
        let ito: f64 = u.iter().zip(&incs).map(|(a, b)| a * b).sum();
        assert_eq!(skorokhod_divergence(&u, &[0.0; 3], &incs, 0.01), ito);
    }

    #[test]
    fn duality_holds_for_an_anticipating_integrand() {
        // u_k = W_m (the terminal increment sum), F = W_m²: E⟨DF, u⟩ = E[F δ(u)]
        let n = 100_000;
        let m = 4;
        let h = 0.25;
        let noise = NoiseSource::new(11);
        let mut lhs = 0.0;
        let mut rhs = 0.0;
        for p in 0..n {
            let incs = noise.path(p).increments::<f64>(m, h);
            let w: f64 = incs.iter().sum();
            let u = vec![w; m];
            lhs += (0..m).map(|_| 2.0 * w * w * h).sum::<f64>();
            rhs += w * w * skorokhod_divergence(&u, &vec![1.0; m], &incs, h);
        }
        let (lhs, rhs) = (lhs / n as f64, rhs / n as f64);
        assert!((lhs - 2.0).abs() < 0.05 && (rhs - 2.0).abs() < 0.1, "{lhs} {rhs}");
    }

    #[test]
    fn norm_scaling_slopes() {
        let t = tc(Expr::constant(1.0));
        let deltas = [0.5, 0.1, 0.03, 0.01, 0.005];
        let r = weight_norm_scaling(&t, Functional::Increment, 0.0, &deltas, 1, 8, 20_000, NoiseSource::new(12)).unwrap();
        assert!(r.within(0.1), "{r:?}");
        let r = weight_norm_scaling(&t, Functional::Increment, 0.0, &deltas, 2, 8, 20_000, NoiseSource::new(13)).unwrap();
        assert!(r.within(0.1), "{r:?}");
        let s = tc(two_plus_sin());
        let r = weight_norm_scaling(&s, Functional::Terminal, 0.0, &deltas, 1, 16, 20_000, NoiseSource::new(14)).unwrap();
        assert!(r.within(0.15), "{r:?}");
        assert!(matches!(
            weight_norm_scaling(&t, Functional::Increment, 0.0, &[0.1, 0.05, 0.02, 0.01], 1, 8, 10, NoiseSource::new(1)),
            Err(Error::InsufficientRange(_))
        ));
    }
}
