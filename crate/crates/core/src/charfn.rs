//! Localized characteristic function: Monte Carlo estimation, power-law decay
//! fits, the target decay inequality, the `δ = |θ|^{-β}` schedule and the
//! term accounting of the final estimate.

use num_complex::Complex;
use num_traits::{Num, ToPrimitive};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coeffs::TruncatedCoeffs;
use crate::error::{Error, Result};
use crate::mollifier::Mollifier;
use crate::real::Real;
use crate::stats::{bootstrap_slope_ci, fit_line, fit_quadratic, MeanSe, BLOCK};

/// Geometric grid from `lo` to `hi` with `per_decade` points per decade.
pub fn geometric_grid(lo: f64, hi: f64, per_decade: usize) -> Vec<f64> {
    let n = (per_decade as f64 * (hi / lo).log10()).floor() as usize;
    (0..=n).map(|k| lo * 10f64.powf(k as f64 / per_decade as f64)).collect()
}

/// `0, h, 2h, …, n h`.
pub fn uniform_grid(h: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|k| k as f64 * h).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CharFnTable<T = f64> {
    pub thetas: Vec<T>,
    pub re: Vec<T>,
    pub im: Vec<T>,
    pub se: Vec<T>,
    pub n_paths: usize,
    pub y0: T,
    pub eps: T,
    pub a: T,
    pub t: T,
}

impl<T: Real> CharFnTable<T> {
    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    pub fn value(&self, k: usize) -> Complex<T> {
        Complex::new(self.re[k], self.im[k])
    }

    pub fn modulus(&self, k: usize) -> T {
        self.value(k).norm()
    }

    /// Estimate at `θ = 0`, when the grid contains it.
    pub fn m0(&self) -> Option<T> {
        self.thetas.iter().position(|&t| t == T::zero()).map(|k| self.re[k])
    }

    /// Same table with every estimate and error multiplied by `c`.
    pub fn scaled(&self, c: T) -> Self {
        let mut out = self.clone();
        for k in 0..self.len() {
            out.re[k] = self.re[k] * c;
            out.im[k] = self.im[k] * c;
            out.se[k] = self.se[k] * c.abs();
        }
        out
    }

    /// Entry-wise sum of two tables on the same grid.
    pub fn sum(&self, other: &Self) -> Result<Self> {
        if self.thetas != other.thetas {
            return Err(Error::InvalidParams("tables are on different grids".into()));
        }
        let mut out = self.clone();
        for k in 0..self.len() {
            out.re[k] += other.re[k];
            out.im[k] += other.im[k];
            out.se[k] = (self.se[k].powi(2) + other.se[k].powi(2)).sqrt();
        }
        Ok(out)
    }

    /// CSV with columns `theta,re,im,se,n_paths`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("theta,re,im,se,n_paths\n");
        for k in 0..self.len() {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                self.thetas[k].as_f64(),
                self.re[k].as_f64(),
                self.im[k].as_f64(),
                self.se[k].as_f64(),
                self.n_paths
            ));
        }
        s
    }
}

/// Per-block accumulators: sums and sums of squares of the real and
/// imaginary parts for every frequency.
fn accumulate<T: Real>(
    samples: &[T],
    weights: Option<&[T]>,
    n_theta: usize,
    phi: &Mollifier<T>,
    y0: T,
    fill: impl FnMut(T, &mut [Complex<T>]) + Clone + Send + Sync,
) -> Vec<T>
{
    let n = samples.len();
    let partial: Vec<Vec<T>> = (0..n.div_ceil(BLOCK))
        .into_par_iter()
        .map_init(
            || vec![Complex::new(T::zero(), T::zero()); n_theta],
            |buf, b| {
                let mut fill = fill.clone();
                let mut acc = vec![T::zero(); 4 * n_theta];
                for i in b * BLOCK..((b + 1) * BLOCK).min(n) {
                    let x = samples[i];
                    let w = phi.eval(x - y0) * weights.map_or(T::one(), |w| w[i]);
                    if w == T::zero() {
                        continue;
                    }
                    fill(x, buf);
                    for (k, e) in buf.iter().enumerate() {
                        let (c, s) = (e.re * w, e.im * w);
                        acc[4 * k] += c;
                        acc[4 * k + 1] += c * c;
                        acc[4 * k + 2] += s;
                        acc[4 * k + 3] += s * s;
                    }
                }
                acc
            },
        )
        .collect();
    let mut total = vec![T::zero(); 4 * n_theta];
    for p in partial {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    total
}

fn mean_and_se<T: Real>(sum: T, sq: T, n: usize) -> (T, T) {
    let nf = T::from_count(n);
    let mean = sum / nf;
    let var = if n > 1 {
        ((sq - nf * mean * mean) / (nf - T::one())).max(T::zero())
    } else {
        T::zero()
    };
    (mean, (var / nf).sqrt())
}

fn finish<T: Real>(
    acc: Vec<T>,
    thetas: Vec<T>,
    n: usize,
    phi: &Mollifier<T>,
    y0: T,
    t: T,
) -> CharFnTable<T> {
    let k = thetas.len();
    let mut table = CharFnTable {
        thetas,
        re: Vec::with_capacity(k),
        im: Vec::with_capacity(k),
        se: Vec::with_capacity(k),
        n_paths: n,
        y0,
        eps: phi.eps(),
        a: phi.knot(),
        t,
    };
    for j in 0..k {
        let (re, se_re) = mean_and_se(acc[4 * j], acc[4 * j + 1], n);
        let (im, se_im) = mean_and_se(acc[4 * j + 2], acc[4 * j + 3], n);
        table.re.push(re);
        table.im.push(im);
        table.se.push(se_re.max(se_im));
    }
    table
}

fn check_inputs<T>(samples: &[T], weights: Option<&[T]>, thetas: usize) -> Result<()> {
    if samples.is_empty() || thetas == 0 {
        return Err(Error::InvalidParams("need samples and at least one frequency".into()));
    }
    if weights.is_some_and(|w| w.len() != samples.len()) {
        return Err(Error::InvalidParams("weights and samples differ in length".into()));
    }
    Ok(())
}

/// Monte Carlo estimate of `E[w · e^{iθX} φ_ε(X − y0)]` on an arbitrary grid.
/// The standard error of each complex mean is the larger of its component SEs.
pub fn localized_charfn<T: Real>(
    samples: &[T],
    weights: Option<&[T]>,
    thetas: &[T],
    phi: &Mollifier<T>,
    y0: T,
    t: T,
) -> Result<CharFnTable<T>> {
    check_inputs(samples, weights, thetas.len())?;
    let acc = accumulate(samples, weights, thetas.len(), phi, y0, |x, buf: &mut [Complex<T>]| {
        for (e, &th) in buf.iter_mut().zip(thetas) {
            let (s, c) = (th * x).sin_cos();
            *e = Complex::new(c, s);
        }
    });
    Ok(finish(acc, thetas.to_vec(), samples.len(), phi, y0, t))
}

/// Same estimate on the uniform grid `θ_k = k h`, `k = 0..=n`, using the
/// rotation recurrence `e^{i(k+1)hx} = e^{ikhx} e^{ihx}` per sample. The phase
/// is taken relative to `y0` and rotated back, which keeps the recurrence
/// short-armed for samples near the window.
pub fn localized_charfn_uniform<T: Real>(
    samples: &[T],
    weights: Option<&[T]>,
    h: T,
    n: usize,
    phi: &Mollifier<T>,
    y0: T,
    t: T,
) -> Result<CharFnTable<T>> {
    check_inputs(samples, weights, n + 1)?;
    let acc = accumulate(samples, weights, n + 1, phi, y0, move |x, buf: &mut [Complex<T>]| {
        let u = x - y0;
        let (s, c) = (h * u).sin_cos();
        let step = Complex::new(c, s);
        let (s0, c0) = (h * y0).sin_cos();
        let step0 = Complex::new(c0, s0);
        let mut e = Complex::new(T::one(), T::zero());
        let mut e0 = Complex::new(T::one(), T::zero());
        for v in buf.iter_mut() {
            *v = e * e0;
            e = e * step;
            e0 = e0 * step0;
        }
    });
    let thetas = (0..=n).map(|k| h * T::from_count(k)).collect();
    Ok(finish(acc, thetas, samples.len(), phi, y0, t))
}

/// Monte Carlo mean of `w · φ_ε(X − y0)`, reduced exactly like the
/// characteristic function at `θ = 0`.
pub fn localization_mass<T: Real>(samples: &[T], weights: Option<&[T]>, phi: &Mollifier<T>, y0: T) -> Result<MeanSe<T>> {
    check_inputs(samples, weights, 1)?;
    let acc = accumulate(samples, weights, 1, phi, y0, |_, buf: &mut [Complex<T>]| {
        buf[0] = Complex::new(T::one(), T::zero());
    });
    let (mean, se) = mean_and_se(acc[0], acc[1], samples.len());
    Ok(MeanSe { mean, se, n: samples.len() })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayFit {
    pub c_hat: f64,
    pub gamma_hat: f64,
    pub ci_gamma: (f64, f64),
    pub theta_range: (f64, f64),
    pub noise_floor: f64,
    pub n_points: usize,
    /// Quadratic coefficient of `log|φ|` against `log θ` and its SE.
    pub curvature: f64,
    pub curvature_se: f64,
    /// Concave residual curvature: decay faster than any power law over the range.
    pub non_power_law: bool,
}

/// Least-squares power law `|φ(θ)| ≈ C θ^{-(1+γ)}` over the admissible
/// frequencies: `θ ≥ 1`, stopping at the first `θ` where the modulus is below
/// three standard errors or below three times the noise floor `1/√n`.
pub fn fit_decay<T: Real>(table: &CharFnTable<T>, n_boot: usize, seed: u64) -> Result<DecayFit> {
    let noise_floor = 1.0 / (table.n_paths as f64).sqrt();
    let mut lx = Vec::new();
    let mut ly = Vec::new();
    let mut last = f64::NAN;
    for k in 0..table.len() {
        let th = table.thetas[k].as_f64();
        if th < 1.0 {
            continue;
        }
        let m = table.modulus(k).as_f64();
        let se = table.se[k].as_f64();
        if !(m >= 3.0 * se && m >= 3.0 * noise_floor && m > 0.0) {
            break;
        }
        lx.push(th.ln());
        ly.push(m.ln());
        last = th;
    }
    if lx.len() < 6 {
        return Err(Error::InsufficientSignal {
            admissible: lx.len(),
            noise_floor,
            max_usable_theta: last,
        });
    }
    let fit = fit_line(&lx, &ly);
    let (lo, hi) = bootstrap_slope_ci(&lx, &ly, n_boot, seed, 0.95);
    let (coef, c2_se) = fit_quadratic(&lx, &ly);
    let curvature = coef[2];
    Ok(DecayFit {
        c_hat: fit.intercept.exp(),
        gamma_hat: -fit.slope - 1.0,
        ci_gamma: (-hi - 1.0, -lo - 1.0),
        theta_range: (lx[0].exp(), last),
        noise_floor,
        n_points: lx.len(),
        curvature,
        curvature_se: c2_se,
        non_power_law: curvature < -3.0 * c2_se && curvature < -1e-9,
    })
}

/// Default cap above which a decay constant is flagged as implausible.
pub const PLAUSIBLE_C: f64 = 1e3;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GoalRow {
    pub theta: f64,
    pub modulus: f64,
    pub se: f64,
    pub bound: f64,
    /// `bound − (modulus − 3 SE)`; negative means violated.
    pub margin: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GoalReport {
    pub c: f64,
    pub gamma: f64,
    pub rows: Vec<GoalRow>,
    pub pass: bool,
    pub first_violation: Option<f64>,
    pub implausible_c: bool,
}

/// Checks `|φ̂(θ)| − 3 SE ≤ min(1, C θ^{-(1+γ)})` at every `θ ≥ 1` in the table.
pub fn check_goal_criterion<T: Real>(table: &CharFnTable<T>, c: f64, gamma: f64, cap: f64) -> Result<GoalReport> {
    if !(c > 0.0 && gamma > 0.0) {
        return Err(Error::InvalidParams(format!("need C > 0 and gamma > 0, got {c}, {gamma}")));
    }
    let rows: Vec<GoalRow> = (0..table.len())
        .filter(|&k| table.thetas[k].as_f64() >= 1.0)
        .map(|k| {
            let theta = table.thetas[k].as_f64();
            let modulus = table.modulus(k).as_f64();
            let se = table.se[k].as_f64();
            let bound = (c * theta.powf(-(1.0 + gamma))).min(1.0);
            GoalRow {
                theta,
                modulus,
                se,
                bound,
                margin: bound - (modulus - 3.0 * se),
            }
        })
        .collect();
    let first_violation = rows.iter().find(|r| r.margin < 0.0).map(|r| r.theta);
    Ok(GoalReport {
        c,
        gamma,
        pass: first_violation.is_none(),
        rows,
        first_violation,
        implausible_c: c > cap,
    })
}

/// Open interval `(2(1+γ)/(1+α), 2)` of admissible `β`. Generic so it can be
/// evaluated exactly over rationals.
pub fn beta_window<N>(alpha: N, gamma: N) -> Result<(N, N)>
where
    N: Num + PartialOrd + Copy + ToPrimitive,
{
    let two = N::one() + N::one();
    let f = |v: N| v.to_f64().unwrap_or(f64::NAN);
    if !(alpha > N::zero() && alpha < N::one()) {
        return Err(Error::InvalidParams(format!("alpha must lie in (0, 1), got {}", f(alpha))));
    }
    if gamma < N::zero() {
        return Err(Error::InvalidParams(format!("gamma must be non-negative, got {}", f(gamma))));
    }
    let lower = two * (N::one() + gamma) / (N::one() + alpha);
    if lower >= two {
        return Err(Error::EmptyWindow {
            alpha: f(alpha),
            gamma: f(gamma),
        });
    }
    Ok((lower, two))
}

/// `δ = |θ|^{-β}`, defined for `|θ| > (t ∧ 1)^{-1/β}`.
pub fn delta_schedule(theta: f64, beta: f64, t: f64) -> Result<f64> {
    if !(beta > 0.0 && beta < 2.0) || !(t > 0.0) {
        return Err(Error::InvalidParams(format!("need 0 < beta < 2 and t > 0, got {beta}, {t}")));
    }
    let threshold = t.min(1.0).powf(-1.0 / beta);
    if !(theta.abs() > threshold) {
        return Err(Error::ThetaTooSmall { theta, threshold });
    }
    Ok(theta.abs().powf(-beta))
}

/// Constants of the final estimate. The paper leaves `K_n`, `M_n`, `C_{ε,n₂}`
/// and `C̃_{ε,n₂}` unspecified; they default to 1 and only rates are compared.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub n: u32,
    pub n2: u32,
    pub k_n: f64,
    pub m_n: f64,
    pub c_eps_n2: f64,
    pub c_tilde_eps_n2: f64,
    pub c_alpha: f64,
    /// Leading factor of the localization term (2 in the combined estimate,
    /// 1 in the per-event lemmas).
    pub localization_factor: f64,
}

impl BoundParams {
    pub fn new(n: u32, n2: u32, c_alpha: f64) -> Self {
        Self {
            n,
            n2,
            k_n: 1.0,
            m_n: 1.0,
            c_eps_n2: 1.0,
            c_tilde_eps_n2: 1.0,
            c_alpha,
            localization_factor: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Est7Terms {
    pub localization: f64,
    pub ibp: f64,
    pub approximation: f64,
    pub drift_ibp: f64,
    pub total: f64,
}

/// The four terms bounding `|E_Q[e^{iθX_t} φ_ε(X_t − y0)]|` at window length `δ`.
pub fn est7_bound<T: Real>(p: &BoundParams, theta: f64, delta: f64, alpha: f64, tc: &TruncatedCoeffs<T>) -> Result<Est7Terms> {
    let t = tc.spec().t.as_f64();
    if !(delta > 0.0 && delta < t.min(1.0)) {
        return Err(Error::InvalidParams(format!("delta must lie in (0, min(t, 1)), got {delta}")));
    }
    let n = p.n as i32;
    let eps = tc.spec().eps.as_f64();
    let sig = tc.sup_sigma_bar.as_f64();
    let b = tc.sup_b_bar.as_f64();
    let psi = tc.sup_psi.as_f64();
    let localization = p.localization_factor
        * eps.powi(-2 * n)
        * p.k_n
        * (p.m_n * sig.powi(2 * n) * delta.powi(n) + delta.powi(2 * n) * b.powi(2 * n));
    let osc = (theta * delta.sqrt()).abs().powi(-(p.n2 as i32));
    let ibp = p.c_eps_n2 * osc;
    let approximation = p.c_alpha * delta.powf(0.5 * (1.0 + alpha));
    let drift_ibp = psi * p.c_tilde_eps_n2 * osc;
    Ok(Est7Terms {
        localization,
        ibp,
        approximation,
        drift_ibp,
        total: localization + ibp + approximation + drift_ibp,
    })
}

/// Exponents in `θ` of the four terms under `δ = θ^{-β}`:
/// `[-nβ, -2nβ, -(2-β)n₂/2, -(1+α)β/2]`.
pub fn est7_exponents(n: u32, n2: u32, beta: f64, alpha: f64) -> [f64; 4] {
    let n = n as f64;
    [-n * beta, -2.0 * n * beta, -(2.0 - beta) * n2 as f64 / 2.0, -(1.0 + alpha) * beta / 2.0]
}
