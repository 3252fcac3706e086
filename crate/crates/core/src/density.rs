//! Local density by Lévy inversion of the localized characteristic function,
//! its Hölder modulus, and independent oracles.

use num_complex::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::charfn::CharFnTable;
use crate::error::{Error, Result};
use crate::plot::{line_chart, Axes, Series};
use crate::quad::Pchip;
use crate::real::Real;

/// Number of quadrature intervals after resampling.
pub const INVERSION_NODES: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TailModel {
    None,
    PowerLaw { c: f64, gamma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HolderEstimate {
    pub alpha: f64,
    pub modulus: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityProfile {
    pub xs: Vec<f64>,
    pub values: Vec<f64>,
    pub theta_cutoff: f64,
    /// `max_x |T_N − T_{N/2}|` of the trapezoid rule.
    pub quadrature_error_bound: f64,
    /// Analytic tail beyond the cutoff; `None` when no tail model was given.
    pub tail_error_bound: Option<f64>,
    /// `(1/π) ∫_0^cutoff SE(θ) dθ`.
    pub mc_error_bound: f64,
    /// The inversion pairs `θ` with `−θ` through conjugation, so the integral
    /// is real by construction and this is zero unless the input was not.
    pub imag_residue: f64,
    pub holder: Option<HolderEstimate>,
}

impl DensityProfile {
    pub fn zeros(xs: &[f64], theta_cutoff: f64) -> Self {
        Self {
            xs: xs.to_vec(),
            values: vec![0.0; xs.len()],
            theta_cutoff,
            quadrature_error_bound: 0.0,
            tail_error_bound: Some(0.0),
            mc_error_bound: 0.0,
            imag_residue: 0.0,
            holder: None,
        }
    }

    /// Quadrature, tail and Monte Carlo bounds combined; an unknown tail counts as zero.
    pub fn error_budget(&self) -> f64 {
        self.quadrature_error_bound + self.tail_error_bound.unwrap_or(0.0) + self.mc_error_bound
    }

    /// Linear interpolation on the grid.
    pub fn value_at(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if n == 0 {
            return 0.0;
        }
        if x <= self.xs[0] {
            return self.values[0];
        }
        if x >= self.xs[n - 1] {
            return self.values[n - 1];
        }
        let k = self.xs.partition_point(|&v| v <= x) - 1;
        let w = (x - self.xs[k]) / (self.xs[k + 1] - self.xs[k]);
        self.values[k] * (1.0 - w) + self.values[k + 1] * w
    }

    pub fn integral(&self) -> f64 {
        self.xs
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(x, v)| 0.5 * (x[1] - x[0]) * (v[0] + v[1]))
            .sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,value\n");
        for (x, v) in self.xs.iter().zip(&self.values) {
            s.push_str(&format!("{x},{v}\n"));
        }
        s
    }

    /// Sidecar with everything except the grid and values.
    pub fn sidecar_json(&self) -> serde_json::Value {
        serde_json::json!({
            "n_points": self.xs.len(),
            "theta_cutoff": self.theta_cutoff,
            "quadrature_error_bound": self.quadrature_error_bound,
            "tail_error_bound": self.tail_error_bound,
            "mc_error_bound": self.mc_error_bound,
            "error_budget": self.error_budget(),
            "imag_residue": self.imag_residue,
            "holder": self.holder,
        })
    }

    pub fn to_svg(&self, title: &str, reference: Option<(&str, &[(f64, f64)])>) -> String {
        let pts: Vec<(f64, f64)> = self.xs.iter().copied().zip(self.values.iter().copied()).collect();
        let mut series = vec![Series { name: "inverted", points: &pts }];
        if let Some((name, points)) = reference {
            series.push(Series { name, points });
        }
        line_chart(title, "x", "density", Axes::default(), &series)
    }
}

fn is_uniform_from_zero(th: &[f64]) -> bool {
    if th.len() < 3 || th[0] != 0.0 {
        return false;
    }
    let h = th[1];
    th.iter()
        .enumerate()
        .all(|(k, &t)| (t - k as f64 * h).abs() <= 1e-9 * h.max(t))
}

/// `(1/π) Σ' w_k Re(e^{-iθ_k u} ψ_k)` with trapezoid weights at spacing `h`.
fn trapezoid_inverse(psi: &[Complex<f64>], h: f64, u: f64, stride: usize) -> f64 {
    let n = (psi.len() - 1) / stride;
    let (s, c) = (h * stride as f64 * u).sin_cos();
    let rot = Complex::new(c, -s);
    let mut e = Complex::new(1.0, 0.0);
    let mut acc = 0.0;
    for k in 0..=n {
        let w = if k == 0 || k == n { 0.5 } else { 1.0 };
        acc += w * (e * psi[k * stride]).re;
        e *= rot;
    }
    acc * h * stride as f64 / std::f64::consts::PI
}

/// Trapezoidal Lévy inversion `(1/2π)∫_{-c}^{c} e^{-iθx} φ̂(θ) dθ` of a table
/// on `θ ≥ 0`, with `φ̂(−θ) = conj φ̂(θ)`. The integrand is demodulated by
/// `e^{-iθ y0}` first; a table that is not uniform from zero is resampled to
/// [`INVERSION_NODES`] intervals by monotone cubic interpolation of the real
/// and imaginary parts.
pub fn levy_invert<T: Real>(table: &CharFnTable<T>, xs: &[f64], cutoff: f64, tail: TailModel) -> Result<DensityProfile> {
    let tail_error_bound = match tail {
        TailModel::None => None,
        TailModel::PowerLaw { c, gamma } => {
            if !(gamma > 0.0) {
                return Err(Error::TailDivergence { gamma });
            }
            Some(c * cutoff.powf(-gamma) / (gamma * std::f64::consts::PI))
        }
    };
    let th: Vec<f64> = table.thetas.iter().map(|t| t.as_f64()).collect();
    if th.is_empty() || th[0] != 0.0 || *th.last().unwrap() < cutoff * (1.0 - 1e-12) || !(cutoff > 0.0) {
        return Err(Error::InsufficientRange(format!(
            "table must cover [0, {cutoff}], has [{}, {}]",
            th.first().copied().unwrap_or(f64::NAN),
            th.last().copied().unwrap_or(f64::NAN)
        )));
    }
    let y0 = table.y0.as_f64();
    let demod = |k: usize| {
        let (s, c) = (th[k] * y0).sin_cos();
        Complex::new(c, -s) * Complex::new(table.re[k].as_f64(), table.im[k].as_f64())
    };
    let used = th.partition_point(|&t| t <= cutoff * (1.0 + 1e-12));
    let on_grid = is_uniform_from_zero(&th[..used])
        && (th[used - 1] - cutoff).abs() <= 1e-9 * cutoff
        && (used - 1) % 2 == 0;
    let (psi, h): (Vec<Complex<f64>>, f64) = if on_grid {
        ((0..used).map(demod).collect(), th[1])
    } else {
        let vals: Vec<Complex<f64>> = (0..th.len()).map(demod).collect();
        let re = Pchip::new(th.clone(), vals.iter().map(|v| v.re).collect())?;
        let im = Pchip::new(th.clone(), vals.iter().map(|v| v.im).collect())?;
        let h = cutoff / INVERSION_NODES as f64;
        (
            (0..=INVERSION_NODES)
                .map(|k| {
                    let t = k as f64 * h;
                    Complex::new(re.eval(t), im.eval(t))
                })
                .collect(),
            h,
        )
    };
    let pairs: Vec<(f64, f64)> = xs
        .par_iter()
        .map(|&x| {
            let u = x - y0;
            let full = trapezoid_inverse(&psi, h, u, 1);
            let half = trapezoid_inverse(&psi, h, u, 2);
            (full, (full - half).abs())
        })
        .collect();
    let se: Vec<f64> = table.se.iter().map(|s| s.as_f64()).collect();
    let mc_error_bound = th[..used]
        .windows(2)
        .zip(se.windows(2))
        .map(|(t, s)| 0.5 * (t[1] - t[0]) * (s[0] + s[1]))
        .sum::<f64>()
        / std::f64::consts::PI;
    Ok(DensityProfile {
        xs: xs.to_vec(),
        values: pairs.iter().map(|p| p.0).collect(),
        theta_cutoff: cutoff,
        quadrature_error_bound: pairs.iter().map(|p| p.1).fold(0.0, f64::max),
        tail_error_bound,
        mc_error_bound,
        imag_residue: 0.0,
        holder: None,
    })
}

/// `p_{y0} = m0 · p̃_{y0}`, where `profile` inverts the table divided by `m0`.
/// With `m0 = 0` the local density is zero.
pub fn local_density(m0: f64, profile: &DensityProfile, _eps: f64, _y0: f64) -> Result<DensityProfile> {
    if !(m0 >= 0.0) {
        return Err(Error::InvalidParams(format!("m0 must be non-negative, got {m0}")));
    }
    if m0 == 0.0 {
        return Ok(DensityProfile::zeros(&profile.xs, profile.theta_cutoff));
    }
    let mut out = profile.clone();
    for v in &mut out.values {
        *v *= m0;
    }
    out.quadrature_error_bound *= m0;
    out.mc_error_bound *= m0;
    out.tail_error_bound = out.tail_error_bound.map(|t| t * m0);
    out.holder = out.holder.map(|h| HolderEstimate {
        alpha: h.alpha,
        modulus: h.modulus * m0,
    });
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HolderReport {
    pub alpha: f64,
    pub empirical_modulus: f64,
    /// `(2^{1-α}/2π) ∫ |θ|^α |φ̂(θ)| dθ` up to the cutoff, plus the tail when modelled.
    pub integral_bound: f64,
    pub diverges: bool,
    /// Slack allowed for the empirical modulus: `2·budget / h^α` at the finest spacing.
    pub slack: f64,
    pub pass: bool,
}

/// Empirical α-Hölder modulus of the profile against the integral bound.
/// Divergence is flagged when the tail model has `α ≥ γ`, or when the
/// integrand `θ^{1+α}|φ̂|` is not decreasing over the upper half (log scale)
/// of the frequencies whose estimate clears three standard errors.
pub fn holder_modulus<T: Real>(
    profile: &DensityProfile,
    table: &CharFnTable<T>,
    alpha: f64,
    tail: TailModel,
) -> Result<HolderReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParams(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if profile.xs.len() < 64 {
        return Err(Error::InvalidParams("need at least 64 grid points".into()));
    }
    let xs = &profile.xs;
    let v = &profile.values;
    let mut modulus: f64 = 0.0;
    let mut h_min = f64::INFINITY;
    for i in 0..xs.len() {
        for j in i + 1..xs.len() {
            let d = xs[j] - xs[i];
            h_min = h_min.min(d);
            modulus = modulus.max((v[j] - v[i]).abs() / d.powf(alpha));
        }
    }
    let c_alpha = 2f64.powf(1.0 - alpha);
    let cutoff = profile.theta_cutoff;
    let th: Vec<f64> = table.thetas.iter().map(|t| t.as_f64()).collect();
    let m: Vec<f64> = (0..table.len()).map(|k| table.modulus(k).as_f64()).collect();
    let used = th.partition_point(|&t| t <= cutoff * (1.0 + 1e-12));
    let integral: f64 = (1..used)
        .map(|k| 0.5 * (th[k] - th[k - 1]) * (th[k].powf(alpha) * m[k] + th[k - 1].powf(alpha) * m[k - 1]))
        .sum();
    let mut diverges = false;
    let mut tail_part = 0.0;
    if let TailModel::PowerLaw { c, gamma } = tail {
        if alpha >= gamma {
            diverges = true;
        } else {
            tail_part = c * cutoff.powf(alpha - gamma) / (gamma - alpha);
        }
    }
    let good: Vec<usize> = (0..used)
        .filter(|&k| th[k] > 0.0 && m[k] >= 3.0 * table.se[k].as_f64() && m[k] > 0.0)
        .collect();
    if let (Some(&first), Some(&last)) = (good.first(), good.last()) {
        let mid = (th[first] * th[last]).sqrt();
        let upper: Vec<usize> = good.iter().copied().filter(|&k| th[k] >= mid).collect();
        if upper.len() >= 4 {
            let lx: Vec<f64> = upper.iter().map(|&k| th[k].ln()).collect();
            let ly: Vec<f64> = upper.iter().map(|&k| ((1.0 + alpha) * th[k].ln()) + m[k].ln()).collect();
            if crate::stats::fit_line(&lx, &ly).slope >= 0.0 {
                diverges = true;
            }
        }
    }
    let integral_bound = if diverges {
        f64::INFINITY
    } else {
        c_alpha / std::f64::consts::PI * (integral + tail_part)
    };
    let slack = 2.0 * profile.error_budget() / h_min.powf(alpha);
    Ok(HolderReport {
        alpha,
        empirical_modulus: modulus,
        integral_bound,
        diverges,
        slack,
        pass: modulus <= integral_bound + slack,
    })
}

/// Gaussian-kernel density estimate on `xs`; kernels are cut at 8 bandwidths.
pub fn kde_oracle(samples: &[f64], bandwidth: f64, xs: &[f64]) -> Result<DensityProfile> {
    if !(bandwidth > 0.0) || samples.is_empty() {
        return Err(Error::InvalidParams("need samples and a positive bandwidth".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let norm = 1.0 / (samples.len() as f64 * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    let values = xs
        .par_iter()
        .map(|&x| {
            let lo = sorted.partition_point(|&s| s < x - 8.0 * bandwidth);
            let hi = sorted.partition_point(|&s| s <= x + 8.0 * bandwidth);
            sorted[lo..hi]
                .iter()
                .map(|&s| (-0.5 * ((x - s) / bandwidth).powi(2)).exp())
                .sum::<f64>()
                * norm
        })
        .collect();
    Ok(DensityProfile {
        xs: xs.to_vec(),
        values,
        theta_cutoff: f64::INFINITY,
        quadrature_error_bound: 0.0,
        tail_error_bound: None,
        mc_error_bound: 0.0,
        imag_residue: 0.0,
        holder: None,
    })
}

pub fn gaussian_density(x: f64, mean: f64, var: f64) -> f64 {
    (-(x - mean).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

/// `n` equally spaced points on `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::charfn::{localized_charfn_uniform, uniform_grid};
    use crate::mollifier::Mollifier;
    use crate::rng::NoiseSource;

    fn table_from(thetas: Vec<f64>, f: impl Fn(f64) -> Complex<f64>, y0: f64) -> CharFnTable<f64> {
        let v: Vec<Complex<f64>> = thetas.iter().map(|&t| f(t)).collect();
        CharFnTable {
            re: v.iter().map(|z| z.re).collect(),
            im: v.iter().map(|z| z.im).collect(),
            se: vec![0.0; thetas.len()],
            thetas,
            n_paths: 1,
            y0,
            eps: 1.0,
            a: 1.5,
            t: 1.0,
        }
    }

    fn gaussian_cf(t: f64) -> Complex<f64> {
        Complex::new((-0.5 * t * t).exp(), 0.0)
    }

    #[test]
    fn gaussian_cf_inverts_to_the_gaussian_density() {
        let tab = table_from(uniform_grid(8.0 / 4096.0, 4096), gaussian_cf, 0.0);
        let xs = linspace(-2.0, 2.0, 81);
        let p = levy_invert(&tab, &xs, 8.0, TailModel::None).unwrap();
        assert!((p.values[40] - 0.398_942_280_401_432_7).abs() < 1e-6);
        for (x, v) in xs.iter().zip(&p.values) {
            assert!((v - gaussian_density(*x, 0.0, 1.0)).abs() < 1e-6);
        }
        for k in 0..40 {
            assert!((p.values[k] - p.values[80 - k]).abs() < 1e-12);
        }
    }

    #[test]
    fn resampled_geometric_table_is_close() {
        let mut th = vec![0.0];
        th.extend(crate::charfn::geometric_grid(0.01, 8.0, 64));
        th.push(8.0);
        let tab = table_from(th, gaussian_cf, 0.0);
        let p = levy_invert(&tab, &[0.0, 0.5], 8.0, TailModel::None).unwrap();
        assert!((p.values[0] - 0.398_942_280_401_432_7).abs() < 1e-4);
    }

    #[test]
    fn shifted_law_is_demodulated() {
        let y0 = 3.0;
        let tab = table_from(uniform_grid(8.0 / 1024.0, 1024), |t| gaussian_cf(t) * Complex::from_polar(1.0, t * y0), y0);
        let p = levy_invert(&tab, &[2.0, 3.0, 3.5], 8.0, TailModel::None).unwrap();
        for (x, v) in p.xs.iter().zip(&p.values) {
            assert!((v - gaussian_density(*x, y0, 1.0)).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_table_gives_zero_profile() {
        let tab = table_from(uniform_grid(0.01, 800), |_| Complex::new(0.0, 0.0), 0.0);
        let p = levy_invert(&tab, &linspace(-1.0, 1.0, 11), 8.0, TailModel::None).unwrap();
        assert!(p.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tail_model_contributes_and_rejects_bad_exponent() {
        let tab = table_from(uniform_grid(0.01, 1000), gaussian_cf, 0.0);
        let p = levy_invert(&tab, &[0.0], 10.0, TailModel::PowerLaw { c: 2.0, gamma: 0.5 }).unwrap();
        let expect = 2.0 * 10f64.powf(-0.5) / (0.5 * std::f64::consts::PI);
        assert!((p.tail_error_bound.unwrap() - expect).abs() < 1e-15);
        assert!(matches!(
            levy_invert(&tab, &[0.0], 10.0, TailModel::PowerLaw { c: 1.0, gamma: 0.0 }),
            Err(Error::TailDivergence { .. })
        ));
        assert!(matches!(levy_invert(&tab, &[0.0], 20.0, TailModel::None), Err(Error::InsufficientRange(_))));
    }

    #[test]
    fn inversion_is_linear_and_commutes_with_scaling() {
        let th = uniform_grid(0.01, 800);
        let a = table_from(th.clone(), gaussian_cf, 0.0);
        let b = table_from(th, |t| Complex::new(0.0, 0.3 * (-t).exp() * t), 0.0);
        let xs = linspace(-1.0, 1.0, 21);
        let inv = |t: &CharFnTable<f64>| levy_invert(t, &xs, 8.0, TailModel::None).unwrap();
        let sum = inv(&a.sum(&b).unwrap());
        let (pa, pb) = (inv(&a), inv(&b));
        for k in 0..xs.len() {
            assert!((sum.values[k] - pa.values[k] - pb.values[k]).abs() < 1e-12);
        }
        let m0 = 0.37;
        let scaled = local_density(m0, &inv(&a.scaled(1.0 / m0)), 1.0, 0.0).unwrap();
        for k in 0..xs.len() {
            assert!((scaled.values[k] - pa.values[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn local_density_examples() {
        let tab = table_from(uniform_grid(0.01, 800), gaussian_cf, 0.0);
        let p = levy_invert(&tab, &linspace(-1.0, 1.0, 5), 8.0, TailModel::None).unwrap();
        assert!(local_density(0.0, &p, 1.0, 0.0).unwrap().values.iter().all(|&v| v == 0.0));
        assert_eq!(local_density(1.0, &p, 1.0, 0.0).unwrap().values, p.values);
        assert!(local_density(-1.0, &p, 1.0, 0.0).is_err());
    }

    #[test]
    fn monte_carlo_localized_gaussian_density() {
        let n = 200_000;
        let mut src = NoiseSource::new(9).path(0);
        let xs: Vec<f64> = (0..n).map(|_| src.next_normal()).collect();
        // wide window: the truncated tail of the localized cf stays negligible at cutoff 8
        let phi = Mollifier::new(3.0).unwrap();
        let tab = localized_charfn_uniform(&xs, None, 8.0 / 512.0, 512, &phi, 0.0, 1.0).unwrap();
        let grid = linspace(-1.0, 1.0, 41);
        let m0 = tab.m0().unwrap();
        let p = local_density(m0, &levy_invert(&tab.scaled(1.0 / m0), &grid, 8.0, TailModel::None).unwrap(), 1.0, 0.0).unwrap();
        for (x, v) in grid.iter().zip(&p.values) {
            assert!((v - gaussian_density(*x, 0.0, 1.0)).abs() < p.error_budget(), "{x}: {v}");
        }
        let kde = kde_oracle(&xs, 0.1, &grid).unwrap();
        assert!((kde.value_at(0.0) - p.value_at(0.0)).abs() < 0.02);
    }

    #[test]
    fn holder_modulus_examples() {
        let th = uniform_grid(0.01, 800);
        let xs = linspace(-1.0, 1.0, 101);
        let flat = DensityProfile {
            values: vec![0.3; 101],
            ..DensityProfile::zeros(&xs, 8.0)
        };
        let tab = table_from(th.clone(), gaussian_cf, 0.0);
        assert_eq!(holder_modulus(&flat, &tab, 0.5, TailModel::None).unwrap().empirical_modulus, 0.0);

        let p = levy_invert(&tab, &xs, 8.0, TailModel::None).unwrap();
        let r = holder_modulus(&p, &tab, 0.5, TailModel::None).unwrap();
        assert!(r.integral_bound.is_finite() && !r.diverges);
        assert!(r.empirical_modulus <= r.integral_bound, "{r:?}");

        let th = uniform_grid(0.05, 4000);
        let slow = table_from(th, |t| Complex::new(1f64.min(t.max(1e-300).powf(-1.5)), 0.0), 0.0);
        let r = holder_modulus(&p, &slow, 0.6, TailModel::PowerLaw { c: 1.0, gamma: 0.5 }).unwrap();
        assert!(r.diverges && r.integral_bound.is_infinite());
        let r = holder_modulus(&p, &slow, 0.6, TailModel::None).unwrap();
        assert!(r.diverges);
        let r = holder_modulus(&p, &slow, 0.4, TailModel::None).unwrap();
        assert!(!r.diverges);
    }

    #[test]
    fn kde_of_a_point_mass_is_the_kernel() {
        let xs = linspace(-1.0, 1.0, 21);
        let k = kde_oracle(&[0.2; 10], 0.3, &xs).unwrap();
        for (x, v) in xs.iter().zip(&k.values) {
            assert!((v - gaussian_density(*x, 0.2, 0.09)).abs() < 1e-14);
        }
        assert!(kde_oracle(&[0.0], 0.0, &xs).is_err());
    }

    #[test]
    fn outputs_render() {
        let xs = linspace(-1.0, 1.0, 3);
        let p = DensityProfile::zeros(&xs, 8.0);
        assert_eq!(p.to_csv().lines().count(), 4);
        assert_eq!(p.sidecar_json()["n_points"], 3);
        assert!(p.to_svg("d", Some(("ref", &[(0.0, 0.1), (1.0, 0.2)]))).contains("<polyline"));
    }
}
