//! SDE coefficients, assumption checks on the locality window and the
//! truncated coefficients used by the localized equation.

use serde::{Deserialize, Serialize};

use crate::error::{Clause, Error, Result};
use crate::mollifier::Ramp;
use crate::real::Real;

/// Analytic scalar function built from a small set of primitives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Expr {
    Const { value: f64 },
    /// `sum coeffs[k] * x^k`.
    Poly { coeffs: Vec<f64> },
    /// `amp * sin(freq * x + phase)`.
    Sin {
        #[serde(default = "one")]
        amp: f64,
        #[serde(default = "one")]
        freq: f64,
        #[serde(default)]
        phase: f64,
    },
    /// `scale * |x - center|^power`.
    AbsPow {
        #[serde(default)]
        center: f64,
        power: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    /// `amp * sum_{k<terms} 2^(-k alpha) cos(2^k (x - center))`.
    Weierstrass {
        amp: f64,
        alpha: f64,
        terms: u32,
        #[serde(default)]
        center: f64,
    },
    /// `min(max(x, lo), hi)`.
    Clamp { lo: f64, hi: f64 },
    Sum { terms: Vec<Expr> },
    Product { factors: Vec<Expr> },
    /// `outer(inner(x))`.
    Compose { outer: Box<Expr>, inner: Box<Expr> },
}

fn one() -> f64 {
    1.0
}

impl Expr {
    pub fn constant(value: f64) -> Self {
        Expr::Const { value }
    }

    pub fn linear(c0: f64, c1: f64) -> Self {
        Expr::Poly { coeffs: vec![c0, c1] }
    }

    pub fn sum(terms: Vec<Expr>) -> Self {
        Expr::Sum { terms }
    }

    pub fn eval<T: Real>(&self, x: T) -> T {
        let l = T::lit;
        match self {
            Expr::Const { value } => l(*value),
            Expr::Poly { coeffs } => coeffs.iter().rev().fold(T::zero(), |v, &c| v * x + l(c)),
            Expr::Sin { amp, freq, phase } => l(*amp) * (l(*freq) * x + l(*phase)).sin(),
            Expr::Weierstrass { amp, alpha, terms, center } => {
                let d = x - l(*center);
                let r = l(2f64.powf(-alpha));
                let (mut v, mut w, mut f) = (T::zero(), T::one(), T::one());
                for _ in 0..*terms {
                    v += w * (f * d).cos();
                    w *= r;
                    f = f + f;
                }
                l(*amp) * v
            }
            Expr::AbsPow { center, power, scale } => {
                let ad = (x - l(*center)).abs();
                if ad == T::zero() {
                    return if *power == 0.0 { l(*scale) } else { T::zero() };
                }
                l(*scale) * ad.powf(l(*power))
            }
            Expr::Sum { terms } => terms.iter().map(|t| t.eval(x)).sum(),
            Expr::Product { factors } => factors.iter().fold(T::one(), |acc, t| acc * t.eval(x)),
            Expr::Compose { outer, inner } => outer.eval(inner.eval(x)),
            _ => self.jet(x)[0],
        }
    }

    /// Value and first two derivatives.
    pub fn jet<T: Real>(&self, x: T) -> [T; 3] {
        let z = T::zero();
        let l = T::lit;
        match self {
            Expr::Const { value } => [l(*value), z, z],
            Expr::Poly { coeffs } => {
                let (mut v, mut d1, mut d2) = (z, z, z);
                for &c in coeffs.iter().rev() {
                    d2 = d2 * x + d1 + d1;
                    d1 = d1 * x + v;
                    v = v * x + l(c);
                }
                [v, d1, d2]
            }
            Expr::Sin { amp, freq, phase } => {
                let (a, w) = (l(*amp), l(*freq));
                let (s, c) = (w * x + l(*phase)).sin_cos();
                [a * s, a * w * c, -a * w * w * s]
            }
            Expr::AbsPow { center, power, scale } => {
                let d = x - l(*center);
                let (p, k) = (l(*power), l(*scale));
                let ad = d.abs();
                if ad == z {
                    let v = if *power == 0.0 { k } else { z };
                    // Singular derivatives at the center are reported as 0.
                    let d2 = if *power == 2.0 { k + k } else { z };
                    return [v, z, d2];
                }
                let v = k * ad.powf(p);
                let s = d.signum();
                let d1 = k * p * ad.powf(p - T::one()) * s;
                let d2 = k * p * (p - T::one()) * ad.powf(p - l(2.0));
                [v, d1, d2]
            }
            Expr::Weierstrass { amp, alpha, terms, center } => {
                let d = x - l(*center);
                let r = l(2f64.powf(-alpha));
                let (mut v, mut d1, mut d2) = (z, z, z);
                let (mut w, mut f) = (T::one(), T::one());
                for _ in 0..*terms {
                    let (s, c) = (f * d).sin_cos();
                    v += w * c;
                    d1 -= w * f * s;
                    d2 -= w * f * f * c;
                    w *= r;
                    f = f + f;
                }
                let a = l(*amp);
                [a * v, a * d1, a * d2]
            }
            Expr::Clamp { lo, hi } => {
                let (lo, hi) = (l(*lo), l(*hi));
                if x < lo {
                    [lo, z, z]
                } else if x > hi {
                    [hi, z, z]
                } else {
                    [x, T::one(), z]
                }
            }
            Expr::Sum { terms } => terms.iter().fold([z, z, z], |acc, t| {
                let j = t.jet(x);
                [acc[0] + j[0], acc[1] + j[1], acc[2] + j[2]]
            }),
            Expr::Product { factors } => factors.iter().fold([T::one(), z, z], |acc, t| {
                let j = t.jet(x);
                [
                    acc[0] * j[0],
                    acc[1] * j[0] + acc[0] * j[1],
                    acc[2] * j[0] + l(2.0) * acc[1] * j[1] + acc[0] * j[2],
                ]
            }),
            Expr::Compose { outer, inner } => {
                let i = inner.jet(x);
                let o = outer.jet(i[0]);
                [o[0], o[1] * i[1], o[2] * i[1] * i[1] + o[1] * i[2]]
            }
        }
    }

    /// Derivative of any order: analytic up to 2, nested central differences
    /// of the analytic second derivative above.
    pub fn deriv<T: Real>(&self, x: T, order: u8) -> T {
        match order {
            0..=2 => self.jet(x)[order as usize],
            k => {
                let h = T::lit(1e-3) * (T::one() + x.abs());
                (self.deriv(x + h, k - 1) - self.deriv(x - h, k - 1)) / (h + h)
            }
        }
    }
}

/// The SDE together with its locality window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSpec<T = f64> {
    pub sigma: Expr,
    pub b: Expr,
    pub x0: T,
    pub y0: T,
    pub eps: T,
    pub sigma0: T,
    pub alpha: T,
    pub holder_const: T,
    /// Horizon `T`.
    pub horizon: T,
    pub t: T,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_bound: Option<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_bound: Option<T>,
}

impl<T: Real> CoefficientSpec<T> {
    pub fn check_params(&self) -> Result<()> {
        let ok = self.sigma0 > T::zero()
            && self.alpha > T::zero()
            && self.alpha < T::one()
            && self.eps > T::zero()
            && self.t > T::zero()
            && self.t <= self.horizon
            && self.holder_const >= T::zero()
            && [self.x0, self.y0].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!(
                "need sigma0 > 0, 0 < alpha < 1, eps > 0, 0 < t <= T; got sigma0={}, alpha={}, eps={}, t={}, T={}",
                self.sigma0, self.alpha, self.eps, self.t, self.horizon
            )))
        }
    }

    /// `σ⁻¹ b` of the untruncated coefficients.
    pub fn psi(&self, x: T) -> T {
        self.b.eval(x) / self.sigma.eval(x)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub grid_n: usize,
    pub inf_sigma: f64,
    pub sup_sigma: f64,
    pub sup_b: f64,
    pub holder_quotient: f64,
    /// Grid pair attaining the quotient.
    pub holder_pair: (f64, f64),
    pub passed: bool,
    pub failure: Option<(Clause, f64, String)>,
}

/// Samples the open `6ε` ball and measures the assumption clauses without
/// failing.
pub fn assess_assumptions<T: Real>(spec: &CoefficientSpec<T>, grid_n: usize) -> Result<ValidationReport> {
    spec.check_params()?;
    if grid_n < 100 {
        return Err(Error::InvalidParams(format!("grid_n must be >= 100, got {grid_n}")));
    }
    let width = T::lit(12.0) * spec.eps;
    let xs: Vec<T> = (0..grid_n)
        .map(|i| spec.y0 - T::lit(6.0) * spec.eps + width * (T::from_count(i) + T::lit(0.5)) / T::from_count(grid_n))
        .collect();
    let mut inf_sigma = f64::INFINITY;
    let mut inf_at = 0.0;
    let mut sup_sigma = 0.0f64;
    let mut sup_sigma_at = 0.0;
    let mut sup_b = 0.0f64;
    let mut sup_b_at = 0.0;
    let mut failure = None;
    let mut psi = Vec::with_capacity(grid_n);
    for &x in &xs {
        let s = spec.sigma.jet(x);
        let bv = spec.b.eval(x).as_f64();
        let sv = s[0].as_f64().abs();
        if sv < inf_sigma || sv.is_nan() {
            inf_sigma = sv;
            inf_at = x.as_f64();
        }
        if sv > sup_sigma {
            sup_sigma = sv;
            sup_sigma_at = x.as_f64();
        }
        if bv.abs() > sup_b || !bv.is_finite() {
            sup_b = bv.abs();
            sup_b_at = x.as_f64();
        }
        if failure.is_none() && !(s[1].is_finite() && s[2].is_finite()) {
            failure = Some((Clause::H2, x.as_f64(), "diffusion derivatives are not finite".into()));
        }
        psi.push(spec.psi(x).as_f64());
    }
    let alpha = spec.alpha.as_f64();
    let xf: Vec<f64> = xs.iter().map(|v| v.as_f64()).collect();
    let mut q = 0.0f64;
    let mut pair = (xf[0], xf[0]);
    for i in 0..grid_n {
        for j in i + 1..grid_n {
            let v = (psi[j] - psi[i]).abs() / (xf[j] - xf[i]).powf(alpha);
            if v > q || v.is_nan() {
                q = v;
                pair = (xf[i], xf[j]);
            }
        }
    }
    let sigma0 = spec.sigma0.as_f64();
    let h1 = if !(inf_sigma > sigma0) {
        Some((Clause::H1, inf_at, format!("inf |sigma| = {inf_sigma} is not above sigma0 = {sigma0}")))
    } else if !sup_b.is_finite() {
        Some((Clause::H1, sup_b_at, "drift is not finite".to_string()))
    } else if let Some(bound) = spec.sigma_bound.filter(|bd| sup_sigma > bd.as_f64()) {
        Some((Clause::H1, sup_sigma_at, format!("sup |sigma| = {sup_sigma} exceeds declared {bound}")))
    } else if let Some(bound) = spec.b_bound.filter(|bd| sup_b > bd.as_f64()) {
        Some((Clause::H1, sup_b_at, format!("sup |b| = {sup_b} exceeds declared {bound}")))
    } else {
        None
    };
    let limit = spec.holder_const.as_f64() * 1.01;
    let h3 = (!(q <= limit)).then(|| {
        (
            Clause::H3,
            pair.0,
            format!("Hölder quotient {q} between {} and {} exceeds {limit}", pair.0, pair.1),
        )
    });
    let failure = h1.or(failure).or(h3);
    Ok(ValidationReport {
        grid_n,
        inf_sigma,
        sup_sigma,
        sup_b,
        holder_quotient: q,
        holder_pair: pair,
        passed: failure.is_none(),
        failure,
    })
}

/// Like [`assess_assumptions`] but turns the first failed clause into an error.
pub fn validate_assumptions<T: Real>(spec: &CoefficientSpec<T>, grid_n: usize) -> Result<ValidationReport> {
    let report = assess_assumptions(spec, grid_n)?;
    match &report.failure {
        Some((clause, at, detail)) => Err(Error::Validation {
            clause: *clause,
            at: *at,
            detail: detail.clone(),
        }),
        None => Ok(report),
    }
}

/// Smooth radial clamp onto the closed `5ε` ball around `y0`.
#[derive(Debug, Clone)]
pub struct Truncation<T> {
    y0: T,
    eps: T,
    ramp: Ramp<T>,
}

impl<T: Real> Truncation<T> {
    pub fn new(y0: T, eps: T) -> Result<Self> {
        if !(eps > T::zero()) {
            return Err(Error::InvalidParams(format!("eps must be positive, got {eps}")));
        }
        let ramp = Ramp::new(T::lit(4.0) * eps, T::lit(5.0) * eps)?;
        Ok(Self { y0, eps, ramp })
    }

    /// Radial profile and its first two derivatives at distance `r >= 0`.
    fn radial(&self, r: T) -> [T; 3] {
        let half = self.eps * T::lit(0.5);
        if r <= self.ramp.a() {
            [r, T::one(), T::zero()]
        } else if r >= self.ramp.r() {
            [self.ramp.r(), T::zero(), T::zero()]
        } else {
            let g = &self.ramp;
            let g1 = g.deriv(r, 1).unwrap();
            let g2 = g.deriv(r, 2).unwrap();
            // Past the midpoint, evaluate from the outer end through the
            // mirror symmetry 1 - g(u) = g(a + r - u) to keep increments exact.
            let mid = (g.a() + g.r()) * T::lit(0.5);
            let h = if r <= mid {
                r - g.integral(r) + half * g.value(r)
            } else {
                let m = g.a() + g.r() - r;
                g.r() - g.integral(m) - half * g.value(m)
            };
            [
                h,
                T::one() - g.value(r) + half * g1,
                -g1 + half * g2,
            ]
        }
    }

    pub fn eval(&self, y: T) -> T {
        self.jet(y)[0]
    }

    /// `λ(y)`, `λ'(y)`, `λ''(y)`.
    pub fn jet(&self, y: T) -> [T; 3] {
        let d = y - self.y0;
        let r = d.abs();
        if r <= self.ramp.a() {
            return [y, T::one(), T::zero()];
        }
        let s = d.signum();
        let [h, h1, h2] = self.radial(r);
        [self.y0 + s * h, h1, s * h2]
    }
}

pub fn truncation_lambda<T: Real>(spec: &CoefficientSpec<T>, y: T) -> Result<T> {
    Ok(Truncation::new(spec.y0, spec.eps)?.eval(y))
}

/// Coefficients composed with the truncation, plus their sup norms over ℝ.
#[derive(Debug, Clone)]
pub struct TruncatedCoeffs<T = f64> {
    spec: CoefficientSpec<T>,
    lambda: Truncation<T>,
    pub sup_sigma_bar: T,
    pub inf_sigma_bar: T,
    pub sup_b_bar: T,
    pub sup_psi: T,
}

const SUP_SAMPLES: usize = 100_000;

fn sup_abs<T: Real, F: Fn(T) -> T>(f: F, lo: T, hi: T) -> T {
    let n = SUP_SAMPLES;
    let h = (hi - lo) / T::from_count(n - 1);
    let x = |i: usize| lo + h * T::from_count(i);
    let mut best = (T::zero(), 0usize);
    for i in 0..n {
        let v = f(x(i)).abs();
        if v > best.0 || v.is_nan() {
            best = (v, i);
        }
    }
    let (mut top, i) = best;
    if i > 0 && i + 1 < n {
        // Parabolic refinement through the sample maximum and its neighbors.
        let (fm, f0, fp) = (f(x(i - 1)).abs(), top, f(x(i + 1)).abs());
        let den = fm - T::lit(2.0) * f0 + fp;
        if den < T::zero() {
            let off = T::lit(0.5) * (fm - fp) / den;
            if off.abs() < T::one() {
                top = top.max(f(x(i) + off * h).abs());
            }
        }
    }
    top
}

impl<T: Real> TruncatedCoeffs<T> {
    /// Builds without running the assumption checks.
    pub fn unvalidated(spec: CoefficientSpec<T>) -> Result<Self> {
        spec.check_params()?;
        let lambda = Truncation::new(spec.y0, spec.eps)?;
        let r = T::lit(5.0) * spec.eps;
        let (lo, hi) = (spec.y0 - r, spec.y0 + r);
        let sup_sigma_bar = sup_abs(|x| spec.sigma.eval(x), lo, hi);
        let inf_sigma_bar = T::one() / sup_abs(|x| T::one() / spec.sigma.eval(x), lo, hi);
        let sup_b_bar = sup_abs(|x| spec.b.eval(x), lo, hi);
        let sup_psi = sup_abs(|x| spec.psi(x), lo, hi);
        Ok(Self {
            spec,
            lambda,
            sup_sigma_bar,
            inf_sigma_bar,
            sup_b_bar,
            sup_psi,
        })
    }

    pub fn spec(&self) -> &CoefficientSpec<T> {
        &self.spec
    }

    pub fn lambda(&self) -> &Truncation<T> {
        &self.lambda
    }

    #[inline]
    pub fn sigma_bar(&self, y: T) -> T {
        self.spec.sigma.eval(self.lambda.eval(y))
    }

    /// `σ̄`, `σ̄'`, `σ̄''` by the chain rule through `λ`.
    #[inline]
    pub fn sigma_bar_jet(&self, y: T) -> [T; 3] {
        let l = self.lambda.jet(y);
        let s = self.spec.sigma.jet(l[0]);
        [s[0], s[1] * l[1], s[2] * l[1] * l[1] + s[1] * l[2]]
    }

    #[inline]
    pub fn b_bar(&self, y: T) -> T {
        self.spec.b.eval(self.lambda.eval(y))
    }

    /// `(σ̄(y), b̄(y))` with a single evaluation of `λ`.
    #[inline]
    pub fn coefficients(&self, y: T) -> (T, T) {
        let l = self.lambda.eval(y);
        (self.spec.sigma.eval(l), self.spec.b.eval(l))
    }

    #[inline]
    pub fn psi(&self, y: T) -> T {
        let (s, b) = self.coefficients(y);
        b / s
    }
}

/// Validates on `grid_n` points and builds the truncated coefficients.
pub fn build_truncated<T: Real>(spec: CoefficientSpec<T>, grid_n: usize) -> Result<TruncatedCoeffs<T>> {
    validate_assumptions(&spec, grid_n)?;
    TruncatedCoeffs::unvalidated(spec)
}
