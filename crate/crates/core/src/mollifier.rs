//! Smooth bump functions: the raw bump `f`, the normalized ramp `g` and the
//! even plateau cutoff `phi`.

use crate::error::{Error, Result};
use crate::quad::{adaptive_simpson, gauss_legendre_panel};
use crate::real::Real;

/// Exponents below this are flushed to zero.
const EXP_FLOOR: f64 = -700.0;
/// Interpolation nodes across the ramp interval.
pub const RAMP_NODES: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    Rising,
    Falling,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BumpParams<T> {
    pub a: T,
    pub r: T,
    pub orientation: Orientation,
}

impl<T: Real> BumpParams<T> {
    pub fn new(a: T, r: T, orientation: Orientation) -> Result<Self> {
        if !(a < r) || !a.is_finite() || !r.is_finite() {
            return Err(Error::InvalidParams(format!(
                "bump needs a < r, got a={a}, r={r}"
            )));
        }
        Ok(Self { a, r, orientation })
    }

    pub fn rising(a: T, r: T) -> Result<Self> {
        Self::new(a, r, Orientation::Rising)
    }
}

#[inline]
fn bump<T: Real>(a: T, r: T, x: T) -> T {
    if x <= a || x >= r {
        return T::zero();
    }
    let e = T::one() / (x - r) - T::one() / (x - a);
    if e < T::lit(EXP_FLOOR) {
        T::zero()
    } else {
        e.exp()
    }
}

/// Returns `(f, f', f'')` of the raw bump at `x`.
#[inline]
fn bump_jet<T: Real>(a: T, r: T, x: T) -> (T, T, T) {
    let f = bump(a, r, x);
    if f == T::zero() {
        return (f, f, f);
    }
    let ir = T::one() / (x - r);
    let ia = T::one() / (x - a);
    let q = ia * ia - ir * ir;
    let dq = T::lit(2.0) * (ir * ir * ir - ia * ia * ia);
    (f, f * q, f * (q * q + dq))
}

/// Third derivative of the raw bump.
#[inline]
fn bump_d3<T: Real>(a: T, r: T, x: T) -> T {
    let f = bump(a, r, x);
    if f == T::zero() {
        return f;
    }
    let ir = T::one() / (x - r);
    let ia = T::one() / (x - a);
    let q = ia * ia - ir * ir;
    let dq = T::lit(2.0) * (ir * ir * ir - ia * ia * ia);
    let ddq = T::lit(6.0) * (ia.powi(4) - ir.powi(4));
    f * (q * q * q + T::lit(3.0) * q * dq + ddq)
}

/// The raw bump `exp(1/(x-r) - 1/(x-a))` on `(a, r)`, zero elsewhere.
pub fn eval_f<T: Real>(p: &BumpParams<T>, x: T) -> Result<T> {
    BumpParams::new(p.a, p.r, p.orientation)?;
    Ok(bump(p.a, p.r, x))
}

/// Normalized ramp by direct adaptive quadrature. Use [`Ramp`] in loops.
pub fn eval_g<T: Real>(p: &BumpParams<T>, x: T) -> Result<T> {
    BumpParams::new(p.a, p.r, p.orientation)?;
    let (a, r) = (p.a, p.r);
    let rising = if x <= a {
        T::zero()
    } else if x >= r {
        T::one()
    } else {
        let f = |y: T| bump(a, r, y);
        let z = adaptive_simpson(f, a, r, T::lit(1e-15) * (r - a));
        // Integrate toward the nearer knot; a rough pass sets a tolerance
        // relative to the partial integral itself.
        let partial = |lo: T, hi: T| {
            let rough = adaptive_simpson(f, lo, hi, z * T::lit(1e-8));
            adaptive_simpson(f, lo, hi, (rough * T::lit(1e-14)).max(T::min_positive_value()))
        };
        let mid = (a + r) * T::lit(0.5);
        if x <= mid {
            partial(a, x) / z
        } else {
            T::one() - partial(x, r) / z
        }
    };
    Ok(match p.orientation {
        Orientation::Rising => rising,
        Orientation::Falling => T::one() - rising,
    })
}

/// Tabulated cumulative integral evaluated by quintic Hermite interpolation.
#[derive(Debug, Clone)]
struct QuinticTable<T> {
    lo: T,
    h: T,
    val: Vec<T>,
    d1: Vec<T>,
    d2: Vec<T>,
}

impl<T: Real> QuinticTable<T> {
    fn eval(&self, x: T) -> T {
        let n = self.val.len() - 1;
        let s = (x - self.lo) / self.h;
        let i = s.floor().to_usize().unwrap_or(0).min(n - 1);
        let t = s - T::from_count(i);
        let (t2, t3) = (t * t, t * t * t);
        let (t4, t5) = (t3 * t, t3 * t2);
        let c = |v: f64| T::lit(v);
        let h0 = T::one() - c(10.0) * t3 + c(15.0) * t4 - c(6.0) * t5;
        let h1 = t - c(6.0) * t3 + c(8.0) * t4 - c(3.0) * t5;
        let h2 = c(0.5) * (t2 - c(3.0) * t3 + c(3.0) * t4 - t5);
        let h3 = c(0.5) * (t3 - c(2.0) * t4 + t5);
        let h4 = -c(4.0) * t3 + c(7.0) * t4 - c(3.0) * t5;
        let h5 = c(10.0) * t3 - c(15.0) * t4 + c(6.0) * t5;
        let hh = self.h * self.h;
        self.val[i] * h0
            + self.h * self.d1[i] * h1
            + hh * self.d2[i] * h2
            + hh * self.d2[i + 1] * h3
            + self.h * self.d1[i + 1] * h4
            + self.val[i + 1] * h5
    }
}

/// Rising ramp `g_{a,r}` with O(1) evaluation of value, derivatives and
/// antiderivative.
#[derive(Debug, Clone)]
pub struct Ramp<T> {
    a: T,
    r: T,
    z: T,
    g: QuinticTable<T>,
    // Cumulative integral of (s-a)f(s)/z, used for the antiderivative of g.
    sf: QuinticTable<T>,
}

impl<T: Real> Ramp<T> {
    pub fn new(a: T, r: T) -> Result<Self> {
        BumpParams::rising(a, r)?;
        let n = RAMP_NODES;
        let h = (r - a) / T::from_count(n);
        let node = |i: usize| a + h * T::from_count(i);
        let mut cum = vec![T::zero(); n + 1];
        let mut cum_sf = vec![T::zero(); n + 1];
        let f = |y: T| bump(a, r, y);
        let sf = |y: T| (y - a) * bump(a, r, y);
        for i in 0..n {
            cum[i + 1] = cum[i] + gauss_legendre_panel(&f, node(i), node(i + 1));
            cum_sf[i + 1] = cum_sf[i] + gauss_legendre_panel(&sf, node(i), node(i + 1));
        }
        let z = cum[n];
        let jets: Vec<(T, T, T)> = (0..=n).map(|i| bump_jet(a, r, node(i))).collect();
        let g = QuinticTable {
            lo: a,
            h,
            val: cum.iter().map(|&c| c / z).collect(),
            d1: jets.iter().map(|j| j.0 / z).collect(),
            d2: jets.iter().map(|j| j.1 / z).collect(),
        };
        let sf = QuinticTable {
            lo: a,
            h,
            val: cum_sf.iter().map(|&c| c / z).collect(),
            d1: (0..=n).map(|i| (node(i) - a) * jets[i].0 / z).collect(),
            d2: (0..=n).map(|i| (jets[i].0 + (node(i) - a) * jets[i].1) / z).collect(),
        };
        Ok(Self { a, r, z, g, sf })
    }

    pub fn a(&self) -> T {
        self.a
    }

    pub fn r(&self) -> T {
        self.r
    }

    /// Normalizing constant `∫ f` over the ramp interval.
    pub fn norm(&self) -> T {
        self.z
    }

    pub fn value(&self, x: T) -> T {
        if x <= self.a {
            T::zero()
        } else if x >= self.r {
            T::one()
        } else {
            self.g.eval(x).max(T::zero()).min(T::one())
        }
    }

    /// Derivative of order 1..=4.
    pub fn deriv(&self, x: T, order: u8) -> Result<T> {
        let (a, r) = (self.a, self.r);
        Ok(match order {
            1 => bump(a, r, x) / self.z,
            2 => bump_jet(a, r, x).1 / self.z,
            3 => bump_jet(a, r, x).2 / self.z,
            4 => bump_d3(a, r, x) / self.z,
            k => return Err(Error::UnsupportedOrder(k)),
        })
    }

    /// `∫_a^x g(s) ds`.
    pub fn integral(&self, x: T) -> T {
        if x <= self.a {
            T::zero()
        } else if x >= self.r {
            x - self.a - *self.sf.val.last().unwrap()
        } else {
            (x - self.a) * self.g.eval(x) - self.sf.eval(x)
        }
    }
}

/// Even plateau cutoff: 1 on `[-a, a]`, 0 outside `(-2ε, 2ε)`.
#[derive(Debug, Clone)]
pub struct Mollifier<T> {
    eps: T,
    a: T,
    ramp: Ramp<T>,
}

impl<T: Real> Mollifier<T> {
    /// Inner knot at `1.5 ε`.
    pub fn new(eps: T) -> Result<Self> {
        Self::with_knot(eps, eps * T::lit(1.5))
    }

    pub fn with_knot(eps: T, a: T) -> Result<Self> {
        if !(eps > T::zero()) || !(a > eps && a < eps + eps) {
            return Err(Error::InvalidParams(format!(
                "mollifier needs eps > 0 and eps < a < 2 eps, got eps={eps}, a={a}"
            )));
        }
        Ok(Self { eps, a, ramp: Ramp::new(a, eps + eps)? })
    }

    pub fn eps(&self) -> T {
        self.eps
    }

    pub fn knot(&self) -> T {
        self.a
    }

    pub fn ramp(&self) -> &Ramp<T> {
        &self.ramp
    }

    #[inline]
    pub fn eval(&self, x: T) -> T {
        (T::one() - self.ramp.value(-x)) * (T::one() - self.ramp.value(x))
    }

    /// Derivative of order 1 or 2.
    pub fn deriv(&self, x: T, order: u8) -> Result<T> {
        let g = &self.ramp;
        let u = T::one() - g.value(-x);
        let v = T::one() - g.value(x);
        let du = g.deriv(-x, 1)?;
        let dv = -g.deriv(x, 1)?;
        match order {
            1 => Ok(du * v + u * dv),
            2 => {
                let ddu = -g.deriv(-x, 2)?;
                let ddv = -g.deriv(x, 2)?;
                Ok(ddu * v + T::lit(2.0) * du * dv + u * ddv)
            }
            k => Err(Error::UnsupportedOrder(k)),
        }
    }

    /// `(φ, φ', φ'')` in one call.
    #[inline]
    pub fn jet(&self, x: T) -> (T, T, T) {
        let p = self.eval(x);
        if p == T::one() || x.abs() >= self.eps + self.eps {
            return (p, T::zero(), T::zero());
        }
        (p, self.deriv(x, 1).unwrap(), self.deriv(x, 2).unwrap())
    }
}

pub fn eval_phi<T: Real>(eps: T, a: T, x: T) -> Result<T> {
    Ok(Mollifier::with_knot(eps, a)?.eval(x))
}

pub fn eval_phi_deriv<T: Real>(eps: T, a: T, x: T, order: u8) -> Result<T> {
    if !(1..=2).contains(&order) {
        return Err(Error::UnsupportedOrder(order));
    }
    Mollifier::with_knot(eps, a)?.deriv(x, order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn bump_reference_values() {
        let p = BumpParams::rising(1.0, 2.0).unwrap();
        assert_eq!(eval_f(&p, 0.5).unwrap(), 0.0);
        assert!(close(eval_f(&p, 1.5).unwrap(), (-4f64).exp(), 1e-15));
        assert_eq!(eval_f(&p, 1.0 + 1e-9).unwrap(), 0.0);
        assert_eq!(eval_f(&p, 2.0 - 1e-9).unwrap(), 0.0);
        assert!(eval_f(&p, 1.0 + 1e-3).unwrap().is_finite());
        assert!(eval_f(&BumpParams { a: 2.0, r: 1.0, orientation: Orientation::Rising }, 1.5).is_err());
    }

    #[test]
    fn ramp_reference_values() {
        let p = BumpParams::rising(1.0, 2.0).unwrap();
        assert_eq!(eval_g(&p, 0.9).unwrap(), 0.0);
        assert_eq!(eval_g(&p, 2.1).unwrap(), 1.0);
        assert!(close(eval_g(&p, 1.5).unwrap(), 0.5, 1e-12));
        let fall = BumpParams::new(1.0, 2.0, Orientation::Falling).unwrap();
        assert_eq!(eval_g(&fall, 0.9).unwrap(), 1.0);
    }

    #[test]
    fn tabulated_ramp_matches_adaptive_quadrature() {
        let p = BumpParams::rising(1.0, 2.0).unwrap();
        let ramp = Ramp::new(1.0, 2.0).unwrap();
        for k in 1..500 {
            let x = 1.0 + k as f64 / 500.0;
            let exact = eval_g(&p, x).unwrap();
            let got = ramp.value(x);
            let err = (got - exact).abs();
            assert!(err <= 1e-12, "x={x} exact={exact} got={got}");
            if exact.min(1.0 - exact) >= 1e-6 {
                assert!(err <= 1e-10 * exact, "x={x} exact={exact} got={got}");
            }
        }
    }

    #[test]
    fn ramp_antiderivative_matches_quadrature() {
        let ramp = Ramp::new(4.0, 5.0).unwrap();
        for k in 0..=20 {
            let x = 3.9 + k as f64 * 0.06;
            let exact = adaptive_simpson(|s| ramp.value(s), 4.0, x.max(4.0), 1e-13);
            assert!(close(ramp.integral(x), exact, 1e-10), "x={x}");
        }
        assert!(close(ramp.integral(5.0), 0.5, 1e-12));
    }

    #[test]
    fn ramp_derivatives_match_finite_differences() {
        let ramp = Ramp::new(1.0, 2.0).unwrap();
        let h = 1e-5;
        for k in 1..100 {
            let x = 1.0 + k as f64 / 100.0;
            let fd1 = (ramp.value(x + h) - ramp.value(x - h)) / (2.0 * h);
            assert!(close(ramp.deriv(x, 1).unwrap(), fd1, 1e-7), "x={x}");
            let fd3 = (ramp.deriv(x + h, 2).unwrap() - ramp.deriv(x - h, 2).unwrap()) / (2.0 * h);
            assert!(close(ramp.deriv(x, 3).unwrap(), fd3, 1e-4), "x={x}");
        }
        assert!(matches!(ramp.deriv(1.5, 5), Err(Error::UnsupportedOrder(5))));
    }

    #[test]
    fn phi_reference_values() {
        assert_eq!(eval_phi(1.0, 1.5, 0.0).unwrap(), 1.0);
        assert_eq!(eval_phi(1.0, 1.5, 2.0).unwrap(), 0.0);
        let p = BumpParams::rising(1.5, 2.0).unwrap();
        let want = 1.0 - eval_g(&p, 1.75).unwrap();
        assert!(close(eval_phi(1.0, 1.5, 1.75).unwrap(), want, 1e-12));
        assert_eq!(eval_phi(1.0, 1.5, 1.75).unwrap(), eval_phi(1.0, 1.5, -1.75).unwrap());
        assert!(eval_phi(1.0, 0.9, 0.0).is_err());
        assert!(eval_phi(1.0, 2.0, 0.0).is_err());
    }

    #[test]
    fn phi_derivative_reference_values() {
        assert_eq!(eval_phi_deriv(1.0, 1.5, 0.0, 1).unwrap(), 0.0);
        assert_eq!(eval_phi_deriv(1.0, 1.5, 3.0, 1).unwrap(), 0.0);
        let d: f64 = eval_phi_deriv(1.0, 1.5, 1.75, 1).unwrap();
        let h = 1e-6;
        let fd = (eval_phi(1.0, 1.5, 1.75 + h).unwrap() - eval_phi(1.0, 1.5, 1.75 - h).unwrap()) / (2.0 * h);
        assert!(d < 0.0);
        assert!((d - fd).abs() <= 1e-6 * d.abs());
        assert!(matches!(eval_phi_deriv(1.0, 1.5, 0.0, 3), Err(Error::UnsupportedOrder(3))));
    }

    #[test]
    fn phi_sandwich_and_evenness_on_dense_grid() {
        let eps = 0.7;
        let m = Mollifier::new(eps).unwrap();
        for k in 0..10_000 {
            let x = -3.0 * eps + 6.0 * eps * k as f64 / 9_999.0;
            let v = m.eval(x);
            let lo = if x.abs() <= eps { 1.0 } else { 0.0 };
            let hi = if x.abs() <= 2.0 * eps { 1.0 } else { 0.0 };
            assert!(v >= lo - 1e-12 && v <= hi + 1e-12, "x={x} v={v}");
            assert!((v - m.eval(-x)).abs() <= 1e-12);
        }
    }

    #[test]
    fn phi_derivatives_match_finite_differences() {
        let eps = 1.0;
        let m = Mollifier::new(eps).unwrap();
        let h = 1e-5;
        for k in 0..=3000 {
            let x = -3.0 * eps + 6.0 * eps * k as f64 / 3000.0;
            let fd1 = (m.eval(x + h) - m.eval(x - h)) / (2.0 * h);
            let fd2 = (m.eval(x + h) - 2.0 * m.eval(x) + m.eval(x - h)) / (h * h);
            assert!(close(m.deriv(x, 1).unwrap(), fd1, 1e-5), "x={x}");
            assert!(close(m.deriv(x, 2).unwrap(), fd2, 1e-5 * 100.0_f64.max(1.0)), "x={x}");
            if x.abs() <= m.knot() {
                assert_eq!(m.deriv(x, 1).unwrap(), 0.0);
                assert_eq!(m.deriv(x, 2).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn single_precision_mollifier_is_usable() {
        let m = Mollifier::<f32>::new(1.0).unwrap();
        assert_eq!(m.eval(0.3), 1.0);
        assert_eq!(m.eval(2.5), 0.0);
        let v = m.eval(1.75);
        assert!(v > 0.0 && v < 1.0);
        assert_eq!(v, m.eval(-1.75));
    }

    proptest! {
        #[test]
        fn ramp_is_monotone(a in -5.0f64..5.0, w in 0.01f64..5.0, u in 0.0f64..1.0, v in 0.0f64..1.0) {
            let ramp = Ramp::new(a, a + w).unwrap();
            let (lo, hi) = if u <= v { (u, v) } else { (v, u) };
            let x0 = a - 0.1 * w + 1.2 * w * lo;
            let x1 = a - 0.1 * w + 1.2 * w * hi;
            prop_assert!(ramp.value(x0) <= ramp.value(x1));
        }

        #[test]
        fn phi_is_even_and_bounded(eps in 0.01f64..10.0, frac in 0.05f64..0.95, x in -3.0f64..3.0) {
            let m = Mollifier::with_knot(eps, eps * (1.0 + frac)).unwrap();
            let v = m.eval(x * eps);
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert!((v - m.eval(-x * eps)).abs() <= 1e-12);
        }
    }
}
