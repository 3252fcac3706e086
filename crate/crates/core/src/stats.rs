//! Monte Carlo summaries, deterministic reductions, and the least-squares fits used for rate
//! estimation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::real::Real;

/// Paths per reduction block. Partial sums are formed per block and then added in block order,
/// so a reduction gives the same bits for any worker count.
pub const BLOCK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe<T> {
    pub mean: T,
    pub se: T,
    pub n: usize,
}

impl<T: Real> MeanSe<T> {
    /// Returns `true` when `value` lies within `k` standard errors of the mean.
    pub fn contains(&self, value: T, k: T) -> bool {
        (self.mean - value).abs() <= k * self.se
    }
}

/// Sum of `f(i)` for `i in 0..n`, computed in fixed blocks.
pub fn block_sum<T, F>(n: usize, f: F) -> T
where
    T: Real,
    F: Fn(usize) -> T + Sync,
{
    let partial: Vec<T> = (0..n.div_ceil(BLOCK))
        .into_par_iter()
        .map(|b| {
            let lo = b * BLOCK;
            let hi = (lo + BLOCK).min(n);
            let mut s = T::zero();
            for i in lo..hi {
                s += f(i);
            }
            s
        })
        .collect();
    partial.into_iter().fold(T::zero(), |a, b| a + b)
}

/// Mean and standard error, reduced in fixed blocks.
pub fn mean_se<T: Real>(xs: &[T]) -> MeanSe<T> {
    let n = xs.len();
    if n == 0 {
        return MeanSe {
            mean: T::nan(),
            se: T::nan(),
            n,
        };
    }
    let nf = T::from_count(n);
    let mean = block_sum(n, |i| xs[i]) / nf;
    let ss = block_sum(n, |i| (xs[i] - mean) * (xs[i] - mean));
    let var = if n > 1 {
        ss / T::from_count(n - 1)
    } else {
        T::zero()
    };
    MeanSe {
        mean,
        se: (var / nf).sqrt(),
        n,
    }
}

/// Unbiased sample variance.
pub fn variance<T: Real>(xs: &[T]) -> T {
    let m = mean_se(xs);
    m.se * m.se * T::from_count(xs.len())
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_interval(hits: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = hits as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Percentile bootstrap interval for the mean of `xs`.
///
/// Replicates are drawn from per-replicate ChaCha streams, so the interval is reproducible for
/// a given seed regardless of scheduling.
pub fn bootstrap_mean_ci<T: Real>(xs: &[T], n_boot: usize, seed: u64, level: f64) -> (T, T) {
    let n = xs.len();
    if n == 0 || n_boot == 0 {
        return (T::nan(), T::nan());
    }
    let mut means: Vec<T> = (0..n_boot)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let mut s = T::zero();
            for _ in 0..n {
                s += xs[rng.random_range(0..n)];
            }
            s / T::from_count(n)
        })
        .collect();
    means.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let tail = (1.0 - level) / 2.0;
    (quantile_sorted(&means, tail), quantile_sorted(&means, 1.0 - tail))
}

fn quantile_sorted<T: Real>(sorted: &[T], q: f64) -> T {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = T::lit(pos - lo as f64);
    sorted[lo] * (T::one() - w) + sorted[hi] * w
}

/// Ordinary least-squares line `y = intercept + slope · x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub residual_sd: f64,
    pub n: usize,
}

impl LineFit {
    /// Symmetric interval `slope ± z · slope_se`.
    pub fn slope_interval(&self, z: f64) -> (f64, f64) {
        (self.slope - z * self.slope_se, self.slope + z * self.slope_se)
    }
}

pub fn fit_line(x: &[f64], y: &[f64]) -> LineFit {
    assert_eq!(x.len(), y.len(), "fit_line: length mismatch");
    let n = x.len();
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let r = b - intercept - slope * a;
            r * r
        })
        .sum();
    let residual_sd = if n > 2 { (rss / (nf - 2.0)).sqrt() } else { 0.0 };
    LineFit {
        slope,
        intercept,
        slope_se: residual_sd / sxx.sqrt(),
        residual_sd,
        n,
    }
}

/// Least-squares fit of `ln y` against `ln x`.
pub fn loglog_fit(x: &[f64], y: &[f64]) -> LineFit {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    fit_line(&lx, &ly)
}

/// Pairs bootstrap percentile interval for the slope of a line fit.
pub fn bootstrap_slope_ci(x: &[f64], y: &[f64], n_boot: usize, seed: u64, level: f64) -> (f64, f64) {
    let n = x.len();
    let mut slopes: Vec<f64> = (0..n_boot)
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let mut bx = Vec::with_capacity(n);
            let mut by = Vec::with_capacity(n);
            for _ in 0..n {
                let i = rng.random_range(0..n);
                bx.push(x[i]);
                by.push(y[i]);
            }
            fit_line(&bx, &by).slope
        })
        .filter(|s| s.is_finite())
        .collect();
    if slopes.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    slopes.sort_by(|a, b| a.total_cmp(b));
    let tail = (1.0 - level) / 2.0;
    (quantile_sorted(&slopes, tail), quantile_sorted(&slopes, 1.0 - tail))
}

/// Quadratic least-squares fit `y = c0 + c1 x + c2 x²`; returns `([c0, c1, c2], se(c2))`.
pub fn fit_quadratic(x: &[f64], y: &[f64]) -> ([f64; 3], f64) {
    let n = x.len();
    // centre x to keep the normal equations well conditioned
    let mx = x.iter().sum::<f64>() / n as f64;
    let mut a = [[0.0f64; 3]; 3];
    let mut rhs = [0.0f64; 3];
    for (&xi, &yi) in x.iter().zip(y) {
        let u = xi - mx;
        let row = [1.0, u, u * u];
        for r in 0..3 {
            rhs[r] += row[r] * yi;
            for c in 0..3 {
                a[r][c] += row[r] * row[c];
            }
        }
    }
    let inv = invert3(a);
    let mut beta = [0.0; 3];
    for r in 0..3 {
        beta[r] = (0..3).map(|c| inv[r][c] * rhs[c]).sum();
    }
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(&xi, &yi)| {
            let u = xi - mx;
            let r = yi - beta[0] - beta[1] * u - beta[2] * u * u;
            r * r
        })
        .sum();
    let s2 = if n > 3 { rss / (n - 3) as f64 } else { 0.0 };
    let se2 = (s2 * inv[2][2]).sqrt();
    // back to uncentred coefficients
    let c2 = beta[2];
    let c1 = beta[1] - 2.0 * c2 * mx;
    let c0 = beta[0] - beta[1] * mx + c2 * mx * mx;
    ([c0, c1, c2], se2)
}

fn invert3(m: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let mut inv = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            let (r1, r2) = ((c + 1) % 3, (c + 2) % 3);
            let (c1, c2) = ((r + 1) % 3, (r + 2) % 3);
            inv[r][c] = (m[r1][c1] * m[r2][c2] - m[r1][c2] * m[r2][c1]) / det;
        }
    }
    inv
}
