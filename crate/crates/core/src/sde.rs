//! Euler–Maruyama simulation of the original and the localized equation on
//! shared noise, stopping times, event labels and event-rate estimation.

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coeffs::{CoefficientSpec, TruncatedCoeffs};
use crate::error::{Error, Result};
use crate::mollifier::Mollifier;
use crate::real::Real;
use crate::rng::NoiseSource;
use crate::stats::{loglog_fit, wilson_interval, LineFit};

/// Uniform time grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimGrid<T = f64> {
    pub t_start: T,
    pub t_end: T,
    pub n_steps: usize,
}

impl<T: Real> SimGrid<T> {
    pub fn new(t_start: T, t_end: T, n_steps: usize) -> Result<Self> {
        if n_steps == 0 || !(t_end > t_start) {
            return Err(Error::InvalidParams(format!(
                "grid needs n_steps >= 1 and t_end > t_start, got [{t_start}, {t_end}] with {n_steps} steps"
            )));
        }
        Ok(Self { t_start, t_end, n_steps })
    }

    /// Grid over `[t_start, t_end]` with step close to `dt_target`.
    pub fn with_step(t_start: T, t_end: T, dt_target: T) -> Result<Self> {
        let n = ((t_end - t_start) / dt_target).ceil().to_usize().unwrap_or(0).max(1);
        Self::new(t_start, t_end, n)
    }

    pub fn dt(&self) -> T {
        (self.t_end - self.t_start) / T::from_count(self.n_steps)
    }

    pub fn time(&self, k: usize) -> T {
        self.t_start + self.dt() * T::from_count(k)
    }
}

/// Drift and diffusion pair evaluated together.
pub trait Coefficients<T>: Sync {
    /// `(σ(x), b(x))`.
    fn sigma_b(&self, x: T) -> (T, T);
}

impl<T: Real> Coefficients<T> for CoefficientSpec<T> {
    #[inline]
    fn sigma_b(&self, x: T) -> (T, T) {
        (self.sigma.eval(x), self.b.eval(x))
    }
}

impl<T: Real> Coefficients<T> for TruncatedCoeffs<T> {
    #[inline]
    fn sigma_b(&self, x: T) -> (T, T) {
        self.coefficients(x)
    }
}

/// Drops the drift of the wrapped coefficients.
pub struct Driftless<'a, C>(pub &'a C);

impl<T: Real, C: Coefficients<T>> Coefficients<T> for Driftless<'_, C> {
    #[inline]
    fn sigma_b(&self, x: T) -> (T, T) {
        (self.0.sigma_b(x).0, T::zero())
    }
}

#[inline]
fn euler_step<T: Real, C: Coefficients<T>>(c: &C, x: T, dt: T, dw: T) -> T {
    let (s, b) = c.sigma_b(x);
    x + b * dt + s * dw
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Record {
    /// Terminal values only.
    Terminal,
    /// Every grid node, plus the increments.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    A,
    C,
    Neither,
}

impl Label {
    fn code(self) -> u8 {
        match self {
            Label::A => 0,
            Label::C => 1,
            Label::Neither => 2,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(Label::A),
            1 => Ok(Label::C),
            2 => Ok(Label::Neither),
            _ => Err(Error::Format(format!("bad label code {c}"))),
        }
    }
}

/// Simulated paths with their stopping times and labels. Rows are stored path
/// after path; `stride` is 1 for terminal records and `n_steps + 1` otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble<T = f64> {
    pub grid: SimGrid<T>,
    pub n_paths: usize,
    pub seed: u64,
    pub lane: u64,
    pub record: Record,
    pub stride: usize,
    pub states_x: Vec<T>,
    /// Increments per path, `inc_stride` each (may extend past the grid end
    /// so the restarted path can run a full window).
    pub increments: Vec<T>,
    pub inc_stride: usize,
    /// Localized path restarted at `nu`, on the grid shifted to start at `nu`.
    pub states_xbar: Vec<T>,
    pub nu: Vec<T>,
    pub tau: Vec<T>,
    pub labels: Vec<Label>,
    pub sup_increment: Vec<T>,
    pub weights: Vec<T>,
}

impl<T: Real> PathEnsemble<T> {
    fn empty(grid: SimGrid<T>, n_paths: usize, seed: u64, lane: u64, record: Record) -> Self {
        let stride = match record {
            Record::Terminal => 1,
            Record::Full => grid.n_steps + 1,
        };
        Self {
            grid,
            n_paths,
            seed,
            lane,
            record,
            stride,
            states_x: Vec::new(),
            increments: Vec::new(),
            inc_stride: 0,
            states_xbar: Vec::new(),
            nu: Vec::new(),
            tau: Vec::new(),
            labels: Vec::new(),
            sup_increment: Vec::new(),
            weights: Vec::new(),
        }
    }

    pub fn path(&self, p: usize) -> &[T] {
        &self.states_x[p * self.stride..(p + 1) * self.stride]
    }

    pub fn path_increments(&self, p: usize) -> &[T] {
        &self.increments[p * self.inc_stride..(p + 1) * self.inc_stride]
    }

    pub fn xbar_path(&self, p: usize) -> &[T] {
        &self.states_xbar[p * self.stride..(p + 1) * self.stride]
    }

    pub fn terminal(&self, p: usize) -> T {
        self.states_x[(p + 1) * self.stride - 1]
    }

    pub fn terminals(&self) -> Vec<T> {
        (0..self.n_paths).map(|p| self.terminal(p)).collect()
    }

    pub fn noise(&self) -> NoiseSource {
        NoiseSource::new(self.seed).with_lane(self.lane)
    }
}

fn first_bad<T: Real>(rows: &[(usize, T)]) -> Option<(usize, usize)> {
    rows.iter()
        .enumerate()
        .find(|(_, (step, _))| *step != usize::MAX)
        .map(|(p, (step, _))| (p, *step))
}

/// Euler paths of `dX = b dt + σ dB` from `x0`.
pub fn simulate_euler<T: Real>(
    spec: &CoefficientSpec<T>,
    grid: SimGrid<T>,
    n_paths: usize,
    seed: u64,
    record: Record,
) -> Result<PathEnsemble<T>> {
    let starts = vec![spec.x0; 1];
    simulate_euler_from(spec, &starts, grid, n_paths, NoiseSource::new(seed), record)
}

/// Euler paths of any coefficient pair from per-path starting values (a
/// single value is broadcast). Noise for step `k` of path `p` is read from
/// `noise` at `(p, k)`, so results do not depend on scheduling.
pub fn simulate_euler_from<T: Real, C: Coefficients<T>>(
    coeffs: &C,
    starts: &[T],
    grid: SimGrid<T>,
    n_paths: usize,
    noise: NoiseSource,
    record: Record,
) -> Result<PathEnsemble<T>> {
    if n_paths == 0 || starts.is_empty() || (starts.len() != 1 && starts.len() != n_paths) {
        return Err(Error::InvalidParams(format!(
            "need n_paths >= 1 and 1 or n_paths starting values, got {n_paths} paths and {} starts",
            starts.len()
        )));
    }
    let start = |p: usize| if starts.len() == 1 { starts[0] } else { starts[p] };
    let dt = grid.dt();
    let m = grid.n_steps;
    let mut ens = PathEnsemble::empty(grid, n_paths, noise.seed, noise.lane, record);
    match record {
        Record::Terminal => {
            let rows: Vec<(usize, T)> = (0..n_paths)
                .into_par_iter()
                .map(|p| {
                    let mut rng = noise.path(p);
                    let mut buf = vec![T::zero(); m];
                    rng.fill_increments(&mut buf, dt);
                    let mut x = start(p);
                    for (k, &dw) in buf.iter().enumerate() {
                        x = euler_step(coeffs, x, dt, dw);
                        if !x.is_finite() {
                            return (k + 1, x);
                        }
                    }
                    (usize::MAX, x)
                })
                .collect();
            if let Some((path, step)) = first_bad(&rows) {
                return Err(Error::NanDivergence { path, step });
            }
            ens.states_x = rows.into_iter().map(|r| r.1).collect();
        }
        Record::Full => {
            let mut states = vec![T::zero(); n_paths * (m + 1)];
            let mut incs = vec![T::zero(); n_paths * m];
            let bad: Vec<usize> = states
                .par_chunks_mut(m + 1)
                .zip(incs.par_chunks_mut(m))
                .enumerate()
                .map(|(p, (xs, dws))| {
                    noise.path(p).fill_increments(dws, dt);
                    xs[0] = start(p);
                    for k in 0..m {
                        xs[k + 1] = euler_step(coeffs, xs[k], dt, dws[k]);
                        if !xs[k + 1].is_finite() {
                            return k + 1;
                        }
                    }
                    usize::MAX
                })
                .collect();
            if let Some((path, &step)) = bad.iter().enumerate().find(|(_, s)| **s != usize::MAX) {
                return Err(Error::NanDivergence { path, step });
            }
            ens.states_x = states;
            ens.increments = incs;
            ens.inc_stride = m;
        }
    }
    Ok(ens)
}

/// One Euler path of the localized equation from `(v, y)` consuming the
/// given increments (so it is coupled to whatever else used them).
pub fn simulate_localized<T: Real>(
    tc: &TruncatedCoeffs<T>,
    y: T,
    grid: &SimGrid<T>,
    increments: &[T],
    driftless: bool,
) -> Result<Vec<T>> {
    if increments.len() != grid.n_steps {
        return Err(Error::InvalidParams(format!(
            "expected {} increments, got {}",
            grid.n_steps,
            increments.len()
        )));
    }
    let mut out = vec![y; grid.n_steps + 1];
    let step = |x: T, dw: T| {
        if driftless {
            euler_step(&Driftless(tc), x, grid.dt(), dw)
        } else {
            euler_step(tc, x, grid.dt(), dw)
        }
    };
    for k in 0..grid.n_steps {
        out[k + 1] = step(out[k], increments[k]);
        if !out[k + 1].is_finite() {
            return Err(Error::NanDivergence { path: 0, step: k + 1 });
        }
    }
    Ok(out)
}

/// Grid indices of the stopping times on a path sampled at `times[k]`.
/// `nu` is the first node at or after `t - delta` inside the closed `3ε`
/// ball, `tau` the first node at or after `nu` outside the closed `4ε` ball.
fn stopping_indices<T: Real>(xs: &[T], first: usize, y0: T, eps: T) -> (Option<usize>, Option<usize>) {
    let r3 = T::lit(3.0) * eps;
    let r4 = T::lit(4.0) * eps;
    let nu = (first..xs.len()).find(|&k| (xs[k] - y0).abs() <= r3);
    let tau = nu.and_then(|j| (j..xs.len()).find(|&k| (xs[k] - y0).abs() > r4));
    (nu, tau)
}

/// `(ν, τ)` for one path recorded on `grid`; `+∞` encodes non-occurrence.
pub fn stopping_times<T: Real>(
    xs: &[T],
    grid: &SimGrid<T>,
    t: T,
    delta: T,
    spec: &CoefficientSpec<T>,
) -> Result<(T, T)> {
    if !(delta > T::zero() && delta < t.min(T::one())) {
        return Err(Error::InvalidParams(format!("delta must lie in (0, min(t, 1)), got {delta}")));
    }
    let dt = grid.dt();
    let tol = dt * T::lit(1e-9);
    if xs.len() != grid.n_steps + 1 || grid.t_start > t - delta + tol || grid.t_end < t - tol {
        return Err(Error::InvalidParams("grid must cover [t - delta, t]".into()));
    }
    let first = ((t - delta - grid.t_start) / dt - T::lit(1e-9)).ceil().to_usize().unwrap_or(0);
    let last = ((t - grid.t_start) / dt + T::lit(1e-9)).floor().to_usize().unwrap_or(0);
    let (nu, tau) = stopping_indices(&xs[..=last], first, spec.y0, spec.eps);
    let time = |k: Option<usize>| k.map_or(T::infinity(), |k| grid.time(k));
    Ok((time(nu), time(tau)))
}

#[derive(Debug, Clone, Copy)]
struct WindowOutcome<T> {
    x_t: T,
    nu: Option<usize>,
    tau: Option<usize>,
    sup_inc: T,
    label: Label,
    localized: bool,
}

/// Runs the window logic on a recorded `X` window (`xs`, `m + 1` nodes) with
/// `2m` increments: stopping times, restarted localized path, label.
#[allow(clippy::too_many_arguments)]
fn window_core<T: Real>(
    tc: &TruncatedCoeffs<T>,
    phi: &Mollifier<T>,
    xs: &[T],
    incs: &[T],
    dt: T,
    xbar: &mut [T],
) -> std::result::Result<WindowOutcome<T>, usize> {
    let spec = tc.spec();
    let m = xs.len() - 1;
    let (nu, tau) = stopping_indices(xs, 0, spec.y0, spec.eps);
    let mut sup_inc = T::zero();
    if let Some(j) = nu {
        let start = xs[j];
        let mut x = start;
        xbar[0] = x;
        for i in 0..m {
            x = euler_step(tc, x, dt, incs[j + i]);
            if !x.is_finite() {
                return Err(j + i + 1);
            }
            xbar[i + 1] = x;
            sup_inc = sup_inc.max((x - start).abs());
        }
    } else {
        xbar.iter_mut().for_each(|v| *v = T::nan());
    }
    let x_t = xs[m];
    let localized = phi.eval(x_t - spec.y0) > T::zero();
    let label = if localized && nu == Some(0) && tau.is_none() {
        Label::A
    } else if localized && nu.is_some() && sup_inc >= spec.eps {
        Label::C
    } else {
        Label::Neither
    };
    Ok(WindowOutcome {
        x_t,
        nu,
        tau,
        sup_inc,
        label,
        localized,
    })
}

/// Counts from labelling one window ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventCounts {
    pub n_paths: usize,
    pub localized: usize,
    pub a: usize,
    pub c: usize,
    /// Localized paths that are in neither event (grid-resolution exceptions).
    pub violations: usize,
    /// Paths that enter the `3ε` ball during the window.
    pub entered: usize,
    /// Entered paths whose restarted increment reaches `ε`.
    pub sup_hits: usize,
}

impl EventCounts {
    pub fn violation_fraction(&self) -> f64 {
        if self.localized == 0 {
            0.0
        } else {
            self.violations as f64 / self.localized as f64
        }
    }
}

/// Default tolerated fraction of localized paths outside `A ∪ C`.
pub const DECOMPOSITION_LIMIT: f64 = 1e-3;

fn tally<T: Real>(outcomes: &[WindowOutcome<T>], eps: T) -> EventCounts {
    let mut c = EventCounts {
        n_paths: outcomes.len(),
        localized: 0,
        a: 0,
        c: 0,
        violations: 0,
        entered: 0,
        sup_hits: 0,
    };
    for o in outcomes {
        c.localized += o.localized as usize;
        match o.label {
            Label::A => c.a += 1,
            Label::C => c.c += 1,
            Label::Neither => c.violations += o.localized as usize,
        }
        if o.nu.is_some() {
            c.entered += 1;
            c.sup_hits += (o.sup_inc >= eps) as usize;
        }
    }
    c
}

fn check_decomposition(counts: &EventCounts, limit: f64) -> Result<()> {
    if counts.violation_fraction() > limit {
        return Err(Error::DecompositionViolation {
            violations: counts.violations,
            localized: counts.localized,
            limit,
        });
    }
    Ok(())
}

/// Window `[t - δ, t]` parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window<T = f64> {
    pub t: T,
    pub delta: T,
    pub n_steps: usize,
}

impl<T: Real> Window<T> {
    pub fn grid(&self) -> Result<SimGrid<T>> {
        SimGrid::new(self.t - self.delta, self.t, self.n_steps)
    }
}

/// Simulates `X` over the window from per-path starts (under the original
/// coefficients), restarts the localized equation at `ν` on the same noise
/// and labels every path. The noise stream for each path covers `2m` steps so
/// the restarted path can run a full window length.
pub fn simulate_window<T: Real>(
    tc: &TruncatedCoeffs<T>,
    starts: &[T],
    window: Window<T>,
    n_paths: usize,
    noise: NoiseSource,
    record: Record,
    limit: f64,
) -> Result<(PathEnsemble<T>, EventCounts)> {
    let grid = window.grid()?;
    if !(window.delta < window.t.min(T::one())) {
        return Err(Error::InvalidParams(format!(
            "delta must lie in (0, min(t, 1)), got {}",
            window.delta
        )));
    }
    if n_paths == 0 || starts.is_empty() || (starts.len() != 1 && starts.len() != n_paths) {
        return Err(Error::InvalidParams("need 1 or n_paths starting values".into()));
    }
    let spec = tc.spec();
    let phi = Mollifier::new(spec.eps)?;
    let m = grid.n_steps;
    let dt = grid.dt();
    let start = |p: usize| if starts.len() == 1 { starts[0] } else { starts[p] };
    let run = |p: usize, xs: &mut [T], xbar: &mut [T], incs: &mut [T]| {
        noise.path(p).fill_increments(incs, dt);
        xs[0] = start(p);
        for k in 0..m {
            xs[k + 1] = euler_step(spec, xs[k], dt, incs[k]);
            if !xs[k + 1].is_finite() {
                return Err(k + 1);
            }
        }
        window_core(tc, &phi, xs, incs, dt, xbar)
    };
    let mut ens = PathEnsemble::empty(grid, n_paths, noise.seed, noise.lane, record);
    let outcomes: Vec<std::result::Result<WindowOutcome<T>, usize>> = match record {
        Record::Terminal => (0..n_paths)
            .into_par_iter()
            .map_init(
                || (vec![T::zero(); m + 1], vec![T::zero(); m + 1], vec![T::zero(); 2 * m]),
                |(xs, xbar, incs), p| run(p, xs, xbar, incs),
            )
            .collect(),
        Record::Full => {
            let mut xs = vec![T::zero(); n_paths * (m + 1)];
            let mut xbar = vec![T::zero(); n_paths * (m + 1)];
            let mut incs = vec![T::zero(); n_paths * 2 * m];
            let out = xs
                .par_chunks_mut(m + 1)
                .zip(xbar.par_chunks_mut(m + 1))
                .zip(incs.par_chunks_mut(2 * m))
                .enumerate()
                .map(|(p, ((x, xb), dw))| run(p, x, xb, dw))
                .collect();
            ens.states_x = xs;
            ens.states_xbar = xbar;
            ens.increments = incs;
            ens.inc_stride = 2 * m;
            out
        }
    };
    let mut ok = Vec::with_capacity(n_paths);
    for (p, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(o) => ok.push(o),
            Err(step) => return Err(Error::NanDivergence { path: p, step }),
        }
    }
    if record == Record::Terminal {
        ens.states_x = ok.iter().map(|o| o.x_t).collect();
    }
    let time = |k: Option<usize>| k.map_or(T::infinity(), |k| grid.time(k));
    ens.nu = ok.iter().map(|o| time(o.nu)).collect();
    ens.tau = ok.iter().map(|o| time(o.tau)).collect();
    ens.labels = ok.iter().map(|o| o.label).collect();
    ens.sup_increment = ok.iter().map(|o| o.sup_inc).collect();
    let counts = tally(&ok, spec.eps);
    check_decomposition(&counts, limit)?;
    Ok((ens, counts))
}

/// Recomputes stopping times, restarted paths and labels on a fully recorded
/// window ensemble (as produced by [`simulate_window`]).
pub fn classify_events<T: Real>(
    ens: &mut PathEnsemble<T>,
    tc: &TruncatedCoeffs<T>,
    limit: f64,
) -> Result<EventCounts> {
    let m = ens.grid.n_steps;
    if ens.record != Record::Full || ens.inc_stride != 2 * m {
        return Err(Error::InvalidParams(
            "classification needs a fully recorded window with 2m increments".into(),
        ));
    }
    let phi = Mollifier::new(tc.spec().eps)?;
    let dt = ens.grid.dt();
    let mut xbar = vec![T::zero(); ens.n_paths * (m + 1)];
    let outcomes: Vec<_> = xbar
        .par_chunks_mut(m + 1)
        .enumerate()
        .map(|(p, xb)| {
            let xs = &ens.states_x[p * (m + 1)..(p + 1) * (m + 1)];
            let incs = &ens.increments[p * 2 * m..(p + 1) * 2 * m];
            window_core(tc, &phi, xs, incs, dt, xb)
        })
        .collect();
    let mut ok = Vec::with_capacity(ens.n_paths);
    for (p, o) in outcomes.into_iter().enumerate() {
        ok.push(o.map_err(|step| Error::NanDivergence { path: p, step })?);
    }
    let grid = ens.grid;
    let time = |k: Option<usize>| k.map_or(T::infinity(), |k| grid.time(k));
    ens.states_xbar = xbar;
    ens.nu = ok.iter().map(|o| time(o.nu)).collect();
    ens.tau = ok.iter().map(|o| time(o.tau)).collect();
    ens.labels = ok.iter().map(|o| o.label).collect();
    ens.sup_increment = ok.iter().map(|o| o.sup_inc).collect();
    let counts = tally(&ok, tc.spec().eps);
    check_decomposition(&counts, limit)?;
    Ok(counts)
}

/// Constant-σ sub-Gaussian bound on the sup-increment event, with a factor 2
/// slack in the exponent and the drift displacement removed from `ε`.
pub fn subgaussian_oracle(eps: f64, delta: f64, sup_sigma: f64, sup_b: f64) -> f64 {
    let room = eps - delta * sup_b;
    if room <= 0.0 {
        return 1.0;
    }
    if sup_sigma == 0.0 {
        return 0.0;
    }
    (4.0 * (-room * room / (4.0 * sup_sigma * sup_sigma * delta)).exp()).min(1.0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EventRate {
    pub delta: f64,
    pub hits: usize,
    pub n: usize,
    pub probability: f64,
    pub ci: (f64, f64),
    /// `δ + δ²` at `n = 1`.
    pub paper_shape: f64,
    pub oracle: f64,
    pub counts: EventCounts,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EventRateReport {
    pub rows: Vec<EventRate>,
    /// Log-log fit over rows with at least one hit.
    pub slope: Option<LineFit>,
    /// The sup over `[0, δ]` is taken on grid nodes, so probabilities are lower bounds.
    pub grid_sup_lower_bound: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventRateOptions {
    /// Step target for reaching `t - δ` from time 0.
    pub stage_dt: f64,
    /// Steps per window.
    pub window_steps: usize,
    pub seed: u64,
    pub limit: f64,
}

impl Default for EventRateOptions {
    fn default() -> Self {
        Self {
            stage_dt: 1e-3,
            window_steps: 64,
            seed: 0,
            limit: DECOMPOSITION_LIMIT,
        }
    }
}

/// Empirical probability that the restarted localized path moves by `ε`
/// within `δ`, among paths entering the `3ε` ball, for each `δ`.
pub fn estimate_event_rate<T: Real>(
    tc: &TruncatedCoeffs<T>,
    deltas: &[T],
    n_paths: usize,
    opts: EventRateOptions,
) -> Result<EventRateReport> {
    let spec = tc.spec();
    let t = spec.t;
    if deltas.len() < 3 || deltas.iter().any(|&d| !(d > T::zero() && d < t.min(T::one()))) {
        return Err(Error::InvalidParams("need at least 3 deltas in (0, min(t, 1))".into()));
    }
    let mut rows = Vec::with_capacity(deltas.len());
    for (i, &delta) in deltas.iter().enumerate() {
        let t0 = t - delta;
        let starts = if t0 > T::zero() {
            let g = SimGrid::with_step(T::zero(), t0, T::lit(opts.stage_dt))?;
            let noise = NoiseSource::new(opts.seed).with_lane(2 * i as u64);
            simulate_euler_from(spec, &[spec.x0], g, n_paths, noise, Record::Terminal)?.states_x
        } else {
            vec![spec.x0]
        };
        let window = Window { t, delta, n_steps: opts.window_steps };
        let noise = NoiseSource::new(opts.seed).with_lane(2 * i as u64 + 1);
        let (_, counts) = simulate_window(tc, &starts, window, n_paths, noise, Record::Terminal, opts.limit)?;
        let n = counts.entered;
        let hits = counts.sup_hits;
        let d = delta.as_f64();
        rows.push(EventRate {
            delta: d,
            hits,
            n,
            probability: if n > 0 { hits as f64 / n as f64 } else { 0.0 },
            ci: wilson_interval(hits, n.max(1), 1.96),
            paper_shape: d + d * d,
            oracle: subgaussian_oracle(
                spec.eps.as_f64(),
                d,
                tc.sup_sigma_bar.as_f64(),
                tc.sup_b_bar.as_f64(),
            ),
            counts,
        });
    }
    if rows.iter().all(|r| r.hits == 0) {
        return Err(Error::InsufficientHits {
            oracle: rows.iter().map(|r| r.oracle).collect(),
        });
    }
    let hit: Vec<&EventRate> = rows.iter().filter(|r| r.hits > 0).collect();
    let slope = (hit.len() >= 2).then(|| {
        let x: Vec<f64> = hit.iter().map(|r| r.delta).collect();
        let y: Vec<f64> = hit.iter().map(|r| r.probability).collect();
        loglog_fit(&x, &y)
    });
    Ok(EventRateReport {
        rows,
        slope,
        grid_sup_lower_bound: true,
    })
}

const MAGIC: &[u8; 8] = b"HLDENS01";

/// SHA-256 of the JSON form of a serializable value.
pub fn digest_of<S: Serialize>(value: &S) -> [u8; 32] {
    let bytes = serde_json::to_vec(value).expect("serializable");
    Sha256::digest(&bytes).into()
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn put_col<T: Real>(w: &mut impl Write, col: &[T]) -> std::io::Result<()> {
    w.write_all(&(col.len() as u64).to_le_bytes())?;
    for v in col {
        w.write_all(&v.as_f64().to_le_bytes())?;
    }
    Ok(())
}

fn get_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_f64(r: &mut impl Read) -> Result<f64> {
    Ok(f64::from_bits(get_u64(r)?))
}

fn get_col<T: Real>(r: &mut impl Read) -> Result<Vec<T>> {
    let n = get_u64(r)? as usize;
    let mut buf = vec![0u8; n.checked_mul(8).ok_or_else(|| Error::Format("column too long".into()))?];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| T::lit(f64::from_le_bytes(c.try_into().unwrap())))
        .collect())
}

impl<T: Real> PathEnsemble<T> {
    /// Writes a little-endian columnar file: header (magic, seed, lane, grid,
    /// shape, spec digest) followed by length-prefixed f64 columns.
    pub fn save(&self, path: &Path, spec_digest: [u8; 32]) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(MAGIC)?;
        for v in [
            self.seed,
            self.lane,
            self.n_paths as u64,
            self.grid.n_steps as u64,
            self.stride as u64,
            self.inc_stride as u64,
            (self.record == Record::Full) as u64,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&self.grid.t_start.as_f64().to_le_bytes())?;
        w.write_all(&self.grid.t_end.as_f64().to_le_bytes())?;
        w.write_all(&spec_digest)?;
        for col in [
            &self.states_x,
            &self.increments,
            &self.states_xbar,
            &self.nu,
            &self.tau,
            &self.sup_increment,
            &self.weights,
        ] {
            put_col(&mut w, col)?;
        }
        w.write_all(&(self.labels.len() as u64).to_le_bytes())?;
        let codes: Vec<u8> = self.labels.iter().map(|l| l.code()).collect();
        w.write_all(&codes)?;
        w.flush()?;
        Ok(())
    }

    /// Reads a file written by [`save`](Self::save), returning the stored spec digest.
    pub fn load(path: &Path) -> Result<(Self, [u8; 32])> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not an ensemble file".into()));
        }
        let seed = get_u64(&mut r)?;
        let lane = get_u64(&mut r)?;
        let n_paths = get_u64(&mut r)? as usize;
        let n_steps = get_u64(&mut r)? as usize;
        let stride = get_u64(&mut r)? as usize;
        let inc_stride = get_u64(&mut r)? as usize;
        let record = if get_u64(&mut r)? == 1 { Record::Full } else { Record::Terminal };
        let t_start = T::lit(get_f64(&mut r)?);
        let t_end = T::lit(get_f64(&mut r)?);
        let mut digest = [0u8; 32];
        r.read_exact(&mut digest)?;
        let grid = SimGrid::new(t_start, t_end, n_steps).map_err(|e| Error::Format(e.to_string()))?;
        let states_x = get_col(&mut r)?;
        let increments = get_col(&mut r)?;
        let states_xbar = get_col(&mut r)?;
        let nu = get_col(&mut r)?;
        let tau = get_col(&mut r)?;
        let sup_increment = get_col(&mut r)?;
        let weights = get_col(&mut r)?;
        let n_labels = get_u64(&mut r)? as usize;
        let mut codes = vec![0u8; n_labels];
        r.read_exact(&mut codes)?;
        let labels = codes.into_iter().map(Label::from_code).collect::<Result<_>>()?;
        if states_x.len() != n_paths * stride {
            return Err(Error::Format("state column has the wrong length".into()));
        }
        Ok((
            Self {
                grid,
                n_paths,
                seed,
                lane,
                record,
                stride,
                states_x,
                increments,
                inc_stride,
                states_xbar,
                nu,
                tau,
                labels,
                sup_increment,
                weights,
            },
            digest,
        ))
    }
}
