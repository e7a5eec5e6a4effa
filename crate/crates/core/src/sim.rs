//! Numerical integration, asymptotic outcome detection, phase portraits and
//! limit-cycle detection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stability::{Equilibrium, Region, DOMAIN_MARGIN};
use crate::system::DynamicalSystem;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("initial state {0:?} lies outside the domain")]
    StartOutsideDomain(Vec<f64>),
    #[error("initial state has dimension {got}, system has {expected}")]
    Dimension { got: usize, expected: usize },
    #[error("invalid integration settings: {0}")]
    InvalidSettings(String),
    #[error("step size underflow at t = {t} (state {x:?})")]
    StepUnderflow { t: f64, x: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    /// Classic fixed-step fourth-order Runge-Kutta.
    Rk4 { h: f64 },
    /// Runge-Kutta-Fehlberg 4(5) with local extrapolation.
    Rkf45 { atol: f64, rtol: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrateOptions {
    pub method: Method,
    /// Integration stops once the Euclidean norm of the state exceeds this.
    pub divergence_bound: f64,
    /// Upper limit on the adaptive step (ignored by RK4).
    pub max_step: f64,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        Self {
            method: Method::Rkf45 { atol: 1e-9, rtol: 1e-7 },
            divergence_bound: 1e6,
            max_step: f64::INFINITY,
        }
    }
}

impl IntegrateOptions {
    pub fn rk4(h: f64) -> Self {
        Self {
            method: Method::Rk4 { h },
            ..Self::default()
        }
    }

    pub fn with_max_step(mut self, max_step: f64) -> Self {
        self.max_step = max_step;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Termination {
    ReachedTEnd,
    Diverged {
        bound: f64,
    },
    /// The step starting at sample `step` could not be taken inside the domain.
    LeftDomain {
        step: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub termination: Termination,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.first().map_or(0, Vec::len)
    }

    pub fn final_state(&self) -> &[f64] {
        self.x.last().map_or(&[], Vec::as_slice)
    }

    pub fn final_time(&self) -> f64 {
        self.t.last().copied().unwrap_or(0.0)
    }

    /// Values of one component (0-based).
    pub fn component(&self, k: usize) -> Vec<f64> {
        self.x.iter().map(|s| s[k]).collect()
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn axpy(x: &[f64], h: f64, terms: &[(f64, &[f64])]) -> Vec<f64> {
    let mut out = x.to_vec();
    for (c, k) in terms {
        if *c != 0.0 {
            for (o, v) in out.iter_mut().zip(k.iter()) {
                *o += h * c * v;
            }
        }
    }
    out
}

enum StepOutcome {
    Ok(Vec<f64>),
    OutOfDomain,
}

fn rk4_step(sys: &DynamicalSystem, x: &[f64], h: f64) -> StepOutcome {
    let eval = |y: &[f64]| {
        if sys.contains(y) {
            sys.eval(y).ok()
        } else {
            None
        }
    };
    let Some(k1) = eval(x) else {
        return StepOutcome::OutOfDomain;
    };
    let Some(k2) = eval(&axpy(x, h, &[(0.5, &k1)])) else {
        return StepOutcome::OutOfDomain;
    };
    let Some(k3) = eval(&axpy(x, h, &[(0.5, &k2)])) else {
        return StepOutcome::OutOfDomain;
    };
    let Some(k4) = eval(&axpy(x, h, &[(1.0, &k3)])) else {
        return StepOutcome::OutOfDomain;
    };
    let next = axpy(
        x,
        h,
        &[(1.0 / 6.0, &k1), (1.0 / 3.0, &k2), (1.0 / 3.0, &k3), (1.0 / 6.0, &k4)],
    );
    if sys.contains(&next) {
        StepOutcome::Ok(next)
    } else {
        StepOutcome::OutOfDomain
    }
}

// Fehlberg tableau
const A2: [f64; 1] = [1.0 / 4.0];
const A3: [f64; 2] = [3.0 / 32.0, 9.0 / 32.0];
const A4: [f64; 3] = [1932.0 / 2197.0, -7200.0 / 2197.0, 7296.0 / 2197.0];
const A5: [f64; 4] = [439.0 / 216.0, -8.0, 3680.0 / 513.0, -845.0 / 4104.0];
const A6: [f64; 5] = [-8.0 / 27.0, 2.0, -3544.0 / 2565.0, 1859.0 / 4104.0, -11.0 / 40.0];
const B5: [f64; 6] = [
    16.0 / 135.0,
    0.0,
    6656.0 / 12825.0,
    28561.0 / 56430.0,
    -9.0 / 50.0,
    2.0 / 55.0,
];
const B4: [f64; 6] = [25.0 / 216.0, 0.0, 1408.0 / 2565.0, 2197.0 / 4104.0, -1.0 / 5.0, 0.0];

/// One Fehlberg step: the fifth-order solution and the embedded error vector.
fn rkf45_step(sys: &DynamicalSystem, x: &[f64], k1: &[f64], h: f64) -> Option<(Vec<f64>, Vec<f64>)> {
    let eval = |y: Vec<f64>| if sys.contains(&y) { sys.eval(&y).ok() } else { None };
    let k2 = eval(axpy(x, h, &[(A2[0], k1)]))?;
    let k3 = eval(axpy(x, h, &[(A3[0], k1), (A3[1], &k2)]))?;
    let k4 = eval(axpy(x, h, &[(A4[0], k1), (A4[1], &k2), (A4[2], &k3)]))?;
    let k5 = eval(axpy(x, h, &[(A5[0], k1), (A5[1], &k2), (A5[2], &k3), (A5[3], &k4)]))?;
    let k6 = eval(axpy(
        x,
        h,
        &[(A6[0], k1), (A6[1], &k2), (A6[2], &k3), (A6[3], &k4), (A6[4], &k5)],
    ))?;
    let ks: [&[f64]; 6] = [k1, &k2, &k3, &k4, &k5, &k6];
    let fifth = axpy(x, h, &B5.iter().zip(ks).map(|(b, k)| (*b, k)).collect::<Vec<_>>());
    let err: Vec<f64> = (0..x.len())
        .map(|i| h * (0..6).map(|s| (B5[s] - B4[s]) * ks[s][i]).sum::<f64>())
        .collect();
    Some((fifth, err))
}

/// Integrates `x' = f(x)` from `x0` over `[0, t_end]`.
pub fn integrate(
    sys: &DynamicalSystem,
    x0: &[f64],
    t_end: f64,
    opts: &IntegrateOptions,
) -> Result<Trajectory, SimError> {
    if x0.len() != sys.dim() {
        return Err(SimError::Dimension {
            got: x0.len(),
            expected: sys.dim(),
        });
    }
    if !sys.contains(x0) || sys.eval(x0).is_err() {
        return Err(SimError::StartOutsideDomain(x0.to_vec()));
    }
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(SimError::InvalidSettings(format!(
            "t_end must be positive (got {t_end})"
        )));
    }
    if !(opts.divergence_bound > 0.0) || !(opts.max_step > 0.0) {
        return Err(SimError::InvalidSettings(
            "divergence bound and max step must be positive".into(),
        ));
    }
    match opts.method {
        Method::Rk4 { h } if h > 0.0 && h.is_finite() => Ok(run_rk4(sys, x0, t_end, h, opts.divergence_bound)),
        Method::Rk4 { h } => Err(SimError::InvalidSettings(format!("step must be positive (got {h})"))),
        Method::Rkf45 { atol, rtol } if atol > 0.0 && rtol > 0.0 => run_rkf45(sys, x0, t_end, atol, rtol, opts),
        Method::Rkf45 { .. } => Err(SimError::InvalidSettings("tolerances must be positive".into())),
    }
}

fn run_rk4(sys: &DynamicalSystem, x0: &[f64], t_end: f64, h: f64, bound: f64) -> Trajectory {
    let steps = (t_end / h).round().max(1.0) as usize;
    let mut t = vec![0.0];
    let mut x = vec![x0.to_vec()];
    for k in 0..steps {
        let t0 = k as f64 * h;
        let t1 = if k + 1 == steps { t_end } else { (k + 1) as f64 * h };
        let cur = x.last().expect("non-empty");
        match rk4_step(sys, cur, t1 - t0) {
            StepOutcome::Ok(next) => {
                if !next.iter().all(|v| v.is_finite()) {
                    return Trajectory {
                        t,
                        x,
                        termination: Termination::Diverged { bound },
                    };
                }
                let diverged = norm(&next) > bound;
                t.push(t1);
                x.push(next);
                if diverged {
                    return Trajectory {
                        t,
                        x,
                        termination: Termination::Diverged { bound },
                    };
                }
            }
            StepOutcome::OutOfDomain => {
                return Trajectory {
                    t,
                    x,
                    termination: Termination::LeftDomain { step: k },
                };
            }
        }
    }
    Trajectory {
        t,
        x,
        termination: Termination::ReachedTEnd,
    }
}

fn run_rkf45(
    sys: &DynamicalSystem,
    x0: &[f64],
    t_end: f64,
    atol: f64,
    rtol: f64,
    opts: &IntegrateOptions,
) -> Result<Trajectory, SimError> {
    let bound = opts.divergence_bound;
    let mut ts = vec![0.0];
    let mut xs = vec![x0.to_vec()];
    let mut t = 0.0;
    let mut x = x0.to_vec();
    let mut fx = sys.eval(&x).expect("checked by caller");

    // initial step from the scale of the state and its derivative
    let scale = |y: &[f64], i: usize| atol + rtol * y[i].abs();
    let d0 = (0..x.len()).map(|i| (x[i] / scale(&x, i)).powi(2)).sum::<f64>().sqrt();
    let d1 = (0..x.len()).map(|i| (fx[i] / scale(&x, i)).powi(2)).sum::<f64>().sqrt();
    let mut h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h = h.min(opts.max_step).min(t_end);

    while t < t_end {
        let min_step = 16.0 * f64::EPSILON * t.abs().max(1.0);
        let last = t + h >= t_end;
        let step = if last { t_end - t } else { h };
        match rkf45_step(sys, &x, &fx, step) {
            Some((next, err)) if next.iter().all(|v| v.is_finite()) => {
                let e = (0..x.len())
                    .map(|i| {
                        let sc = atol + rtol * x[i].abs().max(next[i].abs());
                        (err[i] / sc).powi(2)
                    })
                    .sum::<f64>();
                let e = (e / x.len() as f64).sqrt();
                if e <= 1.0 {
                    t = if last { t_end } else { t + step };
                    x = next;
                    ts.push(t);
                    xs.push(x.clone());
                    if norm(&x) > bound {
                        return Ok(Trajectory {
                            t: ts,
                            x: xs,
                            termination: Termination::Diverged { bound },
                        });
                    }
                    fx = match sys.eval(&x) {
                        Ok(f) => f,
                        Err(_) => {
                            let step = xs.len() - 1;
                            return Ok(Trajectory {
                                t: ts,
                                x: xs,
                                termination: Termination::LeftDomain { step },
                            });
                        }
                    };
                    let factor = if e == 0.0 {
                        5.0
                    } else {
                        (0.9 * e.powf(-0.2)).clamp(0.2, 5.0)
                    };
                    h = (step * factor).min(opts.max_step);
                } else {
                    h = step * (0.9 * e.powf(-0.25)).clamp(0.1, 0.9);
                    if h < min_step {
                        return Err(SimError::StepUnderflow { t, x });
                    }
                }
            }
            Some(_) => {
                // overflow inside the step: the state is blowing up
                return Ok(Trajectory {
                    t: ts,
                    x: xs,
                    termination: Termination::Diverged { bound },
                });
            }
            None => {
                h = step * 0.25;
                if h < min_step {
                    let step = xs.len() - 1;
                    return Ok(Trajectory {
                        t: ts,
                        x: xs,
                        termination: Termination::LeftDomain { step },
                    });
                }
            }
        }
    }
    Ok(Trajectory {
        t: ts,
        x: xs,
        termination: Termination::ReachedTEnd,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AsymptoticOutcome {
    ConvergedTo { x: Vec<f64>, achieved: f64 },
    Diverged,
    Undecided,
}

/// Judges a trajectory against an equilibrium. Convergence needs the final
/// distance within `tol` and a non-increasing distance over the last quarter
/// of samples (up to `1e-3 * tol` of numerical jitter).
pub fn outcome(traj: &Trajectory, eq: &Equilibrium, tol: f64) -> AsymptoticOutcome {
    if matches!(traj.termination, Termination::Diverged { .. }) {
        return AsymptoticOutcome::Diverged;
    }
    if traj.is_empty() {
        return AsymptoticOutcome::Undecided;
    }
    let dist: Vec<f64> = traj
        .x
        .iter()
        .map(|s| norm(&s.iter().zip(&eq.x).map(|(a, b)| a - b).collect::<Vec<_>>()))
        .collect();
    let last = *dist.last().expect("non-empty");
    let tail = &dist[dist.len() * 3 / 4..];
    let jitter = 1e-3 * tol;
    let monotone = tail.windows(2).all(|w| w[1] <= w[0] + jitter);
    if last <= tol && monotone {
        AsymptoticOutcome::ConvergedTo {
            x: eq.x.clone(),
            achieved: last,
        }
    } else {
        AsymptoticOutcome::Undecided
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Seeds {
    Explicit(Vec<Vec<f64>>),
    /// `count` uniform points in the region from a ChaCha8 stream.
    Random {
        count: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PortraitEntry {
    pub seed: Vec<f64>,
    pub trajectory: Result<Trajectory, SimError>,
}

/// Deterministic seed points for a portrait, projected into the domain.
pub fn portrait_seeds(sys: &DynamicalSystem, region: &Region, seeds: &Seeds) -> Vec<Vec<f64>> {
    match seeds {
        Seeds::Explicit(list) => list.clone(),
        Seeds::Random { count, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            (0..*count)
                .map(|_| {
                    let p: Vec<f64> = region
                        .bounds()
                        .iter()
                        .map(|&[a, b]| if a < b { rng.gen_range(a..b) } else { a })
                        .collect();
                    sys.project(&p, DOMAIN_MARGIN)
                })
                .collect()
        }
    }
}

/// One trajectory per seed; failures are recorded per entry.
pub fn phase_portrait(
    sys: &DynamicalSystem,
    region: &Region,
    seeds: &Seeds,
    t_end: f64,
    opts: &IntegrateOptions,
) -> Vec<PortraitEntry> {
    portrait_seeds(sys, region, seeds)
        .into_par_iter()
        .map(|seed| {
            let trajectory = if region.contains(&seed, 0.0) {
                integrate(sys, &seed, t_end, opts)
            } else {
                Err(SimError::StartOutsideDomain(seed.clone()))
            };
            PortraitEntry { seed, trajectory }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimitCycleOptions {
    /// Leading fraction of the time span discarded as transient.
    pub transient_fraction: f64,
    pub min_peaks: usize,
    /// Successive cycles that must agree.
    pub match_cycles: usize,
    /// Relative spread allowed among cycle amplitudes.
    pub amplitude_tol: f64,
    /// Relative spread allowed among peak spacings.
    pub period_tol: f64,
}

impl Default for LimitCycleOptions {
    fn default() -> Self {
        Self {
            transient_fraction: 0.2,
            min_peaks: 10,
            match_cycles: 5,
            amplitude_tol: 0.01,
            period_tol: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitCycleReport {
    pub detected: bool,
    /// Peak-to-peak amplitude of every state component over the settled part.
    pub amplitude: Vec<f64>,
    pub period: Option<f64>,
    /// Sample index where the matched cycles begin.
    pub settle_index: Option<usize>,
    pub peaks: usize,
    pub reason: Option<String>,
}

impl LimitCycleReport {
    fn rejected(peaks: usize, reason: String) -> Self {
        Self {
            detected: false,
            amplitude: Vec::new(),
            period: None,
            settle_index: None,
            peaks,
            reason: Some(reason),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Extremum {
    index: usize,
    t: f64,
    value: f64,
}

/// Vertex of the parabola through three samples.
fn parabola_vertex(t: [f64; 3], y: [f64; 3]) -> (f64, f64) {
    let d1 = (y[1] - y[0]) / (t[1] - t[0]);
    let d2 = (y[2] - y[1]) / (t[2] - t[1]);
    let curv = (d2 - d1) / (t[2] - t[0]);
    if curv == 0.0 {
        return (t[1], y[1]);
    }
    // y = y1 + b (s - t1) + curv (s - t1)^2 with b the slope at t1
    let b = d1 + curv * (t[1] - t[0]);
    let ts = t[1] - b / (2.0 * curv);
    let ts = ts.clamp(t[0], t[2]);
    let ds = ts - t[1];
    (ts, y[1] + b * ds + curv * ds * ds)
}

fn extrema(t: &[f64], y: &[f64], offset: usize, maxima: bool) -> Vec<Extremum> {
    let sign = if maxima { 1.0 } else { -1.0 };
    (1..y.len().saturating_sub(1))
        .filter(|&k| sign * (y[k] - y[k - 1]) > 0.0 && sign * (y[k] - y[k + 1]) >= 0.0)
        .map(|k| {
            let (tv, v) = parabola_vertex([t[k - 1], t[k], t[k + 1]], [y[k - 1], y[k], y[k + 1]]);
            Extremum {
                index: k + offset,
                t: tv,
                value: v,
            }
        })
        .collect()
}

fn relative_spread(v: &[f64]) -> f64 {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    if mean == 0.0 {
        return f64::INFINITY;
    }
    v.iter().map(|x| (x - mean).abs()).fold(0.0, f64::max) / mean.abs()
}

/// Detects a sustained oscillation in component `component` (1-based).
///
/// Peaks are 3-point local maxima refined by quadratic interpolation. Each
/// cycle's amplitude is its peak minus the following trough. The last
/// `match_cycles` amplitudes and peak spacings must agree within the
/// configured relative tolerances.
pub fn detect_limit_cycle(traj: &Trajectory, component: usize, opts: &LimitCycleOptions) -> LimitCycleReport {
    if component == 0 || component > traj.dim() {
        return LimitCycleReport::rejected(0, format!("component {component} out of range"));
    }
    let c = component - 1;
    let (t0, t1) = (traj.t.first().copied().unwrap_or(0.0), traj.final_time());
    let cut = t0 + opts.transient_fraction * (t1 - t0);
    let start = traj.t.iter().position(|&t| t >= cut).unwrap_or(traj.len());
    let ts = &traj.t[start..];
    let ys: Vec<f64> = traj.x[start..].iter().map(|s| s[c]).collect();
    let peaks = extrema(ts, &ys, start, true);
    let troughs = extrema(ts, &ys, start, false);
    if peaks.len() < opts.min_peaks {
        return LimitCycleReport::rejected(
            peaks.len(),
            format!("too few peaks after transient: {} < {}", peaks.len(), opts.min_peaks),
        );
    }
    // amplitude of the cycle starting at each peak (peak minus next trough)
    let mut amps = Vec::new();
    for w in peaks.windows(2) {
        let trough = troughs
            .iter()
            .filter(|m| m.t > w[0].t && m.t < w[1].t)
            .map(|m| m.value)
            .fold(f64::INFINITY, f64::min);
        amps.push(w[0].value - trough);
    }
    let periods: Vec<f64> = peaks.windows(2).map(|w| w[1].t - w[0].t).collect();
    let m = opts.match_cycles.max(2);
    if amps.len() < m {
        return LimitCycleReport::rejected(peaks.len(), "too few complete cycles".into());
    }
    let scale = ys.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    let floor = 1e-8 * scale;
    let matches = |from: usize| {
        let a = &amps[from..];
        let p = &periods[from..];
        a.iter().all(|v| v.is_finite() && *v > floor)
            && relative_spread(a) <= opts.amplitude_tol
            && relative_spread(p) <= opts.period_tol
    };
    let n = amps.len();
    if !matches(n - m) {
        let a = &amps[n - m..];
        let p = &periods[n - m..];
        return LimitCycleReport::rejected(
            peaks.len(),
            format!(
                "last {m} cycles disagree: amplitude spread {:.3e}, period spread {:.3e}",
                relative_spread(a),
                relative_spread(p)
            ),
        );
    }
    let mut from = n - m;
    while from > 0 && matches(from - 1) {
        from -= 1;
    }
    let settle = peaks[from].index;
    let period = periods[from..].iter().sum::<f64>() / (n - from) as f64;
    let amplitude = (0..traj.dim())
        .map(|k| {
            let (lo, hi) = traj.x[settle..]
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
                    (lo.min(s[k]), hi.max(s[k]))
                });
            hi - lo
        })
        .collect();
    LimitCycleReport {
        detected: true,
        amplitude,
        period: Some(period),
        settle_index: Some(settle),
        peaks: peaks.len(),
        reason: None,
    }
}
