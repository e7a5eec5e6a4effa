//! Equilibria, the extended-Jacobian verdict, and the corroborating Popov and
//! Bendixson checks.

use std::fmt;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eig::{eigenvalues, EigError, Matrix, Spectrum};
use crate::system::{DynamicalSystem, JacobianMethod, SystemError};

/// Real parts with magnitude at or below this count as zero.
pub const TOL_ZERO: f64 = 1e-8;

/// Newton iteration cap.
pub const NEWTON_MAX_ITER: usize = 50;

/// Distance kept from strict domain bounds when projecting iterates.
pub const DOMAIN_MARGIN: f64 = 1e-12;

pub const METHOD_NOTE: &str = "per extended-Jacobian method: the verdict is the sign pattern of the \
Jacobian spectrum at the unique equilibrium found in the sampled region; global validity of this \
rule is a conjecture, and uniqueness is grid evidence, not a proof";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StabilityError {
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Eig(#[from] EigError),
    #[error("invalid region: {0}")]
    InvalidRegion(String),
    #[error("start point {0:?} lies outside the domain")]
    StartOutsideDomain(Vec<f64>),
    #[error("Newton iteration did not converge from {start:?} (residual {residual:e} after {iterations} iterations)")]
    NoConvergence {
        start: Vec<f64>,
        residual: f64,
        iterations: usize,
    },
    #[error("Jacobian is singular at {0:?} and gradient descent is stuck")]
    Singular(Vec<f64>),
    #[error("{op} needs a {expected}-dimensional system, got dimension {got}")]
    Dimension {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("Popov test requires a Hurwitz matrix; spectrum is {0}")]
    NotHurwitz(Spectrum),
    #[error("sector bound k must be positive (got {0})")]
    InvalidSector(f64),
}

/// Axis-aligned box `[lo_i, hi_i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Region {
    bounds: Vec<[f64; 2]>,
}

impl Region {
    pub fn new(bounds: Vec<[f64; 2]>) -> Result<Self, StabilityError> {
        if bounds.is_empty() {
            return Err(StabilityError::InvalidRegion("no axes".into()));
        }
        for [lo, hi] in &bounds {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(StabilityError::InvalidRegion(format!("bad interval [{lo}, {hi}]")));
            }
        }
        Ok(Self { bounds })
    }

    /// The same interval on every axis.
    pub fn cube(lo: f64, hi: f64, dim: usize) -> Result<Self, StabilityError> {
        Self::new(vec![[lo, hi]; dim])
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[[f64; 2]] {
        &self.bounds
    }

    pub fn diameter(&self) -> f64 {
        self.bounds.iter().map(|[a, b]| (b - a) * (b - a)).sum::<f64>().sqrt()
    }

    pub fn contains(&self, x: &[f64], slack: f64) -> bool {
        x.len() == self.dim()
            && self
                .bounds
                .iter()
                .zip(x)
                .all(|([lo, hi], v)| *v >= lo - slack && *v <= hi + slack)
    }

    /// Grid nodes with `per_axis` points per axis (1 means the midpoint), in
    /// lexicographic order with the last axis varying fastest.
    pub fn grid(&self, per_axis: usize) -> Vec<Vec<f64>> {
        let axes: Vec<Vec<f64>> = self.bounds.iter().map(|&[a, b]| linspace(a, b, per_axis)).collect();
        let total = axes.iter().map(Vec::len).product();
        let mut out = Vec::with_capacity(total);
        let mut idx = vec![0usize; axes.len()];
        for _ in 0..total {
            out.push(idx.iter().zip(&axes).map(|(&i, ax)| ax[i]).collect());
            for d in (0..axes.len()).rev() {
                idx[d] += 1;
                if idx[d] < axes[d].len() {
                    break;
                }
                idx[d] = 0;
            }
        }
        out
    }

    fn check_dim(&self, sys: &DynamicalSystem) -> Result<(), StabilityError> {
        if self.dim() != sys.dim() {
            return Err(StabilityError::InvalidRegion(format!(
                "region has {} axes, system has dimension {}",
                self.dim(),
                sys.dim()
            )));
        }
        Ok(())
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.bounds.iter().map(|[a, b]| format!("[{a}, {b}]")).collect();
        write!(f, "{}", parts.join(" x "))
    }
}

/// `count` evenly spaced points from `a` to `b` inclusive.
pub fn linspace(a: f64, b: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![0.5 * (a + b)],
        _ => (0..count)
            .map(|i| {
                if i == count - 1 {
                    b
                } else {
                    a + (b - a) * i as f64 / (count - 1) as f64
                }
            })
            .collect(),
    }
}

/// `count` log-spaced points from `a` to `b` inclusive (both positive).
pub fn logspace(a: f64, b: f64, count: usize) -> Vec<f64> {
    linspace(a.log10(), b.log10(), count)
        .into_iter()
        .map(|e| 10f64.powf(e))
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    pub x: Vec<f64>,
    /// Euclidean norm of f at `x`.
    pub residual: f64,
    #[serde(skip)]
    pub iterations: usize,
}

impl Equilibrium {
    pub fn residual_tolerance(x: &[f64]) -> f64 {
        1e-10 * norm(x).max(1.0)
    }
}

/// Solves `J d = -f` by partial-pivot elimination; `None` when the pivot is
/// negligible relative to the matrix scale.
fn newton_direction(j: &Matrix, f: &[f64]) -> Option<Vec<f64>> {
    let n = j.dim();
    let scale = j.max_abs();
    if scale == 0.0 {
        return None;
    }
    let mut a = j.rows();
    let mut rhs: Vec<f64> = f.iter().map(|v| -v).collect();
    for k in 0..n {
        let p = (k..n).max_by(|&x, &y| a[x][k].abs().total_cmp(&a[y][k].abs()))?;
        if a[p][k].abs() <= 1e-13 * scale {
            return None;
        }
        a.swap(p, k);
        rhs.swap(p, k);
        for i in k + 1..n {
            let m = a[i][k] / a[k][k];
            for c in k..n {
                a[i][c] -= m * a[k][c];
            }
            rhs[i] -= m * rhs[k];
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|c| a[k][c] * x[c]).sum();
        x[k] = (rhs[k] - s) / a[k][k];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Steepest-descent direction for `|f|^2 / 2`, scaled by the exact line
/// minimizer of the linearized residual. Uses the finite-difference Jacobian
/// when the stencil fits in the domain.
fn gradient_direction(sys: &DynamicalSystem, x: &[f64], f: &[f64], analytic: &Matrix) -> Option<Vec<f64>> {
    let j = sys
        .jacobian(x, JacobianMethod::FiniteDifference(None))
        .unwrap_or_else(|_| analytic.clone());
    let n = sys.dim();
    let g: Vec<f64> = (0..n).map(|c| (0..n).map(|r| j[(r, c)] * f[r]).sum()).collect();
    let jg: Vec<f64> = (0..n).map(|r| (0..n).map(|c| j[(r, c)] * g[c]).sum()).collect();
    let gg: f64 = g.iter().map(|v| v * v).sum();
    let jgjg: f64 = jg.iter().map(|v| v * v).sum();
    if gg == 0.0 || jgjg == 0.0 {
        return None;
    }
    let t = gg / jgjg;
    Some(g.iter().map(|v| -t * v).collect())
}

/// Damped Newton from `x0`.
///
/// Iterates stay inside the domain by projection. Once the residual is
/// below tolerance the iteration keeps polishing while the residual still
/// decreases, so that equilibria with a singular Jacobian (where Newton
/// converges only linearly) land close to the true root.
pub fn refine_equilibrium(sys: &DynamicalSystem, x0: &[f64]) -> Result<Equilibrium, StabilityError> {
    if !sys.contains(x0) {
        return Err(StabilityError::StartOutsideDomain(x0.to_vec()));
    }
    let mut x = x0.to_vec();
    let mut f = sys.eval(&x)?;
    let mut fnorm = norm(&f);
    let mut iterations = 0;
    while iterations < NEWTON_MAX_ITER {
        let tol = Equilibrium::residual_tolerance(&x);
        let j = sys.jacobian(&x, JacobianMethod::Analytic)?;
        let dir = match newton_direction(&j, &f) {
            Some(d) => d,
            None if fnorm <= tol => break,
            None => gradient_direction(sys, &x, &f, &j).ok_or_else(|| StabilityError::Singular(x.clone()))?,
        };
        iterations += 1;
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + lambda * d).collect();
            let trial = sys.project(&trial, DOMAIN_MARGIN);
            if let Ok(ft) = sys.eval(&trial) {
                let n = norm(&ft);
                if n < fnorm {
                    accepted = Some((trial, ft, n));
                    break;
                }
            }
            lambda *= 0.5;
        }
        match accepted {
            Some((xn, fnew, n)) => {
                let step = norm(&x.iter().zip(&xn).map(|(a, b)| a - b).collect::<Vec<_>>());
                x = xn;
                f = fnew;
                fnorm = n;
                if fnorm == 0.0 || (fnorm <= tol && step <= 1e-15 * norm(&x).max(1.0)) {
                    break;
                }
            }
            None => break,
        }
    }
    if fnorm <= Equilibrium::residual_tolerance(&x) {
        Ok(Equilibrium {
            x,
            residual: fnorm,
            iterations,
        })
    } else {
        Err(StabilityError::NoConvergence {
            start: x0.to_vec(),
            residual: fnorm,
            iterations,
        })
    }
}

/// Multistart Newton from every grid node of `region`; converged points
/// inside the region are deduplicated at `dedupe_tol` (default
/// `1e-6 * diameter`) and returned in lexicographic order.
pub fn find_equilibria(
    sys: &DynamicalSystem,
    region: &Region,
    grid: usize,
    dedupe_tol: Option<f64>,
) -> Result<Vec<Equilibrium>, StabilityError> {
    region.check_dim(sys)?;
    if grid < 2 {
        return Err(StabilityError::InvalidRegion(
            "grid needs at least 2 points per axis".into(),
        ));
    }
    let tol = dedupe_tol.unwrap_or(1e-6 * region.diameter()).max(f64::MIN_POSITIVE);
    let starts: Vec<Vec<f64>> = region
        .grid(grid)
        .into_iter()
        .map(|p| sys.project(&p, DOMAIN_MARGIN))
        .filter(|p| sys.contains(p))
        .collect();
    let results: Vec<Option<Equilibrium>> = starts.par_iter().map(|s| refine_equilibrium(sys, s).ok()).collect();
    let mut found: Vec<Equilibrium> = Vec::new();
    for eq in results.into_iter().flatten() {
        if !region.contains(&eq.x, tol) {
            continue;
        }
        let dup = found
            .iter_mut()
            .find(|e| norm(&e.x.iter().zip(&eq.x).map(|(a, b)| a - b).collect::<Vec<_>>()) <= tol);
        match dup {
            Some(existing) if eq.residual < existing.residual => *existing = eq,
            Some(_) => {}
            None => found.push(eq),
        }
    }
    found.sort_by(|a, b| {
        a.x.iter()
            .zip(&b.x)
            .map(|(p, q)| p.total_cmp(q))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(found)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VerdictKind {
    GloballyAsymptoticallyStable,
    GloballyUnstable,
    Inconclusive,
}

impl fmt::Display for VerdictKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            VerdictKind::GloballyAsymptoticallyStable => "GloballyAsymptoticallyStable",
            VerdictKind::GloballyUnstable => "GloballyUnstable",
            VerdictKind::Inconclusive => "Inconclusive",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Uniqueness {
    UniqueInRegion { region: Region },
    MultipleFound { count: usize },
    Unknown,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityVerdict {
    pub kind: VerdictKind,
    pub equilibria: Vec<Equilibrium>,
    /// Spectrum at the equilibrium when exactly one was found.
    pub spectrum: Option<Spectrum>,
    pub uniqueness: Uniqueness,
    pub method_note: &'static str,
}

impl StabilityVerdict {
    pub fn equilibrium(&self) -> Option<&Equilibrium> {
        match self.uniqueness {
            Uniqueness::UniqueInRegion { .. } => self.equilibria.first(),
            _ => None,
        }
    }
}

/// The verdict rule: unstable iff some real part exceeds `tol_zero`; stable
/// iff every real part is below `-tol_zero` and the equilibrium is unique;
/// inconclusive otherwise.
pub fn decide(spectrum: Option<&Spectrum>, uniqueness: &Uniqueness, tol_zero: f64) -> VerdictKind {
    let Some(s) = spectrum else {
        return VerdictKind::Inconclusive;
    };
    let max_re = s.max_real();
    if max_re > tol_zero {
        VerdictKind::GloballyUnstable
    } else if max_re < -tol_zero && matches!(uniqueness, Uniqueness::UniqueInRegion { .. }) {
        VerdictKind::GloballyAsymptoticallyStable
    } else {
        VerdictKind::Inconclusive
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifyOptions {
    pub grid: usize,
    pub dedupe_tol: Option<f64>,
    pub tol_zero: f64,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        Self {
            grid: 9,
            dedupe_tol: None,
            tol_zero: TOL_ZERO,
        }
    }
}

pub fn classify(
    sys: &DynamicalSystem,
    region: &Region,
    opts: &ClassifyOptions,
) -> Result<StabilityVerdict, StabilityError> {
    let equilibria = find_equilibria(sys, region, opts.grid, opts.dedupe_tol)?;
    let (uniqueness, spectrum) = match equilibria.len() {
        0 => (Uniqueness::Unknown, None),
        1 => {
            let j = sys.jacobian(&equilibria[0].x, JacobianMethod::Analytic)?;
            (
                Uniqueness::UniqueInRegion { region: region.clone() },
                Some(eigenvalues(&j)?),
            )
        }
        count => (Uniqueness::MultipleFound { count }, None),
    };
    let kind = decide(spectrum.as_ref(), &uniqueness, opts.tol_zero);
    Ok(StabilityVerdict {
        kind,
        equilibria,
        spectrum,
        uniqueness,
        method_note: METHOD_NOTE,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldRow {
    pub x: Vec<f64>,
    /// `Err` holds the reason the node was skipped.
    pub spectrum: Result<Spectrum, String>,
}

/// Jacobian spectrum at every grid node of `region`.
pub fn eigen_field(sys: &DynamicalSystem, region: &Region, grid: usize) -> Result<Vec<FieldRow>, StabilityError> {
    region.check_dim(sys)?;
    if grid == 0 {
        return Err(StabilityError::InvalidRegion(
            "grid needs at least 1 point per axis".into(),
        ));
    }
    Ok(region
        .grid(grid)
        .into_par_iter()
        .map(|x| {
            let spectrum = sys
                .jacobian(&x, JacobianMethod::Analytic)
                .map_err(|e| e.to_string())
                .and_then(|j| eigenvalues(&j).map_err(|e| e.to_string()));
            FieldRow { x, spectrum }
        })
        .collect())
}

/// `x' = A x + b u`, `y = c x + d u`, `u = -phi(y)` with phi in the sector
/// `(0, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LureSystem {
    pub a: Matrix,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub d: f64,
    pub k: f64,
}

impl LureSystem {
    pub fn scalar(a: f64, k: f64) -> Self {
        Self {
            a: Matrix::from_rows(&[[a]]),
            b: vec![1.0],
            c: vec![1.0],
            d: 0.0,
            k,
        }
    }

    /// `H(jw) = c (jwI - A)^-1 b + d / (jw)`.
    pub fn transfer(&self, w: f64) -> Complex64 {
        let n = self.a.dim();
        let s = Complex64::new(0.0, w);
        let mut m: Vec<Vec<Complex64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        let diag = if i == j { s } else { Complex64::new(0.0, 0.0) };
                        diag - self.a[(i, j)]
                    })
                    .collect()
            })
            .collect();
        let mut rhs: Vec<Complex64> = self.b.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        for k in 0..n {
            let p = (k..n)
                .max_by(|&x, &y| m[x][k].norm().total_cmp(&m[y][k].norm()))
                .expect("non-empty range");
            m.swap(p, k);
            rhs.swap(p, k);
            for i in k + 1..n {
                let f = m[i][k] / m[k][k];
                for c in k..n {
                    let v = m[k][c];
                    m[i][c] -= f * v;
                }
                let r = rhs[k];
                rhs[i] -= f * r;
            }
        }
        let mut x = vec![Complex64::new(0.0, 0.0); n];
        for k in (0..n).rev() {
            let s: Complex64 = (k + 1..n).map(|c| m[k][c] * x[c]).sum();
            x[k] = (rhs[k] - s) / m[k][k];
        }
        let cx: Complex64 = self.c.iter().zip(&x).map(|(c, v)| v * *c).sum();
        if self.d != 0.0 {
            cx + self.d / s
        } else {
            cx
        }
    }

    /// `1/k + Re H(jw) - w gamma Im H(jw)`.
    pub fn popov_margin(&self, w: f64, gamma: f64) -> f64 {
        let h = self.transfer(w);
        1.0 / self.k + h.re - w * gamma * h.im
    }
}

/// Lur'e form of a scalar system linearized at `eq`: `A = J(x*)`,
/// `b = c = 1`, `d = 0`, unbounded sector. Only dimension 1 is supported.
pub fn taylor_lure(sys: &DynamicalSystem, eq: &Equilibrium) -> Result<LureSystem, StabilityError> {
    if sys.dim() != 1 {
        return Err(StabilityError::Dimension {
            op: "taylor_lure",
            expected: 1,
            got: sys.dim(),
        });
    }
    let j = sys.jacobian(&eq.x, JacobianMethod::Analytic)?;
    Ok(LureSystem::scalar(j[(0, 0)], f64::INFINITY))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PopovOptions {
    pub frequencies: Vec<f64>,
    pub gammas: Vec<f64>,
}

impl Default for PopovOptions {
    fn default() -> Self {
        Self {
            frequencies: logspace(1e-3, 1e3, 400),
            gammas: logspace(1e-3, 1e3, 120),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopovResult {
    pub feasible: bool,
    /// First feasible gamma, or the gamma with the best margin otherwise.
    pub gamma: f64,
    /// Minimum margin over the frequency grid at `gamma`.
    pub min_margin: f64,
    pub frequencies_checked: usize,
}

/// Grid search for a Popov multiplier. Feasibility is certified on the
/// frequency grid only.
pub fn popov_test(l: &LureSystem, opts: &PopovOptions) -> Result<PopovResult, StabilityError> {
    if !(l.k > 0.0) {
        return Err(StabilityError::InvalidSector(l.k));
    }
    let spectrum = eigenvalues(&l.a)?;
    if spectrum.max_real() >= 0.0 {
        return Err(StabilityError::NotHurwitz(spectrum));
    }
    let h: Vec<(f64, Complex64)> = opts.frequencies.iter().map(|&w| (w, l.transfer(w))).collect();
    let mut best: Option<(f64, f64)> = None;
    for &gamma in &opts.gammas {
        let margin = h
            .iter()
            .map(|(w, hw)| 1.0 / l.k + hw.re - w * gamma * hw.im)
            .fold(f64::INFINITY, f64::min);
        if margin > 0.0 {
            return Ok(PopovResult {
                feasible: true,
                gamma,
                min_margin: margin,
                frequencies_checked: h.len(),
            });
        }
        if best.is_none_or(|(_, m)| margin > m) {
            best = Some((gamma, margin));
        }
    }
    let (gamma, min_margin) = best.unwrap_or((f64::NAN, f64::NEG_INFINITY));
    Ok(PopovResult {
        feasible: false,
        gamma,
        min_margin,
        frequencies_checked: h.len(),
    })
}

/// Scalar Popov inequality with finite sector bound:
/// `w^2 (1 + k gamma) + a^2 > k a`.
pub fn popov_scalar_inequality(a: f64, k: f64, gamma: f64, w: f64) -> bool {
    w * w * (1.0 + k * gamma) + a * a > k * a
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BendixsonKind {
    NoLimitCycleInRegion,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BendixsonVerdict {
    pub kind: BendixsonKind,
    pub divergence_min: f64,
    pub divergence_max: f64,
    pub nodes_sampled: usize,
    /// Nodes where the divergence could not be evaluated.
    pub nodes_skipped: Vec<Vec<f64>>,
}

/// Samples `df1/dx1 + df2/dx2` over a planar box. A strict uniform sign on a
/// fully evaluated box (boxes are simply connected) excludes closed orbits.
pub fn bendixson_test(sys: &DynamicalSystem, region: &Region, grid: usize) -> Result<BendixsonVerdict, StabilityError> {
    if sys.dim() != 2 {
        return Err(StabilityError::Dimension {
            op: "bendixson_test",
            expected: 2,
            got: sys.dim(),
        });
    }
    region.check_dim(sys)?;
    if grid < 2 {
        return Err(StabilityError::InvalidRegion(
            "grid needs at least 2 points per axis".into(),
        ));
    }
    let nodes = region.grid(grid);
    let values: Vec<Result<f64, Vec<f64>>> = nodes
        .into_par_iter()
        .map(|x| {
            if !sys.contains(&x) {
                return Err(x);
            }
            let d = sys
                .jacobian_expr(0, 0)
                .eval(&x)
                .and_then(|a| Ok(a + sys.jacobian_expr(1, 1).eval(&x)?));
            d.map_err(|_| x)
        })
        .collect();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut skipped = Vec::new();
    let mut sampled = 0;
    for v in values {
        match v {
            Ok(d) => {
                lo = lo.min(d);
                hi = hi.max(d);
                sampled += 1;
            }
            Err(x) => skipped.push(x),
        }
    }
    let uniform = sampled > 0 && (hi < 0.0 || lo > 0.0);
    let kind = if uniform && skipped.is_empty() {
        BendixsonKind::NoLimitCycleInRegion
    } else {
        BendixsonKind::Inconclusive
    };
    Ok(BendixsonVerdict {
        kind,
        divergence_min: lo,
        divergence_max: hi,
        nodes_sampled: sampled,
        nodes_skipped: skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{builtin, parse_system};

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn grid_order_and_linspace() {
        let r = Region::new(vec![[0.0, 1.0], [10.0, 20.0]]).unwrap();
        let g = r.grid(2);
        assert_eq!(
            g,
            vec![vec![0.0, 10.0], vec![0.0, 20.0], vec![1.0, 10.0], vec![1.0, 20.0]]
        );
        assert_eq!(linspace(0.0, 1.0, 5), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let l = logspace(1e-3, 1e3, 7);
        assert!((l[0] - 1e-3).abs() < 1e-15 && (l[6] - 1e3).abs() < 1e-9);
        assert!(Region::new(vec![[1.0, 0.0]]).is_err());
    }

    #[test]
    fn newton_finds_example_equilibria() {
        let ex2 = builtin("example2", None).unwrap();
        let eq = refine_equilibrium(&ex2, &[4.0]).unwrap();
        assert!((eq.x[0] - 1.0).abs() < 1e-12);

        let ex3 = builtin("example3", None).unwrap();
        let eq = refine_equilibrium(&ex3, &[0.5, 3.0]).unwrap();
        assert!(close(&eq.x, &[1.0, 1.0], 1e-12), "{:?}", eq.x);

        let ex4 = builtin("example4", None).unwrap();
        let eq = refine_equilibrium(&ex4, &[1.2, 0.1, -0.1]).unwrap();
        assert!(close(&eq.x, &[1.0, 0.0, 0.0], 1e-9), "{:?}", eq.x);
        assert!(eq.residual <= Equilibrium::residual_tolerance(&eq.x));
    }

    #[test]
    fn newton_errors() {
        let ex2 = builtin("example2", None).unwrap();
        assert!(matches!(
            refine_equilibrium(&ex2, &[-1.0]),
            Err(StabilityError::StartOutsideDomain(_))
        ));
        // x' = x^2 + 1 has no real root
        let sys = parse_system("dim 1\nx1' = x1^2 + 1").unwrap();
        assert!(refine_equilibrium(&sys, &[0.3]).is_err());
        // constant field: zero Jacobian and nothing to descend on
        let flat = parse_system("dim 2\nx1' = 1\nx2' = 2").unwrap();
        let err = refine_equilibrium(&flat, &[0.0, 1.0]).unwrap_err();
        assert!(matches!(err, StabilityError::Singular(_)), "{err:?}");
        // example 3 escapes the singular line x1 = 0 by descent
        let ex3 = builtin("example3", None).unwrap();
        let eq = refine_equilibrium(&ex3, &[0.0, 1.0]).unwrap();
        assert!(close(&eq.x, &[1.0, 1.0], 1e-10));
    }

    #[test]
    fn multistart_finds_unique_equilibria() {
        let ex3 = builtin("example3", None).unwrap();
        let found = find_equilibria(&ex3, &Region::cube(-3.0, 3.0, 2).unwrap(), 9, None).unwrap();
        assert_eq!(found.len(), 1);
        assert!(close(&found[0].x, &[1.0, 1.0], 1e-10));

        let ex4 = builtin("example4", None).unwrap();
        let found = find_equilibria(&ex4, &Region::cube(-2.0, 3.0, 3).unwrap(), 7, None).unwrap();
        assert_eq!(found.len(), 1, "{found:?}");
        assert!(close(&found[0].x, &[1.0, 0.0, 0.0], 1e-9));
    }

    #[test]
    fn multistart_reports_multiple_equilibria() {
        let sys = parse_system("dim 1\nx1' = x1*(1 - x1)").unwrap();
        let found = find_equilibria(&sys, &Region::cube(-2.0, 2.0, 1).unwrap(), 9, None).unwrap();
        let xs: Vec<f64> = found.iter().map(|e| e.x[0]).collect();
        assert!(close(&xs, &[0.0, 1.0], 1e-12), "{xs:?}");
        let v = classify(&sys, &Region::cube(-2.0, 2.0, 1).unwrap(), &ClassifyOptions::default()).unwrap();
        assert_eq!(v.kind, VerdictKind::Inconclusive);
        assert_eq!(v.uniqueness, Uniqueness::MultipleFound { count: 2 });
    }

    #[test]
    fn verdicts_for_examples() {
        let opts = ClassifyOptions::default();
        let ex2 = builtin("example2", None).unwrap();
        let v = classify(&ex2, &Region::cube(0.01, 10.0, 1).unwrap(), &opts).unwrap();
        assert_eq!(v.kind, VerdictKind::GloballyAsymptoticallyStable);
        assert_eq!(v.spectrum.unwrap().values()[0].re, -0.5);

        let ex4 = builtin("example4", None).unwrap();
        let v = classify(
            &ex4,
            &Region::cube(-2.0, 3.0, 3).unwrap(),
            &ClassifyOptions { grid: 7, ..opts },
        )
        .unwrap();
        assert_eq!(v.kind, VerdictKind::GloballyUnstable);

        let osc = parse_system("dim 2\nx1' = x2\nx2' = -x1").unwrap();
        let v = classify(&osc, &Region::cube(-1.0, 1.0, 2).unwrap(), &opts).unwrap();
        assert_eq!(v.kind, VerdictKind::Inconclusive);
        assert!(matches!(v.uniqueness, Uniqueness::UniqueInRegion { .. }));

        let none = parse_system("dim 1\nx1' = x1^2 + 1").unwrap();
        let v = classify(&none, &Region::cube(-1.0, 1.0, 1).unwrap(), &opts).unwrap();
        assert_eq!((v.kind, v.uniqueness), (VerdictKind::Inconclusive, Uniqueness::Unknown));
    }

    #[test]
    fn decide_rule_table() {
        let unique = Uniqueness::UniqueInRegion {
            region: Region::cube(0.0, 1.0, 1).unwrap(),
        };
        let multi = Uniqueness::MultipleFound { count: 2 };
        let s = |v: &[f64]| Spectrum::new(v.iter().map(|&r| Complex64::new(r, 0.0)).collect());
        assert_eq!(
            decide(Some(&s(&[-1.0, -2.0])), &unique, TOL_ZERO),
            VerdictKind::GloballyAsymptoticallyStable
        );
        assert_eq!(
            decide(Some(&s(&[-1.0, -2.0])), &multi, TOL_ZERO),
            VerdictKind::Inconclusive
        );
        assert_eq!(
            decide(Some(&s(&[-1.0, 0.5])), &multi, TOL_ZERO),
            VerdictKind::GloballyUnstable
        );
        assert_eq!(
            decide(Some(&s(&[-1.0, 1e-9])), &unique, TOL_ZERO),
            VerdictKind::Inconclusive
        );
        assert_eq!(
            decide(Some(&s(&[-1.0, -1e-9])), &unique, TOL_ZERO),
            VerdictKind::Inconclusive
        );
        assert_eq!(decide(None, &unique, TOL_ZERO), VerdictKind::Inconclusive);
    }

    #[test]
    fn eigen_field_of_saddle() {
        let ex4 = builtin("example4", None).unwrap();
        let region = Region::new(vec![[0.0, 2.0], [-1.0, 1.0], [-1.0, 1.0]]).unwrap();
        let rows = eigen_field(&ex4, &region, 5).unwrap();
        assert_eq!(rows.len(), 125);
        let centre = rows.iter().find(|r| r.x == vec![1.0, 0.0, 0.0]).unwrap();
        let s = centre.spectrum.as_ref().unwrap();
        assert!(
            s.matching_distance(&Spectrum::new(vec![
                Complex64::new(-1.0, 0.0),
                Complex64::new(0.0, 0.0),
                Complex64::new(1.0, 0.0)
            ])) < 1e-12
        );
        assert!(rows.iter().all(|r| r.spectrum.as_ref().unwrap().max_real() > 0.0));
    }

    #[test]
    fn eigen_field_of_linear_system_is_constant() {
        let lin = parse_system("dim 2\nx1' = -x1 + 2*x2\nx2' = -3*x2").unwrap();
        let rows = eigen_field(&lin, &Region::cube(-1.0, 1.0, 2).unwrap(), 4).unwrap();
        let first = rows[0].spectrum.clone().unwrap();
        assert!(rows.iter().all(|r| r.spectrum.as_ref().unwrap() == &first));
    }

    #[test]
    fn eigen_field_flags_domain_violations() {
        let ex2 = builtin("example2", None).unwrap();
        let rows = eigen_field(&ex2, &Region::cube(-1.0, 1.0, 1).unwrap(), 3).unwrap();
        assert!(rows[0].spectrum.is_err() && rows[1].spectrum.is_err());
        assert!(rows[2].spectrum.is_ok());
    }

    #[test]
    fn lure_mapping_of_scalar_examples() {
        let ex2 = builtin("example2", None).unwrap();
        let eq = refine_equilibrium(&ex2, &[4.0]).unwrap();
        let l = taylor_lure(&ex2, &eq).unwrap();
        assert_eq!(
            (l.a[(0, 0)], l.b.clone(), l.c.clone(), l.d),
            (-0.5, vec![1.0], vec![1.0], 0.0)
        );
        assert!(l.k.is_infinite());

        let ex1 = builtin("example1", None).unwrap();
        let eq = refine_equilibrium(&ex1, &[2.0]).unwrap();
        assert_eq!(taylor_lure(&ex1, &eq).unwrap().a[(0, 0)], 0.5);

        let ex3 = builtin("example3", None).unwrap();
        let eq = refine_equilibrium(&ex3, &[0.5, 3.0]).unwrap();
        assert!(matches!(
            taylor_lure(&ex3, &eq),
            Err(StabilityError::Dimension { got: 2, .. })
        ));
    }

    #[test]
    fn popov_scalar_cases() {
        let l = LureSystem::scalar(-1.0, f64::INFINITY);
        let r = popov_test(&l, &PopovOptions::default()).unwrap();
        assert!(r.feasible && r.min_margin > 0.0);
        assert_eq!(r.frequencies_checked, 400);
        // margin = (1 + gamma w^2) / (1 + w^2)
        for w in [1e-3, 0.5, 7.0, 1e3] {
            let want = (1.0 + r.gamma * w * w) / (1.0 + w * w);
            assert!((l.popov_margin(w, r.gamma) - want).abs() < 1e-12);
        }
        assert!(matches!(
            popov_test(&LureSystem::scalar(1.0, f64::INFINITY), &PopovOptions::default()),
            Err(StabilityError::NotHurwitz(_))
        ));
        assert!(matches!(
            popov_test(&LureSystem::scalar(-1.0, 0.0), &PopovOptions::default()),
            Err(StabilityError::InvalidSector(_))
        ));
    }

    #[test]
    fn popov_finite_sector_matches_scalar_inequality() {
        let (a, k, gamma) = (-1.0, 10.0, 1.0);
        let l = LureSystem::scalar(a, k);
        for w in logspace(1e-3, 1e3, 400) {
            assert!(popov_scalar_inequality(a, k, gamma, w));
            assert!(l.popov_margin(w, gamma) > 0.0);
        }
        // the inequality fails for an unstable scalar at low frequency
        assert!(!popov_scalar_inequality(2.0, 10.0, 1.0, 0.1));
    }

    #[test]
    fn popov_with_direct_term_and_two_states() {
        let l = LureSystem {
            a: Matrix::from_rows(&[[-1.0, 0.0], [0.0, -2.0]]),
            b: vec![1.0, 1.0],
            c: vec![1.0, 0.0],
            d: 0.5,
            k: f64::INFINITY,
        };
        let w = 2.0;
        let h = l.transfer(w);
        let want = Complex64::new(1.0, 0.0) / Complex64::new(1.0, w) + 0.5 / Complex64::new(0.0, w);
        assert!((h - want).norm() < 1e-14);
    }

    #[test]
    fn bendixson_on_contracting_field() {
        let sys = parse_system("dim 2\nx1' = -x1\nx2' = -x2").unwrap();
        let v = bendixson_test(&sys, &Region::cube(-1.0, 1.0, 2).unwrap(), 11).unwrap();
        assert_eq!(v.kind, BendixsonKind::NoLimitCycleInRegion);
        assert_eq!((v.divergence_min, v.divergence_max), (-2.0, -2.0));

        let vdp = parse_system("dim 2\nx1' = x2\nx2' = (1 - x1^2)*x2 - x1").unwrap();
        let v = bendixson_test(&vdp, &Region::cube(-2.0, 2.0, 2).unwrap(), 11).unwrap();
        assert_eq!(v.kind, BendixsonKind::Inconclusive);

        let ex3 = builtin("example3", None).unwrap();
        let ex4 = builtin("example4", None).unwrap();
        assert!(bendixson_test(&ex3, &Region::cube(0.0, 2.0, 2).unwrap(), 5).is_ok());
        assert!(matches!(
            bendixson_test(&ex4, &Region::cube(0.0, 2.0, 3).unwrap(), 5),
            Err(StabilityError::Dimension { .. })
        ));
    }
}
