//! Greitzer compression-system model.
//!
//! States are the normalized mass flow `phi` and pressure rise `psi`:
//!
//! ```text
//! phi' = B (psi_c(phi) - psi)
//! psi' = (phi - g sqrt(psi)) / B
//! psi_c(phi) = psi_c0 + H [1 + 1.5 (phi/W - 1) - 0.5 (phi/W - 1)^3]
//! ```
//!
//! Equilibria satisfy `psi = psi_c(phi)` and `phi = g sqrt(psi)`. Eliminating
//! `g` through these relations makes the Jacobian spectrum a function of the
//! equilibrium flow alone, which is what [`eigen_sweep`] tabulates.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eig::{eigenvalues, quadratic_roots, Matrix, Spectrum};
use crate::expr::parse_expr;
use crate::sim::{
    detect_limit_cycle, integrate, outcome, AsymptoticOutcome, IntegrateOptions, LimitCycleOptions, LimitCycleReport,
    SimError, Trajectory,
};
use crate::stability::Equilibrium;
use crate::system::{Bound, BoundKind, DynamicalSystem};

/// Upper end of the compressor working range `0 < phi < 0.8`.
pub const PHI_MAX: f64 = 0.8;

/// Measured surge-inception flow of a three-stage compressor,
/// kept for comparison in reports. Not computed.
pub const EXPERIMENTAL_SURGE_FLOW: f64 = 0.48;

/// States with `psi` at or below this are outside the model.
pub const PSI_FLOOR: f64 = 1e-12;

/// Relative perturbation of `phi*` used to start surge experiments.
pub const SURGE_PERTURBATION: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GreitzerError {
    #[error("invalid compressor parameters: {0}")]
    InvalidParams(String),
    #[error("pressure rise psi = {0} must be positive")]
    NonPositivePsi(f64),
    #[error("throttle parameter g = {0} must be positive")]
    InvalidThrottle(f64),
    #[error("no equilibrium in the working range 0 < phi < {PHI_MAX} for g = {0}")]
    NoEquilibrium(f64),
    #[error("{count} equilibria in the working range for g = {g}")]
    MultipleEquilibria { g: f64, count: usize },
    #[error("flow {0} lies outside the working range 0 < phi < {PHI_MAX}")]
    OutsideWorkingRange(f64),
    #[error("real part has no sign change on [{lo}, {hi}]")]
    NoSignChange { lo: f64, hi: f64 },
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompressorParams {
    pub psi_c0: f64,
    pub h: f64,
    pub w: f64,
    pub b: f64,
}

impl Default for CompressorParams {
    fn default() -> Self {
        Self {
            psi_c0: 0.352,
            h: 0.18,
            w: 0.25,
            b: 0.8,
        }
    }
}

impl CompressorParams {
    pub fn validate(&self) -> Result<(), GreitzerError> {
        let ok = self.h > 0.0 && self.w > 0.0 && self.b > 0.0 && self.psi_c0 >= 0.0;
        let finite = [self.psi_c0, self.h, self.w, self.b].iter().all(|v| v.is_finite());
        if ok && finite {
            Ok(())
        } else {
            Err(GreitzerError::InvalidParams(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompressorState {
    pub phi: f64,
    pub psi: f64,
}

/// Compressor characteristic `psi_c(phi)`.
pub fn characteristic(phi: f64, p: &CompressorParams) -> f64 {
    let u = phi / p.w - 1.0;
    p.psi_c0 + p.h * (1.0 + 1.5 * u - 0.5 * u * u * u)
}

/// `d psi_c / d phi = (1.5 H / W) (1 - (phi/W - 1)^2)`.
pub fn characteristic_slope(phi: f64, p: &CompressorParams) -> f64 {
    let u = phi / p.w - 1.0;
    1.5 * p.h / p.w * (1.0 - u * u)
}

/// Flow at the characteristic's maximum, where the slope vanishes: `2W`.
pub fn characteristic_peak(p: &CompressorParams) -> f64 {
    2.0 * p.w
}

/// Right-hand side `(phi', psi')`.
pub fn field(s: CompressorState, g: f64, p: &CompressorParams) -> Result<(f64, f64), GreitzerError> {
    if !(s.psi > 0.0) {
        return Err(GreitzerError::NonPositivePsi(s.psi));
    }
    let dphi = p.b * (characteristic(s.phi, p) - s.psi);
    let dpsi = (s.phi - g * s.psi.sqrt()) / p.b;
    Ok((dphi, dpsi))
}

/// Jacobian of the field from its partial derivatives.
pub fn jacobian(s: CompressorState, g: f64, p: &CompressorParams) -> Result<Matrix, GreitzerError> {
    if !(s.psi > 0.0) {
        return Err(GreitzerError::NonPositivePsi(s.psi));
    }
    Ok(Matrix::from_rows(&[
        [p.b * characteristic_slope(s.phi, p), -p.b],
        [1.0 / p.b, -g / (2.0 * p.b * s.psi.sqrt())],
    ]))
}

/// Divergence `d phi'/d phi + d psi'/d psi`.
pub fn divergence(s: CompressorState, g: f64, p: &CompressorParams) -> Result<f64, GreitzerError> {
    let j = jacobian(s, g, p)?;
    Ok(j[(0, 0)] + j[(1, 1)])
}

/// Throttle parameter that places the equilibrium at flow `phi`.
pub fn throttle_for_phi(phi: f64, p: &CompressorParams) -> Result<f64, GreitzerError> {
    if !(phi > 0.0 && phi < PHI_MAX) {
        return Err(GreitzerError::OutsideWorkingRange(phi));
    }
    let psi = characteristic(phi, p);
    if !(psi > 0.0) {
        return Err(GreitzerError::NonPositivePsi(psi));
    }
    Ok(phi / psi.sqrt())
}

/// The equilibrium for throttle `g`: the root of `psi_c(phi) = phi^2 / g^2`
/// in the working range, bracketed on a fine scan and refined by bisection.
pub fn equilibrium_for_g(g: f64, p: &CompressorParams) -> Result<CompressorState, GreitzerError> {
    p.validate()?;
    if !(g > 0.0 && g.is_finite()) {
        return Err(GreitzerError::InvalidThrottle(g));
    }
    let h = |phi: f64| characteristic(phi, p) - phi * phi / (g * g);
    const SCAN: usize = 1600;
    let nodes: Vec<f64> = (0..=SCAN).map(|i| PHI_MAX * i as f64 / SCAN as f64).collect();
    let mut brackets = Vec::new();
    for w in nodes.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (ha, hb) = (h(a), h(b));
        // phi = 0 itself is excluded from the open working range
        if a > 0.0 && ha == 0.0 {
            brackets.push((a, a));
        } else if ha * hb < 0.0 {
            brackets.push((a, b));
        }
    }
    let count = brackets.len();
    let (mut lo, mut hi) = match brackets.as_slice() {
        [] => return Err(GreitzerError::NoEquilibrium(g)),
        [one] => *one,
        _ => return Err(GreitzerError::MultipleEquilibria { g, count }),
    };
    let sign_lo = h(lo).signum();
    while hi - lo > 0.0 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let hm = h(mid);
        if hm == 0.0 {
            lo = mid;
            hi = mid;
        } else if hm.signum() == sign_lo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let phi = if h(lo).abs() <= h(hi).abs() { lo } else { hi };
    if !(phi > 0.0 && phi < PHI_MAX) {
        return Err(GreitzerError::NoEquilibrium(g));
    }
    Ok(CompressorState {
        phi,
        psi: characteristic(phi, p),
    })
}

/// `(psi - psi_c(phi), phi - g sqrt(psi))`.
pub fn equilibrium_residuals(s: CompressorState, g: f64, p: &CompressorParams) -> (f64, f64) {
    (s.psi - characteristic(s.phi, p), s.phi - g * s.psi.sqrt())
}

/// Coefficients `(b, c)` of the equilibrium characteristic polynomial
/// `s^2 + b s + c` with `g` eliminated.
pub fn char_poly(phi: f64, p: &CompressorParams) -> (f64, f64) {
    let r = phi / characteristic(phi, p);
    let k = 1.0 / (2.0 * p.b);
    let m = -p.b * characteristic_slope(phi, p);
    (k * r + m, k * r * m + 1.0)
}

/// Discriminant in expanded form `k^2 r^2 + m (m - 2 k r) - 4` where
/// `r = phi / psi_c`, `k = 1/(2B)` and `m = -B psi_c'(phi)`.
pub fn discriminant_expanded(phi: f64, p: &CompressorParams) -> f64 {
    let r = phi / characteristic(phi, p);
    let k = 1.0 / (2.0 * p.b);
    let m = -p.b * characteristic_slope(phi, p);
    k * k * r * r + m * (m - 2.0 * k * r) - 4.0
}

/// Jacobian trace at the equilibrium, `-b` in [`char_poly`]. It is twice the
/// eigenvalue real part when the pair is complex, so it has the same sign
/// and zero crossing.
pub fn jacobian_trace(phi: f64, p: &CompressorParams) -> f64 {
    -char_poly(phi, p).0
}

/// True eigenvalue real part `-trace/2` at the equilibrium with flow `phi`.
pub fn real_part(phi: f64, p: &CompressorParams) -> f64 {
    -0.5 * char_poly(phi, p).0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub phi: f64,
    pub psi_c: f64,
    pub g: f64,
    pub real_part: f64,
    pub trace: f64,
    pub discriminant: f64,
    /// Roots of the characteristic polynomial, `im` ascending.
    pub eigenvalues: [crate::eig::Eigenvalue; 2],
    /// Distance between the polynomial roots and the eigenvalues of the
    /// Jacobian at the same equilibrium.
    pub spectral_mismatch: f64,
}

/// Spectral data at each flow of `phi_grid` (all inside the working range).
pub fn eigen_sweep(phi_grid: &[f64], p: &CompressorParams) -> Result<Vec<SweepRow>, GreitzerError> {
    p.validate()?;
    if let Some(&bad) = phi_grid.iter().find(|&&phi| !(phi > 0.0 && phi < PHI_MAX + 1e-12)) {
        return Err(GreitzerError::OutsideWorkingRange(bad));
    }
    phi_grid
        .par_iter()
        .map(|&phi| {
            let psi_c = characteristic(phi, p);
            if !(psi_c > 0.0) {
                return Err(GreitzerError::NonPositivePsi(psi_c));
            }
            let g = phi / psi_c.sqrt();
            let (b, c) = char_poly(phi, p);
            let roots = Spectrum::new(quadratic_roots(b, c).to_vec());
            let j = jacobian(CompressorState { phi, psi: psi_c }, g, p)?;
            let numeric = eigenvalues(&j).expect("finite 2x2 matrix");
            let pair = roots.values();
            Ok(SweepRow {
                phi,
                psi_c,
                g,
                real_part: -0.5 * b,
                trace: -b,
                discriminant: b * b - 4.0 * c,
                eigenvalues: [pair[0].into(), pair[1].into()],
                spectral_mismatch: roots.matching_distance(&numeric),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurgeBoundary {
    /// Flow where the eigenvalue real part changes sign.
    pub phi_surge: f64,
    pub bracket: [f64; 2],
    /// Characteristic peak, reported alongside.
    pub phi_peak: f64,
}

/// Bisection on the real-part sign change inside `(0.2, 0.7)` until the
/// bracket is at most `tol` wide.
pub fn surge_boundary(p: &CompressorParams, tol: f64) -> Result<SurgeBoundary, GreitzerError> {
    p.validate()?;
    let (mut lo, mut hi) = (0.2, 0.7);
    let (flo, fhi) = (real_part(lo, p), real_part(hi, p));
    if flo * fhi >= 0.0 {
        return Err(GreitzerError::NoSignChange { lo, hi });
    }
    let tol = tol.max(4.0 * f64::EPSILON);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if real_part(mid, p).signum() == flo.signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(SurgeBoundary {
        phi_surge: 0.5 * (lo + hi),
        bracket: [lo, hi],
        phi_peak: characteristic_peak(p),
    })
}

/// The model as a [`DynamicalSystem`] over `(x1, x2) = (phi, psi)` with
/// domain `psi > PSI_FLOOR`, so steps that approach the square-root
/// singularity end the trajectory.
pub fn system(g: f64, p: &CompressorParams) -> DynamicalSystem {
    let f1 = format!(
        "{b} * ({c0} + {h} * (1 + 1.5 * (x1 / {w} - 1) - 0.5 * (x1 / {w} - 1)^3) - x2)",
        b = p.b,
        c0 = p.psi_c0,
        h = p.h,
        w = p.w
    );
    let f2 = format!("(x1 - {g} * sqrt(x2)) / {b}", b = p.b);
    let components = vec![
        parse_expr(&f1, 2).expect("well-formed characteristic"),
        parse_expr(&f2, 2).expect("well-formed throttle"),
    ];
    DynamicalSystem::new(
        Some(format!("greitzer(g={g})")),
        components,
        vec![Bound::new(2, BoundKind::Gt, PSI_FLOOR)],
    )
    .expect("greitzer system is valid")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurgeExperiment {
    pub g: f64,
    pub equilibrium: CompressorState,
    pub trajectory: Trajectory,
    pub cycle: LimitCycleReport,
    pub outcome: AsymptoticOutcome,
}

/// Integration settings for surge experiments. The step cap keeps peaks well
/// resolved for cycle detection.
pub fn surge_integrate_options() -> IntegrateOptions {
    IntegrateOptions {
        method: crate::sim::Method::Rkf45 {
            atol: 1e-10,
            rtol: 1e-9,
        },
        divergence_bound: 1e6,
        max_step: 0.05,
    }
}

/// Integrates from the equilibrium with `phi` raised by 1% and checks the
/// flow component for a sustained cycle.
pub fn surge_experiment(g: f64, p: &CompressorParams, t_end: f64) -> Result<SurgeExperiment, GreitzerError> {
    let eq = equilibrium_for_g(g, p)?;
    let sys = system(g, p);
    let x0 = [eq.phi * (1.0 + SURGE_PERTURBATION), eq.psi];
    let trajectory = integrate(&sys, &x0, t_end, &surge_integrate_options())?;
    let cycle = detect_limit_cycle(&trajectory, 1, &LimitCycleOptions::default());
    let target = Equilibrium {
        x: vec![eq.phi, eq.psi],
        residual: 0.0,
        iterations: 0,
    };
    let outcome = outcome(&trajectory, &target, 1e-6);
    Ok(SurgeExperiment {
        g,
        equilibrium: eq,
        trajectory,
        cycle,
        outcome,
    })
}

impl SweepRow {
    pub fn eigen_pair(&self) -> [Complex64; 2] {
        self.eigenvalues.map(|e| Complex64::new(e.re, e.im))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::JacobianMethod;

    const P: CompressorParams = CompressorParams {
        psi_c0: 0.352,
        h: 0.18,
        w: 0.25,
        b: 0.8,
    };

    #[test]
    fn characteristic_values() {
        assert!((characteristic(0.25, &P) - 0.532).abs() < 1e-15);
        assert!((characteristic(0.5, &P) - 0.712).abs() < 1e-15);
        assert!((characteristic(0.0, &P) - 0.352).abs() < 1e-15);
        assert_eq!(characteristic_peak(&P), 0.5);
        assert_eq!(characteristic_slope(0.5, &P), 0.0);
    }

    #[test]
    fn field_values() {
        let g = 0.5 / 0.712f64.sqrt();
        let (a, b) = field(CompressorState { phi: 0.5, psi: 0.712 }, g, &P).unwrap();
        assert!(a.abs() < 1e-15 && b.abs() < 1e-15);
        let (a, b) = field(CompressorState { phi: 0.5, psi: 0.8 }, 0.0, &P).unwrap();
        assert!((a + 0.0704).abs() < 1e-15, "{a}");
        assert!((b - 0.625).abs() < 1e-15);
        assert!(matches!(
            field(CompressorState { phi: 0.5, psi: 0.0 }, 1.0, &P),
            Err(GreitzerError::NonPositivePsi(_))
        ));
    }

    #[test]
    fn equilibrium_recovery() {
        for phi in [0.6312, 0.5, 0.3, 0.05, 0.75] {
            let g = throttle_for_phi(phi, &P).unwrap();
            let eq = equilibrium_for_g(g, &P).unwrap();
            assert!((eq.phi - phi).abs() < 1e-12, "{phi} -> {}", eq.phi);
            let (r1, r2) = equilibrium_residuals(eq, g, &P);
            assert!(r1.abs() <= 1e-10 && r2.abs() <= 1e-10);
        }
        let eq = equilibrium_for_g(0.6312 / characteristic(0.6312, &P).sqrt(), &P).unwrap();
        assert!((eq.psi - 0.6246).abs() < 5e-4);
    }

    #[test]
    fn degenerate_throttles() {
        let eq = equilibrium_for_g(1e-9, &P).unwrap();
        assert!(eq.phi > 0.0 && eq.phi < 1e-8);
        assert!(matches!(
            equilibrium_for_g(10.0, &P),
            Err(GreitzerError::NoEquilibrium(_))
        ));
        assert!(matches!(
            equilibrium_for_g(0.0, &P),
            Err(GreitzerError::InvalidThrottle(_))
        ));
    }

    #[test]
    fn discriminant_identity_and_sign() {
        for i in 1..=200 {
            let phi = 0.01 + 0.79 * (i - 1) as f64 / 199.0;
            let (b, c) = char_poly(phi, &P);
            let d = discriminant_expanded(phi, &P);
            assert!((d - (b * b - 4.0 * c)).abs() <= 1e-12, "{phi}");
            assert!(d < 0.0);
        }
    }

    #[test]
    fn real_part_signs() {
        assert!(real_part(0.6312, &P) < 0.0);
        assert!(real_part(0.30, &P) > 0.0);
        assert_eq!(jacobian_trace(0.4, &P), 2.0 * real_part(0.4, &P));
    }

    #[test]
    fn sweep_rows_match_numeric_jacobian() {
        let grid: Vec<f64> = (1..=50).map(|i| i as f64 * 0.79 / 50.0).collect();
        for row in eigen_sweep(&grid, &P).unwrap() {
            assert!(row.spectral_mismatch <= 1e-8, "{row:?}");
            // the generic system route agrees too
            let sys = system(row.g, &P);
            let j = sys.jacobian(&[row.phi, row.psi_c], JacobianMethod::Analytic).unwrap();
            let s = eigenvalues(&j).unwrap();
            assert!(s.matching_distance(&Spectrum::new(row.eigen_pair().to_vec())) <= 1e-8);
        }
        assert!(matches!(
            eigen_sweep(&[0.9], &P),
            Err(GreitzerError::OutsideWorkingRange(_))
        ));
    }

    #[test]
    fn boundary_root() {
        let b = surge_boundary(&P, 1e-6).unwrap();
        assert!(b.phi_surge > 0.43 && b.phi_surge < 0.44, "{b:?}");
        assert!(b.bracket[1] - b.bracket[0] <= 1e-6);
        let coarse = surge_boundary(&P, 1e-2).unwrap();
        assert!(coarse.bracket[1] - coarse.bracket[0] <= 1e-2);
        assert!((coarse.phi_surge - b.phi_surge).abs() <= 1e-2);
        let flat = CompressorParams { h: 1e-6, ..P };
        assert!(matches!(
            surge_boundary(&flat, 1e-6),
            Err(GreitzerError::NoSignChange { .. })
        ));
    }

    #[test]
    fn divergence_values() {
        let g = 0.25 / 0.532f64.sqrt();
        let s = CompressorState { phi: 0.25, psi: 0.532 };
        let want = 0.864 - 1.25 * g / (2.0 * 0.532f64.sqrt());
        assert!((divergence(s, g, &P).unwrap() - want).abs() < 1e-14);
        assert!((divergence(s, 0.0, &P).unwrap() - 0.864).abs() < 1e-14);
        let g = throttle_for_phi(0.6312, &P).unwrap();
        let eq = equilibrium_for_g(g, &P).unwrap();
        assert!(divergence(eq, g, &P).unwrap() < 0.0);
    }

    #[test]
    fn system_matches_direct_field() {
        let g = 0.4;
        let sys = system(g, &P);
        for (phi, psi) in [(0.1, 0.3), (0.6, 0.7), (-0.2, 0.05)] {
            let f = sys.eval(&[phi, psi]).unwrap();
            let (a, b) = field(CompressorState { phi, psi }, g, &P).unwrap();
            assert!((f[0] - a).abs() < 1e-14 && (f[1] - b).abs() < 1e-14);
        }
    }
}
