//! Autonomous systems `x' = f(x)` with per-variable domain bounds.
//!
//! Definition file format (UTF-8, one statement per line, `#` starts a
//! comment):
//!
//! ```text
//! # example 2
//! dim 1
//! x1' = -sqrt(x1) + 1
//! domain x1 > 0
//! ```
//!
//! `dim` must precede everything else. Every component `x1'..xn'` must be
//! given exactly once. Domain bounds use `>`, `>=`, `<`, `<=`.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eig::Matrix;
use crate::expr::{diff_expr, parse_expr, EvalError, Expr, ParseError};
use crate::greitzer::{self, CompressorParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundKind {
    Gt,
    Ge,
    Lt,
    Le,
}

impl BoundKind {
    fn symbol(self) -> &'static str {
        match self {
            BoundKind::Gt => ">",
            BoundKind::Ge => ">=",
            BoundKind::Lt => "<",
            BoundKind::Le => "<=",
        }
    }

    fn is_lower(self) -> bool {
        matches!(self, BoundKind::Gt | BoundKind::Ge)
    }

    fn is_strict(self) -> bool {
        matches!(self, BoundKind::Gt | BoundKind::Lt)
    }
}

/// `x{var} <kind> value`, with a 1-based variable index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub var: usize,
    pub kind: BoundKind,
    pub value: f64,
}

impl Bound {
    pub fn new(var: usize, kind: BoundKind, value: f64) -> Self {
        Self { var, kind, value }
    }

    pub fn holds(&self, x: &[f64]) -> bool {
        let v = x[self.var - 1];
        match self.kind {
            BoundKind::Gt => v > self.value,
            BoundKind::Ge => v >= self.value,
            BoundKind::Lt => v < self.value,
            BoundKind::Le => v <= self.value,
        }
    }
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "x{} {} {}", self.var, self.kind.symbol(), self.value)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum JacobianMethod {
    Analytic,
    /// Central differences. `None` uses `cbrt(eps) * max(1, |x_i|)` per
    /// coordinate; `Some(h)` uses `h * max(1, |x_i|)`.
    FiniteDifference(Option<f64>),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SystemError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {source}")]
    Expr { line: usize, source: ParseError },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("inconsistent domain: {0}")]
    InconsistentDomain(String),
    #[error("state {0:?} lies outside the domain")]
    OutsideDomain(Vec<f64>),
    #[error("finite-difference stencil around {0:?} leaves the domain")]
    StencilOutsideDomain(Vec<f64>),
    #[error("finite-difference step underflows at coordinate {0}")]
    StepUnderflow(usize),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("unknown built-in system `{0}`")]
    UnknownBuiltin(String),
    #[error("built-in `greitzer` needs a throttle parameter g > 0")]
    MissingThrottle,
}

/// An autonomous system with expression components and box-like domain.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicalSystem {
    name: Option<String>,
    components: Vec<Expr>,
    domain: Vec<Bound>,
    jacobian: Vec<Vec<Expr>>,
}

impl DynamicalSystem {
    pub fn new(name: Option<String>, components: Vec<Expr>, domain: Vec<Bound>) -> Result<Self, SystemError> {
        let n = components.len();
        if n == 0 {
            return Err(SystemError::Dimension("system has no components".into()));
        }
        for (i, c) in components.iter().enumerate() {
            if c.max_var() > n {
                return Err(SystemError::Dimension(format!(
                    "component x{}' references x{} in a {n}-dimensional system",
                    i + 1,
                    c.max_var()
                )));
            }
        }
        for b in &domain {
            if b.var == 0 || b.var > n {
                return Err(SystemError::Dimension(format!(
                    "domain bound on x{} in a {n}-dimensional system",
                    b.var
                )));
            }
            if !b.value.is_finite() {
                return Err(SystemError::InconsistentDomain(format!("bound `{b}` is not finite")));
            }
        }
        let jacobian = components
            .iter()
            .map(|c| (1..=n).map(|j| diff_expr(c, j)).collect())
            .collect();
        let sys = Self {
            name,
            components,
            domain,
            jacobian,
        };
        sys.check_domain()?;
        Ok(sys)
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    pub fn components(&self) -> &[Expr] {
        &self.components
    }

    pub fn domain(&self) -> &[Bound] {
        &self.domain
    }

    /// Symbolic Jacobian entry d f_i / d x_j (0-based indices).
    pub fn jacobian_expr(&self, i: usize, j: usize) -> &Expr {
        &self.jacobian[i][j]
    }

    /// Interval `(lo, hi)` admitted for each coordinate (0-based).
    pub fn interval(&self, var0: usize) -> (f64, f64) {
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        for b in self.domain.iter().filter(|b| b.var == var0 + 1) {
            if b.kind.is_lower() {
                lo = lo.max(b.value);
            } else {
                hi = hi.min(b.value);
            }
        }
        (lo, hi)
    }

    fn check_domain(&self) -> Result<(), SystemError> {
        // probe the middle of every coordinate's admissible interval
        let mut probe = Vec::with_capacity(self.dim());
        for k in 0..self.dim() {
            let (lo, hi) = self.interval(k);
            let v = match (lo.is_finite(), hi.is_finite()) {
                (true, true) => 0.5 * (lo + hi),
                (true, false) => lo + 1.0,
                (false, true) => hi - 1.0,
                (false, false) => 0.0,
            };
            probe.push(v);
        }
        if self.contains(&probe) {
            return Ok(());
        }
        // a closed degenerate interval [v, v] is still admissible
        let pinned: Vec<f64> = (0..self.dim())
            .map(|k| {
                let (lo, hi) = self.interval(k);
                if lo == hi {
                    lo
                } else {
                    probe[k]
                }
            })
            .collect();
        if self.contains(&pinned) {
            return Ok(());
        }
        let bounds: Vec<String> = self.domain.iter().map(Bound::to_string).collect();
        Err(SystemError::InconsistentDomain(bounds.join(", ")))
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().all(|v| v.is_finite()) && self.domain.iter().all(|b| b.holds(x))
    }

    /// Clamps `x` into the domain, staying `margin` away from strict bounds.
    pub fn project(&self, x: &[f64], margin: f64) -> Vec<f64> {
        let mut y = x.to_vec();
        for b in &self.domain {
            let v = &mut y[b.var - 1];
            let gap = if b.kind.is_strict() {
                margin.max(b.value.abs() * f64::EPSILON * 4.0)
            } else {
                0.0
            };
            if b.kind.is_lower() {
                if *v < b.value + gap {
                    *v = b.value + gap;
                }
            } else if *v > b.value - gap {
                *v = b.value - gap;
            }
        }
        y
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>, SystemError> {
        if x.len() != self.dim() {
            return Err(EvalError::Dimension {
                got: x.len(),
                need: self.dim(),
            }
            .into());
        }
        self.components
            .iter()
            .map(|c| c.eval(x).map_err(SystemError::from))
            .collect()
    }

    pub fn jacobian(&self, x: &[f64], method: JacobianMethod) -> Result<Matrix, SystemError> {
        if !self.contains(x) {
            return Err(SystemError::OutsideDomain(x.to_vec()));
        }
        let n = self.dim();
        let mut m = Matrix::zeros(n);
        match method {
            JacobianMethod::Analytic => {
                for i in 0..n {
                    for j in 0..n {
                        m[(i, j)] = self.jacobian[i][j].eval(x)?;
                    }
                }
            }
            JacobianMethod::FiniteDifference(step) => {
                let base = step.unwrap_or_else(|| f64::EPSILON.cbrt());
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                for j in 0..n {
                    let h = base * x[j].abs().max(1.0);
                    let (up, down) = (x[j] + h, x[j] - h);
                    if up == x[j] || down == x[j] || !(h > 0.0) {
                        return Err(SystemError::StepUnderflow(j + 1));
                    }
                    xp[j] = up;
                    xm[j] = down;
                    if !self.contains(&xp) || !self.contains(&xm) {
                        return Err(SystemError::StencilOutsideDomain(x.to_vec()));
                    }
                    let fp = self.eval(&xp)?;
                    let fm = self.eval(&xm)?;
                    let width = up - down;
                    for i in 0..n {
                        m[(i, j)] = (fp[i] - fm[i]) / width;
                    }
                    xp[j] = x[j];
                    xm[j] = x[j];
                }
            }
        }
        Ok(m)
    }

    /// Same system with every component multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> DynamicalSystem {
        let components = self
            .components
            .iter()
            .map(|c| crate::expr::mul(Expr::Const(factor), c.clone()))
            .collect();
        DynamicalSystem::new(self.name.clone(), components, self.domain.clone()).expect("scaling preserves validity")
    }

    /// Same system with time reversed.
    pub fn reversed(&self) -> DynamicalSystem {
        let components = self.components.iter().map(|c| crate::expr::neg(c.clone())).collect();
        DynamicalSystem::new(self.name.clone(), components, self.domain.clone()).expect("reversal preserves validity")
    }
}

impl fmt::Display for DynamicalSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(name) = &self.name {
            writeln!(f, "# {name}")?;
        }
        writeln!(f, "dim {}", self.dim())?;
        for (i, c) in self.components.iter().enumerate() {
            writeln!(f, "x{}' = {c}", i + 1)?;
        }
        for b in &self.domain {
            writeln!(f, "domain {b}")?;
        }
        Ok(())
    }
}

/// Parses the line-oriented definition format.
pub fn parse_system(text: &str) -> Result<DynamicalSystem, SystemError> {
    parse_named_system(text, None)
}

pub fn parse_named_system(text: &str, name: Option<String>) -> Result<DynamicalSystem, SystemError> {
    let mut dim: Option<usize> = None;
    let mut components: Vec<Option<Expr>> = Vec::new();
    let mut domain = Vec::new();
    let mut last_line = 0;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        last_line = line;
        let stmt = raw.split('#').next().unwrap_or("").trim();
        if stmt.is_empty() {
            continue;
        }
        let err = |message: String| SystemError::Parse { line, message };
        if let Some(rest) = keyword(stmt, "dim") {
            if dim.is_some() {
                return Err(err("duplicate `dim` line".into()));
            }
            let n: usize = rest.parse().map_err(|_| err(format!("invalid dimension `{rest}`")))?;
            if n == 0 {
                return Err(err("dimension must be at least 1".into()));
            }
            dim = Some(n);
            components = vec![None; n];
            continue;
        }
        let Some(n) = dim else {
            return Err(err("`dim <n>` must come first".into()));
        };
        if let Some(rest) = keyword(stmt, "domain") {
            domain.push(parse_bound(rest, n).map_err(err)?);
            continue;
        }
        let Some((lhs, rhs)) = stmt.split_once('=') else {
            return Err(err(format!("expected `x<i>' = <expr>`, found `{stmt}`")));
        };
        let lhs = lhs.trim();
        let index = lhs
            .strip_prefix('x')
            .and_then(|s| s.strip_suffix('\''))
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| err(format!("expected `x<i>'` on the left-hand side, found `{lhs}`")))?;
        if index == 0 || index > n {
            return Err(SystemError::Dimension(format!(
                "line {line}: component x{index}' in a {n}-dimensional system"
            )));
        }
        let expr = parse_expr(rhs, n).map_err(|source| SystemError::Expr { line, source })?;
        if components[index - 1].replace(expr).is_some() {
            return Err(err(format!("component x{index}' defined twice")));
        }
    }
    let Some(n) = dim else {
        return Err(SystemError::Parse {
            line: last_line.max(1),
            message: "missing `dim <n>` line".into(),
        });
    };
    let missing: Vec<String> = components
        .iter()
        .enumerate()
        .filter(|(_, c)| c.is_none())
        .map(|(i, _)| format!("x{}'", i + 1))
        .collect();
    if !missing.is_empty() {
        return Err(SystemError::Dimension(format!(
            "{n}-dimensional system is missing {}",
            missing.join(", ")
        )));
    }
    let components = components.into_iter().map(Option::unwrap).collect();
    DynamicalSystem::new(name, components, domain)
}

fn keyword<'a>(stmt: &'a str, kw: &str) -> Option<&'a str> {
    let rest = stmt.strip_prefix(kw)?;
    if rest.starts_with(char::is_whitespace) {
        Some(rest.trim())
    } else {
        None
    }
}

fn parse_bound(text: &str, n: usize) -> Result<Bound, String> {
    let mut parts = text.split_whitespace();
    let (Some(var), Some(op), Some(value), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
        return Err(format!("expected `domain x<i> <op> <value>`, found `domain {text}`"));
    };
    let var: usize = var
        .strip_prefix('x')
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| format!("invalid variable `{var}`"))?;
    if var == 0 || var > n {
        return Err(format!("variable index out of range: x{var} (dimension {n})"));
    }
    let kind = match op {
        ">" => BoundKind::Gt,
        ">=" => BoundKind::Ge,
        "<" => BoundKind::Lt,
        "<=" => BoundKind::Le,
        _ => return Err(format!("unknown bound operator `{op}`")),
    };
    let value: f64 = value
        .parse()
        .ok()
        .filter(|v: &f64| v.is_finite())
        .ok_or_else(|| format!("invalid bound value `{value}`"))?;
    Ok(Bound::new(var, kind, value))
}

/// Names accepted by [`builtin`].
pub const BUILTINS: &[&str] = &["example1", "example2", "example3", "example4", "greitzer"];

const EXAMPLE1: &str = "dim 1\nx1' = sqrt(x1) - 1\ndomain x1 > 0\n";
const EXAMPLE2: &str = "dim 1\nx1' = -sqrt(x1) + 1\ndomain x1 > 0\n";
const EXAMPLE3: &str = "dim 2\nx1' = (1 - x1^3)/3\nx2' = -(x1^2 + 1)*(x2 - 1)\n";
const EXAMPLE4: &str = "dim 3\nx1' = x3\nx2' = (x2 - x3)^2\nx3' = x1 - 1 + x2\n";

/// Built-in systems. `greitzer` takes the throttle parameter `g` and uses
/// the default compressor parameters.
pub fn builtin(name: &str, g: Option<f64>) -> Result<DynamicalSystem, SystemError> {
    let text = match name {
        "example1" => EXAMPLE1,
        "example2" => EXAMPLE2,
        "example3" => EXAMPLE3,
        "example4" => EXAMPLE4,
        "greitzer" => {
            let g = g
                .filter(|g| *g > 0.0 && g.is_finite())
                .ok_or(SystemError::MissingThrottle)?;
            return Ok(greitzer::system(g, &CompressorParams::default()));
        }
        other => return Err(SystemError::UnknownBuiltin(other.to_string())),
    };
    parse_named_system(text, Some(name.to_string()))
}

/// Known equilibrium of each example system.
pub fn builtin_equilibrium(name: &str) -> Option<Vec<f64>> {
    Some(match name {
        "example1" | "example2" => vec![1.0],
        "example3" => vec![1.0, 1.0],
        "example4" => vec![1.0, 0.0, 0.0],
        _ => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_example_two_definition() {
        let sys = parse_system("dim 1\nx1' = -sqrt(x1) + 1\ndomain x1 > 0\n").unwrap();
        assert_eq!(sys.dim(), 1);
        assert_eq!(sys.domain(), &[Bound::new(1, BoundKind::Gt, 0.0)]);
        assert_eq!(sys.eval(&[1.0]).unwrap(), vec![0.0]);
        assert!(!sys.contains(&[0.0]));
    }

    #[test]
    fn parses_three_dimensional_definition() {
        let text = "# saddle\ndim 3\nx1' = x3\nx2' = (x2 - x3)^2   # square\nx3' = x1 - 1 + x2\n";
        let sys = parse_system(text).unwrap();
        assert_eq!(sys.eval(&[1.0, 0.0, 0.0]).unwrap(), vec![0.0, 0.0, 0.0]);
        assert_eq!(sys.eval(&[0.0, 2.0, 1.0]).unwrap(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn rejects_out_of_range_variable() {
        let err = parse_system("dim 2\nx1' = x3").unwrap_err();
        assert!(
            matches!(
                err,
                SystemError::Expr {
                    line: 2,
                    source: ParseError::VariableOutOfRange { index: 3, .. }
                }
            ),
            "{err:?}"
        );
    }

    #[test]
    fn parse_errors_report_lines() {
        assert!(matches!(
            parse_system("x1' = 1"),
            Err(SystemError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_system("dim 1\n\nx1 = 1"),
            Err(SystemError::Parse { line: 3, .. })
        ));
        assert!(matches!(
            parse_system("dim 1\nx1' = 1\ndomain x1 ~ 0"),
            Err(SystemError::Parse { line: 3, .. })
        ));
        assert!(matches!(
            parse_system("dim 1\nx1' = 1\nx1' = 2"),
            Err(SystemError::Parse { line: 3, .. })
        ));
        assert!(matches!(parse_system("dim 2\nx1' = 1"), Err(SystemError::Dimension(_))));
        assert!(matches!(parse_system("dim 1\nx2' = 1"), Err(SystemError::Dimension(_))));
        assert!(matches!(parse_system(""), Err(SystemError::Parse { .. })));
    }

    #[test]
    fn rejects_empty_domain() {
        let err = parse_system("dim 1\nx1' = 1\ndomain x1 > 2\ndomain x1 < 1").unwrap_err();
        assert!(matches!(err, SystemError::InconsistentDomain(_)));
        let err = parse_system("dim 1\nx1' = 1\ndomain x1 > 1\ndomain x1 <= 1").unwrap_err();
        assert!(matches!(err, SystemError::InconsistentDomain(_)));
        // a single admissible point is fine
        parse_system("dim 1\nx1' = 1\ndomain x1 >= 1\ndomain x1 <= 1").unwrap();
    }

    #[test]
    fn analytic_jacobians_match_hand_derivations() {
        let ex3 = builtin("example3", None).unwrap();
        let j = ex3.jacobian(&[1.0, 1.0], JacobianMethod::Analytic).unwrap();
        assert_eq!(j.rows(), vec![vec![-1.0, 0.0], vec![0.0, -2.0]]);
        let ex4 = builtin("example4", None).unwrap();
        let j = ex4.jacobian(&[1.0, 0.0, 0.0], JacobianMethod::Analytic).unwrap();
        assert_eq!(
            j.rows(),
            vec![vec![0.0, 0.0, 1.0], vec![0.0, 0.0, 0.0], vec![1.0, 1.0, 0.0]]
        );
        let ex1 = builtin("example1", None).unwrap();
        assert_eq!(ex1.jacobian(&[1.0], JacobianMethod::Analytic).unwrap()[(0, 0)], 0.5);
    }

    #[test]
    fn finite_difference_jacobian_respects_domain() {
        let ex2 = builtin("example2", None).unwrap();
        assert!(matches!(
            ex2.jacobian(&[1e-9], JacobianMethod::FiniteDifference(None)),
            Err(SystemError::StencilOutsideDomain(_))
        ));
        assert!(matches!(
            ex2.jacobian(&[-1.0], JacobianMethod::Analytic),
            Err(SystemError::OutsideDomain(_))
        ));
        assert!(matches!(
            ex2.jacobian(&[1.0], JacobianMethod::FiniteDifference(Some(1e-30))),
            Err(SystemError::StepUnderflow(1))
        ));
        let fd = ex2.jacobian(&[1.0], JacobianMethod::FiniteDifference(None)).unwrap();
        assert!((fd[(0, 0)] + 0.5).abs() < 1e-9);
    }

    #[test]
    fn projection_keeps_strict_margin() {
        let ex2 = builtin("example2", None).unwrap();
        let y = ex2.project(&[-3.0], 1e-12);
        assert!(ex2.contains(&y));
        assert_eq!(y, vec![1e-12]);
        assert_eq!(ex2.project(&[2.0], 1e-12), vec![2.0]);
    }

    #[test]
    fn printed_definition_reparses() {
        for name in ["example1", "example2", "example3", "example4"] {
            let sys = builtin(name, None).unwrap();
            let again = parse_named_system(&sys.to_string(), Some(name.into())).unwrap();
            assert_eq!(again, sys);
        }
        let g = builtin("greitzer", Some(0.8)).unwrap();
        assert_eq!(
            parse_named_system(&g.to_string(), g.name().map(String::from)).unwrap(),
            g
        );
    }

    #[test]
    fn builtin_registry() {
        for name in BUILTINS {
            let g = (*name == "greitzer").then_some(0.8);
            let sys = builtin(name, g).unwrap();
            if let Some(eq) = builtin_equilibrium(name) {
                assert!(sys.eval(&eq).unwrap().iter().all(|v| *v == 0.0), "{name}");
            }
        }
        assert!(matches!(builtin("greitzer", None), Err(SystemError::MissingThrottle)));
        assert!(matches!(builtin("nope", None), Err(SystemError::UnknownBuiltin(_))));
    }
}
