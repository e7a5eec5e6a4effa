#![allow(dead_code)]

use eqstab::expr::{BinaryOp, Expr, UnaryOp};
use rand::Rng;

pub const DIM: usize = 3;

/// Random AST of depth at most `depth` over `x1..x3`. Powers take either a
/// small constant exponent or, occasionally, a general one.
pub fn random_expr<R: Rng>(rng: &mut R, depth: usize) -> Expr {
    if depth <= 1 || rng.gen_bool(0.25) {
        return if rng.gen_bool(0.6) {
            Expr::Var(rng.gen_range(1..=DIM))
        } else {
            Expr::Const((rng.gen_range(-3.0..3.0f64) * 100.0).round() / 100.0)
        };
    }
    if rng.gen_bool(0.35) {
        let op = [
            UnaryOp::Neg,
            UnaryOp::Sqrt,
            UnaryOp::Sin,
            UnaryOp::Cos,
            UnaryOp::Exp,
            UnaryOp::Ln,
        ][rng.gen_range(0..6)];
        return Expr::Unary(op, Box::new(random_expr(rng, depth - 1)));
    }
    let op = [
        BinaryOp::Add,
        BinaryOp::Sub,
        BinaryOp::Mul,
        BinaryOp::Div,
        BinaryOp::Pow,
    ][rng.gen_range(0..5)];
    let lhs = random_expr(rng, depth - 1);
    let rhs = if op == BinaryOp::Pow && rng.gen_bool(0.8) {
        Expr::Const([-2.0, -1.0, 2.0, 3.0, 0.5, 1.5][rng.gen_range(0..6)])
    } else {
        random_expr(rng, depth - 1)
    };
    Expr::Binary(op, Box::new(lhs), Box::new(rhs))
}

pub fn fd_step(x: f64) -> f64 {
    f64::EPSILON.cbrt() * x.abs().max(1.0)
}

pub fn central_difference(e: &Expr, var: usize, x: &[f64], h: f64) -> Option<f64> {
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    xp[var - 1] += h;
    xm[var - 1] -= h;
    let fd = (e.eval(&xp).ok()? - e.eval(&xm).ok()?) / (2.0 * h);
    fd.is_finite().then_some(fd)
}

/// Central difference at the standard step, kept only where it agrees with
/// the estimate at twice the step, i.e. where the point is not close to a
/// singularity of `e`, and where the rounding error of the difference
/// quotient (`eps |f| / h`) is small. The analytic derivative plays no part
/// in the filter.
pub fn well_conditioned_fd(e: &Expr, var: usize, x: &[f64]) -> Option<f64> {
    let f = e.eval(x).ok()?;
    let h = fd_step(x[var - 1]);
    let fd = central_difference(e, var, x, h)?;
    let fd2 = central_difference(e, var, x, 2.0 * h)?;
    let scale = fd.abs().max(1.0);
    let rounding = f64::EPSILON * f.abs() / h;
    ((fd - fd2).abs() <= 1e-6 * scale && rounding <= 1e-7 * scale && fd.abs() < 1e6).then_some(fd)
}
