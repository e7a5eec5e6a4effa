//! Scalar expressions over state variables `x1..xn`.
//!
//! Grammar (EBNF):
//!
//! ```text
//! expr    = term { ("+" | "-") term } ;
//! term    = unary { ("*" | "/") unary } ;
//! unary   = "-" unary | power ;
//! power   = atom [ "^" unary ] ;              (* right-associative *)
//! atom    = number | variable | func "(" expr ")" | "(" expr ")" ;
//! func    = "sqrt" | "sin" | "cos" | "exp" | "ln" ;
//! variable= "x" digit { digit } ;             (* 1-based index *)
//! number  = digit { digit } [ "." { digit } ] [ ("e" | "E") [ "+" | "-" ] digit { digit } ]
//!         | "." digit { digit } [ exponent ] ;
//! ```
//!
//! Precedence from tightest: `^`, unary minus, `* /`, `+ -`. A unary minus
//! applied directly to a numeric literal folds into a negative constant, so
//! printed ASTs re-parse to identical trees.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Neg,
    Sqrt,
    Sin,
    Cos,
    Exp,
    Ln,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

/// Expression tree. Variable indices are 1-based.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { offset: usize, name: String },
    #[error("variable index out of range: x{index} at byte {offset} (dimension {dim})")]
    VariableOutOfRange { offset: usize, index: usize, dim: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("state has dimension {got}, expression expects at least {need}")]
    Dimension { got: usize, need: usize },
    #[error("domain violation in `{expr}`: {reason}")]
    Domain { expr: String, reason: &'static str },
}

impl UnaryOp {
    fn name(self) -> &'static str {
        match self {
            UnaryOp::Neg => "-",
            UnaryOp::Sqrt => "sqrt",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Exp => "exp",
            UnaryOp::Ln => "ln",
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sqrt" => UnaryOp::Sqrt,
            "sin" => UnaryOp::Sin,
            "cos" => UnaryOp::Cos,
            "exp" => UnaryOp::Exp,
            "ln" => UnaryOp::Ln,
            _ => return None,
        })
    }
}

impl BinaryOp {
    fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::Pow => "^",
        }
    }
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    End,
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn tokenize(src: &'a str) -> Result<Vec<(usize, Tok)>, ParseError> {
        let mut lx = Lexer { src, pos: 0 };
        let mut out = Vec::new();
        loop {
            let t = lx.next_tok()?;
            let done = t.1 == Tok::End;
            out.push(t);
            if done {
                return Ok(out);
            }
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.as_bytes().get(self.pos).copied()
    }

    fn next_tok(&mut self) -> Result<(usize, Tok), ParseError> {
        while matches!(self.peek(), Some(b) if b.is_ascii_whitespace()) {
            self.pos += 1;
        }
        let start = self.pos;
        let Some(b) = self.peek() else {
            return Ok((start, Tok::End));
        };
        let tok = match b {
            b'+' | b'-' | b'*' | b'/' | b'^' => {
                self.pos += 1;
                Tok::Op(b as char)
            }
            b'(' => {
                self.pos += 1;
                Tok::LParen
            }
            b')' => {
                self.pos += 1;
                Tok::RParen
            }
            b'0'..=b'9' | b'.' => self.number(start)?,
            b if b.is_ascii_alphabetic() || b == b'_' => {
                while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == b'_') {
                    self.pos += 1;
                }
                Tok::Ident(self.src[start..self.pos].to_string())
            }
            _ => {
                let ch = self.src[start..].chars().next().unwrap_or('?');
                return Err(ParseError::Syntax {
                    offset: start,
                    message: format!("unexpected character `{ch}`"),
                });
            }
        };
        Ok((start, tok))
    }

    fn number(&mut self, start: usize) -> Result<Tok, ParseError> {
        let bytes = self.src.as_bytes();
        let digits = |lx: &mut Self| {
            let s = lx.pos;
            while matches!(lx.peek(), Some(b'0'..=b'9')) {
                lx.pos += 1;
            }
            lx.pos - s
        };
        let mut mantissa = digits(self);
        if self.peek() == Some(b'.') {
            self.pos += 1;
            mantissa += digits(self);
        }
        if mantissa == 0 {
            return Err(ParseError::Syntax {
                offset: start,
                message: "malformed number".into(),
            });
        }
        if matches!(self.peek(), Some(b'e' | b'E')) {
            let save = self.pos;
            self.pos += 1;
            if matches!(self.peek(), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            if digits(self) == 0 {
                // `2e` followed by something else: not an exponent
                self.pos = save;
            }
        }
        let text = std::str::from_utf8(&bytes[start..self.pos]).expect("ascii slice");
        match text.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(Tok::Num(v)),
            _ => Err(ParseError::Syntax {
                offset: start,
                message: format!("number `{text}` is not a finite real"),
            }),
        }
    }
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    i: usize,
    dim: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.i].1
    }

    fn offset(&self) -> usize {
        self.toks[self.i].0
    }

    fn bump(&mut self) -> (usize, Tok) {
        let t = self.toks[self.i].clone();
        if self.i + 1 < self.toks.len() {
            self.i += 1;
        }
        t
    }

    fn syntax<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError::Syntax {
            offset: self.offset(),
            message: message.into(),
        })
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Op('+') => BinaryOp::Add,
                Tok::Op('-') => BinaryOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Op('*') => BinaryOp::Mul,
                Tok::Op('/') => BinaryOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.peek() == &Tok::Op('-') {
            self.bump();
            let inner = self.unary()?;
            return Ok(match inner {
                Expr::Const(c) => Expr::Const(-c),
                other => Expr::Unary(UnaryOp::Neg, Box::new(other)),
            });
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if self.peek() == &Tok::Op('^') {
            self.bump();
            let exp = self.unary()?;
            return Ok(Expr::Binary(BinaryOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let (offset, tok) = self.bump();
        match tok {
            Tok::Num(v) => Ok(Expr::Const(v)),
            Tok::LParen => {
                let e = self.expr()?;
                self.expect_rparen()?;
                Ok(e)
            }
            Tok::Ident(name) => {
                if let Some(op) = UnaryOp::from_name(&name) {
                    if self.peek() != &Tok::LParen {
                        return self.syntax(format!("expected `(` after `{name}`"));
                    }
                    self.bump();
                    let arg = self.expr()?;
                    self.expect_rparen()?;
                    return Ok(Expr::Unary(op, Box::new(arg)));
                }
                self.variable(offset, name)
            }
            Tok::End => Err(ParseError::Syntax {
                offset,
                message: "unexpected end of input".into(),
            }),
            Tok::Op(c) => Err(ParseError::Syntax {
                offset,
                message: format!("unexpected operator `{c}`"),
            }),
            Tok::RParen => Err(ParseError::Syntax {
                offset,
                message: "unexpected `)`".into(),
            }),
        }
    }

    fn variable(&self, offset: usize, name: String) -> Result<Expr, ParseError> {
        let index = name
            .strip_prefix('x')
            .filter(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()))
            .and_then(|d| d.parse::<usize>().ok());
        match index {
            Some(index) if index >= 1 && index <= self.dim => Ok(Expr::Var(index)),
            Some(index) => Err(ParseError::VariableOutOfRange {
                offset,
                index,
                dim: self.dim,
            }),
            None => Err(ParseError::UnknownIdentifier { offset, name }),
        }
    }

    fn expect_rparen(&mut self) -> Result<(), ParseError> {
        if self.peek() == &Tok::RParen {
            self.bump();
            Ok(())
        } else {
            self.syntax("expected `)`")
        }
    }
}

/// Parses `text` as an expression over `x1..x{dim}`.
pub fn parse_expr(text: &str, dim: usize) -> Result<Expr, ParseError> {
    let toks = Lexer::tokenize(text)?;
    let mut p = Parser { toks, i: 0, dim };
    if p.peek() == &Tok::End {
        return p.syntax("empty expression");
    }
    let e = p.expr()?;
    if p.peek() != &Tok::End {
        return p.syntax("unexpected trailing input");
    }
    Ok(e)
}

// ---------------------------------------------------------------------------
// Printing
// ---------------------------------------------------------------------------

const PREC_ADD: u8 = 1;
const PREC_MUL: u8 = 2;
const PREC_NEG: u8 = 3;
const PREC_POW: u8 = 4;
const PREC_ATOM: u8 = 5;

impl Expr {
    fn precedence(&self) -> u8 {
        match self {
            Expr::Const(c) if c.is_sign_negative() => PREC_NEG,
            Expr::Const(_) | Expr::Var(_) => PREC_ATOM,
            Expr::Unary(UnaryOp::Neg, _) => PREC_NEG,
            Expr::Unary(..) => PREC_ATOM,
            Expr::Binary(BinaryOp::Add | BinaryOp::Sub, ..) => PREC_ADD,
            Expr::Binary(BinaryOp::Mul | BinaryOp::Div, ..) => PREC_MUL,
            Expr::Binary(BinaryOp::Pow, ..) => PREC_POW,
        }
    }

    fn write_child(&self, f: &mut fmt::Formatter<'_>, min_prec: u8) -> fmt::Result {
        if self.precedence() < min_prec {
            write!(f, "({self})")
        } else {
            write!(f, "{self}")
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            // `-0` would re-parse as Neg(0) folded to -0.0, which is fine,
            // but print plain 0 for readability
            Expr::Const(c) if *c == 0.0 => write!(f, "0"),
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Var(i) => write!(f, "x{i}"),
            Expr::Unary(UnaryOp::Neg, a) => {
                write!(f, "-")?;
                a.write_child(f, PREC_NEG)
            }
            Expr::Unary(op, a) => write!(f, "{}({a})", op.name()),
            Expr::Binary(op, a, b) => {
                let (lmin, rmin) = match op {
                    BinaryOp::Add | BinaryOp::Sub => (PREC_ADD, PREC_ADD + 1),
                    BinaryOp::Mul | BinaryOp::Div => (PREC_MUL, PREC_MUL + 1),
                    BinaryOp::Pow => (PREC_ATOM, PREC_POW),
                };
                a.write_child(f, lmin)?;
                if *op == BinaryOp::Pow {
                    write!(f, "^")?;
                } else {
                    write!(f, " {} ", op.symbol())?;
                }
                b.write_child(f, rmin)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

impl Expr {
    /// Largest variable index referenced (0 for constant expressions).
    pub fn max_var(&self) -> usize {
        match self {
            Expr::Const(_) => 0,
            Expr::Var(i) => *i,
            Expr::Unary(_, a) => a.max_var(),
            Expr::Binary(_, a, b) => a.max_var().max(b.max_var()),
        }
    }

    pub fn depends_on(&self, var: usize) -> bool {
        match self {
            Expr::Const(_) => false,
            Expr::Var(i) => *i == var,
            Expr::Unary(_, a) => a.depends_on(var),
            Expr::Binary(_, a, b) => a.depends_on(var) || b.depends_on(var),
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, EvalError> {
        let need = self.max_var();
        if need > x.len() {
            return Err(EvalError::Dimension { got: x.len(), need });
        }
        self.eval_unchecked(x)
    }

    fn eval_unchecked(&self, x: &[f64]) -> Result<f64, EvalError> {
        let domain = |reason| EvalError::Domain {
            expr: self.to_string(),
            reason,
        };
        let v = match self {
            Expr::Const(c) => *c,
            Expr::Var(i) => x[*i - 1],
            Expr::Unary(op, a) => {
                let a = a.eval_unchecked(x)?;
                match op {
                    UnaryOp::Neg => -a,
                    UnaryOp::Sqrt if a < 0.0 => return Err(domain("sqrt of a negative number")),
                    UnaryOp::Sqrt => a.sqrt(),
                    UnaryOp::Sin => a.sin(),
                    UnaryOp::Cos => a.cos(),
                    UnaryOp::Exp => a.exp(),
                    UnaryOp::Ln if a <= 0.0 => return Err(domain("ln of a non-positive number")),
                    UnaryOp::Ln => a.ln(),
                }
            }
            Expr::Binary(op, a, b) => {
                let a = a.eval_unchecked(x)?;
                let b = b.eval_unchecked(x)?;
                match op {
                    BinaryOp::Add => a + b,
                    BinaryOp::Sub => a - b,
                    BinaryOp::Mul => a * b,
                    BinaryOp::Div if b == 0.0 => return Err(domain("division by zero")),
                    BinaryOp::Div => a / b,
                    BinaryOp::Pow => pow(a, b).map_err(domain)?,
                }
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(domain("non-finite result"))
        }
    }
}

fn pow(base: f64, exp: f64) -> Result<f64, &'static str> {
    if exp.fract() == 0.0 && exp.abs() <= i32::MAX as f64 {
        if base == 0.0 && exp < 0.0 {
            return Err("zero raised to a negative power");
        }
        Ok(base.powi(exp as i32))
    } else if base > 0.0 {
        Ok(base.powf(exp))
    } else {
        Err("non-integer power of a non-positive base")
    }
}

// ---------------------------------------------------------------------------
// Simplifying constructors
// ---------------------------------------------------------------------------

fn is_const(e: &Expr, v: f64) -> bool {
    matches!(e, Expr::Const(c) if *c == v)
}

fn fold(op: BinaryOp, a: f64, b: f64) -> Option<f64> {
    let v = match op {
        BinaryOp::Add => a + b,
        BinaryOp::Sub => a - b,
        BinaryOp::Mul => a * b,
        BinaryOp::Div if b == 0.0 => return None,
        BinaryOp::Div => a / b,
        BinaryOp::Pow => pow(a, b).ok()?,
    };
    v.is_finite().then_some(v)
}

pub fn neg(a: Expr) -> Expr {
    match a {
        Expr::Const(c) => Expr::Const(-c),
        Expr::Unary(UnaryOp::Neg, inner) => *inner,
        other => Expr::Unary(UnaryOp::Neg, Box::new(other)),
    }
}

fn unary(op: UnaryOp, a: Expr) -> Expr {
    if op == UnaryOp::Neg {
        return neg(a);
    }
    Expr::Unary(op, Box::new(a))
}

fn raw(op: BinaryOp, a: Expr, b: Expr) -> Expr {
    Expr::Binary(op, Box::new(a), Box::new(b))
}

pub fn add(a: Expr, b: Expr) -> Expr {
    if let (Expr::Const(x), Expr::Const(y)) = (&a, &b) {
        if let Some(v) = fold(BinaryOp::Add, *x, *y) {
            return Expr::Const(v);
        }
    }
    if is_const(&a, 0.0) {
        return b;
    }
    if is_const(&b, 0.0) {
        return a;
    }
    match b {
        Expr::Unary(UnaryOp::Neg, inner) => raw(BinaryOp::Sub, a, *inner),
        b => raw(BinaryOp::Add, a, b),
    }
}

pub fn sub(a: Expr, b: Expr) -> Expr {
    if let (Expr::Const(x), Expr::Const(y)) = (&a, &b) {
        if let Some(v) = fold(BinaryOp::Sub, *x, *y) {
            return Expr::Const(v);
        }
    }
    if is_const(&b, 0.0) {
        return a;
    }
    if is_const(&a, 0.0) {
        return neg(b);
    }
    match b {
        Expr::Unary(UnaryOp::Neg, inner) => raw(BinaryOp::Add, a, *inner),
        b => raw(BinaryOp::Sub, a, b),
    }
}

pub fn mul(a: Expr, b: Expr) -> Expr {
    if let (Expr::Const(x), Expr::Const(y)) = (&a, &b) {
        if let Some(v) = fold(BinaryOp::Mul, *x, *y) {
            return Expr::Const(v);
        }
    }
    if is_const(&a, 0.0) || is_const(&b, 0.0) {
        return Expr::Const(0.0);
    }
    if is_const(&a, 1.0) {
        return b;
    }
    if is_const(&b, 1.0) {
        return a;
    }
    if is_const(&a, -1.0) {
        return neg(b);
    }
    if is_const(&b, -1.0) {
        return neg(a);
    }
    match (a, b) {
        (Expr::Unary(UnaryOp::Neg, a), b) => neg(mul(*a, b)),
        (a, Expr::Unary(UnaryOp::Neg, b)) => neg(mul(a, *b)),
        // constants move to the front and merge
        (a, Expr::Const(c)) if !matches!(a, Expr::Const(_)) => mul(Expr::Const(c), a),
        (Expr::Const(c1), Expr::Binary(BinaryOp::Mul, l, r)) if matches!(*l, Expr::Const(_)) => {
            let Expr::Const(c2) = *l else { unreachable!() };
            match fold(BinaryOp::Mul, c1, c2) {
                Some(c) => mul(Expr::Const(c), *r),
                None => raw(BinaryOp::Mul, Expr::Const(c1), raw(BinaryOp::Mul, Expr::Const(c2), *r)),
            }
        }
        (a, b) => raw(BinaryOp::Mul, a, b),
    }
}

pub fn div(a: Expr, b: Expr) -> Expr {
    if let (Expr::Const(x), Expr::Const(y)) = (&a, &b) {
        if let Some(v) = fold(BinaryOp::Div, *x, *y) {
            return Expr::Const(v);
        }
    }
    if is_const(&b, 1.0) {
        return a;
    }
    if is_const(&a, 0.0) && !is_const(&b, 0.0) {
        return Expr::Const(0.0);
    }
    match (a, b) {
        (Expr::Unary(UnaryOp::Neg, a), b) => neg(div(*a, b)),
        (Expr::Binary(BinaryOp::Mul, l, r), Expr::Const(d)) if matches!(*l, Expr::Const(_)) => {
            let Expr::Const(c) = *l else { unreachable!() };
            match fold(BinaryOp::Div, c, d) {
                Some(q) => mul(Expr::Const(q), *r),
                None => raw(BinaryOp::Div, raw(BinaryOp::Mul, Expr::Const(c), *r), Expr::Const(d)),
            }
        }
        (a, b) => raw(BinaryOp::Div, a, b),
    }
}

pub fn pow_expr(a: Expr, b: Expr) -> Expr {
    if let (Expr::Const(x), Expr::Const(y)) = (&a, &b) {
        if let Some(v) = fold(BinaryOp::Pow, *x, *y) {
            return Expr::Const(v);
        }
    }
    if is_const(&b, 1.0) {
        return a;
    }
    if is_const(&b, 0.0) {
        return Expr::Const(1.0);
    }
    raw(BinaryOp::Pow, a, b)
}

// ---------------------------------------------------------------------------
// Differentiation
// ---------------------------------------------------------------------------

/// Exact partial derivative with respect to `x{var}`, simplified by
/// constant folding and identity elimination.
pub fn diff_expr(e: &Expr, var: usize) -> Expr {
    match e {
        Expr::Const(_) => Expr::Const(0.0),
        Expr::Var(i) => Expr::Const(if *i == var { 1.0 } else { 0.0 }),
        Expr::Unary(op, a) => {
            let da = diff_expr(a, var);
            if is_const(&da, 0.0) {
                return Expr::Const(0.0);
            }
            let a = (**a).clone();
            match op {
                UnaryOp::Neg => neg(da),
                UnaryOp::Sqrt => div(da, mul(Expr::Const(2.0), unary(UnaryOp::Sqrt, a))),
                UnaryOp::Sin => mul(unary(UnaryOp::Cos, a), da),
                UnaryOp::Cos => neg(mul(unary(UnaryOp::Sin, a), da)),
                UnaryOp::Exp => mul(unary(UnaryOp::Exp, a), da),
                UnaryOp::Ln => div(da, a),
            }
        }
        Expr::Binary(op, a, b) => {
            let da = diff_expr(a, var);
            let db = diff_expr(b, var);
            let (a, b) = ((**a).clone(), (**b).clone());
            match op {
                BinaryOp::Add => add(da, db),
                BinaryOp::Sub => sub(da, db),
                BinaryOp::Mul => add(mul(da, b.clone()), mul(a, db)),
                BinaryOp::Div if !b.depends_on(var) => div(da, b),
                BinaryOp::Div => div(sub(mul(da, b.clone()), mul(a, db)), pow_expr(b, Expr::Const(2.0))),
                BinaryOp::Pow if !b.depends_on(var) => {
                    // d(a^c) = c * a^(c-1) * a'
                    let reduced = match &b {
                        Expr::Const(c) => Expr::Const(c - 1.0),
                        _ => sub(b.clone(), Expr::Const(1.0)),
                    };
                    mul(mul(b, pow_expr(a, reduced)), da)
                }
                BinaryOp::Pow => {
                    // d(a^b) = a^b * (b' ln a + b a' / a)
                    let whole = pow_expr(a.clone(), b.clone());
                    let log_term = mul(db, unary(UnaryOp::Ln, a.clone()));
                    let base_term = div(mul(b, da), a);
                    mul(whole, add(log_term, base_term))
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn var(i: usize) -> Box<Expr> {
        Box::new(Expr::Var(i))
    }

    fn c(v: f64) -> Box<Expr> {
        Box::new(Expr::Const(v))
    }

    #[test]
    fn parses_sqrt_minus_one() {
        let e = parse_expr("sqrt(x1) - 1", 1).unwrap();
        assert_eq!(
            e,
            Expr::Binary(BinaryOp::Sub, Box::new(Expr::Unary(UnaryOp::Sqrt, var(1))), c(1.0))
        );
    }

    #[test]
    fn parses_cubic_quotient() {
        let e = parse_expr("(1 - x1^3)/3", 2).unwrap();
        let cube = Expr::Binary(BinaryOp::Pow, var(1), c(3.0));
        let numer = Expr::Binary(BinaryOp::Sub, c(1.0), Box::new(cube));
        assert_eq!(e, Expr::Binary(BinaryOp::Div, Box::new(numer), c(3.0)));
    }

    #[test]
    fn rejects_out_of_range_variable() {
        assert!(matches!(
            parse_expr("x9", 3),
            Err(ParseError::VariableOutOfRange { index: 9, dim: 3, .. })
        ));
        assert!(matches!(
            parse_expr("x0", 3),
            Err(ParseError::VariableOutOfRange { index: 0, .. })
        ));
    }

    #[test]
    fn syntax_errors_carry_offsets() {
        assert_eq!(
            parse_expr("x1 + * 2", 1),
            Err(ParseError::Syntax {
                offset: 5,
                message: "unexpected operator `*`".into()
            })
        );
        assert!(matches!(
            parse_expr("(x1", 1),
            Err(ParseError::Syntax { offset: 3, .. })
        ));
        assert!(matches!(parse_expr("", 1), Err(ParseError::Syntax { offset: 0, .. })));
        assert!(matches!(
            parse_expr("x1 $", 1),
            Err(ParseError::Syntax { offset: 3, .. })
        ));
        assert!(matches!(
            parse_expr("foo(x1)", 1),
            Err(ParseError::UnknownIdentifier { offset: 0, .. })
        ));
    }

    #[test]
    fn precedence_and_associativity() {
        let e = parse_expr("-x1^2", 1).unwrap();
        assert_eq!(
            e,
            Expr::Unary(UnaryOp::Neg, Box::new(Expr::Binary(BinaryOp::Pow, var(1), c(2.0))))
        );
        let e = parse_expr("2^3^2", 1).unwrap();
        assert_eq!(e.eval(&[0.0]).unwrap(), 512.0);
        let e = parse_expr("8 - 3 - 2", 1).unwrap();
        assert_eq!(e.eval(&[0.0]).unwrap(), 3.0);
        let e = parse_expr("8 / 4 / 2", 1).unwrap();
        assert_eq!(e.eval(&[0.0]).unwrap(), 1.0);
        let e = parse_expr("2^-1", 1).unwrap();
        assert_eq!(e.eval(&[0.0]).unwrap(), 0.5);
        let e = parse_expr("1.5e2 + .5", 1).unwrap();
        assert_eq!(e.eval(&[0.0]).unwrap(), 150.5);
    }

    #[test]
    fn printed_form_round_trips() {
        for text in [
            "sqrt(x1) - 1",
            "(1 - x1^3)/3",
            "-(x1^2 + 1)*(x2 - 1)",
            "x1 - (x2 - x3)",
            "(x2 - x3)^2",
            "(-2)^x1",
            "x1^(x2^2)",
            "(x1^2)^3",
            "2^-x1",
            "--x1",
            "x1 / (x2 * x3)",
            "-(x1 * x2)",
            "exp(-x1) * ln(x2) + sin(x3)/cos(x1)",
            "0.1 + 1e-300",
        ] {
            let e = parse_expr(text, 3).unwrap();
            let printed = e.to_string();
            assert_eq!(parse_expr(&printed, 3).unwrap(), e, "{text} -> {printed}");
        }
    }

    #[test]
    fn evaluates_sqrt_example() {
        let e = parse_expr("sqrt(x1) - 1", 1).unwrap();
        assert_eq!(e.eval(&[4.0]).unwrap(), 1.0);
        assert_eq!(e.eval(&[1.0]).unwrap(), 0.0);
        match e.eval(&[-1.0]) {
            Err(EvalError::Domain { expr, .. }) => assert_eq!(expr, "sqrt(x1)"),
            other => panic!("expected domain error, got {other:?}"),
        }
    }

    #[test]
    fn eval_domain_errors() {
        let x = [0.0, -1.0];
        for text in ["1/x1", "ln(x1)", "ln(x2)", "x2^0.5", "x1^-1", "exp(1000)"] {
            assert!(
                matches!(parse_expr(text, 2).unwrap().eval(&x), Err(EvalError::Domain { .. })),
                "{text}"
            );
        }
        // integer powers of negative bases are fine
        assert_eq!(parse_expr("x2^3", 2).unwrap().eval(&x).unwrap(), -1.0);
        assert!(matches!(
            parse_expr("x2", 2).unwrap().eval(&[1.0]),
            Err(EvalError::Dimension { got: 1, need: 2 })
        ));
    }

    #[test]
    fn derivative_of_sqrt_field() {
        let e = parse_expr("sqrt(x1) - 1", 1).unwrap();
        let d = diff_expr(&e, 1);
        assert_eq!(d, parse_expr("1/(2*sqrt(x1))", 1).unwrap());
        assert_eq!(d.eval(&[1.0]).unwrap(), 0.5);
    }

    #[test]
    fn derivative_of_cubic_component() {
        let e = parse_expr("(1 - x1^3)/3", 2).unwrap();
        assert_eq!(diff_expr(&e, 1), parse_expr("-x1^2", 2).unwrap());
        assert_eq!(diff_expr(&e, 2), Expr::Const(0.0));
    }

    #[test]
    fn simplifier_identities() {
        let x = Expr::Var(1);
        assert_eq!(mul(Expr::Const(0.0), x.clone()), Expr::Const(0.0));
        assert_eq!(add(x.clone(), Expr::Const(0.0)), x);
        assert_eq!(mul(x.clone(), Expr::Const(1.0)), x);
        assert_eq!(neg(neg(x.clone())), x);
        assert_eq!(add(Expr::Const(2.0), Expr::Const(3.0)), Expr::Const(5.0));
        // no folding into an invalid constant
        assert_eq!(
            div(Expr::Const(1.0), Expr::Const(0.0)),
            Expr::Binary(BinaryOp::Div, c(1.0), c(0.0))
        );
    }

    #[test]
    fn derivative_of_variable_exponent() {
        let e = parse_expr("x1^x2", 2).unwrap();
        let d1 = diff_expr(&e, 1);
        let d2 = diff_expr(&e, 2);
        let (a, b) = (1.7_f64, 2.3_f64);
        assert!((d1.eval(&[a, b]).unwrap() - b * a.powf(b - 1.0)).abs() < 1e-12);
        assert!((d2.eval(&[a, b]).unwrap() - a.powf(b) * a.ln()).abs() < 1e-12);
    }
}
