//! Eigenvalues of dense real matrices.
//!
//! [`eigenvalues`] runs balancing, Hessenberg reduction by stabilized
//! elementary similarity transforms, and Francis double-shift QR.
//! [`char_roots_smalln`] solves the characteristic polynomial in closed form
//! for n <= 3 and is kept as an independent cross-check.

use std::cmp::Ordering;
use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dense square matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    n: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds a matrix from rows. Panics if the rows are ragged or not square.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for r in rows {
            let r = r.as_ref();
            assert_eq!(r.len(), n, "matrix must be square");
            data.extend_from_slice(r);
        }
        Self { n, data }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.n.max(1)).map(<[f64]>::to_vec).collect()
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self[(i, i)]).sum()
    }

    /// Determinant by partial-pivot LU.
    pub fn determinant(&self) -> f64 {
        let n = self.n;
        let mut a = self.clone();
        let mut det = 1.0;
        for k in 0..n {
            let p = (k..n)
                .max_by(|&i, &j| a[(i, k)].abs().total_cmp(&a[(j, k)].abs()))
                .unwrap_or(k);
            if a[(p, k)] == 0.0 {
                return 0.0;
            }
            if p != k {
                a.swap_rows(p, k);
                det = -det;
            }
            det *= a[(k, k)];
            for i in k + 1..n {
                let f = a[(i, k)] / a[(k, k)];
                for j in k..n {
                    let v = a[(k, j)];
                    a[(i, j)] -= f * v;
                }
            }
        }
        det
    }

    pub fn mul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.n, other.n);
        let n = self.n;
        let mut out = Matrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self[(i, k)];
                for j in 0..n {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    /// Inverse by Gauss-Jordan with partial pivoting; `None` when singular.
    pub fn inverse(&self) -> Option<Matrix> {
        let n = self.n;
        let mut a = self.clone();
        let mut inv = Matrix::identity(n);
        for k in 0..n {
            let p = (k..n).max_by(|&i, &j| a[(i, k)].abs().total_cmp(&a[(j, k)].abs()))?;
            if a[(p, k)] == 0.0 {
                return None;
            }
            a.swap_rows(p, k);
            inv.swap_rows(p, k);
            let d = a[(k, k)];
            for j in 0..n {
                a[(k, j)] /= d;
                inv[(k, j)] /= d;
            }
            for i in 0..n {
                if i != k {
                    let f = a[(i, k)];
                    if f != 0.0 {
                        for j in 0..n {
                            let (akj, ikj) = (a[(k, j)], inv[(k, j)]);
                            a[(i, j)] -= f * akj;
                            inv[(i, j)] -= f * ikj;
                        }
                    }
                }
            }
        }
        Some(inv)
    }

    fn swap_rows(&mut self, i: usize, j: usize) {
        if i != j {
            for c in 0..self.n {
                self.data.swap(i * self.n + c, j * self.n + c);
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.n + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.n + j]
    }
}

/// A complex eigenvalue as serialized in reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Eigenvalue {
    pub re: f64,
    pub im: f64,
}

impl From<Complex64> for Eigenvalue {
    fn from(c: Complex64) -> Self {
        Self { re: c.re, im: c.im }
    }
}

/// Eigenvalues with multiplicity, sorted by (re, im) ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    values: Vec<Complex64>,
}

fn cmp_complex(a: &Complex64, b: &Complex64) -> Ordering {
    a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im))
}

impl Spectrum {
    pub fn new(mut values: Vec<Complex64>) -> Self {
        values.sort_by(cmp_complex);
        Self { values }
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_real(&self) -> f64 {
        self.values.iter().map(|v| v.re).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_real(&self) -> f64 {
        self.values.iter().map(|v| v.re).fold(f64::INFINITY, f64::min)
    }

    pub fn sum(&self) -> Complex64 {
        self.values.iter().sum()
    }

    pub fn product(&self) -> Complex64 {
        self.values.iter().product()
    }

    /// Every value scaled by a real factor.
    pub fn scaled(&self, factor: f64) -> Spectrum {
        Spectrum::new(self.values.iter().map(|v| v * factor).collect())
    }

    /// Largest distance between paired eigenvalues after greedily matching
    /// each value of `self` with its nearest unused value in `other`.
    /// Infinite when the lengths differ.
    pub fn matching_distance(&self, other: &Spectrum) -> f64 {
        if self.len() != other.len() {
            return f64::INFINITY;
        }
        let mut used = vec![false; other.len()];
        let mut worst: f64 = 0.0;
        for a in &self.values {
            let (j, d) = other
                .values
                .iter()
                .enumerate()
                .filter(|(j, _)| !used[*j])
                .map(|(j, b)| (j, (a - b).norm()))
                .min_by(|x, y| x.1.total_cmp(&y.1))
                .expect("lengths match");
            used[j] = true;
            worst = worst.max(d);
        }
        worst
    }

    pub fn to_eigenvalues(&self) -> Vec<Eigenvalue> {
        self.values.iter().copied().map(Eigenvalue::from).collect()
    }
}

impl fmt::Display for Spectrum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, v) in self.values.iter().enumerate() {
            if k > 0 {
                write!(f, ", ")?;
            }
            if v.im == 0.0 {
                write!(f, "{}", v.re)?;
            } else {
                write!(f, "{}{:+}i", v.re, v.im)?;
            }
        }
        write!(f, "}}")
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EigError {
    #[error("matrix is empty")]
    Empty,
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("QR iteration did not converge after {iterations} sweeps; {found} of {n} eigenvalues found")]
    NoConvergence {
        iterations: usize,
        found: usize,
        n: usize,
        partial: Vec<Complex64>,
    },
    #[error("closed-form roots are only available for n <= 3 (got {0})")]
    TooLarge(usize),
}

/// All eigenvalues of a real square matrix.
pub fn eigenvalues(m: &Matrix) -> Result<Spectrum, EigError> {
    let n = m.dim();
    if n == 0 {
        return Err(EigError::Empty);
    }
    if !m.is_finite() {
        return Err(EigError::NonFinite);
    }
    let mut a = m.clone();
    balance(&mut a);
    hessenberg(&mut a);
    hqr(a).map(Spectrum::new)
}

/// Diagonal similarity scaling by powers of two so that row and column norms
/// are comparable. Exact in floating point.
fn balance(a: &mut Matrix) {
    const RADIX: f64 = 2.0;
    let n = a.dim();
    let sqrdx = RADIX * RADIX;
    let mut done = false;
    while !done {
        done = true;
        for i in 0..n {
            let (mut r, mut c) = (0.0, 0.0);
            for j in 0..n {
                if j != i {
                    c += a[(j, i)].abs();
                    r += a[(i, j)].abs();
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let s = c + r;
            let mut f = 1.0;
            let mut g = r / RADIX;
            while c < g {
                f *= RADIX;
                c *= sqrdx;
            }
            g = r * RADIX;
            while c > g {
                f /= RADIX;
                c /= sqrdx;
            }
            if (c + r) / f < 0.95 * s {
                done = false;
                let g = 1.0 / f;
                for j in 0..n {
                    a[(i, j)] *= g;
                }
                for j in 0..n {
                    a[(j, i)] *= f;
                }
            }
        }
    }
}

/// Reduction to upper Hessenberg form by Gaussian elimination with pivoting.
fn hessenberg(a: &mut Matrix) {
    let n = a.dim();
    for m in 1..n.saturating_sub(1) {
        let mut x = 0.0f64;
        let mut piv = m;
        for j in m..n {
            if a[(j, m - 1)].abs() > x.abs() {
                x = a[(j, m - 1)];
                piv = j;
            }
        }
        if piv != m {
            for j in m - 1..n {
                let t = a[(piv, j)];
                a[(piv, j)] = a[(m, j)];
                a[(m, j)] = t;
            }
            for j in 0..n {
                let t = a[(j, piv)];
                a[(j, piv)] = a[(j, m)];
                a[(j, m)] = t;
            }
        }
        if x != 0.0 {
            for i in m + 1..n {
                let mut y = a[(i, m - 1)];
                if y != 0.0 {
                    y /= x;
                    a[(i, m - 1)] = 0.0;
                    for j in m..n {
                        let v = a[(m, j)];
                        a[(i, j)] -= y * v;
                    }
                    for j in 0..n {
                        let v = a[(j, i)];
                        a[(j, m)] += y * v;
                    }
                }
            }
        }
    }
}

/// Francis double-shift QR on an upper Hessenberg matrix.
fn hqr(mut h: Matrix) -> Result<Vec<Complex64>, EigError> {
    let n = h.dim();
    let cap = 100 * n;
    // 1-based accessors keep the index arithmetic readable
    macro_rules! a {
        ($i:expr, $j:expr) => {
            h[($i - 1, $j - 1)]
        };
    }
    let mut roots = vec![Complex64::new(0.0, 0.0); n + 1];
    let mut found = 0usize;
    let mut anorm = 0.0;
    for i in 1..=n {
        for j in i.saturating_sub(1).max(1)..=n {
            anorm += a!(i, j).abs();
        }
    }
    let mut nn = n;
    let mut t = 0.0;
    let mut total_its = 0usize;
    let (mut p, mut q, mut r): (f64, f64, f64);
    let (mut x, mut y, mut z, mut w, mut s): (f64, f64, f64, f64, f64);
    while nn >= 1 {
        let mut its = 0usize;
        loop {
            let mut l = nn;
            while l >= 2 {
                s = a!(l - 1, l - 1).abs() + a!(l, l).abs();
                if s == 0.0 {
                    s = anorm;
                }
                if a!(l, l - 1).abs() + s == s {
                    a!(l, l - 1) = 0.0;
                    break;
                }
                l -= 1;
            }
            x = a!(nn, nn);
            if l == nn {
                roots[nn] = Complex64::new(x + t, 0.0);
                found += 1;
                nn -= 1;
            } else {
                y = a!(nn - 1, nn - 1);
                w = a!(nn, nn - 1) * a!(nn - 1, nn);
                if l == nn - 1 {
                    p = 0.5 * (y - x);
                    q = p * p + w;
                    z = q.abs().sqrt();
                    x += t;
                    if q >= 0.0 {
                        z = p + z.copysign(p);
                        let hi = x + z;
                        let lo = if z != 0.0 { x - w / z } else { hi };
                        roots[nn - 1] = Complex64::new(hi, 0.0);
                        roots[nn] = Complex64::new(lo, 0.0);
                    } else {
                        roots[nn - 1] = Complex64::new(x + p, -z);
                        roots[nn] = Complex64::new(x + p, z);
                    }
                    found += 2;
                    nn -= 2;
                } else {
                    if total_its >= cap {
                        let partial = roots[nn + 1..].to_vec();
                        return Err(EigError::NoConvergence {
                            iterations: total_its,
                            found,
                            n,
                            partial,
                        });
                    }
                    if its > 0 && its.is_multiple_of(10) {
                        // exceptional shift
                        t += x;
                        for i in 1..=nn {
                            a!(i, i) -= x;
                        }
                        s = a!(nn, nn - 1).abs() + a!(nn - 1, nn - 2).abs();
                        x = 0.75 * s;
                        y = x;
                        w = -0.4375 * s * s;
                    }
                    its += 1;
                    total_its += 1;
                    let mut m = nn - 2;
                    loop {
                        z = a!(m, m);
                        r = x - z;
                        s = y - z;
                        p = (r * s - w) / a!(m + 1, m) + a!(m, m + 1);
                        q = a!(m + 1, m + 1) - z - r - s;
                        r = a!(m + 2, m + 1);
                        s = p.abs() + q.abs() + r.abs();
                        p /= s;
                        q /= s;
                        r /= s;
                        if m == l {
                            break;
                        }
                        let u = a!(m, m - 1).abs() * (q.abs() + r.abs());
                        let v = p.abs() * (a!(m - 1, m - 1).abs() + z.abs() + a!(m + 1, m + 1).abs());
                        if u + v == v {
                            break;
                        }
                        m -= 1;
                    }
                    for i in m + 2..=nn {
                        a!(i, i - 2) = 0.0;
                        if i != m + 2 {
                            a!(i, i - 3) = 0.0;
                        }
                    }
                    let mut k = m;
                    while k < nn {
                        if k != m {
                            p = a!(k, k - 1);
                            q = a!(k + 1, k - 1);
                            r = 0.0;
                            if k != nn - 1 {
                                r = a!(k + 2, k - 1);
                            }
                            x = p.abs() + q.abs() + r.abs();
                            if x != 0.0 {
                                p /= x;
                                q /= x;
                                r /= x;
                            }
                        }
                        s = (p * p + q * q + r * r).sqrt().copysign(p);
                        if s != 0.0 {
                            if k == m {
                                if l != m {
                                    a!(k, k - 1) = -a!(k, k - 1);
                                }
                            } else {
                                a!(k, k - 1) = -s * x;
                            }
                            p += s;
                            x = p / s;
                            y = q / s;
                            z = r / s;
                            q /= p;
                            r /= p;
                            for j in k..=nn {
                                p = a!(k, j) + q * a!(k + 1, j);
                                if k != nn - 1 {
                                    p += r * a!(k + 2, j);
                                    a!(k + 2, j) -= p * z;
                                }
                                a!(k + 1, j) -= p * y;
                                a!(k, j) -= p * x;
                            }
                            let mmin = nn.min(k + 3);
                            for i in l..=mmin {
                                p = x * a!(i, k) + y * a!(i, k + 1);
                                if k != nn - 1 {
                                    p += z * a!(i, k + 2);
                                    a!(i, k + 2) -= p * r;
                                }
                                a!(i, k + 1) -= p * q;
                                a!(i, k) -= p;
                            }
                        }
                        k += 1;
                    }
                }
            }
            if nn < 2 || l + 1 >= nn {
                break;
            }
        }
    }
    Ok(roots.split_off(1))
}

/// Roots of det(sI - M) by closed-form formulas, n in {1, 2, 3}.
pub fn char_roots_smalln(m: &Matrix) -> Result<Spectrum, EigError> {
    let n = m.dim();
    match n {
        0 => Err(EigError::Empty),
        1 => Ok(Spectrum::new(vec![Complex64::new(m[(0, 0)], 0.0)])),
        2 => {
            let tr = m.trace();
            let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
            Ok(Spectrum::new(quadratic_roots(-tr, det).to_vec()))
        }
        3 => {
            let a2 = -m.trace();
            let minor = |i: usize, j: usize| m[(i, i)] * m[(j, j)] - m[(i, j)] * m[(j, i)];
            let a1 = minor(0, 1) + minor(0, 2) + minor(1, 2);
            let a0 = -m.determinant();
            Ok(Spectrum::new(cubic_roots(a2, a1, a0).to_vec()))
        }
        n => Err(EigError::TooLarge(n)),
    }
}

/// Roots of s^2 + b s + c.
pub fn quadratic_roots(b: f64, c: f64) -> [Complex64; 2] {
    let disc = b * b - 4.0 * c;
    if disc >= 0.0 {
        let q = -0.5 * (b + disc.sqrt().copysign(b));
        if q == 0.0 {
            return [Complex64::new(0.0, 0.0); 2];
        }
        [Complex64::new(q, 0.0), Complex64::new(c / q, 0.0)]
    } else {
        let re = -0.5 * b;
        let im = 0.5 * (-disc).sqrt();
        [Complex64::new(re, -im), Complex64::new(re, im)]
    }
}

/// Roots of s^3 + a2 s^2 + a1 s + a0: trigonometric form for three distinct
/// real roots, Cardano otherwise.
pub fn cubic_roots(a2: f64, a1: f64, a0: f64) -> [Complex64; 3] {
    let shift = a2 / 3.0;
    let p = a1 - a2 * a2 / 3.0;
    let q = 2.0 * a2 * a2 * a2 / 27.0 - a2 * a1 / 3.0 + a0;
    let half_q = 0.5 * q;
    let third_p = p / 3.0;
    let disc = half_q * half_q + third_p * third_p * third_p;
    if disc < 0.0 {
        // p < 0 here
        let r = 2.0 * (-third_p).sqrt();
        let arg = (3.0 * q / (2.0 * p) * (-3.0 / p).sqrt()).clamp(-1.0, 1.0);
        let theta = arg.acos() / 3.0;
        let mut out = [Complex64::new(0.0, 0.0); 3];
        for (k, o) in out.iter_mut().enumerate() {
            let t = r * (theta - 2.0 * PI * k as f64 / 3.0).cos();
            *o = Complex64::new(t - shift, 0.0);
        }
        out
    } else {
        let u = (-half_q - disc.sqrt().copysign(half_q)).cbrt();
        let v = if u != 0.0 { -third_p / u } else { 0.0 };
        let t1 = u + v;
        let re = -0.5 * t1 - shift;
        let im = 0.5 * 3f64.sqrt() * (u - v).abs();
        [
            Complex64::new(t1 - shift, 0.0),
            Complex64::new(re, -im),
            Complex64::new(re, im),
        ]
    }
}
