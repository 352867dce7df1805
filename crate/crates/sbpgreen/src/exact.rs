//! Exact arithmetic: quadratic integers `a + b*sqrt(d)` and rational
//! matrices.
//!
//! The recurrence sequences behind the fourth-order closed forms grow
//! like 7.9^n and 13.9^n; evaluating them over big integers keeps the
//! golden tables bit-stable where floating powers would overflow or
//! cancel.

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

pub type Rational = BigRational;

/// Evaluation path for the closed-form inverses: exact rational
/// arithmetic lowered at the end (default), or plain doubles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    Double,
    #[default]
    Exact,
}

impl Precision {
    /// Reads `SBPGREEN_PRECISION` (`double` or `exact`); defaults to
    /// exact.
    pub fn from_env() -> Self {
        match std::env::var("SBPGREEN_PRECISION").as_deref() {
            Ok("double") | Ok("DOUBLE") => Precision::Double,
            _ => Precision::Exact,
        }
    }
}

/// Exact element of Z[sqrt(d)] for a fixed square-free radicand.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuadInt {
    pub a: BigInt,
    pub b: BigInt,
    pub d: u32,
}

impl QuadInt {
    pub fn new(a: impl Into<BigInt>, b: impl Into<BigInt>, d: u32) -> Self {
        Self {
            a: a.into(),
            b: b.into(),
            d,
        }
    }

    /// The unit 4 + sqrt(15) governing the fourth-order first-derivative
    /// recurrences.
    pub fn phi() -> Self {
        Self::new(4, 1, 15)
    }

    /// The unit 7 + sqrt(48) = 7 + 4*sqrt(3) governing the fourth-order
    /// second-derivative recurrences.
    pub fn psi() -> Self {
        Self::new(7, 4, 3)
    }

    pub fn conj(&self) -> Self {
        Self {
            a: self.a.clone(),
            b: -self.b.clone(),
            d: self.d,
        }
    }

    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.d, other.d, "mixed radicands");
        Self {
            a: &self.a * &other.a + BigInt::from(self.d) * &self.b * &other.b,
            b: &self.a * &other.b + &self.b * &other.a,
            d: self.d,
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.d, other.d, "mixed radicands");
        Self {
            a: &self.a + &other.a,
            b: &self.b + &other.b,
            d: self.d,
        }
    }

    pub fn pow(&self, e: u32) -> Self {
        let mut acc = Self::new(1, 0, self.d);
        for _ in 0..e {
            acc = acc.mul(self);
        }
        acc
    }

    /// `x + conj(x)`, an ordinary integer. For a unit u with
    /// u*conj(u) = 1 this is u^k + u^{-k} when applied to u^k.
    pub fn trace(&self) -> BigInt {
        &self.a + &self.a
    }

    /// Norm `a^2 - d b^2`.
    pub fn norm(&self) -> BigInt {
        &self.a * &self.a - BigInt::from(self.d) * &self.b * &self.b
    }

    /// Rounds the exact value to the nearest double, monotonically in
    /// the exact value. sqrt(d) is approximated to 128 fractional bits,
    /// far beyond double precision.
    pub fn to_f64(&self) -> f64 {
        const BITS: u32 = 128;
        let scale = BigInt::one() << BITS;
        let scaled_d = BigInt::from(self.d) << (2 * BITS);
        let sqrt_scaled = scaled_d.sqrt();
        let numer = (&self.a << BITS) + &self.b * sqrt_scaled;
        Rational::new(numer, scale).to_f64().unwrap()
    }
}

/// Exact rational conversion; every finite double is a rational.
pub fn rational_from_f64(x: f64) -> Rational {
    Rational::from_float(x).expect("finite input")
}

pub fn rational_to_f64(x: &Rational) -> f64 {
    x.to_f64().unwrap()
}

/// Parses `p/q` or a plain decimal into an exact rational.
pub fn parse_rational(s: &str) -> Result<Rational> {
    let s = s.trim();
    let bad = |_| Error::InvalidCoefficients(format!("bad rational literal {s:?}"));
    if let Some((p, q)) = s.split_once('/') {
        let num: BigInt = p.trim().parse().map_err(bad)?;
        let den: BigInt = q.trim().parse().map_err(bad)?;
        if den.is_zero() {
            return Err(Error::InvalidCoefficients(format!("zero denominator in {s:?}")));
        }
        return Ok(Rational::new(num, den));
    }
    if let Some((mantissa, rest)) = s.split_once(['e', 'E']) {
        let exp: i32 = rest
            .parse()
            .map_err(|_| Error::InvalidCoefficients(format!("bad exponent in {s:?}")))?;
        let base = parse_rational(mantissa)?;
        let ten = Rational::from_integer(10.into());
        let mut scale = Rational::one();
        for _ in 0..exp.unsigned_abs() {
            scale *= ten.clone();
        }
        return Ok(if exp >= 0 { base * scale } else { base / scale });
    }
    if let Some((int_part, frac_part)) = s.split_once('.') {
        let negative = int_part.trim_start().starts_with('-');
        let int_part = if int_part.is_empty() || int_part == "-" {
            "0"
        } else {
            int_part
        };
        let int: BigInt = int_part.parse().map_err(bad)?;
        if frac_part.is_empty() {
            return Ok(Rational::from_integer(int));
        }
        let frac_digits: BigInt = frac_part.parse().map_err(bad)?;
        if frac_digits.is_negative() {
            return Err(Error::InvalidCoefficients(format!("bad rational literal {s:?}")));
        }
        let den = BigInt::from(10u32).pow(frac_part.len() as u32);
        let frac = Rational::new(frac_digits, den);
        let int = Rational::from_integer(int);
        return Ok(if negative { int - frac } else { int + frac });
    }
    let int: BigInt = s.parse().map_err(bad)?;
    Ok(Rational::from_integer(int))
}

/// Dense matrix over exact rationals; row-major like `DenseMatrix`.
#[derive(Debug, Clone, PartialEq)]
pub struct RatMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Rational>,
}

impl RatMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Rational::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Rational::one();
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn matvec(&self, x: &[Rational]) -> Vec<Rational> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|i| {
                let mut s = Rational::zero();
                for j in 0..self.cols {
                    if !self[(i, j)].is_zero() {
                        s += &self[(i, j)] * &x[j];
                    }
                }
                s
            })
            .collect()
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows);
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                if self[(i, k)].is_zero() {
                    continue;
                }
                for j in 0..other.cols {
                    if other[(k, j)].is_zero() {
                        continue;
                    }
                    let p = &self[(i, k)] * &other[(k, j)];
                    out[(i, j)] += p;
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)].clone();
            }
        }
        t
    }

    pub fn scale(&self, s: &Rational) -> Self {
        let mut out = self.clone();
        for v in &mut out.data {
            *v *= s;
        }
        out
    }

    pub fn block(&self, r0: usize, r1: usize, c0: usize, c1: usize) -> Self {
        let mut out = Self::zeros(r1 - r0, c1 - c0);
        for i in r0..r1 {
            for j in c0..c1 {
                out[(i - r0, j - c0)] = self[(i, j)].clone();
            }
        }
        out
    }

    /// Exact Gauss-Jordan inverse; `None` when singular.
    pub fn inverse(&self) -> Option<Self> {
        assert!(self.rows == self.cols);
        let n = self.rows;
        let mut a = self.clone();
        let mut inv = Self::identity(n);
        for k in 0..n {
            let pivot_row = (k..n).find(|&i| !a[(i, k)].is_zero())?;
            if pivot_row != k {
                for j in 0..n {
                    let tmp = a[(k, j)].clone();
                    a[(k, j)] = a[(pivot_row, j)].clone();
                    a[(pivot_row, j)] = tmp;
                    let tmp = inv[(k, j)].clone();
                    inv[(k, j)] = inv[(pivot_row, j)].clone();
                    inv[(pivot_row, j)] = tmp;
                }
            }
            let pivot = a[(k, k)].clone();
            for j in 0..n {
                a[(k, j)] /= &pivot;
                inv[(k, j)] /= &pivot;
            }
            for i in 0..n {
                if i == k || a[(i, k)].is_zero() {
                    continue;
                }
                let factor = a[(i, k)].clone();
                for j in 0..n {
                    let da = &factor * &a[(k, j)];
                    a[(i, j)] -= da;
                    let di = &factor * &inv[(k, j)];
                    inv[(i, j)] -= di;
                }
            }
        }
        Some(inv)
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let data = self.data.iter().map(rational_to_f64).collect();
        DenseMatrix::from_row_major(self.rows, self.cols, data).expect("finite rationals")
    }
}

impl std::ops::Index<(usize, usize)> for RatMatrix {
    type Output = Rational;
    fn index(&self, (i, j): (usize, usize)) -> &Rational {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for RatMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Rational {
        &mut self.data[i * self.cols + j]
    }
}

/// Exact integer division; errors when the remainder is nonzero.
/// The sequence tables must divide exactly, so a failure here is an
/// implementation bug surfaced loudly rather than silently rounded.
pub fn exact_div(num: &BigInt, den: &BigInt) -> Result<BigInt> {
    let (q, r) = num.div_rem(den);
    if r.is_zero() {
        Ok(q)
    } else {
        Err(Error::NonIntegerSequence {
            num: num.to_string(),
            den: den.to_string(),
        })
    }
}
