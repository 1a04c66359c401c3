//! Pluggable scalar arithmetic.
//!
//! Three backends sit behind one trait: [`ExactRational`] for identity
//! testing, [`FloatPBackend`] for the p-bit float semantics, and [`Real64`]
//! for fast empirical work. Generic code receives the backend by reference
//! to carry context such as the float precision.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::fpx::{self, FloatP};

pub trait Backend: Clone + std::fmt::Debug {
    type Elem: Clone + PartialEq + std::fmt::Debug;

    fn zero(&self) -> Self::Elem;
    fn one(&self) -> Self::Elem;
    fn from_i64(&self, v: i64) -> Result<Self::Elem>;
    fn from_f64(&self, v: f64) -> Result<Self::Elem>;
    fn to_f64(&self, v: &Self::Elem) -> f64;
    fn is_zero(&self, v: &Self::Elem) -> bool;

    fn add(&self, a: &Self::Elem, b: &Self::Elem) -> Result<Self::Elem>;
    fn sub(&self, a: &Self::Elem, b: &Self::Elem) -> Result<Self::Elem>;
    fn neg(&self, a: &Self::Elem) -> Self::Elem;
    fn mul(&self, a: &Self::Elem, b: &Self::Elem) -> Result<Self::Elem>;
    fn div(&self, a: &Self::Elem, b: &Self::Elem) -> Result<Self::Elem>;
    fn compare(&self, a: &Self::Elem, b: &Self::Elem) -> Result<Ordering>;

    /// Aggregate sum with a single final rounding where the backend rounds
    /// at all; order-independent by construction.
    fn iter_add(&self, xs: &[Self::Elem]) -> Result<Self::Elem>;

    fn exp(&self, a: &Self::Elem) -> Result<Self::Elem>;
    fn sqrt(&self, a: &Self::Elem) -> Result<Self::Elem>;
    fn sin_cos(&self, a: &Self::Elem) -> Result<(Self::Elem, Self::Elem)>;

    /// Rounding precision in bits, when the backend rounds at all.
    fn precision(&self) -> Option<u32> {
        None
    }

    /// Attention-score magnitude the backend is willing to exponentiate.
    /// Bounded backends reject larger scores outright: past the bound the
    /// approximation contract of their `exp` (and the size of exact
    /// rationals) loses meaning. The native-double backend saturates like
    /// any floating-point softmax and reports no bound.
    fn score_bound(&self) -> Option<i64> {
        Some(64)
    }
}

/// Native double precision.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Real64;

impl Backend for Real64 {
    type Elem = f64;

    fn zero(&self) -> f64 {
        0.0
    }
    fn one(&self) -> f64 {
        1.0
    }
    fn from_i64(&self, v: i64) -> Result<f64> {
        Ok(v as f64)
    }
    fn from_f64(&self, v: f64) -> Result<f64> {
        Ok(v)
    }
    fn to_f64(&self, v: &f64) -> f64 {
        *v
    }
    fn is_zero(&self, v: &f64) -> bool {
        *v == 0.0
    }
    fn add(&self, a: &f64, b: &f64) -> Result<f64> {
        Ok(a + b)
    }
    fn sub(&self, a: &f64, b: &f64) -> Result<f64> {
        Ok(a - b)
    }
    fn neg(&self, a: &f64) -> f64 {
        -a
    }
    fn mul(&self, a: &f64, b: &f64) -> Result<f64> {
        Ok(a * b)
    }
    fn div(&self, a: &f64, b: &f64) -> Result<f64> {
        if *b == 0.0 {
            return Err(Error::DivisionByZero);
        }
        Ok(a / b)
    }
    fn compare(&self, a: &f64, b: &f64) -> Result<Ordering> {
        a.partial_cmp(b)
            .ok_or_else(|| Error::DomainError("comparison with NaN".into()))
    }
    fn iter_add(&self, xs: &[f64]) -> Result<f64> {
        if xs.is_empty() {
            return Err(Error::EmptyInput);
        }
        Ok(xs.iter().sum())
    }
    fn exp(&self, a: &f64) -> Result<f64> {
        Ok(a.exp())
    }
    fn sqrt(&self, a: &f64) -> Result<f64> {
        if *a < 0.0 {
            return Err(Error::DomainError(format!("sqrt of negative value {a}")));
        }
        Ok(a.sqrt())
    }
    fn sin_cos(&self, a: &f64) -> Result<(f64, f64)> {
        Ok((a.sin(), a.cos()))
    }
    fn score_bound(&self) -> Option<i64> {
        None
    }
}

/// Exact rational arithmetic.
///
/// `exp` and `sqrt` have no exact rational values in general; they return
/// deterministic rational stand-ins (`exp` by scaled squaring of a positive
/// partial series, `sqrt` dyadic to 64 fractional bits). Identities that
/// only rely on positivity and field axioms — row-stochasticity, the swap
/// rule — hold exactly regardless.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ExactRational;

impl Backend for ExactRational {
    type Elem = BigRational;

    fn zero(&self) -> BigRational {
        BigRational::zero()
    }
    fn one(&self) -> BigRational {
        BigRational::one()
    }
    fn from_i64(&self, v: i64) -> Result<BigRational> {
        Ok(BigRational::from(BigInt::from(v)))
    }
    fn from_f64(&self, v: f64) -> Result<BigRational> {
        BigRational::from_float(v)
            .ok_or_else(|| Error::DomainError(format!("non-finite input {v}")))
    }
    fn to_f64(&self, v: &BigRational) -> f64 {
        v.to_f64().unwrap_or(f64::NAN)
    }
    fn is_zero(&self, v: &BigRational) -> bool {
        v.is_zero()
    }
    fn add(&self, a: &BigRational, b: &BigRational) -> Result<BigRational> {
        Ok(a + b)
    }
    fn sub(&self, a: &BigRational, b: &BigRational) -> Result<BigRational> {
        Ok(a - b)
    }
    fn neg(&self, a: &BigRational) -> BigRational {
        -a
    }
    fn mul(&self, a: &BigRational, b: &BigRational) -> Result<BigRational> {
        Ok(a * b)
    }
    fn div(&self, a: &BigRational, b: &BigRational) -> Result<BigRational> {
        if b.is_zero() {
            return Err(Error::DivisionByZero);
        }
        Ok(a / b)
    }
    fn compare(&self, a: &BigRational, b: &BigRational) -> Result<Ordering> {
        Ok(a.cmp(b))
    }
    fn iter_add(&self, xs: &[BigRational]) -> Result<BigRational> {
        if xs.is_empty() {
            return Err(Error::EmptyInput);
        }
        Ok(xs.iter().sum())
    }
    fn exp(&self, a: &BigRational) -> Result<BigRational> {
        Ok(rational_exp(a))
    }
    fn sqrt(&self, a: &BigRational) -> Result<BigRational> {
        if a.is_negative() {
            return Err(Error::DomainError(format!("sqrt of negative value {a}")));
        }
        Ok(rational_sqrt(a))
    }
    fn sin_cos(&self, _a: &BigRational) -> Result<(BigRational, BigRational)> {
        Err(Error::UnsupportedOp("sin/cos under exact rationals"))
    }
}

/// Strictly positive rational stand-in for `exp`: partial series on a
/// halved argument, squared back.
fn rational_exp(x: &BigRational) -> BigRational {
    if x.is_zero() {
        return BigRational::one();
    }
    let two = BigRational::from(BigInt::from(2u8));
    let half = BigRational::new(BigInt::one(), BigInt::from(2u8));
    let mut s = 0u32;
    let mut y = x.clone();
    while y.abs() > half && s <= 64 {
        y /= &two;
        s += 1;
    }
    let mut acc = BigRational::one();
    let mut term = BigRational::one();
    for k in 1..=16u32 {
        term = term * &y / BigRational::from(BigInt::from(k));
        acc += &term;
    }
    for _ in 0..s {
        acc = &acc * &acc;
    }
    acc
}

/// Dyadic square-root stand-in with 64 fractional bits.
fn rational_sqrt(x: &BigRational) -> BigRational {
    if x.is_zero() {
        return BigRational::zero();
    }
    const W: usize = 64;
    let scaled = (x.numer() * x.denom()) << (2 * W);
    let root = num_integer::Roots::sqrt(&scaled);
    BigRational::new(root, x.denom() << W)
}

/// p-bit float arithmetic at a fixed precision.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FloatPBackend {
    pub p: u32,
}

impl FloatPBackend {
    pub fn new(p: u32) -> Result<Self> {
        FloatP::check_precision(p)?;
        Ok(FloatPBackend { p })
    }
}

impl Backend for FloatPBackend {
    type Elem = FloatP;

    fn zero(&self) -> FloatP {
        FloatP::zero(self.p)
    }
    fn one(&self) -> FloatP {
        FloatP::from_int(1, self.p).expect("1 is representable at every precision")
    }
    fn from_i64(&self, v: i64) -> Result<FloatP> {
        FloatP::from_int(v, self.p)
    }
    fn from_f64(&self, v: f64) -> Result<FloatP> {
        FloatP::from_f64(v, self.p)
    }
    fn to_f64(&self, v: &FloatP) -> f64 {
        v.to_f64()
    }
    fn is_zero(&self, v: &FloatP) -> bool {
        v.is_zero()
    }
    fn add(&self, a: &FloatP, b: &FloatP) -> Result<FloatP> {
        fpx::add(a, b)
    }
    fn sub(&self, a: &FloatP, b: &FloatP) -> Result<FloatP> {
        fpx::sub(a, b)
    }
    fn neg(&self, a: &FloatP) -> FloatP {
        a.neg()
    }
    fn mul(&self, a: &FloatP, b: &FloatP) -> Result<FloatP> {
        fpx::mul(a, b)
    }
    fn div(&self, a: &FloatP, b: &FloatP) -> Result<FloatP> {
        fpx::div(a, b)
    }
    fn compare(&self, a: &FloatP, b: &FloatP) -> Result<Ordering> {
        fpx::compare(a, b)
    }
    fn iter_add(&self, xs: &[FloatP]) -> Result<FloatP> {
        fpx::iter_add(xs)
    }
    fn exp(&self, a: &FloatP) -> Result<FloatP> {
        fpx::exp_approx(a)
    }
    fn sqrt(&self, a: &FloatP) -> Result<FloatP> {
        fpx::sqrt_approx(a)
    }
    fn sin_cos(&self, a: &FloatP) -> Result<(FloatP, FloatP)> {
        fpx::sin_cos_approx(a)
    }
    fn precision(&self) -> Option<u32> {
        Some(self.p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rational_exp_is_positive_and_close() {
        let b = ExactRational;
        for x in [-8.0f64, -2.0, -0.3, 0.0, 0.7, 3.0] {
            let v = b.exp(&b.from_f64(x).unwrap()).unwrap();
            assert!(v.is_positive() || v.is_one());
            let rel = (b.to_f64(&v) - x.exp()).abs() / x.exp();
            assert!(rel < 1e-6, "exp({x}) stand-in off by {rel}");
        }
    }

    #[test]
    fn rational_sqrt_close() {
        let b = ExactRational;
        for x in [0.0f64, 0.25, 2.0, 9.0, 123.456] {
            let v = b.sqrt(&b.from_f64(x).unwrap()).unwrap();
            assert!((b.to_f64(&v) - x.sqrt()).abs() < 1e-9);
        }
        assert!(b.sqrt(&b.from_i64(-1).unwrap()).is_err());
    }

    #[test]
    fn floatp_backend_round_trips_constants() {
        let b = FloatPBackend::new(16).unwrap();
        assert_eq!(b.to_f64(&b.one()), 1.0);
        assert_eq!(b.to_f64(&b.from_i64(-12).unwrap()), -12.0);
        assert!(b.compare(&b.zero(), &b.one()).unwrap() == Ordering::Less);
    }

    #[test]
    fn real64_division_by_zero_is_an_error() {
        assert!(matches!(Real64.div(&1.0, &0.0), Err(Error::DivisionByZero)));
    }
}
