//! p-bit float numbers with bit-exact operation semantics.
//!
//! A value is a pair `⟨r,k⟩` worth exactly `r · 2^k`, where the significand
//! satisfies `|r| ∈ [2^(p-1), 2^p)` or `r = 0` and the exponent satisfies
//! `k ∈ [-2^p, 2^p)`. Zero is canonically `⟨0,0⟩` and every operation
//! normalizes its output, so bit equality is value equality.
//!
//! Addition, division and comparison align exponents through [`special_div`],
//! an integer division that nudges any quotient off the quarter grid up by
//! `1/8`. Addition and division keep that adjustment (it is part of their
//! definition and changes results — see [`oracle`] for the reference
//! evaluation); comparison is required to agree with the exact real order,
//! which the adjusted form does not do when a zero meets a tiny operand, so
//! `compare` works on exact values directly.

mod dyadic;
pub mod oracle;
mod round;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::fmt;

use crate::error::{Error, Result};

pub use round::{round_int, round_ratio, round_scaled};

/// Smallest supported precision. Below two bits the significand range
/// degenerates and the even-significand tie rule loses meaning.
pub const MIN_P: u32 = 2;
/// Largest supported precision; keeps exponents and shifts comfortably in
/// machine range.
pub const MAX_P: u32 = 32;

/// Default domain bound for [`exp_approx`]: arguments must satisfy
/// `|x| <= 2^6`.
pub const EXP_DOMAIN_LOG2: i64 = 6;
/// Domain bound for trigonometric argument reduction: `|x| <= 2^22`.
pub const TRIG_DOMAIN_LOG2: i64 = 22;

/// A p-bit float `⟨r,k⟩` with value `r · 2^k`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "FloatPRepr", into = "FloatPRepr")]
pub struct FloatP {
    sig: i64,
    exp: i64,
    prec: u32,
}

#[derive(Serialize, Deserialize)]
struct FloatPRepr {
    r: i64,
    k: i64,
    p: u32,
}

impl From<FloatP> for FloatPRepr {
    fn from(f: FloatP) -> Self {
        FloatPRepr { r: f.sig, k: f.exp, p: f.prec }
    }
}

impl TryFrom<FloatPRepr> for FloatP {
    type Error = Error;
    fn try_from(v: FloatPRepr) -> Result<Self> {
        FloatP::new(v.r, v.k, v.p)
    }
}

impl fmt::Display for FloatP {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "⟨{},{}⟩@{}", self.sig, self.exp, self.prec)
    }
}

impl fmt::Debug for FloatP {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self} (~{})", self.to_f64())
    }
}

impl FloatP {
    pub(crate) fn check_precision(p: u32) -> Result<()> {
        if !(MIN_P..=MAX_P).contains(&p) {
            return Err(Error::BadPrecision { got: p, min: MIN_P, max: MAX_P });
        }
        Ok(())
    }

    /// Builds a float from raw parts, validating the range invariants.
    pub fn new(r: i64, k: i64, p: u32) -> Result<Self> {
        Self::check_precision(p)?;
        let lim = 1i64 << p;
        if r == 0 {
            if k != 0 {
                return Err(Error::DataFormatError(
                    "zero must be stored as ⟨0,0⟩".into(),
                ));
            }
            return Ok(FloatP { sig: 0, exp: 0, prec: p });
        }
        let mag = r.unsigned_abs();
        if mag < (1u64 << (p - 1)) || mag >= (1u64 << p) {
            return Err(Error::DataFormatError(format!(
                "significand {r} out of range for precision {p}"
            )));
        }
        if !(-lim..lim).contains(&k) {
            return Err(Error::DataFormatError(format!(
                "exponent {k} out of range for precision {p}"
            )));
        }
        Ok(FloatP { sig: r, exp: k, prec: p })
    }

    pub fn zero(p: u32) -> Self {
        FloatP { sig: 0, exp: 0, prec: p }
    }

    /// Rounds an integer into the format.
    pub fn from_int(v: i64, p: u32) -> Result<Self> {
        round::round_int(&BigInt::from(v), p)
    }

    /// Rounds an exact rational into the format.
    pub fn from_rational(v: &BigRational, p: u32) -> Result<Self> {
        round::round_ratio(v.numer(), v.denom(), p)
    }

    /// Rounds a finite double into the format (doubles are dyadic, so the
    /// conversion to an exact rational is lossless).
    pub fn from_f64(v: f64, p: u32) -> Result<Self> {
        if !v.is_finite() {
            return Err(Error::DomainError(format!("non-finite input {v}")));
        }
        let r = BigRational::from_float(v)
            .ok_or_else(|| Error::DomainError(format!("unrepresentable input {v}")))?;
        Self::from_rational(&r, p)
    }

    pub fn significand(&self) -> i64 {
        self.sig
    }

    pub fn exponent(&self) -> i64 {
        self.exp
    }

    pub fn precision(&self) -> u32 {
        self.prec
    }

    pub fn is_zero(&self) -> bool {
        self.sig == 0
    }

    pub fn is_negative(&self) -> bool {
        self.sig < 0
    }

    /// The exact value `r · 2^k`. Materializes `2^|k|`, so callers should
    /// keep exponents desk-scale.
    pub fn to_rational(&self) -> BigRational {
        let r = BigInt::from(self.sig);
        if self.exp >= 0 {
            BigRational::from(r << self.exp as usize)
        } else {
            BigRational::new(r, BigInt::from(1u8) << (-self.exp) as usize)
        }
    }

    /// Approximate value as a double (saturates to `±inf`/`0` for extreme
    /// exponents).
    pub fn to_f64(&self) -> f64 {
        self.sig as f64 * 2f64.powi(self.exp.clamp(-20000, 20000) as i32)
    }

    /// Exact negation (the significand range is symmetric).
    pub fn neg(&self) -> Self {
        FloatP { sig: -self.sig, exp: self.exp, prec: self.prec }
    }

    fn check_same_p(&self, other: &Self) -> Result<()> {
        if self.prec != other.prec {
            return Err(Error::PrecisionMismatch(self.prec, other.prec));
        }
        Ok(())
    }

    /// `true` when `|value| > 2^bound_log2` (exact, no materialization).
    pub fn magnitude_exceeds_pow2(&self, bound_log2: i64) -> bool {
        if self.sig == 0 {
            return false;
        }
        let t = 63 - self.sig.unsigned_abs().leading_zeros() as i64 + self.exp;
        match t.cmp(&bound_log2) {
            Ordering::Greater => true,
            Ordering::Less => false,
            // |r| * 2^k > 2^b with floor(log2) == b means |r| > 2^(b-k),
            // and b - k = 63 - lz, which is < 64 here.
            Ordering::Equal => self.sig.unsigned_abs() > (1u64 << (bound_log2 - self.exp)),
        }
    }
}

/// Adjusted integer division: `x/y` when that is a multiple of `1/4`,
/// otherwise `1/8 + x/y`.
pub fn special_div(x: &BigInt, y: &BigInt) -> Result<BigRational> {
    if y.is_zero() {
        return Err(Error::DivisionByZero);
    }
    let q = BigRational::new(x.clone(), y.clone());
    if ((x << 2usize) % y).is_zero() {
        Ok(q)
    } else {
        Ok(q + BigRational::new(BigInt::from(1u8), BigInt::from(8u8)))
    }
}

/// Addition by exponent alignment.
///
/// The operand with the smaller exponent is rescaled with [`special_div`]
/// and added to the other significand, and the result is rounded. A zero
/// operand short-circuits to the other operand: the alignment rule assumes
/// normalized significands and would otherwise perturb `x + 0`.
pub fn add(a: &FloatP, b: &FloatP) -> Result<FloatP> {
    a.check_same_p(b)?;
    if a.is_zero() {
        return Ok(*b);
    }
    if b.is_zero() {
        return Ok(*a);
    }
    let (hi, lo) = if a.exp >= b.exp { (a, b) } else { (b, a) };
    let p = a.prec;
    let m = hi.exp - lo.exp;
    if m >= p as i64 + 3 {
        // |lo/2^m| < 1/8 and the quotient is never on the quarter grid, so
        // the aligned sum is hi plus a perturbation in (0, 1/4): it rounds
        // back to hi, except that the largest float is pushed over the top.
        if hi.sig == (1i64 << p) - 1 && hi.exp == (1i64 << p) - 1 {
            return Err(Error::PrecisionOverflow { p });
        }
        return Ok(*hi);
    }
    let m = m as u32;
    let cap = m.max(3);
    // significand sum at scale 2^-cap
    let adjust = m >= 3 && lo.sig.rem_euclid(1i64 << (m - 2)) != 0;
    let num = (BigInt::from(hi.sig) << cap)
        + (BigInt::from(lo.sig) << (cap - m))
        + BigInt::from(if adjust { 1i64 << (cap - 3) } else { 0 });
    round::round_scaled(&num, &BigInt::from(1u8), hi.exp - cap as i64, p)
}

pub fn sub(a: &FloatP, b: &FloatP) -> Result<FloatP> {
    add(a, &b.neg())
}

/// Multiplication: round `⟨r1·r2, k1+k2⟩`.
pub fn mul(a: &FloatP, b: &FloatP) -> Result<FloatP> {
    a.check_same_p(b)?;
    if a.is_zero() || b.is_zero() {
        return Ok(FloatP::zero(a.prec));
    }
    let num = BigInt::from(a.sig) * BigInt::from(b.sig);
    round::round_scaled(&num, &BigInt::from(1u8), a.exp + b.exp, a.prec)
}

/// Division: round `⟨(r1·2^(p-1)) ⊘ r2, k1-k2-p+1⟩` where `⊘` is
/// [`special_div`]. This genuinely differs from exact-divide-then-round on
/// some operand pairs; the adjusted form is the defining one.
pub fn div(a: &FloatP, b: &FloatP) -> Result<FloatP> {
    a.check_same_p(b)?;
    if b.is_zero() {
        return Err(Error::DivisionByZero);
    }
    let p = a.prec;
    if a.is_zero() {
        return Ok(FloatP::zero(p));
    }
    let x = BigInt::from(a.sig) << (p - 1);
    let y = BigInt::from(b.sig);
    let exact = ((&x << 2usize) % &y).is_zero();
    let (mut num, mut den) = if exact {
        (x, y)
    } else {
        ((&x << 3usize) + &y, y << 3usize)
    };
    if den.is_negative() {
        num = -num;
        den = -den;
    }
    round::round_scaled(&num, &den, a.exp - b.exp - p as i64 + 1, p)
}

/// Total order consistent with the exact values `r · 2^k`.
pub fn compare(a: &FloatP, b: &FloatP) -> Result<Ordering> {
    a.check_same_p(b)?;
    let (sa, sb) = (a.sig.signum(), b.sig.signum());
    if sa != sb {
        return Ok(sa.cmp(&sb));
    }
    if sa == 0 {
        return Ok(Ordering::Equal);
    }
    let m = a.exp - b.exp;
    // Same sign: with normalized significands, an exponent gap of 2 or more
    // decides by magnitude alone; otherwise compare on the common scale.
    Ok(match m {
        2.. => if sa > 0 { Ordering::Greater } else { Ordering::Less },
        ..=-2 => if sa > 0 { Ordering::Less } else { Ordering::Greater },
        -1 => a.sig.cmp(&(b.sig << 1)),
        0 => a.sig.cmp(&b.sig),
        _ => (a.sig << 1).cmp(&b.sig),
    })
}

/// Floor. Integer-valued floats (`k >= 0`) are fixed points; for `k < 0`
/// the significand is floor-shifted to exponent zero and renormalized.
pub fn floor(a: &FloatP) -> Result<FloatP> {
    if a.exp >= 0 {
        return Ok(*a);
    }
    let shift = (-a.exp).min(63) as u32;
    let q = a.sig >> shift; // arithmetic shift: floor division by 2^shift
    round::round_int(&BigInt::from(q), a.prec)
}

/// Iterated addition: the exact sum of the represented values, rounded once.
/// Exact aggregation makes the result independent of summation order.
pub fn iter_add(xs: &[FloatP]) -> Result<FloatP> {
    let first = xs.first().ok_or(Error::EmptyInput)?;
    let p = first.prec;
    for x in xs {
        first.check_same_p(x)?;
    }
    let kmin = xs.iter().filter(|x| !x.is_zero()).map(|x| x.exp).min();
    let Some(kmin) = kmin else {
        return Ok(FloatP::zero(p));
    };
    let mut num = BigInt::zero();
    for x in xs.iter().filter(|x| !x.is_zero()) {
        num += BigInt::from(x.sig) << (x.exp - kmin) as usize;
    }
    round::round_scaled(&num, &BigInt::from(1u8), kmin, p)
}

/// Iterated multiplication: the exact product, rounded once.
pub fn iter_mul(xs: &[FloatP]) -> Result<FloatP> {
    let first = xs.first().ok_or(Error::EmptyInput)?;
    let p = first.prec;
    let mut num = BigInt::from(1u8);
    let mut e: i64 = 0;
    for x in xs {
        first.check_same_p(x)?;
        if x.is_zero() {
            return Ok(FloatP::zero(p));
        }
        num *= BigInt::from(x.sig);
        e = e
            .checked_add(x.exp)
            .ok_or(Error::PrecisionOverflow { p })?;
    }
    round::round_scaled(&num, &BigInt::from(1u8), e, p)
}

/// `exp(x)` with relative error at most `2^-p`, for `|x| <= 2^bound_log2`.
///
/// Negative arguments go through the reciprocal of `exp(|x|)`: tiny results
/// would otherwise fall below the fixed-point resolution of the kernel.
pub fn exp_approx_bounded(x: &FloatP, bound_log2: i64) -> Result<FloatP> {
    if x.magnitude_exceeds_pow2(bound_log2) {
        return Err(Error::RangeError(format!(
            "exp argument {x} outside |x| <= 2^{bound_log2}"
        )));
    }
    let p = x.prec;
    let w = p + 24;
    if x.is_negative() {
        let xm = fix_of(&x.neg(), w);
        let y = dyadic::exp_fix(&xm, w);
        return round::round_scaled(&(BigInt::from(1u8) << w), &y, 0, p);
    }
    let xm = fix_of(x, w);
    let y = dyadic::exp_fix(&xm, w);
    round::round_scaled(&y, &BigInt::from(1u8), -(w as i64), p)
}

/// `exp(x)` on the default domain `|x| <= 64`.
pub fn exp_approx(x: &FloatP) -> Result<FloatP> {
    exp_approx_bounded(x, EXP_DOMAIN_LOG2)
}

/// Square root with relative error at most `2^-p`.
pub fn sqrt_approx(x: &FloatP) -> Result<FloatP> {
    if x.is_negative() {
        return Err(Error::DomainError(format!("sqrt of negative value {x}")));
    }
    if x.is_zero() {
        return Ok(FloatP::zero(x.prec));
    }
    let p = x.prec;
    let w = p + 24;
    // r·2^k = (r·2^(k&1)) · 2^(2·floor(k/2))
    let (m, half_k) = if x.exp % 2 == 0 {
        (BigInt::from(x.sig), x.exp / 2)
    } else {
        (BigInt::from(x.sig) << 1u8, (x.exp - 1) / 2)
    };
    let mant = dyadic::isqrt(&(m << (2 * w) as usize));
    round::round_scaled(&mant, &BigInt::from(1u8), half_k - w as i64, p)
}

/// `(sin x, cos x)` with relative error at most `2^-p` (absolute `2^-p`
/// when the true value is smaller than `2^-p`), for `|x| <= 2^22`.
pub fn sin_cos_approx(x: &FloatP) -> Result<(FloatP, FloatP)> {
    if x.magnitude_exceeds_pow2(TRIG_DOMAIN_LOG2) {
        return Err(Error::RangeError(format!(
            "trig argument {x} outside |x| <= 2^{TRIG_DOMAIN_LOG2}"
        )));
    }
    let p = x.prec;
    // 2p + 64 working bits: enough that the reduced argument is accurate to
    // well below 2^-p even relative to a sine that is itself of size 2^-p.
    let w = 2 * p + 64;
    let xm = fix_of(x, w);
    let (s, c) = dyadic::sin_cos_fix(&xm, w);
    let one = BigInt::from(1u8);
    Ok((
        round::round_scaled(&s, &one, -(w as i64), p)?,
        round::round_scaled(&c, &one, -(w as i64), p)?,
    ))
}

/// Fixed-point image of a float at scale `w` (floor on truncation).
fn fix_of(x: &FloatP, w: u32) -> BigInt {
    let shift = x.exp + w as i64;
    let r = BigInt::from(x.sig);
    if shift >= 0 {
        r << shift as usize
    } else {
        let d = BigInt::from(1u8) << (-shift) as usize;
        num_integer::Integer::div_floor(&r, &d)
    }
}

/// Debug-time invariant check; returns the argument for chaining.
pub fn assert_canonical(f: &FloatP) -> &FloatP {
    debug_assert!(
        FloatP::new(f.sig, f.exp, f.prec).is_ok(),
        "non-canonical float {f}"
    );
    f
}
