//! Rounding core: round-to-nearest with even-significand tie-break.
//!
//! All arithmetic here works on scaled integers `(num/den)·2^e2` so that no
//! shift ever exceeds a few times the significand width; in particular the
//! value `2^k` of a float with a huge exponent is never materialized.

use num_bigint::{BigInt, BigUint, Sign};
use num_integer::Integer;
use num_traits::{One, Signed, Zero};

use super::FloatP;
use crate::error::{Error, Result};

/// Compares `b` against `den · 2^t` without building numbers wider than
/// `bits(b) + bits(den) + |t|`.
fn cmp_ratio_pow2(b: &BigUint, den: &BigUint, t: i64) -> std::cmp::Ordering {
    if t >= 0 {
        b.cmp(&(den << t as usize))
    } else {
        (b << (-t) as usize).cmp(den)
    }
}

/// Floor of `log2(b/den)` for positive `b`, `den`.
fn floor_log2_ratio(b: &BigUint, den: &BigUint) -> i64 {
    let mut t = b.bits() as i64 - den.bits() as i64;
    // b/den is in [2^(t-1), 2^(t+1)); settle the off-by-one.
    while cmp_ratio_pow2(b, den, t) == std::cmp::Ordering::Less {
        t -= 1;
    }
    while cmp_ratio_pow2(b, den, t + 1) != std::cmp::Ordering::Less {
        t += 1;
    }
    t
}

/// Rounds `(num/den) · 2^e2` to the nearest `p`-bit float.
///
/// `den` must be positive. Ties go to the candidate with even significand;
/// the one tie where both candidates are even (zero against the smallest
/// normal value) resolves toward zero. Values whose magnitude exceeds the
/// largest representable one are a hard `PrecisionOverflow`.
pub fn round_scaled(num: &BigInt, den: &BigInt, e2: i64, p: u32) -> Result<FloatP> {
    FloatP::check_precision(p)?;
    debug_assert!(den.is_positive());
    if num.is_zero() {
        return Ok(FloatP::zero(p));
    }
    let negative = num.sign() == Sign::Minus;
    let b = num.magnitude();
    let den = den.magnitude();

    let t = floor_log2_ratio(b, den);
    let total = t + e2; // floor(log2 |x|)

    let kmax: i64 = (1i64 << p) - 1; // largest exponent
    let t_top = (p as i64 - 1) + kmax; // floor log2 of the largest value
    if total > t_top {
        return Err(Error::PrecisionOverflow { p });
    }
    if total == t_top {
        // |x| > (2^p - 1) · 2^kmax ?
        let top_sig = BigUint::from((1u64 << p) - 1);
        if cmp_ratio_pow2(b, &(den * top_sig), t - (p as i64 - 1)) == std::cmp::Ordering::Greater {
            return Err(Error::PrecisionOverflow { p });
        }
    }

    let t_min = (p as i64 - 1) - (1i64 << p); // floor log2 of the smallest normal value
    if total < t_min - 1 {
        return Ok(FloatP::zero(p));
    }
    if total == t_min - 1 {
        // |x| lies in [half-smallest, smallest); the tie at exactly half
        // rounds toward zero (both candidate significands are even).
        let exact_half = cmp_ratio_pow2(b, den, t) == std::cmp::Ordering::Equal;
        return if exact_half {
            Ok(FloatP::zero(p))
        } else {
            let sig = 1i64 << (p - 1);
            FloatP::new(if negative { -sig } else { sig }, -(1i64 << p), p)
        };
    }

    // Normal path: significand = round_half_even((b/den) · 2^(p-1-t)).
    let shift = p as i64 - 1 - t;
    let (ynum, yden) = if shift >= 0 {
        (b << shift as usize, den.clone())
    } else {
        (b.clone(), den << (-shift) as usize)
    };
    let (q, rem) = ynum.div_rem(&yden);
    let twice_rem = &rem << 1usize;
    let mut sig = q
        .to_u64_digits()
        .first()
        .copied()
        .unwrap_or(0) as i64;
    debug_assert!(q.bits() <= p as u64 + 1);
    match twice_rem.cmp(&yden) {
        std::cmp::Ordering::Less => {}
        std::cmp::Ordering::Greater => sig += 1,
        std::cmp::Ordering::Equal => {
            if sig % 2 != 0 {
                sig += 1;
            }
        }
    }
    let mut k = total - (p as i64 - 1);
    if sig == (1i64 << p) {
        sig = 1i64 << (p - 1);
        k += 1;
    }
    if k > kmax {
        // Unreachable when |x| <= max, which was checked above.
        return Err(Error::PrecisionOverflow { p });
    }
    FloatP::new(if negative { -sig } else { sig }, k, p)
}

/// Rounds an exact rational `num/den` (den > 0) to a `p`-bit float.
pub fn round_ratio(num: &BigInt, den: &BigInt, p: u32) -> Result<FloatP> {
    round_scaled(num, den, 0, p)
}

/// Rounds an integer to a `p`-bit float.
pub fn round_int(n: &BigInt, p: u32) -> Result<FloatP> {
    round_scaled(n, &BigInt::one(), 0, p)
}
