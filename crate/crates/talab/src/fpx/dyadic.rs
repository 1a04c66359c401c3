//! Fixed-point kernels for `exp`, `sqrt`, `sin`, and `cos`.
//!
//! Values are big integers at an explicit binary scale: the pair `(m, w)`
//! stands for `m · 2^-w`. Working precision always carries enough guard bits
//! that the final rounding to `p` bits dominates the error budget.

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{Signed, Zero};
use std::collections::HashMap;
use std::sync::Mutex;
use std::sync::OnceLock;

/// Floor shift right (toward negative infinity) for signed big integers.
fn shr_floor(v: &BigInt, n: u64) -> BigInt {
    if n == 0 {
        return v.clone();
    }
    let d = BigInt::from(1u8) << n;
    v.div_floor(&d)
}

/// Nearest-integer division (ties upward), valid for either sign of `a`.
fn div_round(a: &BigInt, b: &BigInt) -> BigInt {
    debug_assert!(b.is_positive());
    (a + (b >> 1usize)).div_floor(b)
}

/// `exp(x) · 2^w` for `x = xm · 2^-w`, `|x| <= 66`.
///
/// Halve the argument until it is at most 1/2, run the power series, then
/// square back. Working precision adds `s + 16` guard bits so the result is
/// accurate to a few units in the last place at scale `w`.
pub fn exp_fix(xm: &BigInt, w: u32) -> BigInt {
    if xm.is_zero() {
        return BigInt::from(1u8) << w;
    }
    let bits = xm.magnitude().bits() as i64;
    let s = (bits - w as i64 + 1).max(0) as u32; // |x/2^s| <= 1/2
    let wk = (w + s + 16) as u64;
    // y at scale wk: exact, since wk - w - s = 16 >= 0
    let y = xm << (wk - w as u64 - s as u64);

    let mut acc = BigInt::from(1u8) << wk;
    let mut term = acc.clone();
    let mut i = 1u64;
    loop {
        term = shr_floor(&(&term * &y), wk) / BigInt::from(i);
        if term.is_zero() {
            break;
        }
        acc += &term;
        i += 1;
    }
    for _ in 0..s {
        acc = shr_floor(&(&acc * &acc), wk);
    }
    shr_floor(&acc, wk - w as u64)
}

/// Floor integer square root.
pub fn isqrt(n: &BigInt) -> BigInt {
    debug_assert!(!n.is_negative());
    num_integer::Roots::sqrt(n)
}

static PI_CACHE: OnceLock<Mutex<HashMap<u64, BigInt>>> = OnceLock::new();

/// `pi · 2^w`, truncated. Machin's formula with 16 guard bits.
pub fn pi_fix(w: u64) -> BigInt {
    let cache = PI_CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(v) = cache.lock().unwrap().get(&w) {
        return v.clone();
    }
    let wk = w + 16;
    let pi = (arctan_inv_fix(5, wk) << 4usize) - (arctan_inv_fix(239, wk) << 2usize);
    let out = shr_floor(&pi, 16);
    cache.lock().unwrap().insert(w, out.clone());
    out
}

/// `arctan(1/m) · 2^w` for integer `m >= 2`, truncated series.
fn arctan_inv_fix(m: u64, w: u64) -> BigInt {
    let m2 = BigInt::from(m * m);
    let mut term = (BigInt::from(1u8) << w) / BigInt::from(m);
    let mut acc = term.clone();
    let mut k = 1u64;
    loop {
        term = &term / &m2;
        if term.is_zero() {
            break;
        }
        let contrib = &term / BigInt::from(2 * k + 1);
        if k % 2 == 1 {
            acc -= &contrib;
        } else {
            acc += &contrib;
        }
        k += 1;
    }
    acc
}

/// `(sin x, cos x) · 2^w` for `x = xm · 2^-w`, `|x| <= 2^22`.
///
/// Quadrant reduction against `pi/2`, then the two power series on the
/// reduced argument in `[-pi/4, pi/4]`.
pub fn sin_cos_fix(xm: &BigInt, w: u32) -> (BigInt, BigInt) {
    let wk = w as u64 + 64;
    let x = xm << (wk - w as u64);
    let half_pi = pi_fix(wk) >> 1usize;
    let n = div_round(&x, &half_pi);
    let r = &x - &n * &half_pi;

    // sin series on r
    let r2 = shr_floor(&(&r * &r), wk);
    let mut sin_r = r.clone();
    let mut term = r.clone();
    let mut k = 1u64;
    loop {
        term = -shr_floor(&(&term * &r2), wk) / BigInt::from((2 * k) * (2 * k + 1));
        if term.is_zero() {
            break;
        }
        sin_r += &term;
        k += 1;
    }
    // cos series on r
    let mut cos_r = BigInt::from(1u8) << wk;
    let mut term = cos_r.clone();
    let mut k = 1u64;
    loop {
        term = -shr_floor(&(&term * &r2), wk) / BigInt::from((2 * k - 1) * (2 * k));
        if term.is_zero() {
            break;
        }
        cos_r += &term;
        k += 1;
    }

    let quadrant = n.mod_floor(&BigInt::from(4u8));
    let q = quadrant.to_u64_digits().1.first().copied().unwrap_or(0);
    let (s, c) = match q {
        0 => (sin_r, cos_r),
        1 => (cos_r, -sin_r),
        2 => (-sin_r, -cos_r),
        _ => (-cos_r, sin_r),
    };
    (shr_floor(&s, wk - w as u64), shr_floor(&c, wk - w as u64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn to_f64(v: &BigInt, w: u32) -> f64 {
        // good enough for test comparisons at w <= 100
        let s = v.to_string().parse::<f64>().unwrap();
        s / 2f64.powi(w as i32)
    }

    #[test]
    fn exp_matches_native() {
        let w = 64;
        for x in [-8.0f64, -1.0, -0.25, 0.5, 1.0, 3.0, 20.0] {
            let xm = BigInt::from((x * 2f64.powi(w as i32)) as i128);
            let got = to_f64(&exp_fix(&xm, w), w);
            let want = x.exp();
            assert!(
                ((got - want) / want).abs() < 1e-12,
                "exp({x}): got {got}, want {want}"
            );
        }
    }

    #[test]
    fn pi_has_correct_leading_bits() {
        let pi = pi_fix(96);
        let approx = to_f64(&pi, 96);
        assert!((approx - std::f64::consts::PI).abs() < 1e-13);
    }

    #[test]
    fn sin_cos_match_native() {
        let w = 64;
        for x in [-7.3f64, -1.0, 0.0, 0.1, 1.0, 2.5, 3.2, 100.0, 40000.0] {
            let xm = BigInt::from((x * 2f64.powi(w as i32)) as i128);
            let (s, c) = sin_cos_fix(&xm, w);
            let (sf, cf) = (to_f64(&s, w), to_f64(&c, w));
            assert!((sf - x.sin()).abs() < 1e-10, "sin({x}): {sf} vs {}", x.sin());
            assert!((cf - x.cos()).abs() < 1e-10, "cos({x}): {cf} vs {}", x.cos());
        }
    }

    #[test]
    fn isqrt_floor_semantics() {
        assert_eq!(isqrt(&BigInt::from(15u8)), BigInt::from(3u8));
        assert_eq!(isqrt(&BigInt::from(16u8)), BigInt::from(4u8));
        assert_eq!(isqrt(&BigInt::from(17u8)), BigInt::from(4u8));
    }
}
