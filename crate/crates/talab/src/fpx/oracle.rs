//! Reference evaluation of the float operations, independent of the
//! production path.
//!
//! Every operation is re-derived here from its defining formula over exact
//! rationals, and rounding is done by scanning a sorted table of all
//! representable values instead of by exponent arithmetic. The `fp-audit`
//! command compares the two paths exhaustively over every operand pair at a
//! given precision; this module must therefore not call into the production
//! implementations.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use std::cmp::Ordering;
use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use super::FloatP;

/// Precisions above this make the value table unreasonably large.
pub const MAX_AUDIT_P: u32 = 8;

#[derive(Clone)]
pub struct ValueTable {
    p: u32,
    /// (value, canonical representative), sorted by value.
    entries: Vec<(BigRational, FloatP)>,
    max_magnitude: BigRational,
}

static TABLES: OnceLock<Mutex<HashMap<u32, &'static ValueTable>>> = OnceLock::new();

/// All canonical `p`-bit floats with their exact values, sorted. Cached and
/// leaked per precision; only small `p` are ever requested.
pub fn value_table(p: u32) -> &'static ValueTable {
    assert!(
        (super::MIN_P..=MAX_AUDIT_P).contains(&p),
        "value table only built for p in [{}, {}]",
        super::MIN_P,
        MAX_AUDIT_P
    );
    let tables = TABLES.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = tables.lock().unwrap();
    if let Some(t) = guard.get(&p) {
        return t;
    }
    let mut entries = vec![(BigRational::zero(), FloatP::zero(p))];
    let half = 1i64 << (p - 1);
    let lim = 1i64 << p;
    for mag in half..lim {
        for sig in [mag, -mag] {
            for k in -lim..lim {
                let f = FloatP::new(sig, k, p).unwrap();
                entries.push((pow2(k) * BigRational::from(BigInt::from(sig)), f));
            }
        }
    }
    entries.sort_by(|a, b| a.0.cmp(&b.0));
    let max_magnitude = entries.last().unwrap().0.clone();
    let t: &'static ValueTable = Box::leak(Box::new(ValueTable { p, entries, max_magnitude }));
    guard.insert(p, t);
    t
}

fn pow2(k: i64) -> BigRational {
    if k >= 0 {
        BigRational::from(BigInt::one() << k as usize)
    } else {
        BigRational::new(BigInt::one(), BigInt::one() << (-k) as usize)
    }
}

impl ValueTable {
    pub fn precision(&self) -> u32 {
        self.p
    }

    /// Every canonical float at this precision.
    pub fn floats(&self) -> impl Iterator<Item = FloatP> + '_ {
        self.entries.iter().map(|(_, f)| *f)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Round-to-nearest by table scan: `None` means the magnitude exceeds
    /// the largest representable value. Ties prefer the even significand;
    /// a double-even tie resolves toward zero.
    pub fn round(&self, x: &BigRational) -> Option<FloatP> {
        if x.abs() > self.max_magnitude {
            return None;
        }
        let i = self.entries.partition_point(|(v, _)| v < x);
        if i < self.entries.len() && &self.entries[i].0 == x {
            return Some(self.entries[i].1);
        }
        debug_assert!(i > 0 && i < self.entries.len());
        let (lo_v, lo_f) = &self.entries[i - 1];
        let (hi_v, hi_f) = &self.entries[i];
        let d_lo = x - lo_v;
        let d_hi = hi_v - x;
        match d_lo.cmp(&d_hi) {
            Ordering::Less => Some(*lo_f),
            Ordering::Greater => Some(*hi_f),
            Ordering::Equal => {
                let (le, he) = (lo_f.significand() % 2 == 0, hi_f.significand() % 2 == 0);
                match (le, he) {
                    (true, false) => Some(*lo_f),
                    (false, true) => Some(*hi_f),
                    // both even: only happens at the zero/smallest boundary
                    _ => Some(if lo_v.abs() < hi_v.abs() { *lo_f } else { *hi_f }),
                }
            }
        }
    }
}

/// The adjusted division from the operation definitions, over rationals.
fn adjusted_ratio(x: &BigInt, y: &BigInt) -> BigRational {
    debug_assert!(!y.is_zero());
    let q = BigRational::new(x.clone(), y.clone());
    if ((x << 2usize) % y).is_zero() {
        q
    } else {
        q + BigRational::new(BigInt::one(), BigInt::from(8u8))
    }
}

/// Reference addition: exponent alignment with the adjusted division, zero
/// short-circuit, nearest rounding by table. `None` signals overflow.
pub fn ref_add(a: &FloatP, b: &FloatP) -> Option<FloatP> {
    let t = value_table(a.precision());
    if a.is_zero() {
        return Some(*b);
    }
    if b.is_zero() {
        return Some(*a);
    }
    let (hi, lo) = if a.exponent() >= b.exponent() { (a, b) } else { (b, a) };
    let m = (hi.exponent() - lo.exponent()) as usize;
    let s = BigRational::from(BigInt::from(hi.significand()))
        + adjusted_ratio(&BigInt::from(lo.significand()), &(BigInt::one() << m));
    t.round(&(s * pow2(hi.exponent())))
}

/// Reference multiplication: exact product of `⟨r1·r2, k1+k2⟩`, rounded.
pub fn ref_mul(a: &FloatP, b: &FloatP) -> Option<FloatP> {
    let t = value_table(a.precision());
    let v = BigRational::from(BigInt::from(a.significand()) * BigInt::from(b.significand()))
        * pow2(a.exponent() + b.exponent());
    t.round(&v)
}

/// Reference division; `None` in the second position of the pair is never
/// produced — a zero divisor is the caller's error.
pub fn ref_div(a: &FloatP, b: &FloatP) -> Option<FloatP> {
    debug_assert!(!b.is_zero());
    let t = value_table(a.precision());
    if a.is_zero() {
        return Some(FloatP::zero(a.precision()));
    }
    let p = a.precision();
    let q = adjusted_ratio(
        &(BigInt::from(a.significand()) << (p - 1) as usize),
        &BigInt::from(b.significand()),
    );
    t.round(&(q * pow2(a.exponent() - b.exponent() - p as i64 + 1)))
}

/// Reference comparison: exact real order.
pub fn ref_compare(a: &FloatP, b: &FloatP) -> Ordering {
    (BigRational::from(BigInt::from(a.significand())) * pow2(a.exponent()))
        .cmp(&(BigRational::from(BigInt::from(b.significand())) * pow2(b.exponent())))
}

/// Reference floor: mathematical floor of the exact value, rounded.
pub fn ref_floor(a: &FloatP) -> Option<FloatP> {
    let t = value_table(a.precision());
    let v = (BigRational::from(BigInt::from(a.significand())) * pow2(a.exponent())).floor();
    t.round(&v)
}

/// One mismatch between the production path and the reference path.
#[derive(Debug, Clone)]
pub struct Mismatch {
    pub op: &'static str,
    pub a: FloatP,
    pub b: Option<FloatP>,
    pub got: String,
    pub want: String,
}

#[derive(Debug, Default)]
pub struct AuditReport {
    pub precision: u32,
    pub pairs: usize,
    pub checks: usize,
    pub mismatches: Vec<Mismatch>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Compares every production operation against the reference path on every
/// ordered operand pair at precision `p`.
pub fn exhaustive_audit(p: u32) -> AuditReport {
    let table = value_table(p);
    let all: Vec<FloatP> = table.floats().collect();
    let mut report = AuditReport { precision: p, ..Default::default() };

    let mut check = |op: &'static str, a: FloatP, b: Option<FloatP>, got: String, want: String| {
        report.checks += 1;
        if got != want {
            report.mismatches.push(Mismatch { op, a, b, got, want });
        }
    };

    fn show(r: &crate::error::Result<FloatP>) -> String {
        match r {
            Ok(f) => f.to_string(),
            Err(e) => format!("error: {e}"),
        }
    }
    let show_ref = |r: &Option<FloatP>| -> String {
        match r {
            Some(f) => f.to_string(),
            None => format!("error: {}", crate::error::Error::PrecisionOverflow { p }),
        }
    };

    for &a in &all {
        for &b in &all {
            report.pairs += 1;
            check("add", a, Some(b), show(&super::add(&a, &b)), show_ref(&ref_add(&a, &b)));
            check("mul", a, Some(b), show(&super::mul(&a, &b)), show_ref(&ref_mul(&a, &b)));
            if !b.is_zero() {
                check("div", a, Some(b), show(&super::div(&a, &b)), show_ref(&ref_div(&a, &b)));
            } else {
                check(
                    "div",
                    a,
                    Some(b),
                    format!("{:?}", super::div(&a, &b).err()),
                    format!("{:?}", Some(crate::error::Error::DivisionByZero)),
                );
            }
            check(
                "compare",
                a,
                Some(b),
                format!("{:?}", super::compare(&a, &b).unwrap()),
                format!("{:?}", ref_compare(&a, &b)),
            );
        }
        check("floor", a, None, show(&super::floor(&a)), show_ref(&ref_floor(&a)));
    }
    report
}
