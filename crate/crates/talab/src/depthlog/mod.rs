//! Symbolic circuit-depth accounting.
//!
//! A [`DepthExpr`] is a cost over seven primitive depth constants:
//! `d_std` (scalar add/mul/div/compare/floor), `d_oplus` (iterated
//! addition), `d_otimes` (iterated multiplication), `d_exp`, `d_sqrt`,
//! `d_trig` (sine and cosine together), and `d_g` (a whole non-attention
//! block). Sequential composition adds costs; parallel branches cost their
//! maximum.
//!
//! The normal form is an antichain of nonnegative-integer coefficient
//! vectors: a single vector is a plain linear combination, several vectors
//! are an irreducible `max` of incomparable combinations. The audited
//! components never leave a residual `max` — their parallel branches are
//! always coefficient-wise comparable — and the audit asserts that.
//!
//! Traced layer evaluations account depth the way the closed-form totals
//! do: as a sequence of stages, each internally parallel. [`StageTracer`]
//! is that clock; every stage advances it by the stage's scalar-operation
//! cost, and every scalar produced in the stage carries the new clock as
//! its depth.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};

pub const SYMBOL_COUNT: usize = 7;

/// The primitive depth constants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DepthSym {
    /// One scalar addition, multiplication, division, comparison, or floor.
    Std,
    /// One iterated addition (any fan-in, single rounding).
    IterAdd,
    /// One iterated multiplication.
    IterMul,
    /// One exponential.
    Exp,
    /// One square root.
    Sqrt,
    /// One sine/cosine evaluation.
    Trig,
    /// One non-attention block, treated as an opaque unit.
    Block,
}

impl DepthSym {
    pub const ALL: [DepthSym; SYMBOL_COUNT] = [
        DepthSym::Std,
        DepthSym::IterAdd,
        DepthSym::IterMul,
        DepthSym::Exp,
        DepthSym::Sqrt,
        DepthSym::Trig,
        DepthSym::Block,
    ];

    fn index(self) -> usize {
        Self::ALL.iter().position(|s| *s == self).unwrap()
    }

    pub fn name(self) -> &'static str {
        match self {
            DepthSym::Std => "d_std",
            DepthSym::IterAdd => "d_oplus",
            DepthSym::IterMul => "d_otimes",
            DepthSym::Exp => "d_exp",
            DepthSym::Sqrt => "d_sqrt",
            DepthSym::Trig => "d_trig",
            DepthSym::Block => "d_g",
        }
    }
}

type Coeffs = [u32; SYMBOL_COUNT];

/// Normalized depth expression: `max` over an antichain of linear
/// combinations, kept sorted for canonical equality.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DepthExpr {
    branches: Vec<Coeffs>,
}

fn dominates(a: &Coeffs, b: &Coeffs) -> bool {
    a.iter().zip(b).all(|(x, y)| x >= y)
}

impl DepthExpr {
    /// The zero cost (depth of any input leaf).
    pub fn zero() -> Self {
        DepthExpr { branches: vec![[0; SYMBOL_COUNT]] }
    }

    pub fn sym(s: DepthSym) -> Self {
        let mut c = [0; SYMBOL_COUNT];
        c[s.index()] = 1;
        DepthExpr { branches: vec![c] }
    }

    /// Builds `sum_i coeff_i · sym_i` from (symbol, coefficient) pairs.
    pub fn linear(terms: &[(DepthSym, u32)]) -> Self {
        let mut c = [0; SYMBOL_COUNT];
        for (s, n) in terms {
            c[s.index()] += n;
        }
        DepthExpr { branches: vec![c] }
    }

    pub fn is_zero(&self) -> bool {
        self.branches == vec![[0; SYMBOL_COUNT]]
    }

    /// A plain linear combination, with no residual `max`.
    pub fn is_linear(&self) -> bool {
        self.branches.len() == 1
    }

    /// Coefficients when the expression is linear.
    pub fn coefficients(&self) -> Option<Coeffs> {
        if self.is_linear() {
            Some(self.branches[0])
        } else {
            None
        }
    }

    fn normalized(mut branches: Vec<Coeffs>) -> Self {
        // keep only maximal vectors, deduplicated, sorted
        branches.sort();
        branches.dedup();
        let keep: Vec<Coeffs> = branches
            .iter()
            .filter(|c| !branches.iter().any(|o| o != *c && dominates(o, c)))
            .copied()
            .collect();
        if keep.is_empty() {
            return DepthExpr::zero();
        }
        DepthExpr { branches: keep }
    }

    /// Sequential composition: every parallel alternative of `self` is
    /// followed by every alternative of `other`.
    pub fn seq(&self, other: &DepthExpr) -> DepthExpr {
        let mut out = Vec::with_capacity(self.branches.len() * other.branches.len());
        for a in &self.branches {
            for b in &other.branches {
                let mut c = *a;
                for (x, y) in c.iter_mut().zip(b) {
                    *x += y;
                }
                out.push(c);
            }
        }
        DepthExpr::normalized(out)
    }

    pub fn then(&self, s: DepthSym) -> DepthExpr {
        self.seq(&DepthExpr::sym(s))
    }

    /// Parallel composition: the maximum over all branches.
    pub fn par<'a>(exprs: impl IntoIterator<Item = &'a DepthExpr>) -> Result<DepthExpr> {
        let mut out = Vec::new();
        for e in exprs {
            out.extend_from_slice(&e.branches);
        }
        if out.is_empty() {
            return Err(Error::EmptyInput);
        }
        Ok(DepthExpr::normalized(out))
    }

    /// `n` sequential repetitions.
    pub fn repeat(&self, n: u32) -> DepthExpr {
        let mut acc = DepthExpr::zero();
        for _ in 0..n {
            acc = acc.seq(self);
        }
        acc
    }
}

impl fmt::Display for DepthExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn branch(c: &Coeffs, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            let mut first = true;
            for (i, sym) in DepthSym::ALL.iter().enumerate() {
                if c[i] == 0 {
                    continue;
                }
                if !first {
                    write!(f, " + ")?;
                }
                first = false;
                if c[i] == 1 {
                    write!(f, "{}", sym.name())?;
                } else {
                    write!(f, "{}·{}", c[i], sym.name())?;
                }
            }
            if first {
                write!(f, "0")?;
            }
            Ok(())
        }
        if self.branches.len() == 1 {
            branch(&self.branches[0], f)
        } else {
            write!(f, "max(")?;
            for (i, b) in self.branches.iter().enumerate() {
                if i > 0 {
                    write!(f, "; ")?;
                }
                branch(b, f)?;
            }
            write!(f, ")")
        }
    }
}

impl fmt::Debug for DepthExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// The stage clock for a traced evaluation.
///
/// One tracer belongs to one evaluation; stages advance the clock
/// sequentially, mirroring how the closed-form totals account a layer as a
/// sequence of internally-parallel steps.
#[derive(Clone, Debug, Default)]
pub struct StageTracer {
    clock: DepthExpr,
    stages: Vec<(String, DepthExpr)>,
}

impl StageTracer {
    pub fn new() -> Self {
        StageTracer { clock: DepthExpr::zero(), stages: Vec::new() }
    }

    /// Advances the clock by `cost`; all scalars produced in this stage
    /// carry the new clock as their depth.
    pub fn stage(&mut self, label: &str, cost: DepthExpr) {
        self.clock = self.clock.seq(&cost);
        self.stages.push((label.to_string(), cost));
    }

    pub fn clock(&self) -> &DepthExpr {
        &self.clock
    }

    /// The recorded `(label, cost)` sequence, for audit tables.
    pub fn stages(&self) -> &[(String, DepthExpr)] {
        &self.stages
    }
}

impl Default for DepthExpr {
    fn default() -> Self {
        DepthExpr::zero()
    }
}

/// A scalar paired with the depth at which it becomes available. Input
/// leaves carry the zero expression.
#[derive(Clone, Debug, PartialEq)]
pub struct TracedScalar<T> {
    pub value: T,
    pub depth: DepthExpr,
}

impl<T> TracedScalar<T> {
    pub fn leaf(value: T) -> Self {
        TracedScalar { value, depth: DepthExpr::zero() }
    }

    /// Applies a scalar operation costing `cost`, available once all
    /// inputs are.
    pub fn apply<U>(
        inputs: &[&TracedScalar<T>],
        cost: DepthSym,
        value: U,
    ) -> Result<TracedScalar<U>> {
        let depth = DepthExpr::par(inputs.iter().map(|t| &t.depth))?.then(cost);
        Ok(TracedScalar { value, depth })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use DepthSym::*;

    #[test]
    fn seq_examples() {
        let zero = DepthExpr::zero();
        let std = DepthExpr::sym(Std);
        assert_eq!(zero.seq(&std), std);
        let sum = std.seq(&DepthExpr::sym(IterAdd));
        assert_eq!(sum, DepthExpr::linear(&[(Std, 1), (IterAdd, 1)]));
        assert_eq!(sum.seq(&std), DepthExpr::linear(&[(Std, 2), (IterAdd, 1)]));
    }

    #[test]
    fn par_examples() {
        let e = DepthExpr::linear(&[(Std, 1), (IterAdd, 1)]);
        assert_eq!(DepthExpr::par([&e]).unwrap(), e);
        assert_eq!(DepthExpr::par([&e, &e]).unwrap(), e);
        // coefficient-wise domination collapses
        let lo = DepthExpr::sym(Std);
        assert_eq!(DepthExpr::par([&lo, &e]).unwrap(), e);
        assert!(DepthExpr::par([]).is_err());
    }

    #[test]
    fn incomparable_branches_keep_a_max_node() {
        let a = DepthExpr::sym(Exp);
        let b = DepthExpr::sym(Sqrt);
        let m = DepthExpr::par([&a, &b]).unwrap();
        assert!(!m.is_linear());
        assert_eq!(m.to_string(), "max(d_sqrt; d_exp)");
        // sequential composition distributes over the branches
        let m2 = m.then(Std);
        assert_eq!(m2.to_string(), "max(d_std + d_sqrt; d_std + d_exp)");
    }

    #[test]
    fn display_forms() {
        assert_eq!(DepthExpr::zero().to_string(), "0");
        assert_eq!(
            DepthExpr::linear(&[(Std, 6), (IterAdd, 5), (Exp, 1)]).to_string(),
            "6·d_std + 5·d_oplus + d_exp"
        );
    }

    #[test]
    fn traced_scalar_leaves_are_zero_depth() {
        let x = TracedScalar::leaf(1.5f64);
        assert!(x.depth.is_zero());
        let y = TracedScalar::apply(&[&x, &x], Std, 3.0).unwrap();
        assert_eq!(y.depth, DepthExpr::sym(Std));
    }

    #[test]
    fn stage_tracer_accumulates() {
        let mut tr = StageTracer::new();
        tr.stage("proj", DepthExpr::linear(&[(Std, 1), (IterAdd, 1)]));
        tr.stage("combine", DepthExpr::sym(Std));
        assert_eq!(tr.clock(), &DepthExpr::linear(&[(Std, 2), (IterAdd, 1)]));
        assert_eq!(tr.stages().len(), 2);
    }

    fn arb_expr() -> impl Strategy<Value = DepthExpr> {
        proptest::collection::vec(proptest::array::uniform7(0u32..4), 1..4).prop_map(|vs| {
            let branches: Vec<DepthExpr> = vs
                .into_iter()
                .map(|c| {
                    let terms: Vec<(DepthSym, u32)> =
                        DepthSym::ALL.iter().zip(c).map(|(s, n)| (*s, n)).collect();
                    DepthExpr::linear(&terms)
                })
                .collect();
            DepthExpr::par(branches.iter()).unwrap()
        })
    }

    proptest! {
        #[test]
        fn seq_is_associative_and_commutative(a in arb_expr(), b in arb_expr(), c in arb_expr()) {
            prop_assert_eq!(a.seq(&b), b.seq(&a));
            prop_assert_eq!(a.seq(&b).seq(&c), a.seq(&b.seq(&c)));
        }

        #[test]
        fn seq_identity_and_par_idempotence(a in arb_expr()) {
            prop_assert_eq!(a.seq(&DepthExpr::zero()), a.clone());
            prop_assert_eq!(DepthExpr::par([&a, &a]).unwrap(), a.clone());
        }

        #[test]
        fn normalization_is_idempotent(a in arb_expr(), b in arb_expr()) {
            // every public constructor normalizes; a no-op par must leave
            // the expression unchanged
            let e = DepthExpr::par([&a, &b]).unwrap();
            prop_assert_eq!(DepthExpr::par([&e]).unwrap(), e.clone());
        }
    }
}
pub mod audit;
