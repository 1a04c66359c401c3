//! Desk-scale laboratory for tensor attention with rotary position
//! embeddings, built on exact p-bit float arithmetic.
//!
//! The crate is organized around seven subsystems:
//!
//! - [`fpx`] — p-bit float numbers `⟨r,k⟩` with bit-exact rounding and the
//!   adjusted-division alignment rules, plus `exp`/`sqrt` with `2^-p`
//!   relative-error guarantees.
//! - [`backend`] — pluggable scalar backends (exact rationals, p-bit floats,
//!   native doubles) behind one arithmetic trait.
//! - [`tensora`] — dense matrices with the three Kronecker-style products
//!   (full, column-wise, row-wise) and the projection swap rule.
//! - [`ropeenc`] — rotation-matrix machinery: 2×2 blocks, block-diagonal
//!   relative rotations, and the inverse-power frequency schedule.
//! - [`attncore`] — plain and rotary tensor-attention layers, layer norm,
//!   MLP blocks, and multi-layer composition.
//! - [`depthlog`] — symbolic circuit-depth accounting: traced evaluations
//!   carry depth expressions over primitive depth constants, audited against
//!   closed-form totals.
//! - [`hardlang`] — exact solvers and dataset generators for two
//!   finite-monoid word problems: chunked-factorization closure and
//!   ultimately-periodic word membership.
//! - [`probe`] — the empirical harness: training, evaluation, and gradient
//!   checking of toy classifiers, plus everything behind the `talab` CLI.

pub mod attncore;
pub mod backend;
pub mod depthlog;
pub mod error;
pub mod fpx;
pub mod hardlang;
pub mod probe;
pub mod ropeenc;
pub mod tensora;

pub use tensora::Matrix;

pub use error::Error;
pub use fpx::FloatP;

