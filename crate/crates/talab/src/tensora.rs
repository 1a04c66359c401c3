//! Dense matrices over a pluggable scalar backend, with matrix
//! multiplication and three Kronecker-style products.
//!
//! Index layouts follow the defining formulas verbatim (1-based in the
//! math, 0-based here): the full product interleaves indices as
//! `out[i1 + i2·n1, j1 + j2·d1]`, not the conventional block layout. The
//! swap rule `(A1 ⊗ A2)(W1 ⊘ W2) = (A1·W1) ⊘ (A2·W2)` depends on exactly
//! this indexing.

use serde::{Deserialize, Serialize};

use crate::backend::Backend;
use crate::error::{Error, Result};

/// Hard cap on the number of entries any constructor will allocate; the
/// tensor products materialize n²-row intermediates, so desk scale must be
/// bounded explicitly.
pub const MAX_ELEMS: usize = 1 << 22;

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Clone> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::ShapeMismatch("matrix dimensions must be positive".into()));
        }
        if rows.saturating_mul(cols) > MAX_ELEMS {
            return Err(Error::ShapeMismatch(format!(
                "{rows}x{cols} exceeds the element cap {MAX_ELEMS}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.saturating_mul(cols).min(MAX_ELEMS));
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix::new(rows, cols, data)
    }

    pub fn try_from_fn(
        rows: usize,
        cols: usize,
        mut f: impl FnMut(usize, usize) -> Result<T>,
    ) -> Result<Self> {
        if rows.saturating_mul(cols) > MAX_ELEMS {
            return Err(Error::ShapeMismatch(format!(
                "{rows}x{cols} exceeds the element cap {MAX_ELEMS}"
            )));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j)?);
            }
        }
        Matrix::new(rows, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> &T {
        &self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn entry_mut(&mut self, i: usize, j: usize) -> &mut T {
        &mut self.data[i * self.cols + j]
    }

    pub fn transpose(&self) -> Matrix<T> {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i).clone())
            .expect("transpose preserves the element count")
    }

    pub fn map<U: Clone>(&self, f: impl Fn(&T) -> U) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn try_map<U: Clone>(&self, f: impl Fn(&T) -> Result<U>) -> Result<Matrix<U>> {
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(f).collect::<Result<_>>()?,
        })
    }
}

pub fn zeros<B: Backend>(b: &B, rows: usize, cols: usize) -> Result<Matrix<B::Elem>> {
    Matrix::from_fn(rows, cols, |_, _| b.zero())
}

pub fn identity<B: Backend>(b: &B, n: usize) -> Result<Matrix<B::Elem>> {
    Matrix::from_fn(n, n, |i, j| if i == j { b.one() } else { b.zero() })
}

/// Matrix product; each output entry is an aggregated sum of products, so a
/// rounding backend rounds once per entry.
pub fn matmul<B: Backend>(
    b: &B,
    x: &Matrix<B::Elem>,
    y: &Matrix<B::Elem>,
) -> Result<Matrix<B::Elem>> {
    if x.cols != y.rows {
        return Err(Error::ShapeMismatch(format!(
            "matmul: {}x{} times {}x{}",
            x.rows, x.cols, y.rows, y.cols
        )));
    }
    let mut terms = Vec::with_capacity(x.cols);
    Matrix::try_from_fn(x.rows, y.cols, |i, j| {
        terms.clear();
        for k in 0..x.cols {
            terms.push(b.mul(x.get(i, k), y.get(k, j))?);
        }
        b.iter_add(&terms)
    })
}

/// Full Kronecker product with interleaved index layout:
/// `out[i1 + i2·n1, j1 + j2·d1] = x[i1,j1] · y[i2,j2]`.
pub fn kron<B: Backend>(
    b: &B,
    x: &Matrix<B::Elem>,
    y: &Matrix<B::Elem>,
) -> Result<Matrix<B::Elem>> {
    let (n1, d1) = (x.rows, x.cols);
    Matrix::try_from_fn(n1 * y.rows, d1 * y.cols, |i, j| {
        b.mul(x.get(i % n1, j % d1), y.get(i / n1, j / d1))
    })
}

/// Column-wise Kronecker product: `out[i1 + i2·n1, j] = x[i1,j] · y[i2,j]`.
pub fn col_kron<B: Backend>(
    b: &B,
    x: &Matrix<B::Elem>,
    y: &Matrix<B::Elem>,
) -> Result<Matrix<B::Elem>> {
    if x.cols != y.cols {
        return Err(Error::ShapeMismatch(format!(
            "column-wise product: {} vs {} columns",
            x.cols, y.cols
        )));
    }
    let n1 = x.rows;
    Matrix::try_from_fn(n1 * y.rows, x.cols, |i, j| {
        b.mul(x.get(i % n1, j), y.get(i / n1, j))
    })
}

/// Row-wise Kronecker product: `out[i, j1 + j2·d1] = x[i,j1] · y[i,j2]`.
pub fn row_kron<B: Backend>(
    b: &B,
    x: &Matrix<B::Elem>,
    y: &Matrix<B::Elem>,
) -> Result<Matrix<B::Elem>> {
    if x.rows != y.rows {
        return Err(Error::ShapeMismatch(format!(
            "row-wise product: {} vs {} rows",
            x.rows, y.rows
        )));
    }
    let d1 = x.cols;
    Matrix::try_from_fn(x.rows, d1 * y.cols, |i, j| {
        b.mul(x.get(i, j % d1), y.get(i, j / d1))
    })
}

/// Projects two inputs and combines them column-wise:
/// `(a1·w1) ⊘ (a2·w2)`, which by the swap rule equals
/// `(a1 ⊗ a2)·(w1 ⊘ w2)` without materializing the n²×d² operand.
pub fn fused_project<B: Backend>(
    b: &B,
    a1: &Matrix<B::Elem>,
    a2: &Matrix<B::Elem>,
    w1: &Matrix<B::Elem>,
    w2: &Matrix<B::Elem>,
) -> Result<Matrix<B::Elem>> {
    col_kron(b, &matmul(b, a1, w1)?, &matmul(b, a2, w2)?)
}

/// Runs `trials` random exact-rational instances of the swap-rule identity
/// `(A1 ⊗ A2)(W1 ⊘ W2) = (A1·W1) ⊘ (A2·W2)` with `n1, n2, d <= 3` and
/// returns the number of entrywise mismatches (zero unless the algebra is
/// broken).
pub fn swap_check_trials(trials: usize, seed: u64) -> Result<usize> {
    use num_bigint::BigInt;
    use num_rational::BigRational;
    use rand::{Rng, SeedableRng};

    let b = crate::backend::ExactRational;
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
    let mut mismatches = 0usize;
    for _ in 0..trials {
        let n1 = rng.gen_range(1..=3usize);
        let n2 = rng.gen_range(1..=3usize);
        let d = rng.gen_range(1..=3usize);
        let mut draw = |rows: usize, cols: usize| {
            Matrix::from_fn(rows, cols, |_, _| {
                BigRational::new(
                    BigInt::from(rng.gen_range(-12i64..=12)),
                    BigInt::from(rng.gen_range(1i64..=9)),
                )
            })
        };
        let a1 = draw(n1, d)?;
        let a2 = draw(n2, d)?;
        let w1 = draw(d, d)?;
        let w2 = draw(d, d)?;
        let lhs = matmul(&b, &kron(&b, &a1, &a2)?, &col_kron(&b, &w1, &w2)?)?;
        let rhs = fused_project(&b, &a1, &a2, &w1, &w2)?;
        mismatches += lhs
            .data()
            .iter()
            .zip(rhs.data())
            .filter(|(x, y)| x != y)
            .count();
    }
    Ok(mismatches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ExactRational, FloatPBackend, Real64};
    use num_bigint::BigInt;
    use num_rational::BigRational;
    use proptest::prelude::*;

    #[test]
    fn swap_check_reports_no_mismatches() {
        assert_eq!(swap_check_trials(50, 123).unwrap(), 0);
    }

    fn m64(rows: usize, cols: usize, v: &[f64]) -> Matrix<f64> {
        Matrix::new(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn matmul_examples() {
        let b = Real64;
        let a = m64(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let i = identity(&b, 2).unwrap();
        assert_eq!(matmul(&b, &i, &a).unwrap(), a);
        let v = m64(2, 1, &[5.0, 6.0]);
        assert_eq!(matmul(&b, &a, &v).unwrap(), m64(2, 1, &[17.0, 39.0]));
        let s = matmul(&b, &m64(1, 1, &[2.0]), &m64(1, 1, &[3.0])).unwrap();
        assert_eq!(s, m64(1, 1, &[6.0]));
        assert!(matmul(&b, &a, &m64(1, 2, &[0.0, 0.0])).is_err());
    }

    #[test]
    fn kron_examples() {
        let b = Real64;
        let s = kron(&b, &m64(1, 1, &[2.0]), &m64(1, 1, &[3.0])).unwrap();
        assert_eq!(s, m64(1, 1, &[6.0]));
        // row vectors: col index j1 + j2*2 interleaves
        let k = kron(&b, &m64(1, 2, &[1.0, 2.0]), &m64(1, 2, &[3.0, 4.0])).unwrap();
        assert_eq!(k, m64(1, 4, &[3.0, 6.0, 4.0, 8.0]));
        let k = kron(&b, &m64(2, 1, &[1.0, 2.0]), &m64(1, 1, &[3.0])).unwrap();
        assert_eq!(k, m64(2, 1, &[3.0, 6.0]));
    }

    #[test]
    fn col_kron_examples() {
        let b = Real64;
        let ones = m64(2, 2, &[1.0; 4]);
        let a = m64(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let t = col_kron(&b, &ones, &a).unwrap();
        // row i1 + i2*2 = a[i2, :] tiled
        assert_eq!(t, m64(4, 2, &[1.0, 2.0, 1.0, 2.0, 3.0, 4.0, 3.0, 4.0]));
        let k = col_kron(&b, &m64(1, 2, &[1.0, 2.0]), &m64(1, 2, &[3.0, 4.0])).unwrap();
        assert_eq!(k, m64(1, 2, &[3.0, 8.0]));
        let k = col_kron(&b, &m64(2, 1, &[1.0, 2.0]), &m64(2, 1, &[3.0, 4.0])).unwrap();
        assert_eq!(k, m64(4, 1, &[3.0, 6.0, 4.0, 8.0]));
        assert!(col_kron(&b, &m64(1, 2, &[0.0; 2]), &m64(1, 3, &[0.0; 3])).is_err());
    }

    #[test]
    fn row_kron_examples() {
        let b = Real64;
        let a = m64(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let ones = m64(2, 1, &[1.0, 1.0]);
        assert_eq!(row_kron(&b, &a, &ones).unwrap(), a);
        let k = row_kron(&b, &m64(1, 2, &[1.0, 2.0]), &m64(1, 2, &[3.0, 4.0])).unwrap();
        assert_eq!(k, m64(1, 4, &[3.0, 6.0, 4.0, 8.0]));
        let z = row_kron(&b, &m64(1, 2, &[0.0, 0.0]), &m64(1, 2, &[3.0, 4.0])).unwrap();
        assert_eq!(z, m64(1, 4, &[0.0; 4]));
    }

    #[test]
    fn fused_project_examples() {
        let b = Real64;
        let a1 = m64(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let a2 = m64(2, 2, &[5.0, 6.0, 7.0, 8.0]);
        let i = identity(&b, 2).unwrap();
        assert_eq!(
            fused_project(&b, &a1, &a2, &i, &i).unwrap(),
            col_kron(&b, &a1, &a2).unwrap()
        );
        let f = fused_project(
            &b,
            &m64(1, 1, &[2.0]),
            &m64(1, 1, &[3.0]),
            &m64(1, 1, &[5.0]),
            &m64(1, 1, &[7.0]),
        )
        .unwrap();
        assert_eq!(f, m64(1, 1, &[210.0]));
    }

    fn rat_matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix<BigRational>> {
        proptest::collection::vec((-9i64..=9, 1i64..=9), rows * cols).prop_map(move |v| {
            Matrix::new(
                rows,
                cols,
                v.into_iter()
                    .map(|(n, d)| BigRational::new(BigInt::from(n), BigInt::from(d)))
                    .collect(),
            )
            .unwrap()
        })
    }

    proptest! {
        // The swap rule, exactly, over rationals.
        #[test]
        fn swap_rule_holds_exactly(
            (n1, n2, d) in (1usize..=3, 1usize..=3, 1usize..=3),
            seed in any::<u64>(),
        ) {
            let b = ExactRational;
            let mut s = seed;
            let mut next = move || {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                BigRational::new(BigInt::from((s >> 33) as i64 % 17 - 8), BigInt::from(1 + (s % 7) as i64))
            };
            let a1 = Matrix::from_fn(n1, d, |_, _| next()).unwrap();
            let a2 = Matrix::from_fn(n2, d, |_, _| next()).unwrap();
            let w1 = Matrix::from_fn(d, d, |_, _| next()).unwrap();
            let w2 = Matrix::from_fn(d, d, |_, _| next()).unwrap();
            let lhs = matmul(&b, &kron(&b, &a1, &a2).unwrap(), &col_kron(&b, &w1, &w2).unwrap()).unwrap();
            let rhs = col_kron(&b, &matmul(&b, &a1, &w1).unwrap(), &matmul(&b, &a2, &w2).unwrap()).unwrap();
            prop_assert_eq!(lhs, rhs);
        }

        // Index-formula spot checks against direct evaluation.
        #[test]
        fn kron_index_formulas(a in rat_matrix(2, 3), c in rat_matrix(3, 2)) {
            let b = ExactRational;
            let k = kron(&b, &a, &c).unwrap();
            for i1 in 0..2 { for j1 in 0..3 { for i2 in 0..3 { for j2 in 0..2 {
                prop_assert_eq!(
                    k.get(i1 + i2 * 2, j1 + j2 * 3),
                    &(a.get(i1, j1) * c.get(i2, j2))
                );
            }}}}
        }

        #[test]
        fn col_and_row_kron_index_formulas(a in rat_matrix(2, 2), c in rat_matrix(3, 2)) {
            let b = ExactRational;
            let ck = col_kron(&b, &a, &c).unwrap();
            for i1 in 0..2 { for i2 in 0..3 { for j in 0..2 {
                prop_assert_eq!(ck.get(i1 + i2 * 2, j), &(a.get(i1, j) * c.get(i2, j)));
            }}}
            let rk = row_kron(&b, &a, &a).unwrap();
            for i in 0..2 { for j1 in 0..2 { for j2 in 0..2 {
                prop_assert_eq!(rk.get(i, j1 + j2 * 2), &(a.get(i, j1) * a.get(i, j2)));
            }}}
        }
    }

    #[test]
    fn floatp_matmul_is_order_independent() {
        // single-rounding aggregation: permuting the contraction order
        // cannot change the result
        let b = FloatPBackend::new(8).unwrap();
        let x = Matrix::try_from_fn(1, 4, |_, j| b.from_f64([0.3, -1.7, 2.2, 0.9][j])).unwrap();
        let y = Matrix::try_from_fn(4, 1, |i, _| b.from_f64([1.1, 0.4, -0.6, 2.3][i])).unwrap();
        let fwd = matmul(&b, &x, &y).unwrap();
        let mut terms: Vec<_> = (0..4)
            .map(|k| b.mul(x.get(0, k), y.get(k, 0)).unwrap())
            .collect();
        terms.reverse();
        assert_eq!(fwd.get(0, 0), &b.iter_add(&terms).unwrap());
    }

    #[test]
    fn serde_round_trip_with_floatp_triples() {
        let b = FloatPBackend::new(8).unwrap();
        let m = Matrix::try_from_fn(2, 2, |i, j| b.from_f64(i as f64 - j as f64 / 4.0)).unwrap();
        let json = serde_json::to_string(&m).unwrap();
        assert!(json.contains("\"r\":"), "float entries serialize as r/k/p triples: {json}");
        let back: Matrix<crate::FloatP> = serde_json::from_str(&json).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn size_cap_is_enforced() {
        assert!(Matrix::from_fn(1 << 12, 1 << 12, |_, _| 0.0f64).is_err());
    }
}
