//! Rotation-matrix machinery for rotary position encoding.
//!
//! A position offset `m` maps to a block-diagonal `d×d` matrix whose `i`-th
//! 2×2 block rotates by `m·θ_i`, with the frequencies `θ_i = base^(-2(i-1)/d)`
//! predefined by an inverse-power schedule (default base 10000).

use crate::backend::Backend;
use crate::error::{Error, Result};
use crate::tensora::Matrix;

/// Predefined angular frequencies for an even embedding dimension `d`:
/// one frequency per 2×2 block.
#[derive(Clone, Debug, PartialEq)]
pub struct ThetaSchedule<T> {
    d: usize,
    thetas: Vec<T>,
}

impl<T: Clone> ThetaSchedule<T> {
    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn thetas(&self) -> &[T] {
        &self.thetas
    }

    pub fn from_thetas(d: usize, thetas: Vec<T>) -> Result<Self> {
        if d < 2 || d % 2 != 0 {
            return Err(Error::BadDimension(d));
        }
        if thetas.len() != d / 2 {
            return Err(Error::ShapeMismatch(format!(
                "schedule for d={d} needs {} frequencies, got {}",
                d / 2,
                thetas.len()
            )));
        }
        Ok(ThetaSchedule { d, thetas })
    }
}

/// `θ_i = base^(-2(i-1)/d)` for `i` in `1..=d/2`.
pub fn theta_schedule<B: Backend>(b: &B, d: usize, base: f64) -> Result<ThetaSchedule<B::Elem>> {
    if d < 2 || d % 2 != 0 {
        return Err(Error::BadDimension(d));
    }
    if !(base > 0.0) {
        return Err(Error::DomainError(format!("schedule base must be positive, got {base}")));
    }
    let thetas = (0..d / 2)
        .map(|i| b.from_f64(base.powf(-2.0 * i as f64 / d as f64)))
        .collect::<Result<Vec<_>>>()?;
    ThetaSchedule::from_thetas(d, thetas)
}

/// Sine and cosine under the backend's accuracy contract (relative error at
/// most `2^-p` for the float backend, with an absolute fallback near zeros).
pub fn sin_cos_approx<B: Backend>(b: &B, x: &B::Elem) -> Result<(B::Elem, B::Elem)> {
    b.sin_cos(x)
}

/// The 2×2 rotation block `[[cos θ, -sin θ], [sin θ, cos θ]]`.
pub fn rot2<B: Backend>(b: &B, theta: &B::Elem) -> Result<Matrix<B::Elem>> {
    let (s, c) = b.sin_cos(theta)?;
    Matrix::new(2, 2, vec![c.clone(), b.neg(&s), s, c])
}

/// Block-diagonal relative rotation for a position offset: block `i`
/// rotates by `offset · θ_i`.
pub fn rel_rotation<B: Backend>(
    b: &B,
    offset: i64,
    sched: &ThetaSchedule<B::Elem>,
) -> Result<Matrix<B::Elem>> {
    let d = sched.dim();
    let off = b.from_i64(offset)?;
    let mut out = crate::tensora::zeros(b, d, d)?;
    for (i, theta) in sched.thetas().iter().enumerate() {
        let angle = b.mul(&off, theta)?;
        let block = rot2(b, &angle)?;
        for r in 0..2 {
            for c in 0..2 {
                out.set(2 * i + r, 2 * i + c, block.get(r, c).clone());
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{FloatPBackend, Real64};
    use crate::tensora::{identity, matmul};

    #[test]
    fn schedule_examples() {
        let b = Real64;
        let s = theta_schedule(&b, 2, 9999.0).unwrap();
        assert_eq!(s.thetas(), &[1.0]);
        let s = theta_schedule(&b, 4, 10000.0).unwrap();
        assert_eq!(s.thetas(), &[1.0, 0.01]);
        let s = theta_schedule(&b, 8, 100.0).unwrap();
        let want: Vec<f64> = (0..4).map(|i| 100f64.powf(-(i as f64) / 4.0)).collect();
        assert_eq!(s.thetas(), &want[..]);
        assert!(matches!(theta_schedule(&b, 3, 100.0), Err(Error::BadDimension(3))));
        assert!(matches!(theta_schedule(&b, 0, 100.0), Err(Error::BadDimension(0))));
    }

    #[test]
    fn rot2_at_zero_and_pi() {
        let b = Real64;
        let r0 = rot2(&b, &0.0).unwrap();
        assert_eq!(r0, identity(&b, 2).unwrap());
        let rpi = rot2(&b, &std::f64::consts::PI).unwrap();
        for (got, want) in rpi.data().iter().zip([-1.0, 0.0, 0.0, -1.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn rot2_orthogonality_floatp() {
        let p = 16;
        let b = FloatPBackend::new(p).unwrap();
        let theta = b.from_f64(0.7).unwrap();
        let r = rot2(&b, &theta).unwrap();
        let prod = matmul(&b, &r.transpose(), &r).unwrap();
        let tol = 4.0 * 2f64.powi(-(p as i32));
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 };
                let got = b.to_f64(prod.get(i, j));
                assert!((got - want).abs() <= tol, "entry ({i},{j}) = {got}");
            }
        }
    }

    #[test]
    fn rel_rotation_identity_at_zero_offset() {
        let b = Real64;
        let s = theta_schedule(&b, 4, 10000.0).unwrap();
        assert_eq!(rel_rotation(&b, 0, &s).unwrap(), identity(&b, 4).unwrap());
    }

    #[test]
    fn rel_rotation_group_law() {
        let b = Real64;
        let s = theta_schedule(&b, 4, 10000.0).unwrap();
        let r2 = rel_rotation(&b, 2, &s).unwrap();
        let r3 = rel_rotation(&b, 3, &s).unwrap();
        let r5 = rel_rotation(&b, 5, &s).unwrap();
        let prod = matmul(&b, &r2, &r3).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert!((prod.get(i, j) - r5.get(i, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rel_rotation_negation_is_transpose() {
        let b = Real64;
        let s = theta_schedule(&b, 4, 10000.0).unwrap();
        let fwd = rel_rotation(&b, 5, &s).unwrap();
        let bwd = rel_rotation(&b, -5, &s).unwrap();
        assert_eq!(bwd, fwd.transpose());
    }

    #[test]
    fn floatp_group_law_within_tolerance() {
        let p = 16;
        let b = FloatPBackend::new(p).unwrap();
        let s = theta_schedule(&b, 4, 10000.0).unwrap();
        let ra = rel_rotation(&b, 2, &s).unwrap();
        let rb = rel_rotation(&b, 3, &s).unwrap();
        let rab = rel_rotation(&b, 5, &s).unwrap();
        let prod = matmul(&b, &ra, &rb).unwrap();
        let tol = 8.0 * 2f64.powi(-(p as i32));
        for i in 0..4 {
            for j in 0..4 {
                let diff = (b.to_f64(prod.get(i, j)) - b.to_f64(rab.get(i, j))).abs();
                assert!(diff <= tol, "entry ({i},{j}) differs by {diff}");
            }
        }
    }

    #[test]
    fn orthogonality_over_random_offsets() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(19);
        let p = 16;
        let fb = FloatPBackend::new(p).unwrap();
        let rb = Real64;
        for _ in 0..100 {
            let d = 2 * rng.gen_range(1..=4usize);
            let m = rng.gen_range(-50i64..=50);
            let tol_f = 8.0 * 2f64.powi(-(p as i32));
            let sched_f = theta_schedule(&fb, d, 10_000.0).unwrap();
            let r = rel_rotation(&fb, m, &sched_f).unwrap();
            let prod = matmul(&fb, &r.transpose(), &r).unwrap();
            let sched_r = theta_schedule(&rb, d, 10_000.0).unwrap();
            let rr = rel_rotation(&rb, m, &sched_r).unwrap();
            let prod_r = matmul(&rb, &rr.transpose(), &rr).unwrap();
            for i in 0..d {
                for j in 0..d {
                    let want = if i == j { 1.0 } else { 0.0 };
                    let got = fb.to_f64(prod.get(i, j));
                    assert!((got - want).abs() <= tol_f, "float backend m={m} d={d}");
                    assert!((prod_r.get(i, j) - want).abs() <= 1e-12, "double backend m={m} d={d}");
                }
            }
        }
    }

    #[test]
    fn sin_squared_plus_cos_squared_floatp() {
        let p = 16;
        let b = FloatPBackend::new(p).unwrap();
        for x in [-3.0, -0.4, 0.0, 0.9, 2.2, 14.0] {
            let (s, c) = sin_cos_approx(&b, &b.from_f64(x).unwrap()).unwrap();
            let (sf, cf) = (b.to_f64(&s), b.to_f64(&c));
            let pyth = sf * sf + cf * cf;
            assert!((pyth - 1.0).abs() <= 4.0 * 2f64.powi(-(p as i32)), "at {x}: {pyth}");
        }
    }
}
