//! Depth audits: run a component under tracing and compare the resulting
//! expression with the closed-form total it is designed to meet.
//!
//! Primitive matrix operations are traced scalar by scalar through
//! [`TracedScalar`] dataflow; composed layers run through the staged
//! evaluations in [`crate::attncore`]. Two of the layer components also
//! have a circulated variant total that differs by one `d_std`; the audit
//! reports the variant alongside without treating it as the target.

use super::{DepthExpr, DepthSym, StageTracer, TracedScalar};
use crate::attncore::{self, AttnKind, AttnParams, GKind, LayerSpec, MlpParams, TfSpec};
use crate::backend::Real64;
use crate::error::{Error, Result};
use crate::ropeenc;
use crate::tensora::Matrix;

/// An auditable component.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Component {
    Matmul,
    Kron,
    ColKron,
    RowKron,
    PlainLayer,
    RopeMatrix,
    RopeLayer,
    Mlp,
    LayerNorm,
    Tf(u32),
}

impl Component {
    pub fn name(&self) -> String {
        match self {
            Component::Matmul => "matmul".into(),
            Component::Kron => "kron".into(),
            Component::ColKron => "col-kron".into(),
            Component::RowKron => "row-kron".into(),
            Component::PlainLayer => "plain-layer".into(),
            Component::RopeMatrix => "rope-matrix".into(),
            Component::RopeLayer => "rope-layer".into(),
            Component::Mlp => "mlp".into(),
            Component::LayerNorm => "layernorm".into(),
            Component::Tf(m) => format!("tf[m={m}]"),
        }
    }

    pub fn parse(s: &str, m: u32) -> Result<Component> {
        Ok(match s {
            "matmul" => Component::Matmul,
            "kron" => Component::Kron,
            "col-kron" => Component::ColKron,
            "row-kron" => Component::RowKron,
            "plain-layer" => Component::PlainLayer,
            "rope-matrix" => Component::RopeMatrix,
            "rope-layer" => Component::RopeLayer,
            "mlp" => Component::Mlp,
            "layernorm" => Component::LayerNorm,
            "tf" => Component::Tf(m),
            other => {
                return Err(Error::DataFormatError(format!(
                    "unknown component {other:?}"
                )))
            }
        })
    }

    pub fn all(m: u32) -> Vec<Component> {
        vec![
            Component::Matmul,
            Component::Kron,
            Component::ColKron,
            Component::RowKron,
            Component::PlainLayer,
            Component::RopeMatrix,
            Component::RopeLayer,
            Component::Mlp,
            Component::LayerNorm,
            Component::Tf(m),
        ]
    }
}

use DepthSym::{Block, Exp, IterAdd, Sqrt, Std, Trig};

/// The closed-form depth total each component is built to meet.
pub fn expected_depth(c: &Component) -> DepthExpr {
    match c {
        Component::Matmul => DepthExpr::linear(&[(Std, 1), (IterAdd, 1)]),
        Component::Kron | Component::ColKron | Component::RowKron => DepthExpr::sym(Std),
        Component::PlainLayer => DepthExpr::linear(&[(Std, 6), (IterAdd, 5), (Exp, 1)]),
        Component::RopeMatrix => {
            DepthExpr::linear(&[(Std, 7), (IterAdd, 4), (Trig, 1), (Exp, 1)])
        }
        Component::RopeLayer => {
            DepthExpr::linear(&[(Std, 11), (IterAdd, 8), (Trig, 1), (Exp, 1)])
        }
        Component::Mlp => DepthExpr::linear(&[(Std, 2), (IterAdd, 1)]),
        Component::LayerNorm => DepthExpr::linear(&[(Std, 6), (IterAdd, 2), (Sqrt, 1)]),
        Component::Tf(m) => DepthExpr::sym(Block).seq(
            &DepthExpr::linear(&[(Std, 11), (IterAdd, 8), (Trig, 1), (Exp, 1)])
                .seq(&DepthExpr::sym(Block))
                .repeat(*m),
        ),
    }
}

/// Variant totals quoted for two components, one `d_std` lower than the
/// totals their own step-by-step accounting produces. Reported alongside
/// the audit as a documented discrepancy, never used as the target.
pub fn variant_depth(c: &Component) -> Option<DepthExpr> {
    match c {
        Component::PlainLayer => Some(DepthExpr::linear(&[(Std, 5), (IterAdd, 5), (Exp, 1)])),
        Component::LayerNorm => Some(DepthExpr::linear(&[(Std, 5), (IterAdd, 2), (Sqrt, 1)])),
        _ => None,
    }
}

type Traced = TracedScalar<f64>;

fn traced_leaf_matrix(m: &Matrix<f64>) -> Matrix<Traced> {
    m.map(|v| TracedScalar::leaf(*v))
}

fn max_depth(m: &Matrix<Traced>) -> Result<DepthExpr> {
    DepthExpr::par(m.data().iter().map(|t| &t.depth))
}

/// Scalar-dataflow matrix product over traced values.
fn traced_matmul(x: &Matrix<Traced>, y: &Matrix<Traced>) -> Result<Matrix<Traced>> {
    Matrix::try_from_fn(x.rows(), y.cols(), |i, j| {
        let terms: Vec<Traced> = (0..x.cols())
            .map(|k| {
                TracedScalar::apply(
                    &[x.get(i, k), y.get(k, j)],
                    Std,
                    x.get(i, k).value * y.get(k, j).value,
                )
            })
            .collect::<Result<_>>()?;
        let refs: Vec<&Traced> = terms.iter().collect();
        TracedScalar::apply(&refs, IterAdd, terms.iter().map(|t| t.value).sum())
    })
}

fn traced_entry_product(
    x: &Matrix<Traced>,
    y: &Matrix<Traced>,
    rows: usize,
    cols: usize,
    index: impl Fn(usize, usize) -> ((usize, usize), (usize, usize)),
) -> Result<Matrix<Traced>> {
    Matrix::try_from_fn(rows, cols, |i, j| {
        let ((xi, xj), (yi, yj)) = index(i, j);
        TracedScalar::apply(
            &[x.get(xi, xj), y.get(yi, yj)],
            Std,
            x.get(xi, xj).value * y.get(yi, yj).value,
        )
    })
}

fn fill(rows: usize, cols: usize, salt: usize) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |i, j| {
        (((i * 7 + j * 3 + salt * 5) % 11) as f64 - 5.0) / 40.0
    })
    .expect("audit shapes are small")
}

fn audit_params(d: usize) -> AttnParams<f64> {
    AttnParams {
        w_q: fill(d, d, 1),
        w_k1: fill(d, d, 2),
        w_k2: fill(d, d, 3),
        w_v1: fill(d, d, 4),
        w_v2: fill(d, d, 5),
    }
}

/// Runs the component at shape `(n, d)` under tracing and returns the
/// normalized depth of its outputs. The result must not depend on the
/// shape; the audit suite checks that by running two shapes.
pub fn audit(c: &Component, n: usize, d: usize) -> Result<DepthExpr> {
    let b = Real64;
    match c {
        Component::Matmul => {
            let x = traced_leaf_matrix(&fill(n, d, 0));
            let y = traced_leaf_matrix(&fill(d, n, 1));
            max_depth(&traced_matmul(&x, &y)?)
        }
        Component::Kron => {
            let x = traced_leaf_matrix(&fill(n, d, 0));
            let y = traced_leaf_matrix(&fill(n, d, 1));
            let (n1, d1) = (n, d);
            let out = traced_entry_product(&x, &y, n * n, d * d, |i, j| {
                ((i % n1, j % d1), (i / n1, j / d1))
            })?;
            max_depth(&out)
        }
        Component::ColKron => {
            let x = traced_leaf_matrix(&fill(n, d, 0));
            let y = traced_leaf_matrix(&fill(n, d, 1));
            let out =
                traced_entry_product(&x, &y, n * n, d, |i, j| ((i % n, j), (i / n, j)))?;
            max_depth(&out)
        }
        Component::RowKron => {
            let x = traced_leaf_matrix(&fill(n, d, 0));
            let y = traced_leaf_matrix(&fill(n, d, 1));
            let out =
                traced_entry_product(&x, &y, n, d * d, |i, j| ((i, j % d), (i, j / d)))?;
            max_depth(&out)
        }
        Component::PlainLayer => {
            let mut tr = StageTracer::new();
            let spec = LayerSpec {
                kind: AttnKind::PlainTensorAttn,
                attn: audit_params(d),
                g: GKind::Identity,
                mlp: None,
            };
            attncore::attn_layer(&b, &fill(n, d, 7), &spec, None, Some(&mut tr))?;
            Ok(tr.clock().clone())
        }
        Component::RopeMatrix => {
            let mut tr = StageTracer::new();
            let sched = ropeenc::theta_schedule(&b, d, 10_000.0)?;
            attncore::attn_matrix_rope(
                &b,
                &fill(n, d, 7),
                &audit_params(d),
                &sched,
                Some(&mut tr),
            )?;
            Ok(tr.clock().clone())
        }
        Component::RopeLayer => {
            let mut tr = StageTracer::new();
            let sched = ropeenc::theta_schedule(&b, d, 10_000.0)?;
            let spec = LayerSpec {
                kind: AttnKind::RopeTensorAttn,
                attn: audit_params(d),
                g: GKind::Identity,
                mlp: None,
            };
            attncore::attn_layer(&b, &fill(n, d, 7), &spec, Some(&sched), Some(&mut tr))?;
            Ok(tr.clock().clone())
        }
        Component::Mlp => {
            let mut tr = StageTracer::new();
            let params = MlpParams { w: fill(d, d, 2), b: vec![0.25; d] };
            attncore::mlp(&b, &fill(n, d, 7), &params, Some(&mut tr))?;
            Ok(tr.clock().clone())
        }
        Component::LayerNorm => {
            let mut tr = StageTracer::new();
            attncore::layer_norm(&b, &fill(n, d, 7), &1e-5, Some(&mut tr))?;
            Ok(tr.clock().clone())
        }
        Component::Tf(m) => {
            let mut tr = StageTracer::new();
            let sched = ropeenc::theta_schedule(&b, d, 10_000.0)?;
            let layers = (0..*m)
                .map(|i| LayerSpec {
                    kind: AttnKind::RopeTensorAttn,
                    attn: audit_params(d),
                    g: if i % 2 == 0 { GKind::Mlp } else { GKind::LayerNorm },
                    mlp: Some(MlpParams { w: fill(d, d, i as usize), b: vec![0.1; d] }),
                })
                .collect();
            let spec = TfSpec {
                d,
                g0: GKind::Identity,
                g0_mlp: None,
                layers,
                theta: Some(sched),
            };
            attncore::tf_forward(&b, &fill(n, d, 7), &spec, &1e-5, Some(&mut tr))?;
            Ok(tr.clock().clone())
        }
    }
}

/// One row of the audit table.
#[derive(Clone, Debug)]
pub struct AuditRow {
    pub component: String,
    pub traced: DepthExpr,
    pub expected: DepthExpr,
    pub variant: Option<DepthExpr>,
    pub matches: bool,
    pub residual_max: bool,
}

/// Audits components at shape `(n, d)`.
pub fn audit_table(components: &[Component], n: usize, d: usize) -> Result<Vec<AuditRow>> {
    components
        .iter()
        .map(|c| {
            let traced = audit(c, n, d)?;
            let expected = expected_depth(c);
            Ok(AuditRow {
                component: c.name(),
                matches: traced == expected,
                residual_max: !traced.is_linear(),
                variant: variant_depth(c),
                traced,
                expected,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primitive_audits_match() {
        assert_eq!(audit(&Component::Matmul, 3, 2).unwrap(), expected_depth(&Component::Matmul));
        for c in [Component::Kron, Component::ColKron, Component::RowKron] {
            assert_eq!(audit(&c, 3, 2).unwrap(), expected_depth(&c), "{}", c.name());
        }
    }

    #[test]
    fn layer_audits_match_and_are_shape_independent() {
        for c in [
            Component::PlainLayer,
            Component::RopeMatrix,
            Component::RopeLayer,
            Component::Mlp,
            Component::LayerNorm,
        ] {
            let at_small = audit(&c, 2, 2).unwrap();
            let at_large = audit(&c, 4, 4).unwrap();
            assert_eq!(at_small, expected_depth(&c), "{}", c.name());
            assert_eq!(at_small, at_large, "shape dependence in {}", c.name());
            assert!(at_small.is_linear(), "residual max in {}", c.name());
        }
    }

    #[test]
    fn tf_audit_matches_for_small_layer_counts() {
        for m in 1..=3u32 {
            let c = Component::Tf(m);
            assert_eq!(audit(&c, 2, 2).unwrap(), expected_depth(&c), "m={m}");
        }
    }

    #[test]
    fn variant_totals_differ_by_one_std() {
        let v = variant_depth(&Component::PlainLayer).unwrap();
        let e = expected_depth(&Component::PlainLayer);
        assert_ne!(v, e);
        assert_eq!(v.then(DepthSym::Std), e);
        assert!(variant_depth(&Component::Matmul).is_none());
    }
}
