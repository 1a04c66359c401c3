//! Tensor-attention layers and the blocks around them.
//!
//! A layer scores every ordered token pair against every query position:
//! the score matrix `A` is `n×n²`, with column `j2 + j3·n` holding the
//! interaction of the pair `(j2, j3)`. The plain variant exponentiates
//! `Q·(K1 ⊘ K2)ᵀ/d`; the rotary variant inserts the relative rotation
//! `R(j1-j2) ⊖ R(j1-j3)` between the query row and the row of `K1 ⊗ K2`.
//! Values are combined through the projection swap rule, and rows are
//! normalized by their sums, so each output row is a convex combination of
//! value rows.
//!
//! Every constructor of an `n²`-sized intermediate is capped: plain layers
//! accept `n <= 64`, rotary layers `n <= 32`.
//!
//! When a [`StageTracer`] is supplied, the evaluation additionally advances
//! the depth clock stage by stage. The staging follows the closed-form
//! accounting: projection groups are sequential stages; the row
//! normalization is accounted as a product by the diagonal inverse of the
//! row sums (cost `d_std + d_oplus`), with the scalar inversion folded into
//! that stage; a traced `g` block costs the opaque `d_g` regardless of its
//! internal shape.

use crate::backend::Backend;
use crate::depthlog::{DepthExpr, DepthSym, StageTracer};
use crate::error::{Error, Result};
use crate::ropeenc::{self, ThetaSchedule};
use crate::tensora::{self, Matrix};

/// Sequence-length cap for plain layers.
pub const MAX_N_PLAIN: usize = 64;
/// Sequence-length cap for rotary layers.
pub const MAX_N_ROPE: usize = 32;

/// Projection weights of one attention layer (all `d×d`).
#[derive(Clone, Debug, PartialEq)]
pub struct AttnParams<T> {
    pub w_q: Matrix<T>,
    pub w_k1: Matrix<T>,
    pub w_k2: Matrix<T>,
    pub w_v1: Matrix<T>,
    pub w_v2: Matrix<T>,
}

impl<T: Clone> AttnParams<T> {
    pub fn dim(&self) -> Result<usize> {
        let d = self.w_q.rows();
        for (name, m) in [
            ("w_q", &self.w_q),
            ("w_k1", &self.w_k1),
            ("w_k2", &self.w_k2),
            ("w_v1", &self.w_v1),
            ("w_v2", &self.w_v2),
        ] {
            if m.rows() != d || m.cols() != d {
                return Err(Error::ShapeMismatch(format!(
                    "{name} must be {d}x{d}, got {}x{}",
                    m.rows(),
                    m.cols()
                )));
            }
        }
        Ok(d)
    }
}

/// MLP block parameters: row map `x -> W·x + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams<T> {
    pub w: Matrix<T>,
    pub b: Vec<T>,
}

/// The non-attention block attached to a layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GKind {
    Identity,
    Mlp,
    LayerNorm,
    MlpThenLayerNorm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttnKind {
    PlainTensorAttn,
    RopeTensorAttn,
}

/// One layer: an attention kind plus its trailing block.
#[derive(Clone, Debug)]
pub struct LayerSpec<T> {
    pub kind: AttnKind,
    pub attn: AttnParams<T>,
    pub g: GKind,
    pub mlp: Option<MlpParams<T>>,
}

/// A whole model: `g_m ∘ Attn_m ∘ … ∘ g_1 ∘ Attn_1 ∘ g_0`.
#[derive(Clone, Debug)]
pub struct TfSpec<T> {
    pub d: usize,
    pub g0: GKind,
    pub g0_mlp: Option<MlpParams<T>>,
    pub layers: Vec<LayerSpec<T>>,
    pub theta: Option<ThetaSchedule<T>>,
}

fn matmul_cost() -> DepthExpr {
    DepthExpr::linear(&[(DepthSym::Std, 1), (DepthSym::IterAdd, 1)])
}

fn check_seq_len(n: usize, cap: usize) -> Result<()> {
    if n == 0 || n > cap {
        return Err(Error::ShapeMismatch(format!(
            "sequence length {n} outside 1..={cap}"
        )));
    }
    Ok(())
}

/// Rejects scores beyond the backend's bound before exponentiation.
fn check_logit<B: Backend>(b: &B, logit: &B::Elem) -> Result<()> {
    let Some(limit) = b.score_bound() else {
        return Ok(());
    };
    let bound = b.from_i64(limit)?;
    let mag = if b.compare(logit, &b.zero())? == std::cmp::Ordering::Less {
        b.neg(logit)
    } else {
        logit.clone()
    };
    if b.compare(&mag, &bound)? == std::cmp::Ordering::Greater {
        return Err(Error::RangeError(format!(
            "attention score {:?} exceeds |x| <= {limit}",
            logit
        )));
    }
    Ok(())
}

/// Scales every entry by `1/d` and exponentiates, with the score check.
fn exp_scores<B: Backend>(b: &B, scores: &Matrix<B::Elem>, d: usize) -> Result<Matrix<B::Elem>> {
    let dim = b.from_i64(d as i64)?;
    scores.try_map(|s| {
        let scaled = b.div(s, &dim)?;
        check_logit(b, &scaled)?;
        b.exp(&scaled)
    })
}

/// Plain attention score matrix: `exp(Q·(K1 ⊘ K2)ᵀ/d)`, shape `n×n²`.
pub fn attn_matrix_plain<B: Backend>(
    b: &B,
    x: &Matrix<B::Elem>,
    params: &AttnParams<B::Elem>,
    mut tracer: Option<&mut StageTracer>,
) -> Result<Matrix<B::Elem>> {
    let d = params.dim()?;
    check_seq_len(x.rows(), MAX_N_PLAIN)?;
    if x.cols() != d {
        return Err(Error::ShapeMismatch(format!(
            "input is {}x{}, weights are {d}x{d}",
            x.rows(),
            x.cols()
        )));
    }
    let q = tensora::matmul(b, x, &params.w_q)?;
    let k1 = tensora::matmul(b, x, &params.w_k1)?;
    let k2 = tensora::matmul(b, x, &params.w_k2)?;
    if let Some(tr) = tracer.as_deref_mut() {
        tr.stage("token projections", matmul_cost());
    }
    let k = tensora::col_kron(b, &k1, &k2)?;
    if let Some(tr) = tracer.as_deref_mut() {
        tr.stage("pairwise key product", DepthExpr::sym(DepthSym::Std));
    }
    let scores = tensora::matmul(b, &q, &k.transpose())?;
    if let Some(tr) = tracer.as_deref_mut() {
        tr.stage("score contraction", matmul_cost());
    }
    if let Some(tr) = tracer.as_deref_mut() {
        tr.stage("scale by dimension", DepthExpr::sym(DepthSym::Std));
    }
    let a = exp_scores(b, &scores, d)?;
    if let Some(tr) = tracer.as_deref_mut() {
        tr.stage("exponentiate", DepthExpr::sym(DepthSym::Exp));
    }
    Ok(a)
}

/// Rotary attention score matrix, shape `n×n²`: entry `(j1, j2 + j3·n)` is
/// `exp(Q[j1,:] · (R(j1-j2) ⊖ R(j1-j3)) · K[j2+j3·n,:]ᵀ / d)` with
/// `K = K1 ⊗ K2`.
pub fn attn_matrix_rope<B: Backend>(
    b: &B,
    x: &Matrix<B::Elem>,
    params: &AttnParams<B::Elem>,
    sched: &ThetaSchedule<B::Elem>,
    mut tracer: Option<&mut StageTracer>,
) -> Result<Matrix<B::Elem>> {
    let d = params.dim()?;
    let n = x.rows();
    check_seq_len(n, MAX_N_ROPE)?;
    if x.cols() != d || sched.dim() != d {
        return Err(Error::ShapeMismatch(format!(
            "input {}x{}, weights {d}x{d}, schedule dim {}",
            n,
            x.cols(),
            sched.dim()
        )));
    }
    let q = tensora::matmul(b, x, &params.w_q)?;
    if let Some(tr) = tracer.as_deref_mut() {
        tr.stage("query projection", matmul_cost());
    }
    let k1 = tensora::matmul(b, x, &params.w_k1)?;
    let k2 = tensora::matmul(b, x, &params.w_k2)?;
    if let Some(tr) = tracer.as_deref_mut() {
        tr.stage("key projections", matmul_cost());
    }
    // one rotation matrix per offset in -(n-1)..=(n-1)
    let mut rotations = Vec::with_capacity(2 * n - 1);
    for offset in -(n as i64 - 1)..=(n as i64 - 1) {
        rotations.push(ropeenc::rel_rotation(b, offset, sched)?);
    }
    let rot = |offset: i64| &rotations[(offset + n as i64 - 1) as usize];
    if let Some(tr) = tracer.as_deref_mut() {
        tr.stage("rotation trig", DepthExpr::sym(DepthSym::Trig));
    }
    if let Some(tr) = tracer.as_deref_mut() {
        tr.stage("pairwise rotation product", DepthExpr::sym(DepthSym::Std));
    }
    let k = tensora::kron(b, &k1, &k2)?;
    if let Some(tr) = tracer.as_deref_mut() {
        tr.stage("key tensor product", DepthExpr::sym(DepthSym::Std));
    }

    let dim = b.from_i64(d as i64)?;
    let mut scores = tensora::zeros(b, n, n * n)?;
    for j1 in 0..n {
        let q_row = Matrix::new(1, d, q.row(j1).to_vec())?;
        for j3 in 0..n {
            let rb = rot(j1 as i64 - j3 as i64);
            for j2 in 0..n {
                let ra = rot(j1 as i64 - j2 as i64);
                let pair_rot = tensora::row_kron(b, ra, rb)?;
                let rotated = tensora::matmul(b, &q_row, &pair_rot)?;
                let col = j2 + j3 * n;
                let key_col = Matrix::new(d * d, 1, k.row(col).to_vec())?;
                let s = tensora::matmul(b, &rotated, &key_col)?;
                let scaled = b.div(s.get(0, 0), &dim)?;
                check_logit(b, &scaled)?;
                scores.set(j1, col, scaled);
            }
        }
    }
    if let Some(tr) = tracer.as_deref_mut() {
        tr.stage("rotate query", matmul_cost());
        tr.stage("score contraction", matmul_cost());
        tr.stage("scale by dimension", DepthExpr::sym(DepthSym::Std));
    }
    let a = scores.try_map(|s| b.exp(s))?;
    if let Some(tr) = tracer.as_deref_mut() {
        tr.stage("exponentiate", DepthExpr::sym(DepthSym::Exp));
    }
    Ok(a)
}

/// Row sums of the score matrix; every sum must be nonzero.
fn row_sums<B: Backend>(b: &B, a: &Matrix<B::Elem>) -> Result<Vec<B::Elem>> {
    (0..a.rows())
        .map(|i| {
            let s = b.iter_add(a.row(i))?;
            if b.is_zero(&s) {
                return Err(Error::DegenerateRow { row: i });
            }
            Ok(s)
        })
        .collect()
}

/// `D^{-1}·A·V` given the score matrix and combined values.
fn normalize_and_combine<B: Backend>(
    b: &B,
    a: &Matrix<B::Elem>,
    v: &Matrix<B::Elem>,
    mut tracer: Option<&mut StageTracer>,
) -> Result<Matrix<B::Elem>> {
    let sums = row_sums(b, a)?;
    if let Some(tr) = tracer.as_deref_mut() {
        tr.stage("row sums", DepthExpr::sym(DepthSym::IterAdd));
    }
    let av = tensora::matmul(b, a, v)?;
    if let Some(tr) = tracer.as_deref_mut() {
        tr.stage("combine values", matmul_cost());
    }
    let out = Matrix::try_from_fn(av.rows(), av.cols(), |i, j| b.div(av.get(i, j), &sums[i]))?;
    if let Some(tr) = tracer.as_deref_mut() {
        tr.stage("normalize rows", matmul_cost());
    }
    Ok(out)
}

/// One attention layer: scores, value combination, row normalization.
pub fn attn_layer<B: Backend>(
    b: &B,
    x: &Matrix<B::Elem>,
    spec: &LayerSpec<B::Elem>,
    sched: Option<&ThetaSchedule<B::Elem>>,
    mut tracer: Option<&mut StageTracer>,
) -> Result<Matrix<B::Elem>> {
    match spec.kind {
        AttnKind::PlainTensorAttn => {
            // the five projections form a single parallel stage, so the
            // value projection happens here rather than after the scores
            let d = spec.attn.dim()?;
            check_seq_len(x.rows(), MAX_N_PLAIN)?;
            if x.cols() != d {
                return Err(Error::ShapeMismatch(format!(
                    "input is {}x{}, weights are {d}x{d}",
                    x.rows(),
                    x.cols()
                )));
            }
            let q = tensora::matmul(b, x, &spec.attn.w_q)?;
            let k1 = tensora::matmul(b, x, &spec.attn.w_k1)?;
            let k2 = tensora::matmul(b, x, &spec.attn.w_k2)?;
            let v1 = tensora::matmul(b, x, &spec.attn.w_v1)?;
            let v2 = tensora::matmul(b, x, &spec.attn.w_v2)?;
            if let Some(tr) = tracer.as_deref_mut() {
                tr.stage("token projections", matmul_cost());
            }
            let k = tensora::col_kron(b, &k1, &k2)?;
            let v = tensora::col_kron(b, &v1, &v2)?;
            if let Some(tr) = tracer.as_deref_mut() {
                tr.stage("pairwise products", DepthExpr::sym(DepthSym::Std));
            }
            let scores = tensora::matmul(b, &q, &k.transpose())?;
            if let Some(tr) = tracer.as_deref_mut() {
                tr.stage("score contraction", matmul_cost());
                tr.stage("scale by dimension", DepthExpr::sym(DepthSym::Std));
            }
            let a = exp_scores(b, &scores, d)?;
            if let Some(tr) = tracer.as_deref_mut() {
                tr.stage("exponentiate", DepthExpr::sym(DepthSym::Exp));
            }
            normalize_and_combine(b, &a, &v, tracer)
        }
        AttnKind::RopeTensorAttn => {
            let sched = sched.ok_or_else(|| {
                Error::ShapeMismatch("rotary layer needs a frequency schedule".into())
            })?;
            let a = attn_matrix_rope(b, x, &spec.attn, sched, tracer.as_deref_mut())?;
            let sums = row_sums(b, &a)?;
            if let Some(tr) = tracer.as_deref_mut() {
                tr.stage("row sums", DepthExpr::sym(DepthSym::IterAdd));
            }
            let v1 = tensora::matmul(b, x, &spec.attn.w_v1)?;
            let v2 = tensora::matmul(b, x, &spec.attn.w_v2)?;
            if let Some(tr) = tracer.as_deref_mut() {
                tr.stage("value projections", matmul_cost());
            }
            let v = tensora::col_kron(b, &v1, &v2)?;
            if let Some(tr) = tracer.as_deref_mut() {
                tr.stage("pairwise value product", DepthExpr::sym(DepthSym::Std));
            }
            let av = tensora::matmul(b, &a, &v)?;
            if let Some(tr) = tracer.as_deref_mut() {
                tr.stage("combine values", matmul_cost());
            }
            let out =
                Matrix::try_from_fn(av.rows(), av.cols(), |i, j| b.div(av.get(i, j), &sums[i]))?;
            if let Some(tr) = tracer.as_deref_mut() {
                tr.stage("normalize rows", matmul_cost());
            }
            Ok(out)
        }
    }
}

/// Default layer-norm guard against zero variance: `2^-ceil(p/2)` for the
/// float backend would be the natural choice; generic code passes the
/// epsilon explicitly, and these helpers build the conventional defaults.
pub fn default_eps<B: Backend>(b: &B, p: Option<u32>) -> Result<B::Elem> {
    match p {
        Some(p) => b.from_f64(2f64.powi(-(p.div_ceil(2) as i32))),
        None => b.from_f64(1e-5),
    }
}

/// Row-wise layer normalization: subtract the mean, divide by
/// `sqrt(variance + eps)`.
pub fn layer_norm<B: Backend>(
    b: &B,
    x: &Matrix<B::Elem>,
    eps: &B::Elem,
    mut tracer: Option<&mut StageTracer>,
) -> Result<Matrix<B::Elem>> {
    let (n, d) = (x.rows(), x.cols());
    if d < 2 {
        return Err(Error::ShapeMismatch(format!(
            "layer norm needs at least two features, got {d}"
        )));
    }
    let dim = b.from_i64(d as i64)?;
    let mut out = tensora::zeros(b, n, d)?;
    for i in 0..n {
        let sum = b.iter_add(x.row(i))?;
        let mean = b.div(&sum, &dim)?;
        let centered: Vec<B::Elem> = x
            .row(i)
            .iter()
            .map(|v| b.sub(v, &mean))
            .collect::<Result<_>>()?;
        let squares: Vec<B::Elem> =
            centered.iter().map(|c| b.mul(c, c)).collect::<Result<_>>()?;
        let var = b.div(&b.iter_add(&squares)?, &dim)?;
        // the epsilon guard is folded into the square-root step
        let scale = b.sqrt(&b.add(&var, eps)?)?;
        for j in 0..d {
            let re_centered = b.sub(x.get(i, j), &mean)?;
            out.set(i, j, b.div(&re_centered, &scale)?);
        }
    }
    if let Some(tr) = tracer.as_deref_mut() {
        tr.stage("mean sum", DepthExpr::sym(DepthSym::IterAdd));
        tr.stage("mean divide", DepthExpr::sym(DepthSym::Std));
        tr.stage("center", DepthExpr::sym(DepthSym::Std));
        tr.stage("square", DepthExpr::sym(DepthSym::Std));
        tr.stage("variance sum", DepthExpr::sym(DepthSym::IterAdd));
        tr.stage("variance divide", DepthExpr::sym(DepthSym::Std));
        tr.stage("root", DepthExpr::sym(DepthSym::Sqrt));
        tr.stage("re-center", DepthExpr::sym(DepthSym::Std));
        tr.stage("normalize", DepthExpr::sym(DepthSym::Std));
    }
    Ok(out)
}

/// Row-wise MLP: `x -> W·x + b`.
pub fn mlp<B: Backend>(
    b: &B,
    x: &Matrix<B::Elem>,
    params: &MlpParams<B::Elem>,
    mut tracer: Option<&mut StageTracer>,
) -> Result<Matrix<B::Elem>> {
    let d = x.cols();
    if params.w.rows() != d || params.w.cols() != d || params.b.len() != d {
        return Err(Error::ShapeMismatch(format!(
            "mlp weights {}x{} with bias {} against width {d}",
            params.w.rows(),
            params.w.cols(),
            params.b.len()
        )));
    }
    let wx = tensora::matmul(b, x, &params.w.transpose())?;
    if let Some(tr) = tracer.as_deref_mut() {
        tr.stage("affine map", matmul_cost());
    }
    let out = Matrix::try_from_fn(x.rows(), d, |i, j| b.add(wx.get(i, j), &params.b[j]))?;
    if let Some(tr) = tracer.as_deref_mut() {
        tr.stage("bias", DepthExpr::sym(DepthSym::Std));
    }
    Ok(out)
}

fn apply_g<B: Backend>(
    b: &B,
    x: Matrix<B::Elem>,
    g: GKind,
    mlp_params: Option<&MlpParams<B::Elem>>,
    eps: &B::Elem,
) -> Result<Matrix<B::Elem>> {
    let need_mlp = || {
        mlp_params.ok_or_else(|| Error::ShapeMismatch("block needs MLP parameters".into()))
    };
    match g {
        GKind::Identity => Ok(x),
        GKind::Mlp => mlp(b, &x, need_mlp()?, None),
        GKind::LayerNorm => layer_norm(b, &x, eps, None),
        GKind::MlpThenLayerNorm => {
            let y = mlp(b, &x, need_mlp()?, None)?;
            layer_norm(b, &y, eps, None)
        }
    }
}

/// A finished forward pass with its optional depth trace.
#[derive(Clone, Debug)]
pub struct TfRun<T> {
    pub output: Matrix<T>,
    trace: Option<DepthExpr>,
}

impl<T> TfRun<T> {
    pub fn depth(&self) -> Result<&DepthExpr> {
        self.trace.as_ref().ok_or(Error::TraceUnavailable)
    }
}

/// Multi-layer forward pass `g_m ∘ Attn_m ∘ … ∘ g_1 ∘ Attn_1 ∘ g_0`.
///
/// Under tracing, every `g_i` — including the identity — advances the clock
/// by the opaque block cost `d_g`, matching the closed-form accounting of
/// non-attention blocks.
pub fn tf_forward<B: Backend>(
    b: &B,
    x: &Matrix<B::Elem>,
    spec: &TfSpec<B::Elem>,
    eps: &B::Elem,
    mut tracer: Option<&mut StageTracer>,
) -> Result<Matrix<B::Elem>> {
    if x.cols() != spec.d {
        return Err(Error::ShapeMismatch(format!(
            "input width {} against model width {}",
            x.cols(),
            spec.d
        )));
    }
    let mut h = apply_g(b, x.clone(), spec.g0, spec.g0_mlp.as_ref(), eps)?;
    if let Some(tr) = tracer.as_deref_mut() {
        tr.stage("block g_0", DepthExpr::sym(DepthSym::Block));
    }
    for (i, layer) in spec.layers.iter().enumerate() {
        h = attn_layer(b, &h, layer, spec.theta.as_ref(), tracer.as_deref_mut())?;
        h = apply_g(b, h, layer.g, layer.mlp.as_ref(), eps)?;
        if let Some(tr) = tracer.as_deref_mut() {
            tr.stage(&format!("block g_{}", i + 1), DepthExpr::sym(DepthSym::Block));
        }
    }
    Ok(h)
}

/// Convenience wrapper that bundles the output with its trace.
pub fn run_tf<B: Backend>(
    b: &B,
    x: &Matrix<B::Elem>,
    spec: &TfSpec<B::Elem>,
    eps: &B::Elem,
    traced: bool,
) -> Result<TfRun<B::Elem>> {
    if traced {
        let mut tr = StageTracer::new();
        let output = tf_forward(b, x, spec, eps, Some(&mut tr))?;
        Ok(TfRun { output, trace: Some(tr.clock().clone()) })
    } else {
        let output = tf_forward(b, x, spec, eps, None)?;
        Ok(TfRun { output, trace: None })
    }
}
