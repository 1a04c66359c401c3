//! The toy classifier: token embedding, optional learned position
//! embedding, a stack of tensor-attention layers, and a linear readout of
//! the last position.
//!
//! Training always runs in native doubles; [`classify_generic`] re-runs the
//! same architecture through the generic layer implementations on any
//! backend, which is both the float-semantics inference path and a
//! consistency check against the fast path.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::attncore::{self, AttnKind, AttnParams, GKind, LayerSpec, MlpParams, TfSpec};
use crate::backend::{Backend, Real64};
use crate::error::{Error, Result};
use crate::ropeenc::{self, ThetaSchedule};
use crate::tensora::Matrix;

pub const NUM_CLASSES: usize = 2;

/// Architecture of one layer as written in configs.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct LayerConfig {
    pub kind: AttnKind,
    pub g: GKind,
}

/// Model shape as written in configs and weight files.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ModelConfig {
    pub vocab: usize,
    pub d: usize,
    pub max_n: usize,
    #[serde(default)]
    pub pos_embedding: bool,
    #[serde(default = "default_theta_base")]
    pub theta_base: f64,
    #[serde(default = "default_g0")]
    pub g0: GKind,
    pub layers: Vec<LayerConfig>,
}

fn default_theta_base() -> f64 {
    10_000.0
}

fn default_g0() -> GKind {
    GKind::Identity
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab == 0 || self.d == 0 || self.max_n == 0 {
            return Err(Error::ShapeMismatch(
                "vocab, d, and max_n must be positive".into(),
            ));
        }
        if self.max_n > attncore::MAX_N_PLAIN {
            return Err(Error::ShapeMismatch(format!(
                "max_n {} exceeds the sequence cap {}",
                self.max_n,
                attncore::MAX_N_PLAIN
            )));
        }
        let has_rope = self.layers.iter().any(|l| l.kind == AttnKind::RopeTensorAttn);
        if has_rope && self.d % 2 != 0 {
            return Err(Error::BadDimension(self.d));
        }
        if has_rope && self.max_n > attncore::MAX_N_ROPE {
            return Err(Error::ShapeMismatch(format!(
                "max_n {} exceeds the rotary sequence cap {}",
                self.max_n,
                attncore::MAX_N_ROPE
            )));
        }
        if self.g0 != GKind::Identity {
            // the trainable classifier keeps no weights or caches for a
            // leading block; the generic layer stack supports one
            return Err(Error::ShapeMismatch(
                "the leading block must be the identity for trained models".into(),
            ));
        }
        Ok(())
    }
}

/// Weights of one layer.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct LayerWeights {
    pub w_q: Matrix<f64>,
    pub w_k1: Matrix<f64>,
    pub w_k2: Matrix<f64>,
    pub w_v1: Matrix<f64>,
    pub w_v2: Matrix<f64>,
    pub mlp_w: Option<Matrix<f64>>,
    pub mlp_b: Option<Vec<f64>>,
}

/// The full classifier.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ClassifierModel {
    pub config: ModelConfig,
    pub emb: Matrix<f64>,
    pub pos: Option<Matrix<f64>>,
    pub layers: Vec<LayerWeights>,
    pub readout_w: Matrix<f64>,
    pub readout_b: Vec<f64>,
    /// Depth expression of one traced forward pass, recorded at save time.
    #[serde(default)]
    pub depth: String,
}

impl ClassifierModel {
    /// Deterministic initialization: every weight uniform in
    /// `[-1/sqrt(d), 1/sqrt(d)]`, biases zero.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let scale = 1.0 / (config.d as f64).sqrt();
        let mut uniform =
            move |rows: usize, cols: usize| -> Result<Matrix<f64>> {
                Matrix::try_from_fn(rows, cols, |_, _| Ok(rng.gen_range(-scale..=scale)))
            };
        let emb = uniform(config.vocab, config.d)?;
        let pos = if config.pos_embedding {
            Some(uniform(config.max_n, config.d)?)
        } else {
            None
        };
        let mut layers = Vec::with_capacity(config.layers.len());
        for lc in &config.layers {
            let needs_mlp = matches!(lc.g, GKind::Mlp | GKind::MlpThenLayerNorm);
            let (mlp_w, mlp_b) = if needs_mlp {
                (Some(uniform(config.d, config.d)?), Some(vec![0.0; config.d]))
            } else {
                (None, None)
            };
            layers.push(LayerWeights {
                w_q: uniform(config.d, config.d)?,
                w_k1: uniform(config.d, config.d)?,
                w_k2: uniform(config.d, config.d)?,
                w_v1: uniform(config.d, config.d)?,
                w_v2: uniform(config.d, config.d)?,
                mlp_w,
                mlp_b,
            });
        }
        let readout_w = uniform(NUM_CLASSES, config.d)?;
        Ok(ClassifierModel {
            config,
            emb,
            pos,
            layers,
            readout_w,
            readout_b: vec![0.0; NUM_CLASSES],
            depth: String::new(),
        })
    }

    pub fn save_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load_json(json: &str) -> Result<Self> {
        let model: ClassifierModel = serde_json::from_str(json)?;
        model.config.validate()?;
        Ok(model)
    }

    pub fn theta(&self) -> Result<Option<ThetaSchedule<f64>>> {
        if self.config.layers.iter().any(|l| l.kind == AttnKind::RopeTensorAttn) {
            Ok(Some(ropeenc::theta_schedule(
                &Real64,
                self.config.d,
                self.config.theta_base,
            )?))
        } else {
            Ok(None)
        }
    }

    /// The architecture as a generic layer stack over backend `B`.
    pub fn to_spec<B: Backend>(&self, b: &B) -> Result<TfSpec<B::Elem>> {
        let conv = |m: &Matrix<f64>| m.try_map(|v| b.from_f64(*v));
        let mut layers = Vec::with_capacity(self.layers.len());
        for (lw, lc) in self.layers.iter().zip(&self.config.layers) {
            let mlp = match (&lw.mlp_w, &lw.mlp_b) {
                (Some(w), Some(bias)) => Some(MlpParams {
                    w: conv(w)?,
                    b: bias.iter().map(|v| b.from_f64(*v)).collect::<Result<_>>()?,
                }),
                _ => None,
            };
            layers.push(LayerSpec {
                kind: lc.kind,
                attn: AttnParams {
                    w_q: conv(&lw.w_q)?,
                    w_k1: conv(&lw.w_k1)?,
                    w_k2: conv(&lw.w_k2)?,
                    w_v1: conv(&lw.w_v1)?,
                    w_v2: conv(&lw.w_v2)?,
                },
                g: lc.g,
                mlp,
            });
        }
        let theta = match self.theta()? {
            Some(sched) => Some(ThetaSchedule::from_thetas(
                self.config.d,
                sched
                    .thetas()
                    .iter()
                    .map(|t| b.from_f64(*t))
                    .collect::<Result<Vec<_>>>()?,
            )?),
            None => None,
        };
        Ok(TfSpec {
            d: self.config.d,
            g0: self.config.g0,
            g0_mlp: None,
            layers,
            theta,
        })
    }

    /// Token rows plus position rows, on any backend.
    pub fn embed_generic<B: Backend>(&self, b: &B, tokens: &[usize]) -> Result<Matrix<B::Elem>> {
        if tokens.is_empty() {
            return Err(Error::EmptyInput);
        }
        if tokens.len() > self.config.max_n {
            return Err(Error::ShapeMismatch(format!(
                "sequence of {} tokens exceeds max_n {}",
                tokens.len(),
                self.config.max_n
            )));
        }
        Matrix::try_from_fn(tokens.len(), self.config.d, |i, j| {
            let tok = tokens[i];
            if tok >= self.config.vocab {
                return Err(Error::DataFormatError(format!(
                    "token id {tok} outside vocabulary of {}",
                    self.config.vocab
                )));
            }
            let mut v = b.from_f64(*self.emb.get(tok, j))?;
            if let Some(pos) = &self.pos {
                v = b.add(&v, &b.from_f64(*pos.get(i, j))?)?;
            }
            Ok(v)
        })
    }
}

/// Generic forward pass through the shared layer implementations: returns
/// the two class logits. This is the float-semantics inference path.
pub fn classify_generic<B: Backend>(
    b: &B,
    model: &ClassifierModel,
    tokens: &[usize],
) -> Result<[f64; NUM_CLASSES]> {
    let spec = model.to_spec(b)?;
    let x = model.embed_generic(b, tokens)?;
    let eps = attncore::default_eps(b, b.precision())?;
    let h = attncore::tf_forward(b, &x, &spec, &eps, None)?;
    let last = h.row(h.rows() - 1);
    let mut logits = [0.0f64; NUM_CLASSES];
    for (c, logit) in logits.iter_mut().enumerate() {
        let mut terms = Vec::with_capacity(model.config.d);
        for (j, xj) in last.iter().enumerate() {
            terms.push(b.mul(&b.from_f64(*model.readout_w.get(c, j))?, xj)?);
        }
        let dot = b.iter_add(&terms)?;
        *logit = b.to_f64(&b.add(&dot, &b.from_f64(model.readout_b[c])?)?);
    }
    Ok(logits)
}

/// Cached intermediates of the fast forward pass, enough for the backward
/// pass.
#[derive(Clone, Debug, Default)]
pub struct LayerCache {
    pub x_in: Matrix64,
    pub q: Matrix64,
    pub k1: Matrix64,
    pub k2: Matrix64,
    pub v1: Matrix64,
    pub v2: Matrix64,
    /// Exponentiated scores, `n × n²`.
    pub a: Matrix64,
    pub row_sums: Vec<f64>,
    pub av: Matrix64,
    pub attn_out: Matrix64,
    /// Rotary layers: rotation matrix per offset index `o = offset + n-1`.
    pub rotations: Vec<Matrix64>,
    /// Rotary layers: `rot_k1[o][j]` = rotation(o) · k1 row j.
    pub rot_k1: Vec<Vec<Vec<f64>>>,
    pub rot_k2: Vec<Vec<Vec<f64>>>,
    /// Block caches, present when the block runs.
    pub mlp_in: Option<Matrix64>,
    pub ln_in: Option<Matrix64>,
    pub ln_scale: Vec<f64>,
    pub ln_hat: Option<Matrix64>,
}

pub type Matrix64 = Matrix<f64>;

#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub tokens: Vec<usize>,
    pub x0: Matrix64,
    pub layers: Vec<LayerCache>,
    pub last_hidden: Vec<f64>,
    pub logits: [f64; NUM_CLASSES],
    pub probs: [f64; NUM_CLASSES],
}

impl Default for Matrix64 {
    fn default() -> Self {
        Matrix::new(1, 1, vec![0.0]).expect("1x1 is valid")
    }
}

pub(crate) fn matmul64(x: &Matrix64, y: &Matrix64) -> Matrix64 {
    debug_assert_eq!(x.cols(), y.rows());
    Matrix::from_fn(x.rows(), y.cols(), |i, j| {
        let mut acc = 0.0;
        for k in 0..x.cols() {
            acc += x.get(i, k) * y.get(k, j);
        }
        acc
    })
    .expect("shapes already checked")
}

fn col_kron64(x: &Matrix64, y: &Matrix64) -> Matrix64 {
    let n1 = x.rows();
    Matrix::from_fn(n1 * y.rows(), x.cols(), |i, j| x.get(i % n1, j) * y.get(i / n1, j))
        .expect("shapes already checked")
}

/// Layer-norm guard for the fast path.
pub const LN_EPS: f64 = 1e-5;

pub(crate) fn layer_norm64(x: &Matrix64) -> (Vec<f64>, Matrix64) {
    let (n, d) = (x.rows(), x.cols());
    let mut scale = Vec::with_capacity(n);
    let mut hat = Matrix::from_fn(n, d, |_, _| 0.0).unwrap();
    for i in 0..n {
        let mean = x.row(i).iter().sum::<f64>() / d as f64;
        let var = x.row(i).iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let s = (var + LN_EPS).sqrt();
        scale.push(s);
        for j in 0..d {
            hat.set(i, j, (x.get(i, j) - mean) / s);
        }
    }
    (scale, hat)
}

fn rotate_rows(rotations: &[Matrix64], src: &Matrix64) -> Vec<Vec<Vec<f64>>> {
    let (n, d) = (src.rows(), src.cols());
    rotations
        .iter()
        .map(|rot| {
            (0..n)
                .map(|j| {
                    (0..d)
                        .map(|l| (0..d).map(|m| rot.get(l, m) * src.get(j, m)).sum())
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Fast forward pass with full caching.
pub fn classify_forward(model: &ClassifierModel, tokens: &[usize]) -> Result<ForwardCache> {
    let d = model.config.d;
    let n = tokens.len();
    let x0 = model.embed_generic(&Real64, tokens)?;
    let theta = model.theta()?;
    let mut layers = Vec::with_capacity(model.layers.len());
    let mut x = x0.clone();

    for (lw, lc) in model.layers.iter().zip(&model.config.layers) {
        let mut cache = LayerCache { x_in: x.clone(), ..Default::default() };
        cache.q = matmul64(&x, &lw.w_q);
        cache.k1 = matmul64(&x, &lw.w_k1);
        cache.k2 = matmul64(&x, &lw.w_k2);
        cache.v1 = matmul64(&x, &lw.w_v1);
        cache.v2 = matmul64(&x, &lw.w_v2);
        let v = col_kron64(&cache.v1, &cache.v2);

        let mut scores = Matrix::from_fn(n, n * n, |_, _| 0.0).unwrap();
        match lc.kind {
            AttnKind::PlainTensorAttn => {
                let k = col_kron64(&cache.k1, &cache.k2);
                for j1 in 0..n {
                    for c in 0..n * n {
                        let mut acc = 0.0;
                        for l in 0..d {
                            acc += cache.q.get(j1, l) * k.get(c, l);
                        }
                        scores.set(j1, c, acc / d as f64);
                    }
                }
            }
            AttnKind::RopeTensorAttn => {
                let sched = theta.as_ref().expect("validated at construction");
                let offsets = 2 * n - 1;
                cache.rotations = (0..offsets)
                    .map(|o| {
                        ropeenc::rel_rotation(&Real64, o as i64 - (n as i64 - 1), sched)
                    })
                    .collect::<Result<_>>()?;
                cache.rot_k1 = rotate_rows(&cache.rotations, &cache.k1);
                cache.rot_k2 = rotate_rows(&cache.rotations, &cache.k2);
                let oi = |j1: usize, j2: usize| j1 + n - 1 - j2;
                for j1 in 0..n {
                    for j3 in 0..n {
                        for j2 in 0..n {
                            let a = &cache.rot_k1[oi(j1, j2)][j2];
                            let bvec = &cache.rot_k2[oi(j1, j3)][j3];
                            let mut acc = 0.0;
                            for l in 0..d {
                                acc += cache.q.get(j1, l) * a[l] * bvec[l];
                            }
                            scores.set(j1, j2 + j3 * n, acc / d as f64);
                        }
                    }
                }
            }
        }

        cache.a = scores.map(|s| s.exp());
        cache.row_sums = (0..n)
            .map(|i| cache.a.row(i).iter().sum::<f64>())
            .collect();
        if cache.row_sums.iter().any(|s| *s == 0.0) {
            return Err(Error::DegenerateRow { row: 0 });
        }
        cache.av = matmul64(&cache.a, &v);
        cache.attn_out =
            Matrix::from_fn(n, d, |i, j| cache.av.get(i, j) / cache.row_sums[i]).unwrap();

        // trailing block
        let mut h = cache.attn_out.clone();
        if matches!(lc.g, GKind::Mlp | GKind::MlpThenLayerNorm) {
            cache.mlp_in = Some(h.clone());
            let w = lw.mlp_w.as_ref().expect("validated at init");
            let bias = lw.mlp_b.as_ref().expect("validated at init");
            let wx = matmul64(&h, &w.transpose());
            h = Matrix::from_fn(n, d, |i, j| wx.get(i, j) + bias[j]).unwrap();
        }
        if matches!(lc.g, GKind::LayerNorm | GKind::MlpThenLayerNorm) {
            cache.ln_in = Some(h.clone());
            let (scale, hat) = layer_norm64(&h);
            cache.ln_scale = scale;
            cache.ln_hat = Some(hat.clone());
            h = hat;
        }
        layers.push(cache);
        x = h;
    }

    let last_hidden = x.row(n - 1).to_vec();
    let mut logits = [0.0f64; NUM_CLASSES];
    for (c, logit) in logits.iter_mut().enumerate() {
        *logit = model.readout_b[c]
            + (0..d).map(|j| model.readout_w.get(c, j) * last_hidden[j]).sum::<f64>();
    }
    let mx = logits[0].max(logits[1]);
    let z: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
    let probs = [(logits[0] - mx).exp() / z, (logits[1] - mx).exp() / z];

    Ok(ForwardCache { tokens: tokens.to_vec(), x0, layers, last_hidden, logits, probs })
}

/// Cross-entropy of the cached forward pass against a binary label.
pub fn loss_of(cache: &ForwardCache, label: u8) -> f64 {
    -(cache.probs[label as usize].max(1e-300)).ln()
}
