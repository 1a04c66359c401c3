//! Analytic gradients of the classifier, hand-derived against the cached
//! forward pass and validated by central finite differences.

use crate::attncore::AttnKind;
use crate::tensora::Matrix;

use super::model::{
    matmul64, ClassifierModel, ForwardCache, Matrix64, NUM_CLASSES,
};

/// Gradients, shaped exactly like the trainable parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Grads {
    pub emb: Matrix64,
    pub pos: Option<Matrix64>,
    pub layers: Vec<LayerGrads>,
    pub readout_w: Matrix64,
    pub readout_b: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads {
    pub w_q: Matrix64,
    pub w_k1: Matrix64,
    pub w_k2: Matrix64,
    pub w_v1: Matrix64,
    pub w_v2: Matrix64,
    pub mlp_w: Option<Matrix64>,
    pub mlp_b: Option<Vec<f64>>,
}

fn zeros(rows: usize, cols: usize) -> Matrix64 {
    Matrix::from_fn(rows, cols, |_, _| 0.0).expect("gradient shapes are valid")
}

impl Grads {
    pub fn zeros_like(model: &ClassifierModel) -> Grads {
        let d = model.config.d;
        Grads {
            emb: zeros(model.config.vocab, d),
            pos: model.pos.as_ref().map(|p| zeros(p.rows(), p.cols())),
            layers: model
                .layers
                .iter()
                .map(|lw| LayerGrads {
                    w_q: zeros(d, d),
                    w_k1: zeros(d, d),
                    w_k2: zeros(d, d),
                    w_v1: zeros(d, d),
                    w_v2: zeros(d, d),
                    mlp_w: lw.mlp_w.as_ref().map(|_| zeros(d, d)),
                    mlp_b: lw.mlp_b.as_ref().map(|_| vec![0.0; d]),
                })
                .collect(),
            readout_w: zeros(NUM_CLASSES, d),
            readout_b: vec![0.0; NUM_CLASSES],
        }
    }

    /// Accumulates `other` scaled by `w`.
    pub fn add_scaled(&mut self, other: &Grads, w: f64) {
        for (a, b) in self.flat_mut().into_iter().zip(other.flat()) {
            *a += w * b;
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(self.emb.data());
        if let Some(p) = &self.pos {
            out.extend_from_slice(p.data());
        }
        for l in &self.layers {
            out.extend_from_slice(l.w_q.data());
            out.extend_from_slice(l.w_k1.data());
            out.extend_from_slice(l.w_k2.data());
            out.extend_from_slice(l.w_v1.data());
            out.extend_from_slice(l.w_v2.data());
            if let Some(w) = &l.mlp_w {
                out.extend_from_slice(w.data());
            }
            if let Some(b) = &l.mlp_b {
                out.extend_from_slice(b);
            }
        }
        out.extend_from_slice(self.readout_w.data());
        out.extend_from_slice(&self.readout_b);
        out
    }

    pub fn flat_mut(&mut self) -> Vec<&mut f64> {
        let mut out: Vec<&mut f64> = Vec::new();
        out.extend(self.emb.data_mut().iter_mut());
        if let Some(p) = &mut self.pos {
            out.extend(p.data_mut().iter_mut());
        }
        for l in &mut self.layers {
            out.extend(l.w_q.data_mut().iter_mut());
            out.extend(l.w_k1.data_mut().iter_mut());
            out.extend(l.w_k2.data_mut().iter_mut());
            out.extend(l.w_v1.data_mut().iter_mut());
            out.extend(l.w_v2.data_mut().iter_mut());
            if let Some(w) = &mut l.mlp_w {
                out.extend(w.data_mut().iter_mut());
            }
            if let Some(b) = &mut l.mlp_b {
                out.extend(b.iter_mut());
            }
        }
        out.extend(self.readout_w.data_mut().iter_mut());
        out.extend(self.readout_b.iter_mut());
        out
    }
}

/// Named views of the trainable parameters, in the same order as
/// [`Grads::flat`]. The optimizer walks model and gradient together.
pub fn param_tensors(model: &ClassifierModel) -> Vec<(String, usize)> {
    let mut out = vec![("emb".to_string(), model.emb.data().len())];
    if let Some(p) = &model.pos {
        out.push(("pos".to_string(), p.data().len()));
    }
    for (i, l) in model.layers.iter().enumerate() {
        for (name, m) in [
            ("w_q", &l.w_q),
            ("w_k1", &l.w_k1),
            ("w_k2", &l.w_k2),
            ("w_v1", &l.w_v1),
            ("w_v2", &l.w_v2),
        ] {
            out.push((format!("layer{i}.{name}"), m.data().len()));
        }
        if let Some(w) = &l.mlp_w {
            out.push((format!("layer{i}.mlp_w"), w.data().len()));
        }
        if let Some(b) = &l.mlp_b {
            out.push((format!("layer{i}.mlp_b"), b.len()));
        }
    }
    out.push(("readout_w".to_string(), model.readout_w.data().len()));
    out.push(("readout_b".to_string(), model.readout_b.len()));
    out
}

pub fn model_flat_mut(model: &mut ClassifierModel) -> Vec<&mut f64> {
    let mut out: Vec<&mut f64> = Vec::new();
    out.extend(model.emb.data_mut().iter_mut());
    if let Some(p) = &mut model.pos {
        out.extend(p.data_mut().iter_mut());
    }
    for l in &mut model.layers {
        out.extend(l.w_q.data_mut().iter_mut());
        out.extend(l.w_k1.data_mut().iter_mut());
        out.extend(l.w_k2.data_mut().iter_mut());
        out.extend(l.w_v1.data_mut().iter_mut());
        out.extend(l.w_v2.data_mut().iter_mut());
        if let Some(w) = &mut l.mlp_w {
            out.extend(w.data_mut().iter_mut());
        }
        if let Some(b) = &mut l.mlp_b {
            out.extend(b.iter_mut());
        }
    }
    out.extend(model.readout_w.data_mut().iter_mut());
    out.extend(model.readout_b.iter_mut());
    out
}

/// Layer-norm backward with the cached scale `s = sqrt(var + eps)` and the
/// normalized rows `hat`: `dx = (dy - mean(dy) - hat·mean(dy ⊙ hat)) / s`.
fn layer_norm_backward(dy: &Matrix64, hat: &Matrix64, scale: &[f64]) -> Matrix64 {
    let (n, d) = (dy.rows(), dy.cols());
    Matrix::from_fn(n, d, |i, j| {
        let mean_dy: f64 = dy.row(i).iter().sum::<f64>() / d as f64;
        let mean_dy_hat: f64 = (0..d)
            .map(|k| dy.get(i, k) * hat.get(i, k))
            .sum::<f64>()
            / d as f64;
        (dy.get(i, j) - mean_dy - hat.get(i, j) * mean_dy_hat) / scale[i]
    })
    .expect("shapes already checked")
}

/// Column-wise product backward: for `K[j2 + j3·n] = K1[j2] ⊙ K2[j3]`,
/// routes the upstream gradient to both factors.
fn col_kron_backward(
    dk: &Matrix64,
    k1: &Matrix64,
    k2: &Matrix64,
) -> (Matrix64, Matrix64) {
    let (n, d) = (k1.rows(), k1.cols());
    let mut dk1 = zeros(n, d);
    let mut dk2 = zeros(n, d);
    for j3 in 0..n {
        for j2 in 0..n {
            let row = j2 + j3 * n;
            for l in 0..d {
                let g = *dk.get(row, l);
                *dk1.entry_mut(j2, l) += g * k2.get(j3, l);
                *dk2.entry_mut(j3, l) += g * k1.get(j2, l);
            }
        }
    }
    (dk1, dk2)
}

/// Full backward pass for one example. Returns the cross-entropy gradient
/// against every trainable parameter.
pub fn backward(model: &ClassifierModel, cache: &ForwardCache, label: u8) -> Grads {
    let d = model.config.d;
    let n = cache.tokens.len();
    let mut grads = Grads::zeros_like(model);

    // readout: d(loss)/d(logit) = probs - onehot
    let mut dlogits = [0.0f64; NUM_CLASSES];
    for c in 0..NUM_CLASSES {
        dlogits[c] = cache.probs[c] - if c == label as usize { 1.0 } else { 0.0 };
    }
    let mut dlast = vec![0.0f64; d];
    for c in 0..NUM_CLASSES {
        grads.readout_b[c] += dlogits[c];
        for j in 0..d {
            *grads.readout_w.entry_mut(c, j) += dlogits[c] * cache.last_hidden[j];
            dlast[j] += model.readout_w.get(c, j) * dlogits[c];
        }
    }

    // gradient with respect to the final hidden matrix: only the last row
    let mut dh = zeros(n, d);
    for j in 0..d {
        dh.set(n - 1, j, dlast[j]);
    }

    for (li, (lw, lc)) in model
        .layers
        .iter()
        .zip(&model.config.layers)
        .enumerate()
        .rev()
    {
        let cachel = &cache.layers[li];
        let lg = &mut grads.layers[li];

        // trailing block, reverse order
        if matches!(
            lc.g,
            crate::attncore::GKind::LayerNorm | crate::attncore::GKind::MlpThenLayerNorm
        ) {
            let hat = cachel.ln_hat.as_ref().expect("cached in forward");
            dh = layer_norm_backward(&dh, hat, &cachel.ln_scale);
        }
        if matches!(
            lc.g,
            crate::attncore::GKind::Mlp | crate::attncore::GKind::MlpThenLayerNorm
        ) {
            let w = lw.mlp_w.as_ref().expect("validated at init");
            let x_mlp = cachel.mlp_in.as_ref().expect("cached in forward");
            let gw = lg.mlp_w.as_mut().expect("same shape as weights");
            let gb = lg.mlp_b.as_mut().expect("same shape as weights");
            // y_i = W x_i + b  =>  dW += dyᵀ·x, db += column sums of dy
            for i in 0..n {
                for a in 0..d {
                    let g = *dh.get(i, a);
                    gb[a] += g;
                    for bcol in 0..d {
                        *gw.entry_mut(a, bcol) += g * x_mlp.get(i, bcol);
                    }
                }
            }
            dh = matmul64(&dh, w);
        }

        // attention backward: out = (A·V) / rowsum(A)
        let v = {
            let n1 = cachel.v1.rows();
            Matrix::from_fn(n * n, d, |i, j| {
                cachel.v1.get(i % n1, j) * cachel.v2.get(i / n1, j)
            })
            .expect("shapes already checked")
        };
        let mut dav = zeros(n, d);
        let mut dsums = vec![0.0f64; n];
        for i in 0..n {
            for j in 0..d {
                let g = *dh.get(i, j);
                dav.set(i, j, g / cachel.row_sums[i]);
                dsums[i] -= g * cachel.attn_out.get(i, j) / cachel.row_sums[i];
            }
        }
        // dA = dAV·Vᵀ + dsums (broadcast over columns); dV = Aᵀ·dAV
        let mut da = matmul64(&dav, &v.transpose());
        for i in 0..n {
            for c in 0..n * n {
                *da.entry_mut(i, c) += dsums[i];
            }
        }
        let dv = matmul64(&cachel.a.transpose(), &dav);
        // A = exp(S): dS = A ⊙ dA, with S the scaled scores
        let ds = Matrix::from_fn(n, n * n, |i, c| da.get(i, c) * cachel.a.get(i, c))
            .expect("shapes already checked");

        let (dv1, dv2) = col_kron_backward(&dv, &cachel.v1, &cachel.v2);
        let mut dq = zeros(n, d);
        let mut dk1 = zeros(n, d);
        let mut dk2 = zeros(n, d);
        let inv_d = 1.0 / d as f64;
        match lc.kind {
            AttnKind::PlainTensorAttn => {
                // S = Q·Kᵀ/d with K the column-wise product of K1, K2
                let k = {
                    let n1 = cachel.k1.rows();
                    Matrix::from_fn(n * n, d, |i, j| {
                        cachel.k1.get(i % n1, j) * cachel.k2.get(i / n1, j)
                    })
                    .expect("shapes already checked")
                };
                let mut dk = zeros(n * n, d);
                for j1 in 0..n {
                    for c in 0..n * n {
                        let g = ds.get(j1, c) * inv_d;
                        for l in 0..d {
                            *dq.entry_mut(j1, l) += g * k.get(c, l);
                            *dk.entry_mut(c, l) += g * cachel.q.get(j1, l);
                        }
                    }
                }
                let (a, b) = col_kron_backward(&dk, &cachel.k1, &cachel.k2);
                dk1 = a;
                dk2 = b;
            }
            AttnKind::RopeTensorAttn => {
                let oi = |j1: usize, j2: usize| j1 + n - 1 - j2;
                for j1 in 0..n {
                    for j3 in 0..n {
                        for j2 in 0..n {
                            let g = ds.get(j1, j2 + j3 * n) * inv_d;
                            if g == 0.0 {
                                continue;
                            }
                            let ra = &cache.layers[li].rotations[oi(j1, j2)];
                            let rb = &cache.layers[li].rotations[oi(j1, j3)];
                            let avec = &cachel.rot_k1[oi(j1, j2)][j2];
                            let bvec = &cachel.rot_k2[oi(j1, j3)][j3];
                            for l in 0..d {
                                let q = *cachel.q.get(j1, l);
                                *dq.entry_mut(j1, l) += g * avec[l] * bvec[l];
                                let da_l = g * q * bvec[l];
                                let db_l = g * q * avec[l];
                                for m in 0..d {
                                    *dk1.entry_mut(j2, m) += da_l * ra.get(l, m);
                                    *dk2.entry_mut(j3, m) += db_l * rb.get(l, m);
                                }
                            }
                        }
                    }
                }
            }
        }

        // projections: P = X·W  =>  dW += Xᵀ·dP, dX += dP·Wᵀ
        let x = &cachel.x_in;
        let mut dx = zeros(n, d);
        for (dp, w, gw) in [
            (&dq, &lw.w_q, &mut lg.w_q),
            (&dk1, &lw.w_k1, &mut lg.w_k1),
            (&dk2, &lw.w_k2, &mut lg.w_k2),
            (&dv1, &lw.w_v1, &mut lg.w_v1),
            (&dv2, &lw.w_v2, &mut lg.w_v2),
        ] {
            for a in 0..d {
                for bcol in 0..d {
                    let mut acc = 0.0;
                    for i in 0..n {
                        acc += x.get(i, a) * dp.get(i, bcol);
                    }
                    *gw.entry_mut(a, bcol) += acc;
                }
            }
            for i in 0..n {
                for a in 0..d {
                    let mut acc = 0.0;
                    for bcol in 0..d {
                        acc += dp.get(i, bcol) * w.get(a, bcol);
                    }
                    *dx.entry_mut(i, a) += acc;
                }
            }
        }
        dh = dx;
    }

    // embedding and position gradients
    for i in 0..n {
        for j in 0..d {
            let g = *dh.get(i, j);
            *grads.emb.entry_mut(cache.tokens[i], j) += g;
            if let Some(pos) = &mut grads.pos {
                *pos.entry_mut(i, j) += g;
            }
        }
    }
    grads
}
