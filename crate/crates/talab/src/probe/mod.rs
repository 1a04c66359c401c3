//! Empirical harness: training, evaluation, and gradient checking of the
//! toy classifiers on the word-problem datasets.
//!
//! Training runs in native doubles. Runs are deterministic per seed: batch
//! order comes from a seeded generator, per-example gradients are averaged
//! in index order, and the metrics rows depend only on the seed and config
//! (the wall-clock column is informational and excluded from any
//! determinism comparison).

pub mod backward;
pub mod model;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use crate::backend::{FloatPBackend, Real64};
use crate::depthlog::StageTracer;
use crate::error::{Error, Result};
use crate::hardlang::DatasetItem;

pub use backward::{backward, Grads};
pub use model::{classify_forward, classify_generic, loss_of, ClassifierModel, ModelConfig};

/// Stream separation between weight initialization and batch shuffling.
const SHUFFLE_SALT: u64 = 0x74616c_61625f73;

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub train_data: PathBuf,
    #[serde(default)]
    pub eval_data: Option<PathBuf>,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    pub out_dir: PathBuf,
}

fn default_eval_every() -> usize {
    100
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 || self.steps == 0 {
            return Err(Error::DataFormatError(
                "steps and batch_size must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One metrics row per optimizer step. `eval_acc` carries the most recent
/// evaluation (or -1 when no eval set is configured).
#[derive(Clone, Debug, Serialize)]
pub struct MetricsRow {
    pub step: usize,
    pub loss: f64,
    pub train_acc: f64,
    pub eval_acc: f64,
    pub wall_ms: u128,
}

/// The outcome of a training run.
#[derive(Clone, Debug)]
pub struct Metrics {
    pub rows: Vec<MetricsRow>,
    pub final_train_acc: f64,
    pub final_eval_acc: f64,
    /// Depth expression of one traced forward pass through the final model.
    pub depth: String,
}

pub const METRICS_HEADER: &str = "step,loss,train_acc,eval_acc,wall_ms";

pub fn write_metrics_csv<W: Write>(mut w: W, rows: &[MetricsRow]) -> Result<()> {
    writeln!(w, "{METRICS_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.step, r.loss, r.train_acc, r.eval_acc, r.wall_ms
        )?;
    }
    Ok(())
}

fn check_dataset(model: &ModelConfig, data: &[DatasetItem]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for (i, item) in data.iter().enumerate() {
        if item.tokens.is_empty() {
            return Err(Error::DataFormatError(format!("example {i} is empty")));
        }
        if item.tokens.len() > model.max_n {
            return Err(Error::DataFormatError(format!(
                "example {i} has {} tokens, model max_n is {}",
                item.tokens.len(),
                model.max_n
            )));
        }
        if item.tokens.iter().any(|&t| t >= model.vocab) {
            return Err(Error::DataFormatError(format!(
                "example {i} has a token outside the vocabulary"
            )));
        }
    }
    Ok(())
}

/// Loss, gradient, and correctness for one example.
fn example_pass(model: &ClassifierModel, item: &DatasetItem) -> Result<(f64, Grads, bool)> {
    let cache = classify_forward(model, &item.tokens)?;
    let loss = loss_of(&cache, item.label);
    let grads = backward(model, &cache, item.label);
    let pred = if cache.logits[1] > cache.logits[0] { 1 } else { 0 };
    Ok((loss, grads, pred == item.label))
}

/// Depth expression of one forward pass through the model architecture.
fn traced_depth(model: &ClassifierModel) -> Result<String> {
    let b = Real64;
    let spec = model.to_spec(&b)?;
    let probe_n = 2.min(model.config.max_n);
    let x = model.embed_generic(&b, &vec![0usize; probe_n])?;
    let mut tracer = StageTracer::new();
    crate::attncore::tf_forward(&b, &x, &spec, &model::LN_EPS, Some(&mut tracer))?;
    Ok(tracer.clock().to_string())
}

/// Full-dataset accuracy of the fast forward path.
pub fn evaluate(model: &ClassifierModel, data: &[DatasetItem]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_dataset(&model.config, data)?;
    let correct: usize = data
        .par_iter()
        .map(|item| {
            let cache = classify_forward(model, &item.tokens)?;
            let pred = if cache.logits[1] > cache.logits[0] { 1u8 } else { 0 };
            Ok::<usize, Error>((pred == item.label) as usize)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum();
    Ok(correct as f64 / data.len() as f64)
}

/// Accuracy under a rounding backend: weights and embeddings are rounded to
/// `p` bits and the whole forward pass runs in that arithmetic.
pub fn evaluate_floatp(model: &ClassifierModel, data: &[DatasetItem], p: u32) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_dataset(&model.config, data)?;
    let b = FloatPBackend::new(p)?;
    let correct: usize = data
        .par_iter()
        .map(|item| {
            let logits = classify_generic(&b, model, &item.tokens)?;
            let pred = if logits[1] > logits[0] { 1u8 } else { 0 };
            Ok::<usize, Error>((pred == item.label) as usize)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum();
    Ok(correct as f64 / data.len() as f64)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: usize,
}

/// Runs the optimizer and writes `metrics.csv` and `weights.json` into the
/// output directory. Returns the collected metrics.
pub fn train(cfg: &TrainConfig) -> Result<Metrics> {
    cfg.validate()?;
    let train_data = crate::hardlang::read_jsonl(std::io::BufReader::new(std::fs::File::open(
        &cfg.train_data,
    )?))?;
    check_dataset(&cfg.model, &train_data)?;
    let eval_data = match &cfg.eval_data {
        Some(path) => {
            let d = crate::hardlang::read_jsonl(std::io::BufReader::new(std::fs::File::open(
                path,
            )?))?;
            check_dataset(&cfg.model, &d)?;
            Some(d)
        }
        None => None,
    };

    let mut model = ClassifierModel::init(cfg.model.clone(), cfg.seed)?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ SHUFFLE_SALT);
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    let mut cursor = order.len(); // force an initial shuffle

    let param_count = backward::model_flat_mut(&mut model).len();
    let mut adam = Adam { m: vec![0.0; param_count], v: vec![0.0; param_count], t: 0 };

    let started = Instant::now();
    let mut rows = Vec::with_capacity(cfg.steps);
    let mut last_eval = f64::NAN;

    for step in 1..=cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            if cursor >= order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }

        let results: Vec<(f64, Grads, bool)> = batch
            .par_iter()
            .map(|&i| example_pass(&model, &train_data[i]))
            .collect::<Result<Vec<_>>>()?;

        let mut loss = 0.0;
        let mut correct = 0usize;
        let mut grads = Grads::zeros_like(&model);
        let scale = 1.0 / results.len() as f64;
        for (l, g, ok) in &results {
            loss += l * scale;
            correct += *ok as usize;
            grads.add_scaled(g, scale);
        }
        if !loss.is_finite() {
            return Err(Error::Diverged { step });
        }

        apply_update(&mut model, &grads, &cfg.optimizer, &mut adam);

        let train_acc = correct as f64 / results.len() as f64;
        if let Some(eval) = &eval_data {
            if step == 1 || step % cfg.eval_every == 0 || step == cfg.steps {
                last_eval = evaluate(&model, eval)?;
            }
        }
        rows.push(MetricsRow {
            step,
            loss,
            train_acc,
            eval_acc: if last_eval.is_nan() { -1.0 } else { last_eval },
            wall_ms: started.elapsed().as_millis(),
        });
    }

    let final_train_acc = evaluate(&model, &train_data)?;
    let final_eval_acc = match &eval_data {
        Some(d) => evaluate(&model, d)?,
        None => -1.0,
    };
    model.depth = traced_depth(&model)?;

    std::fs::create_dir_all(&cfg.out_dir)?;
    let mut csv = std::fs::File::create(cfg.out_dir.join("metrics.csv"))?;
    write_metrics_csv(&mut csv, &rows)?;
    std::fs::write(cfg.out_dir.join("weights.json"), model.save_json()?)?;

    Ok(Metrics { rows, final_train_acc, final_eval_acc, depth: model.depth.clone() })
}

fn apply_update(
    model: &mut ClassifierModel,
    grads: &Grads,
    opt: &OptimizerConfig,
    adam: &mut Adam,
) {
    let flat_grads = grads.flat();
    let mut params = backward::model_flat_mut(model);
    match opt.kind {
        OptimizerKind::Sgd => {
            for (w, g) in params.iter_mut().zip(&flat_grads) {
                **w -= opt.lr * g;
            }
        }
        OptimizerKind::Adam => {
            adam.t += 1;
            let b1t = 1.0 - opt.beta1.powi(adam.t as i32);
            let b2t = 1.0 - opt.beta2.powi(adam.t as i32);
            for ((w, g), (m, v)) in params
                .iter_mut()
                .zip(&flat_grads)
                .zip(adam.m.iter_mut().zip(adam.v.iter_mut()))
            {
                *m = opt.beta1 * *m + (1.0 - opt.beta1) * g;
                *v = opt.beta2 * *v + (1.0 - opt.beta2) * g * g;
                let mhat = *m / b1t;
                let vhat = *v / b2t;
                **w -= opt.lr * mhat / (vhat.sqrt() + opt.eps);
            }
        }
    }
}

/// Per-tensor report of a gradient check.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub tensors: Vec<(String, f64)>,
    pub worst: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.worst <= self.tolerance
    }
}

/// Compares analytic gradients against central finite differences over
/// every trainable parameter, on a fixed batch of examples. The relative
/// error denominator saturates at 1 so near-zero derivatives are compared
/// absolutely.
pub fn grad_check(
    model_cfg: &ModelConfig,
    seed: u64,
    examples: &[(Vec<usize>, u8)],
    h: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    if examples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let model = ClassifierModel::init(model_cfg.clone(), seed)?;

    let batch_loss = |m: &ClassifierModel| -> Result<f64> {
        let mut total = 0.0;
        for (tokens, label) in examples {
            total += loss_of(&classify_forward(m, tokens)?, *label);
        }
        Ok(total / examples.len() as f64)
    };

    let mut analytic = Grads::zeros_like(&model);
    for (tokens, label) in examples {
        let cache = classify_forward(&model, tokens)?;
        analytic.add_scaled(&backward(&model, &cache, *label), 1.0 / examples.len() as f64);
    }
    let flat = analytic.flat();

    let tensors = backward::param_tensors(&model);
    let mut probe = model.clone();
    let mut report = Vec::with_capacity(tensors.len());
    let mut worst = 0.0f64;
    let mut offset = 0usize;
    for (name, len) in tensors {
        let mut tensor_worst = 0.0f64;
        for idx in offset..offset + len {
            let orig = *backward::model_flat_mut(&mut probe)[idx];
            *backward::model_flat_mut(&mut probe)[idx] = orig + h;
            let up = batch_loss(&probe)?;
            *backward::model_flat_mut(&mut probe)[idx] = orig - h;
            let down = batch_loss(&probe)?;
            *backward::model_flat_mut(&mut probe)[idx] = orig;
            let fd = (up - down) / (2.0 * h);
            let rel = (flat[idx] - fd).abs() / fd.abs().max(1.0);
            tensor_worst = tensor_worst.max(rel);
        }
        worst = worst.max(tensor_worst);
        report.push((name, tensor_worst));
        offset += len;
    }
    Ok(GradCheckReport { tensors: report, worst, tolerance })
}

/// Caps the global thread pool from the `TALAB_THREADS` environment
/// variable; call once at process start.
pub fn init_thread_pool_from_env() {
    if let Ok(v) = std::env::var("TALAB_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attncore::{AttnKind, GKind};
    use crate::hardlang::{self, GenParams, Task};
    use crate::probe::model::LayerConfig;
    use std::collections::BTreeSet;
    use std::path::Path;

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            vocab: 2,
            d: 4,
            max_n: 8,
            pos_embedding: true,
            theta_base: 10_000.0,
            g0: GKind::Identity,
            layers: vec![LayerConfig { kind: AttnKind::PlainTensorAttn, g: GKind::Mlp }],
        }
    }

    fn write_dataset(dir: &Path, name: &str, count: usize, seed: u64) -> PathBuf {
        let m = hardlang::z2();
        let params = GenParams {
            task: Task::Closure,
            accept: [0usize].into_iter().collect(),
            r: 2,
            pairs: BTreeSet::new(),
            max_len: 8,
            count,
            seed,
        };
        let items = hardlang::gen_dataset(&m, &params).unwrap();
        let path = dir.join(name);
        let mut buf = Vec::new();
        hardlang::write_jsonl(&mut buf, &items).unwrap();
        std::fs::write(&path, buf).unwrap();
        path
    }

    fn tiny_train_config(dir: &Path, steps: usize, lr: f64) -> TrainConfig {
        TrainConfig {
            model: small_cfg(),
            optimizer: OptimizerConfig {
                kind: OptimizerKind::Sgd,
                lr,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
            steps,
            batch_size: 8,
            seed: 3,
            train_data: write_dataset(dir, "train.jsonl", 32, 5),
            eval_data: None,
            eval_every: 10,
            out_dir: dir.join("out"),
        }
    }

    #[test]
    fn single_step_records_one_row() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_train_config(dir.path(), 1, 1e-3);
        let metrics = train(&cfg).unwrap();
        assert_eq!(metrics.rows.len(), 1);
        assert_eq!(metrics.rows[0].step, 1);
        assert!(dir.path().join("out/metrics.csv").exists());
        assert!(dir.path().join("out/weights.json").exists());
        assert!(!metrics.depth.is_empty());
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_train_config(dir.path(), 3, 0.0);
        train(&cfg).unwrap();
        let trained = ClassifierModel::load_json(
            &std::fs::read_to_string(dir.path().join("out/weights.json")).unwrap(),
        )
        .unwrap();
        let init = ClassifierModel::init(cfg.model.clone(), cfg.seed).unwrap();
        assert_eq!(trained.emb, init.emb);
        assert_eq!(trained.layers[0].w_q, init.layers[0].w_q);
        assert_eq!(trained.readout_w, init.readout_w);
    }

    #[test]
    fn metrics_are_deterministic_per_seed() {
        let dir1 = tempfile::tempdir().unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        let cfg1 = tiny_train_config(dir1.path(), 5, 1e-2);
        let mut cfg2 = tiny_train_config(dir2.path(), 5, 1e-2);
        cfg2.train_data = cfg1.train_data.clone();
        let a = train(&cfg1).unwrap();
        let b = train(&cfg2).unwrap();
        for (ra, rb) in a.rows.iter().zip(&b.rows) {
            assert_eq!(ra.loss, rb.loss);
            assert_eq!(ra.train_acc, rb.train_acc);
        }
    }

    #[test]
    fn evaluate_edge_cases() {
        let model = ClassifierModel::init(small_cfg(), 1).unwrap();
        assert!(matches!(evaluate(&model, &[]), Err(Error::EmptyDataset)));

        // constant predictor scores exactly the base rate on a balanced set
        let mut constant = model.clone();
        constant.readout_w = crate::tensora::Matrix::from_fn(2, 4, |_, _| 0.0).unwrap();
        constant.readout_b = vec![1.0, 0.0];
        let m = hardlang::z2();
        let params = GenParams {
            task: Task::Closure,
            accept: [0usize].into_iter().collect(),
            r: 2,
            pairs: BTreeSet::new(),
            max_len: 8,
            count: 40,
            seed: 9,
        };
        let items = hardlang::gen_dataset(&m, &params).unwrap();
        let acc = evaluate(&constant, &items).unwrap();
        assert_eq!(acc, 0.5);
    }

    #[test]
    fn loss_tends_downward_over_first_ten_steps() {
        // statistical: at lr 1e-3 the tenth-step loss should not exceed the
        // first-step loss for at least 4 of 5 seeds
        let dir = tempfile::tempdir().unwrap();
        let data = write_dataset(dir.path(), "train.jsonl", 64, 21);
        let mut passes = 0;
        for seed in 0..5u64 {
            let cfg = TrainConfig {
                model: small_cfg(),
                optimizer: OptimizerConfig {
                    kind: OptimizerKind::Sgd,
                    lr: 1e-3,
                    beta1: 0.9,
                    beta2: 0.999,
                    eps: 1e-8,
                },
                steps: 10,
                batch_size: 64,
                seed,
                train_data: data.clone(),
                eval_data: None,
                eval_every: 100,
                out_dir: dir.path().join(format!("out{seed}")),
            };
            let metrics = train(&cfg).unwrap();
            if metrics.rows[9].loss <= metrics.rows[0].loss {
                passes += 1;
            }
        }
        assert!(passes >= 4, "loss decreased for only {passes}/5 seeds");
    }

    #[test]
    fn grad_check_small_models_pass() {
        let report = grad_check(
            &small_cfg(),
            17,
            &[(vec![0, 1, 1], 1), (vec![1, 0], 0)],
            1e-5,
            1e-5,
        )
        .unwrap();
        assert!(report.passed(), "worst {}", report.worst);
    }
}
