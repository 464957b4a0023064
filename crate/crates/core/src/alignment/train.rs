use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::contrastive_loss;
use super::model::AlignmentModel;
use super::tape::{Mat, Tape, Var};
use crate::clustering::seeded_rng;
use crate::error::{Error, Result};
use crate::records::FeatureGrid;

const SHUFFLE_STREAM: u64 = 4;
const GRADCHECK_STREAM: u64 = 6;

/// One training example: frozen features and a tokenized caption.
#[derive(Debug, Clone)]
pub struct TrainPair {
    pub grid: FeatureGrid,
    pub ids: Vec<u32>,
}

struct SampleGraph<'p> {
    tape: Tape<'p>,
    image: Var,
    text: Var,
    cls: Var,
    patches: Var,
    pooled: Var,
}

fn build_sample<'p>(model: &'p AlignmentModel, pair: &TrainPair) -> Result<SampleGraph<'p>> {
    let mut tape = Tape::new(model.params());
    let (cls, patches) = model.vision_forward(&mut tape, &pair.grid)?;
    let pooled = model.pool(&mut tape, cls, patches, model.config().pooling);
    let image = model.normalize(&mut tape, pooled);
    let full = model.text_forward(&mut tape, &pair.ids)?;
    let t = model.text_descriptor(&mut tape, full);
    let text = model.normalize(&mut tape, t);
    Ok(SampleGraph { tape, image, text, cls, patches, pooled })
}

fn stack(graphs: &[SampleGraph], pick: impl Fn(&SampleGraph) -> Var) -> Mat {
    let cols = graphs[0].tape.value(pick(&graphs[0])).cols;
    let mut data = Vec::with_capacity(graphs.len() * cols);
    for g in graphs {
        data.extend_from_slice(&g.tape.value(pick(g)).data);
    }
    Mat::from_vec(graphs.len(), cols, data)
}

fn build_batch<'p>(model: &'p AlignmentModel, batch: &[TrainPair]) -> Result<Vec<SampleGraph<'p>>> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    batch.par_iter().map(|p| build_sample(model, p)).collect()
}

/// Loss only, no gradients.
pub fn batch_loss(model: &AlignmentModel, batch: &[TrainPair]) -> Result<f64> {
    let graphs = build_batch(model, batch)?;
    let out = contrastive_loss(&stack(&graphs, |g| g.image), &stack(&graphs, |g| g.text), model.log_temperature())?;
    Ok(out.loss)
}

/// Loss and the gradient of every parameter tensor, in model order.
pub fn forward_backward(model: &AlignmentModel, batch: &[TrainPair]) -> Result<(f64, Vec<Mat>)> {
    let (loss, grads, _) = forward_backward_inner(model, batch, false)?;
    Ok((loss, grads))
}

/// Gradients at the pooling boundary for one sample.
#[derive(Debug, Clone)]
pub struct PoolBoundaryGrad {
    pub cls: Vec<f64>,
    pub patches: Mat,
    /// Gradient w.r.t. the pooled (pre-normalization) descriptor.
    pub pooled: Vec<f64>,
}

/// Per-sample gradients at the inputs and output of the pooling operator.
pub fn pool_boundary_grads(model: &AlignmentModel, batch: &[TrainPair]) -> Result<Vec<PoolBoundaryGrad>> {
    Ok(forward_backward_inner(model, batch, true)?.2)
}

fn forward_backward_inner(
    model: &AlignmentModel,
    batch: &[TrainPair],
    boundary: bool,
) -> Result<(f64, Vec<Mat>, Vec<PoolBoundaryGrad>)> {
    let graphs = build_batch(model, batch)?;
    let out = contrastive_loss(&stack(&graphs, |g| g.image), &stack(&graphs, |g| g.text), model.log_temperature())?;
    if !out.loss.is_finite() {
        return Err(Error::Numeric("non-finite loss".into()));
    }
    let per_sample: Vec<_> = graphs
        .par_iter()
        .enumerate()
        .map(|(i, g)| {
            let di = Mat::row_vector(out.d_images.row(i).to_vec());
            let dt = Mat::row_vector(out.d_texts.row(i).to_vec());
            let grads = g.tape.backward(&[(g.image, di), (g.text, dt)]);
            let b = boundary.then(|| {
                let zero = |v: Var| Mat::zeros(g.tape.value(v).rows, g.tape.value(v).cols);
                PoolBoundaryGrad {
                    cls: grads.of(g.cls).cloned().unwrap_or_else(|| zero(g.cls)).data,
                    patches: grads.of(g.patches).cloned().unwrap_or_else(|| zero(g.patches)),
                    pooled: grads.of(g.pooled).cloned().unwrap_or_else(|| zero(g.pooled)).data,
                }
            });
            (grads.params, b)
        })
        .collect();
    // Fixed-order reduction keeps the result independent of thread count.
    let mut total: Vec<Mat> = model.params().iter().map(|p| Mat::zeros(p.rows, p.cols)).collect();
    let mut bounds = Vec::new();
    for (grads, b) in per_sample {
        for (acc, g) in total.iter_mut().zip(grads) {
            if let Some(g) = g {
                acc.add_assign(&g);
            }
        }
        bounds.extend(b);
    }
    total[model.log_temperature_index()].data[0] += out.d_log_temperature;
    Ok((out.loss, total, bounds))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub checked: usize,
    pub failures: usize,
    pub max_rel_error: f64,
}

/// Compares analytic gradients with central differences on `samples`
/// randomly chosen scalars, spread round-robin over all tensors.
pub fn gradient_check(model: &AlignmentModel, batch: &[TrainPair], samples: usize, eps: f64, tol: f64, seed: u64) -> Result<GradCheckReport> {
    let (_, grads) = forward_backward(model, batch)?;
    let mut rng = seeded_rng(seed, GRADCHECK_STREAM);
    let mut probe = model.clone();
    let n_tensors = model.params().len();
    let mut report = GradCheckReport { checked: 0, failures: 0, max_rel_error: 0.0 };
    for s in 0..samples {
        let t = s % n_tensors;
        let k = rng.random_range(0..model.params()[t].len());
        let orig = model.params()[t].data[k];
        probe.params_mut()[t].data[k] = orig + eps;
        let lp = batch_loss(&probe, batch)?;
        probe.params_mut()[t].data[k] = orig - eps;
        let lm = batch_loss(&probe, batch)?;
        probe.params_mut()[t].data[k] = orig;
        let fd = (lp - lm) / (2.0 * eps);
        let rel = (grads[t].data[k] - fd).abs() / fd.abs().max(1e-8);
        // Both vanishing counts as agreement.
        let rel = if fd.abs() < 1e-10 && grads[t].data[k].abs() < 1e-10 { 0.0 } else { rel };
        report.checked += 1;
        report.max_rel_error = report.max_rel_error.max(rel);
        if rel >= tol {
            report.failures += 1;
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Fraction of steps spent in linear warmup.
    pub warmup: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Learning-rate multiplier for the log logit scale.
    pub temperature_lr_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { batch_size: 32, steps: 500, lr: 1e-3, weight_decay: 0.1, seed: 0, warmup: 0.1, beta1: 0.9, beta2: 0.999, eps: 1e-8, temperature_lr_scale: 1.0 }
    }
}

/// Linear warmup to `lr`, then cosine decay to zero.
pub fn learning_rate(cfg: &TrainConfig, step: usize) -> f64 {
    let warm = (cfg.warmup * cfg.steps as f64).round() as usize;
    if step < warm {
        return cfg.lr * (step + 1) as f64 / warm as f64;
    }
    let span = (cfg.steps - warm).max(1) as f64;
    let t = (step - warm) as f64 / span;
    cfg.lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub losses: Vec<f64>,
    pub final_log_temperature: f64,
}

/// AdamW over shuffled mini-batches; deterministic for a given seed.
pub fn train(model: &mut AlignmentModel, data: &[TrainPair], cfg: &TrainConfig) -> Result<TrainReport> {
    train_with(model, data, cfg, |_, _| {})
}

/// [`train`] with a per-step callback receiving `(step, loss)`.
pub fn train_with(
    model: &mut AlignmentModel,
    data: &[TrainPair],
    cfg: &TrainConfig,
    mut on_step: impl FnMut(usize, f64),
) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let mut rng = seeded_rng(cfg.seed, SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let bs = cfg.batch_size.min(data.len());
    let mut cursor = 0;
    let mut m: Vec<Mat> = model.params().iter().map(|p| Mat::zeros(p.rows, p.cols)).collect();
    let mut v = m.clone();
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        if cursor + bs > order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let batch: Vec<TrainPair> = order[cursor..cursor + bs].iter().map(|&i| data[i].clone()).collect();
        cursor += bs;
        let (loss, grads) = forward_backward(model, &batch)?;
        losses.push(loss);
        on_step(step, loss);

        let lr = learning_rate(cfg, step);
        let t = (step + 1) as i32;
        let (c1, c2) = (1.0 - cfg.beta1.powi(t), 1.0 - cfg.beta2.powi(t));
        for (i, g) in grads.iter().enumerate() {
            let decay = if model.decays(i) { cfg.weight_decay } else { 0.0 };
            let lr = if i == model.log_temperature_index() { lr * cfg.temperature_lr_scale } else { lr };
            let p = &mut model.params_mut()[i];
            for k in 0..g.len() {
                let gk = g.data[k];
                m[i].data[k] = cfg.beta1 * m[i].data[k] + (1.0 - cfg.beta1) * gk;
                v[i].data[k] = cfg.beta2 * v[i].data[k] + (1.0 - cfg.beta2) * gk * gk;
                let update = (m[i].data[k] / c1) / ((v[i].data[k] / c2).sqrt() + cfg.eps) + decay * p.data[k];
                p.data[k] -= lr * update;
            }
        }
        model.clamp_log_temperature();
        if model.params().iter().any(|p| p.data.iter().any(|x| !x.is_finite())) {
            return Err(Error::Numeric(format!("parameters diverged at step {step}")));
        }
    }
    Ok(TrainReport { losses, final_log_temperature: model.log_temperature() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alignment::model::{ModelConfig, NormMode, Pooling};
    use crate::alignment::tokenizer::Tokenizer;
    use crate::tensor::{Matrix, Vector};

    fn pairs(n: usize, d: usize, len: usize, tok: &Tokenizer) -> Vec<TrainPair> {
        let words = ["red", "green", "blue", "cyan", "pink", "gray"];
        (0..n)
            .map(|i| {
                let s = i as f32 * 0.37;
                let cls = Vector::new((0..d).map(|j| (j as f32 * 0.9 + s).sin()).collect()).unwrap();
                let p = Matrix::new(4, d, (0..4 * d).map(|j| (j as f32 * 0.31 + s * 2.0).cos()).collect()).unwrap();
                let caption = format!("{} {}", words[i % 6], words[(i + 2) % 6]);
                let mut ids = tok.tokenize(&caption);
                ids.truncate(len);
                TrainPair { grid: FeatureGrid::new(cls, p, 2, 2).unwrap(), ids }
            })
            .collect()
    }

    fn setup(pooling: Pooling, norm: NormMode) -> (AlignmentModel, Vec<TrainPair>) {
        let tok = Tokenizer::from_corpus(["red green blue cyan pink gray"], 5, 3);
        let config = ModelConfig {
            dim: 8,
            text_dim: 6,
            max_len: 5,
            text_depth: 1,
            vision_blocks: 2,
            heads: 2,
            hash_buckets: 3,
            pooling,
            norm,
            ..ModelConfig::default()
        };
        let model = AlignmentModel::new(config, tok.clone(), 11).unwrap();
        let data = pairs(4, 8, 5, &tok);
        (model, data)
    }

    #[test]
    fn gradients_are_exact_for_every_pooling() {
        for mode in Pooling::ALL {
            for norm in [NormMode::Whole, NormMode::PerHalf] {
                let (model, data) = setup(mode, norm);
                let r = gradient_check(&model, &data, 120, 1e-5, 1e-5, 2).unwrap();
                assert_eq!(r.failures, 0, "{mode} {norm:?}: {r:?}");
            }
        }
    }

    #[test]
    fn cls_pooling_blocks_patch_gradients() {
        let (model, data) = setup(Pooling::Cls, NormMode::Whole);
        for b in pool_boundary_grads(&model, &data).unwrap() {
            assert!(b.patches.data.iter().all(|&x| x == 0.0));
            assert!(b.cls.iter().any(|&x| x != 0.0));
        }
    }

    #[test]
    fn cls_avg_spreads_gradient_evenly() {
        let (model, data) = setup(Pooling::ClsAvg, NormMode::Whole);
        for b in pool_boundary_grads(&model, &data).unwrap() {
            let n = b.patches.rows as f64;
            let d = b.cls.len();
            for r in 0..b.patches.rows {
                for j in 0..d {
                    assert!((b.patches.row(r)[j] - b.pooled[d + j] / n).abs() < 1e-12);
                }
            }
            assert!(b.patches.data.iter().any(|&x| x != 0.0));
        }
    }

    #[test]
    fn zero_lr_keeps_parameters() {
        let (mut model, data) = setup(Pooling::ClsAvg, NormMode::Whole);
        let before = model.params().to_vec();
        let cfg = TrainConfig { batch_size: 2, steps: 5, lr: 0.0, ..TrainConfig::default() };
        train(&mut model, &data, &cfg).unwrap();
        assert_eq!(model.params(), &before[..]);
    }

    #[test]
    fn training_is_deterministic_and_clamped() {
        let cfg = TrainConfig { batch_size: 4, steps: 8, lr: 5e-2, seed: 9, ..TrainConfig::default() };
        let (mut a, data) = setup(Pooling::ClsAvg, NormMode::Whole);
        let (mut b, _) = setup(Pooling::ClsAvg, NormMode::Whole);
        let ra = train(&mut a, &data, &cfg).unwrap();
        let rb = train(&mut b, &data, &cfg).unwrap();
        assert_eq!(ra.losses, rb.losses);
        assert_eq!(a.params(), b.params());
        let lt = a.log_temperature();
        assert!((0.0..=100f64.ln()).contains(&lt));
        assert!(ra.losses.last().unwrap() < ra.losses.first().unwrap());
    }

    #[test]
    fn empty_dataset_errors() {
        let (mut model, _) = setup(Pooling::Avg, NormMode::Whole);
        assert!(train(&mut model, &[], &TrainConfig::default()).is_err());
    }

    #[test]
    fn schedule_shape() {
        let cfg = TrainConfig { steps: 100, lr: 1.0, warmup: 0.1, ..TrainConfig::default() };
        assert!((learning_rate(&cfg, 0) - 0.1).abs() < 1e-12);
        assert!((learning_rate(&cfg, 9) - 1.0).abs() < 1e-12);
        assert!((learning_rate(&cfg, 10) - 1.0).abs() < 1e-12);
        assert!(learning_rate(&cfg, 99) < 0.01);
    }
}
