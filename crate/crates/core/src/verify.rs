//! Bundled self-checks. Each suite compares a production routine with a
//! slow, independent recomputation and reports the worst disagreement.

use rand::Rng;
use serde::Serialize;

use crate::alignment::{
    contrastive_loss, gradient_check, pool_boundary_grads, AlignmentModel, GradCheckReport, Mat, ModelConfig, Pooling, Tokenizer,
    TrainPair,
};
use crate::analysis::miou;
use crate::clustering::{kmeans_fit, seeded_rng, KMeansOptions};
use crate::error::Result;
use crate::highres::{Homography, Quadrilateral, UNIT_CORNERS};
use crate::records::FeatureGrid;
use crate::segmap::SegmentationMap;
use crate::tensor::{Matrix, Vector};

const GRAD_STREAM: u64 = 20;
const KMEANS_STREAM: u64 = 21;
const MIOU_STREAM: u64 = 22;
const HMG_STREAM: u64 = 23;

pub const GRAD_TOL: f64 = 1e-4;

/// A small but complete model: 64-wide text and vision paths, one text
/// block, two vision blocks, and a random batch of four 2×2 grids.
pub fn tiny_setup(pooling: Pooling, seed: u64) -> Result<(AlignmentModel, Vec<TrainPair>)> {
    let words = ["red", "green", "blue", "gray", "pink", "teal", "navy", "cyan"];
    let tok = Tokenizer::from_corpus([words.join(" ").as_str()], 8, 8);
    let config = ModelConfig {
        dim: 64,
        text_dim: 64,
        max_len: 8,
        text_depth: 1,
        vision_blocks: 2,
        hash_buckets: 8,
        pooling,
        ..ModelConfig::default()
    };
    let model = AlignmentModel::new(config, tok.clone(), seed)?;
    let mut rng = seeded_rng(seed, GRAD_STREAM);
    let mut batch = Vec::new();
    for i in 0..4 {
        let cls = Vector::new((0..64).map(|_| rng.random_range(-1.0f32..1.0)).collect())?;
        let patches = Matrix::new(4, 64, (0..256).map(|_| rng.random_range(-1.0f32..1.0)).collect())?;
        let caption = format!("{} {} {}", words[i], words[(i + 3) % 8], words[(i + 5) % 8]);
        batch.push(TrainPair { grid: FeatureGrid::new(cls, patches, 2, 2)?, ids: tok.tokenize(&caption) });
    }
    Ok((model, batch))
}

/// Central differences against the analytic gradient of [`tiny_setup`].
pub fn gradient_suite(samples: usize, seed: u64) -> Result<GradCheckReport> {
    let (model, batch) = tiny_setup(Pooling::ClsAvg, seed)?;
    gradient_check(&model, &batch, samples, 1e-5, GRAD_TOL, seed)
}

#[derive(Debug, Clone, Serialize)]
pub struct PoolingReport {
    /// Largest patch-token gradient under CLS pooling (should be exactly 0).
    pub cls_max_patch_grad: f64,
    /// Largest |patch gradient − avg-half gradient / N| under CLS+AVG.
    pub cls_avg_max_deviation: f64,
    /// Whether CLS+AVG patch gradients were non-trivial at all.
    pub cls_avg_nonzero: bool,
}

impl PoolingReport {
    pub fn passed(&self) -> bool {
        self.cls_max_patch_grad == 0.0 && self.cls_avg_max_deviation < 1e-7 && self.cls_avg_nonzero
    }
}

/// Gradient routing through the pooling operator.
pub fn pooling_suite(seed: u64) -> Result<PoolingReport> {
    let (model, batch) = tiny_setup(Pooling::Cls, seed)?;
    let cls_max_patch_grad = pool_boundary_grads(&model, &batch)?
        .iter()
        .flat_map(|b| b.patches.data.iter().map(|x| x.abs()))
        .fold(0.0, f64::max);
    let (model, batch) = tiny_setup(Pooling::ClsAvg, seed)?;
    let mut dev = 0.0f64;
    let mut nonzero = false;
    for b in pool_boundary_grads(&model, &batch)? {
        let n = b.patches.rows as f64;
        let d = b.cls.len();
        for r in 0..b.patches.rows {
            for (j, &g) in b.patches.row(r).iter().enumerate() {
                dev = dev.max((g - b.pooled[d + j] / n).abs());
                nonzero |= g != 0.0;
            }
        }
    }
    Ok(PoolingReport { cls_max_patch_grad, cls_avg_max_deviation: dev, cls_avg_nonzero: nonzero })
}

#[derive(Debug, Clone, Serialize)]
pub struct KMeansOracleReport {
    pub instances: usize,
    pub mismatches: usize,
    pub max_rel_gap: f64,
    /// Fits whose inertia trace ever increased.
    pub non_monotone_fits: usize,
}

impl KMeansOracleReport {
    pub fn passed(&self) -> bool {
        self.mismatches == 0 && self.non_monotone_fits == 0
    }
}

/// Exhaustive optimum over every labelling of at most eight points.
fn brute_force_inertia(pts: &[[f64; 2]], k: usize) -> f64 {
    let n = pts.len();
    let mut labels = vec![0usize; n];
    let mut best = f64::INFINITY;
    loop {
        let mut sum = vec![[0.0f64; 2]; k];
        let mut cnt = vec![0usize; k];
        for (p, &l) in pts.iter().zip(&labels) {
            sum[l][0] += p[0];
            sum[l][1] += p[1];
            cnt[l] += 1;
        }
        let inertia: f64 = pts
            .iter()
            .zip(&labels)
            .map(|(p, &l)| {
                let c = [sum[l][0] / cnt[l] as f64, sum[l][1] / cnt[l] as f64];
                (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)
            })
            .sum();
        best = best.min(inertia);
        let mut i = 0;
        loop {
            if i == n {
                return best;
            }
            labels[i] += 1;
            if labels[i] < k {
                break;
            }
            labels[i] = 0;
            i += 1;
        }
    }
}

/// Best of `restarts` seeded fits against the exhaustive optimum on random
/// instances with at most 8 points and 3 clusters.
pub fn kmeans_suite(instances: usize, restarts: usize, seed: u64) -> Result<KMeansOracleReport> {
    let mut rng = seeded_rng(seed, KMEANS_STREAM);
    let mut report = KMeansOracleReport { instances, mismatches: 0, max_rel_gap: 0.0, non_monotone_fits: 0 };
    for inst in 0..instances {
        let n = rng.random_range(1..=8usize);
        let k = rng.random_range(1..=3usize.min(n));
        // Points are stored as f32; the oracle sees the same rounded values.
        let pts: Vec<[f64; 2]> = (0..n)
            .map(|_| [rng.random_range(-10.0f32..10.0) as f64, rng.random_range(-10.0f32..10.0) as f64])
            .collect();
        let m = Matrix::new(n, 2, pts.iter().flat_map(|p| [p[0] as f32, p[1] as f32]).collect())?;
        let mut best = f64::INFINITY;
        for r in 0..restarts {
            let fit = kmeans_fit(&m, k, seed ^ ((inst * restarts + r) as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15), &KMeansOptions { tol: 0.0, ..KMeansOptions::default() })?;
            if fit.inertia_trace.windows(2).any(|w| w[1] > w[0] * (1.0 + 1e-12) + 1e-12) {
                report.non_monotone_fits += 1;
            }
            best = best.min(fit.inertia);
        }
        let opt = brute_force_inertia(&pts, k);
        let gap = (best - opt).abs() / opt.max(1e-9);
        report.max_rel_gap = report.max_rel_gap.max(gap);
        if gap > 1e-5 {
            report.mismatches += 1;
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct MiouOracleReport {
    pub trials: usize,
    pub mismatches: usize,
    pub hand_case: f64,
}

impl MiouOracleReport {
    pub fn passed(&self) -> bool {
        self.mismatches == 0 && (self.hand_case - 7.0 / 12.0).abs() < 1e-15
    }
}

fn brute_miou(pred: &[u16], gt: &[u16], classes: usize) -> f64 {
    let mut ious = Vec::new();
    for c in 0..classes as u16 {
        let tp = pred.iter().zip(gt).filter(|(&p, &g)| p == c && g == c).count();
        let fp = pred.iter().zip(gt).filter(|(&p, &g)| p == c && g != c).count();
        let fn_ = pred.iter().zip(gt).filter(|(&p, &g)| p != c && g == c).count();
        if tp + fp + fn_ > 0 {
            ious.push(tp as f64 / (tp + fp + fn_) as f64);
        }
    }
    ious.iter().sum::<f64>() / ious.len() as f64
}

pub fn miou_suite(trials: usize, seed: u64) -> Result<MiouOracleReport> {
    let mut rng = seeded_rng(seed, MIOU_STREAM);
    let mut mismatches = 0;
    for _ in 0..trials {
        let (h, w, c) = (rng.random_range(1..=8usize), rng.random_range(1..=8usize), rng.random_range(1..=4usize));
        let names: Vec<String> = (0..c).map(|i| format!("c{i}")).collect();
        let p: Vec<u16> = (0..h * w).map(|_| rng.random_range(0..c as u16)).collect();
        let g: Vec<u16> = (0..h * w).map(|_| rng.random_range(0..c as u16)).collect();
        let got = miou(&SegmentationMap::new(h, w, p.clone(), names.clone())?, &SegmentationMap::new(h, w, g.clone(), names)?)?;
        if got.miou != brute_miou(&p, &g, c) {
            mismatches += 1;
        }
    }
    let names = vec!["a".to_string(), "b".to_string()];
    let gt = SegmentationMap::new(2, 2, vec![0, 0, 1, 1], names.clone())?;
    let pred = SegmentationMap::new(2, 2, vec![0, 1, 1, 1], names)?;
    Ok(MiouOracleReport { trials, mismatches, hand_case: miou(&pred, &gt)?.miou })
}

#[derive(Debug, Clone, Serialize)]
pub struct HomographyReport {
    pub quads: usize,
    pub max_corner_error: f64,
    pub max_roundtrip_error: f64,
}

impl HomographyReport {
    pub fn passed(&self) -> bool {
        self.max_corner_error <= 1e-6 && self.max_roundtrip_error <= 1e-9
    }
}

/// Random convex quads: corner mapping error and H(H⁻¹(p)) − p on random
/// interior points.
pub fn homography_suite(quads: usize, points: usize, seed: u64) -> Result<HomographyReport> {
    let mut rng = seeded_rng(seed, HMG_STREAM);
    let mut report = HomographyReport { quads, max_corner_error: 0.0, max_roundtrip_error: 0.0 };
    let mut done = 0;
    while done < quads {
        let (x0, y0) = (rng.random_range(0.0..200.0), rng.random_range(0.0..200.0));
        let (w, h) = (rng.random_range(5.0..200.0), rng.random_range(5.0..200.0));
        let j = 0.3 * f64::min(w, h);
        let mut c = [(x0, y0), (x0 + w, y0), (x0 + w, y0 + h), (x0, y0 + h)];
        for p in c.iter_mut() {
            p.0 += rng.random_range(-j..=j);
            p.1 += rng.random_range(-j..=j);
        }
        let Ok(q) = Quadrilateral::new(c) else { continue };
        let hmg = Homography::fit(&q)?;
        for (u, p) in UNIT_CORNERS.iter().zip(q.corners()) {
            let m = hmg.apply(*u);
            report.max_corner_error = report.max_corner_error.max((m.0 - p.0).hypot(m.1 - p.1));
        }
        for _ in 0..points {
            let p = hmg.apply((rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)));
            let back = hmg.apply(hmg.apply_inverse(p));
            report.max_roundtrip_error = report.max_roundtrip_error.max((back.0 - p.0).hypot(back.1 - p.1));
        }
        done += 1;
    }
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct LossAnchors {
    pub single: f64,
    pub uniform: f64,
    pub identity: f64,
}

impl LossAnchors {
    pub fn passed(&self) -> bool {
        self.single.abs() < 1e-12
            && (self.uniform - 2f64.ln()).abs() < 1e-9
            && (self.identity - (1.0 + (-1f64).exp()).ln()).abs() < 1e-6
    }
}

/// Closed-form values of the symmetric contrastive loss.
pub fn loss_suite() -> Result<LossAnchors> {
    let one = Mat::from_vec(1, 2, vec![1.0, 0.0]);
    let single = contrastive_loss(&one, &one, 0.0)?.loss;
    let same = Mat::from_vec(2, 2, vec![1.0, 0.0, 1.0, 0.0]);
    let uniform = contrastive_loss(&same, &same, 0.0)?.loss;
    // S = I at unit scale: each row is softmax over (1, 0).
    let eye = Mat::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
    let identity = contrastive_loss(&eye, &eye, 0.0)?.loss;
    Ok(LossAnchors { single, uniform, identity })
}
