//! Segmentation and classification metrics, the ground-truth-mask topline
//! and class-name search.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::AlignmentModel;
use crate::encoder::{Raster, VisionEncoder};
use crate::error::{Error, Result};
use crate::highres::{build_field, HighResParams};
use crate::inference::{argmax, dot, embed_queries, normalized, ClassPrompt, QueryBank};
use crate::segmap::SegmentationMap;

/// Rows are ground truth, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<u64>,
}

const CHUNK: usize = 4096;

impl ConfusionMatrix {
    pub fn from_maps(pred: &SegmentationMap, gt: &SegmentationMap) -> Result<Self> {
        if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
            return Err(Error::DimMismatch { expected: gt.height() * gt.width(), got: pred.height() * pred.width() });
        }
        if pred.class_names() != gt.class_names() {
            return Err(Error::invalid("prediction and ground truth use different class lists"));
        }
        let c = gt.num_classes();
        let (ig_p, ig_g) = (pred.ignore_index(), gt.ignore_index());
        let partials: Vec<Vec<u64>> = gt
            .labels()
            .par_chunks(CHUNK)
            .zip(pred.labels().par_chunks(CHUNK))
            .map(|(g, p)| {
                let mut m = vec![0u64; c * c];
                for (&g, &p) in g.iter().zip(p) {
                    if g == ig_g || p == ig_p {
                        continue;
                    }
                    m[g as usize * c + p as usize] += 1;
                }
                m
            })
            .collect();
        let mut counts = vec![0u64; c * c];
        for part in partials {
            for (a, b) in counts.iter_mut().zip(part) {
                *a += b;
            }
        }
        Ok(Self { classes: c, counts })
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// IoU per class; `None` for classes absent from both maps.
    pub fn ious(&self) -> Vec<Option<f64>> {
        let c = self.classes;
        (0..c)
            .map(|k| {
                let tp = self.get(k, k);
                let fn_: u64 = (0..c).map(|p| self.get(k, p)).sum::<u64>() - tp;
                let fp: u64 = (0..c).map(|g| self.get(g, k)).sum::<u64>() - tp;
                let denom = tp + fp + fn_;
                (denom > 0).then(|| tp as f64 / denom as f64)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiouReport {
    pub miou: f64,
    pub per_class: Vec<Option<f64>>,
    pub confusion: ConfusionMatrix,
}

fn mean_present(ious: &[Option<f64>]) -> f64 {
    let present: Vec<f64> = ious.iter().flatten().copied().collect();
    if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    }
}

pub fn miou(pred: &SegmentationMap, gt: &SegmentationMap) -> Result<MiouReport> {
    miou_many(&[(pred, gt)])
}

/// mIoU over a dataset: confusion matrices are summed before the IoU.
pub fn miou_many(pairs: &[(&SegmentationMap, &SegmentationMap)]) -> Result<MiouReport> {
    let first = pairs.first().ok_or_else(|| Error::invalid("no maps to evaluate"))?;
    let c = first.1.num_classes();
    let mut total = ConfusionMatrix { classes: c, counts: vec![0; c * c] };
    for (p, g) in pairs {
        let cm = ConfusionMatrix::from_maps(p, g)?;
        if cm.classes != c {
            return Err(Error::invalid("class count differs between maps"));
        }
        for (a, b) in total.counts.iter_mut().zip(cm.counts) {
            *a += b;
        }
    }
    let per_class = total.ious();
    Ok(MiouReport { miou: mean_present(&per_class), per_class, confusion: total })
}

pub fn accuracy(preds: &[usize], gts: &[usize]) -> Result<f64> {
    if preds.len() != gts.len() {
        return Err(Error::DimMismatch { expected: gts.len(), got: preds.len() });
    }
    if preds.is_empty() {
        return Err(Error::invalid("accuracy of an empty set"));
    }
    Ok(preds.iter().zip(gts).filter(|(a, b)| a == b).count() as f64 / preds.len() as f64)
}

/// Mean field feature over every ground-truth segment, keyed by label.
fn segment_means(field: &[f64], dim: usize, gt: &SegmentationMap) -> Vec<Option<(Vec<f64>, u64)>> {
    let mut sums = vec![None::<(Vec<f64>, u64)>; gt.num_classes()];
    for (i, &l) in gt.labels().iter().enumerate() {
        if l == gt.ignore_index() {
            continue;
        }
        let entry = sums[l as usize].get_or_insert_with(|| (vec![0.0; dim], 0));
        for (a, b) in entry.0.iter_mut().zip(&field[i * dim..(i + 1) * dim]) {
            *a += b;
        }
        entry.1 += 1;
    }
    sums
}

#[derive(Debug, Clone)]
pub struct ToplineResult {
    pub map: SegmentationMap,
    pub miou: MiouReport,
}

/// Replaces clustering with the ground-truth segments: each segment's mean
/// pixel feature is classified against the patch-aligned query slices.
pub fn topline_with_gt_masks(
    model: &AlignmentModel,
    encoder: &dyn VisionEncoder,
    raster: &Raster,
    gt: &SegmentationMap,
    queries: &QueryBank,
    params: &HighResParams,
) -> Result<ToplineResult> {
    if (gt.height(), gt.width()) != (raster.height(), raster.width()) {
        return Err(Error::DimMismatch { expected: raster.height() * raster.width(), got: gt.height() * gt.width() });
    }
    if gt.labels().iter().all(|&l| l == gt.ignore_index()) {
        return Err(Error::invalid("ground truth has no labelled segments"));
    }
    let field = build_field(model, encoder, raster, params)?.normalized_values()?;
    let dim = model.config().dim;
    let class_of: Vec<Option<u16>> = segment_means(&field, dim, gt)
        .into_iter()
        .map(|seg| {
            seg.map(|(sum, _)| {
                let m = normalized(&sum);
                let scores: Vec<f64> = (0..queries.len()).map(|q| dot(&m, queries.patch_part(q))).collect();
                argmax(&scores) as u16
            })
        })
        .collect();
    let labels = gt
        .labels()
        .iter()
        .map(|&l| if l == gt.ignore_index() { gt.ignore_index() } else { class_of[l as usize].unwrap() })
        .collect();
    let map = SegmentationMap::with_ignore(gt.height(), gt.width(), labels, queries.names().to_vec(), gt.ignore_index())?;
    let gt_named = gt.with_class_names(queries.names().to_vec())?;
    let miou = miou(&map, &gt_named)?;
    Ok(ToplineResult { map, miou })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NameChoice {
    pub class: String,
    pub chosen: String,
    pub similarity: f64,
    /// True when the class had no pixels and kept its original name.
    pub flagged: bool,
}

/// For every ground-truth class, picks the vocabulary word whose
/// patch-aligned embedding is closest to the class's mean pixel feature.
pub fn optimize_class_names(
    model: &AlignmentModel,
    encoder: &dyn VisionEncoder,
    dataset: &[(Raster, SegmentationMap)],
    vocab: &[String],
    template: Option<&str>,
    params: &HighResParams,
) -> Result<Vec<NameChoice>> {
    if vocab.is_empty() {
        return Err(Error::invalid("candidate vocabulary is empty"));
    }
    let (_, first_gt) = dataset.first().ok_or_else(|| Error::invalid("empty dataset"))?;
    let classes = first_gt.class_names().to_vec();
    let dim = model.config().dim;
    let mut sums: Vec<(Vec<f64>, u64)> = vec![(vec![0.0; dim], 0); classes.len()];
    for (raster, gt) in dataset {
        if gt.class_names() != classes.as_slice() {
            return Err(Error::invalid("ground-truth maps use different class lists"));
        }
        let field = build_field(model, encoder, raster, params)?.normalized_values()?;
        for (k, seg) in segment_means(&field, dim, gt).into_iter().enumerate() {
            if let Some((s, n)) = seg {
                for (a, b) in sums[k].0.iter_mut().zip(s) {
                    *a += b;
                }
                sums[k].1 += n;
            }
        }
    }
    let prompts: Vec<ClassPrompt> = vocab.iter().map(|w| ClassPrompt::new(w.clone(), template)).collect::<Result<_>>()?;
    let bank = embed_queries(model, &prompts)?;
    Ok(classes
        .iter()
        .zip(sums)
        .map(|(name, (sum, n))| {
            if n == 0 {
                return NameChoice { class: name.clone(), chosen: name.clone(), similarity: f64::NAN, flagged: true };
            }
            let m = normalized(&sum);
            let scores: Vec<f64> = (0..bank.len()).map(|q| dot(&m, bank.patch_part(q))).collect();
            let best = argmax(&scores);
            NameChoice { class: name.clone(), chosen: vocab[best].clone(), similarity: scores[best], flagged: false }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    fn map(h: usize, w: usize, labels: Vec<u16>, c: usize) -> SegmentationMap {
        SegmentationMap::new(h, w, labels, names(c)).unwrap()
    }

    #[test]
    fn hand_example() {
        let gt = map(2, 2, vec![0, 0, 1, 1], 2);
        let pred = map(2, 2, vec![0, 1, 1, 1], 2);
        let r = miou(&pred, &gt).unwrap();
        assert!((r.per_class[0].unwrap() - 0.5).abs() < 1e-15);
        assert!((r.per_class[1].unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.miou - 7.0 / 12.0).abs() < 1e-15);
        assert_eq!(r.confusion.total(), 4);
    }

    #[test]
    fn identity_disjoint_and_errors() {
        let gt = map(2, 2, vec![0, 0, 1, 1], 3);
        assert_eq!(miou(&gt, &gt).unwrap().miou, 1.0);
        let a = map(1, 2, vec![0, 0], 2);
        let b = map(1, 2, vec![1, 1], 2);
        assert_eq!(miou(&a, &b).unwrap().miou, 0.0);
        assert!(miou(&map(1, 2, vec![0, 0], 2), &map(2, 1, vec![0, 0], 2)).is_err());
        let ig = SegmentationMap::new(1, 2, vec![0, crate::segmap::DEFAULT_IGNORE], names(2)).unwrap();
        assert_eq!(ConfusionMatrix::from_maps(&ig, &a).unwrap().total(), 1);
    }

    #[test]
    fn accuracy_cases() {
        assert_eq!(accuracy(&[1, 2], &[1, 2]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 0], &[1, 1]).unwrap(), 0.0);
        assert!((accuracy(&[0, 1, 2], &[0, 1, 0]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(accuracy(&[0], &[0, 1]).is_err());
    }

    /// Independent recount: per class, scan every pixel.
    fn brute(pred: &[u16], gt: &[u16], c: usize) -> f64 {
        let mut ious = vec![];
        for k in 0..c as u16 {
            let (mut tp, mut fp, mut fn_) = (0, 0, 0);
            for (&p, &g) in pred.iter().zip(gt) {
                match (p == k, g == k) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    _ => {}
                }
            }
            if tp + fp + fn_ > 0 {
                ious.push(tp as f64 / (tp + fp + fn_) as f64);
            }
        }
        ious.iter().sum::<f64>() / ious.len() as f64
    }

    proptest! {
        #[test]
        fn matches_brute_force(h in 1usize..=8, w in 1usize..=8, c in 1usize..=4, seed in any::<u64>()) {
            let mut s = seed;
            let mut next = || { s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407); ((s >> 33) % c as u64) as u16 };
            let p: Vec<u16> = (0..h * w).map(|_| next()).collect();
            let g: Vec<u16> = (0..h * w).map(|_| next()).collect();
            let r = miou(&map(h, w, p.clone(), c), &map(h, w, g.clone(), c)).unwrap();
            prop_assert_eq!(r.miou, brute(&p, &g, c));
            // consistent relabelling
            let perm: Vec<u16> = (0..c as u16).rev().collect();
            let pp: Vec<u16> = p.iter().map(|&l| perm[l as usize]).collect();
            let gp: Vec<u16> = g.iter().map(|&l| perm[l as usize]).collect();
            let r2 = miou(&map(h, w, pp, c), &map(h, w, gp, c)).unwrap();
            prop_assert!((r.miou - r2.miou).abs() < 1e-12);
        }
    }
}
