//! Zero-shot use of a trained model: global classification and retrieval,
//! dense patch logits, and sliding-window segmentation.

use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::tape::{Mat, Tape};
use crate::alignment::AlignmentModel;
use crate::encoder::{Raster, VisionEncoder};
use crate::error::{Error, Result};
use crate::records::FeatureGrid;
use crate::segmap::SegmentationMap;

/// A class name rendered through a template with one `{}` placeholder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassPrompt {
    pub class_name: String,
    pub template: String,
}

impl ClassPrompt {
    pub fn new(class_name: impl Into<String>, template: Option<&str>) -> Result<Self> {
        let template = template.unwrap_or("{}").to_string();
        if template.matches("{}").count() != 1 {
            return Err(Error::invalid(format!("template {template:?} needs exactly one {{}} placeholder")));
        }
        let p = Self { class_name: class_name.into(), template };
        if p.render().trim().is_empty() {
            return Err(Error::invalid("prompt renders to an empty string"));
        }
        Ok(p)
    }

    pub fn render(&self) -> String {
        self.template.replacen("{}", &self.class_name, 1)
    }
}

pub fn prompts_for(names: &[String], template: Option<&str>) -> Result<Vec<ClassPrompt>> {
    names.iter().map(|n| ClassPrompt::new(n.clone(), template)).collect()
}

pub(crate) fn normalized(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.iter().map(|x| x / n).collect()
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Embedded text queries in the three views inference needs.
#[derive(Debug, Clone)]
pub struct QueryBank {
    names: Vec<String>,
    half: usize,
    full: Vec<Vec<f64>>,
    descriptor: Vec<Vec<f64>>,
    patch: Vec<Vec<f64>>,
}

impl QueryBank {
    pub fn len(&self) -> usize {
        self.full.len()
    }

    pub fn is_empty(&self) -> bool {
        self.full.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Whole-vector normalized 2D embedding.
    pub fn full(&self, q: usize) -> &[f64] {
        &self.full[q]
    }

    /// Normalized like the image descriptor during training.
    pub fn descriptor(&self, q: usize) -> &[f64] {
        &self.descriptor[q]
    }

    /// The slice aligned with patch tokens, normalized on its own.
    pub fn patch_part(&self, q: usize) -> &[f64] {
        &self.patch[q]
    }

    pub fn cls_part(&self, q: usize) -> &[f64] {
        &self.full[q][..self.half]
    }
}

/// Descriptor normalization exactly as applied in training.
fn train_normalize(model: &AlignmentModel, v: Vec<f64>) -> Vec<f64> {
    let mut tape = Tape::new(&[]);
    let x = tape.leaf(Mat::row_vector(v));
    let y = model.normalize(&mut tape, x);
    tape.value(y).data.clone()
}

/// Raw 2D embedding → descriptor-width vector, normalized as in training.
pub fn text_descriptor(model: &AlignmentModel, full: &[f64]) -> Vec<f64> {
    let d = model.config().descriptor_dim();
    train_normalize(model, full[..d].to_vec())
}

/// Range of the text output that is compared with individual patches:
/// the second half for concatenating modes, the first half otherwise.
pub fn patch_range(model: &AlignmentModel) -> std::ops::Range<usize> {
    let d = model.config().dim;
    if model.config().pooling.is_concat() {
        d..2 * d
    } else {
        0..d
    }
}

pub fn embed_queries(model: &AlignmentModel, prompts: &[ClassPrompt]) -> Result<QueryBank> {
    if prompts.is_empty() {
        return Err(Error::invalid("at least one query is required"));
    }
    let raw: Vec<Vec<f64>> =
        prompts.par_iter().map(|p| model.encode_ids(&model.tokenize(&p.render()))).collect::<Result<_>>()?;
    let range = patch_range(model);
    Ok(QueryBank {
        names: prompts.iter().map(|p| p.class_name.clone()).collect(),
        half: model.config().dim,
        full: raw.iter().map(|v| normalized(v)).collect(),
        descriptor: raw.iter().map(|v| text_descriptor(model, v)).collect(),
        patch: raw.iter().map(|v| normalized(&v[range.clone()])).collect(),
    })
}

/// Best class and the cosine score for every query.
pub fn classify(model: &AlignmentModel, grid: &FeatureGrid, queries: &QueryBank) -> Result<(usize, Vec<f64>)> {
    let g = model.image_descriptor(grid)?;
    let scores: Vec<f64> = (0..queries.len()).map(|q| dot(&g, queries.descriptor(q))).collect();
    Ok((argmax(&scores), scores))
}

/// Text→image Recall@1 over precomputed, normalized descriptors.
pub fn recall_at_1(images: &[Vec<f64>], texts: &[Vec<f64>]) -> Result<f64> {
    if images.len() != texts.len() {
        return Err(Error::DimMismatch { expected: images.len(), got: texts.len() });
    }
    if images.is_empty() {
        return Err(Error::invalid("retrieval needs at least one pair"));
    }
    let hits = texts
        .iter()
        .enumerate()
        .filter(|(i, t)| {
            let scores: Vec<f64> = images.iter().map(|g| dot(g, t)).collect();
            argmax(&scores) == *i
        })
        .count();
    Ok(hits as f64 / texts.len() as f64)
}

pub fn retrieve_r1(model: &AlignmentModel, grids: &[FeatureGrid], captions: &[String]) -> Result<f64> {
    if grids.len() != captions.len() {
        return Err(Error::DimMismatch { expected: grids.len(), got: captions.len() });
    }
    let images: Vec<Vec<f64>> = grids.par_iter().map(|g| model.image_descriptor(g)).collect::<Result<_>>()?;
    let texts: Vec<Vec<f64>> = captions
        .par_iter()
        .map(|c| Ok(text_descriptor(model, &model.encode_ids(&model.tokenize(c))?)))
        .collect::<Result<_>>()?;
    recall_at_1(&images, &texts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingMode {
    /// Patch output against the patch-aligned text slice.
    Patch,
    /// `[c′; f′_p]` against the full text embedding.
    ClsPatch,
}

impl FromStr for EmbeddingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "patch" => Ok(Self::Patch),
            "cls_patch" => Ok(Self::ClsPatch),
            _ => Err(Error::invalid(format!("unknown embedding mode {s:?}"))),
        }
    }
}

/// Per-cell query scores with accumulation weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVolume {
    pub height: usize,
    pub width: usize,
    pub queries: usize,
    pub logits: Vec<f64>,
    pub weights: Vec<f64>,
}

impl LogitVolume {
    pub fn zeros(height: usize, width: usize, queries: usize) -> Self {
        Self { height, width, queries, logits: vec![0.0; height * width * queries], weights: vec![0.0; height * width] }
    }

    pub fn cell(&self, r: usize, c: usize) -> &[f64] {
        let i = (r * self.width + c) * self.queries;
        &self.logits[i..i + self.queries]
    }

    pub fn weight(&self, r: usize, c: usize) -> f64 {
        self.weights[r * self.width + c]
    }

    /// Adds `other` with weight 1 at cell offset `(r0, c0)`.
    pub fn accumulate(&mut self, other: &LogitVolume, r0: usize, c0: usize) {
        debug_assert_eq!(self.queries, other.queries);
        for r in 0..other.height {
            for c in 0..other.width {
                let dst = ((r0 + r) * self.width + c0 + c) * self.queries;
                let src = (r * other.width + c) * other.queries;
                for q in 0..self.queries {
                    self.logits[dst + q] += other.logits[src + q];
                }
                self.weights[(r0 + r) * self.width + c0 + c] += 1.0;
            }
        }
    }

    /// Divides every cell by its weight; fails if any cell is uncovered.
    pub fn averaged(&self) -> Result<LogitVolume> {
        let mut out = self.clone();
        for (i, &w) in self.weights.iter().enumerate() {
            if w <= 0.0 {
                return Err(Error::Coverage(1));
            }
            for v in &mut out.logits[i * self.queries..(i + 1) * self.queries] {
                *v /= w;
            }
            out.weights[i] = 1.0;
        }
        Ok(out)
    }
}

/// Cosine logits between every patch and every query.
pub fn dense_logits(model: &AlignmentModel, grid: &FeatureGrid, queries: &QueryBank, mode: EmbeddingMode) -> Result<LogitVolume> {
    let (cls, patches) = model.vision_values(grid)?;
    let (h, w, nq) = (grid.grid_h(), grid.grid_w(), queries.len());
    let mut vol = LogitVolume::zeros(h, w, nq);
    for p in 0..h * w {
        let feat = match mode {
            EmbeddingMode::Patch => normalized(patches.row(p)),
            EmbeddingMode::ClsPatch => {
                let mut v = cls.clone();
                v.extend_from_slice(patches.row(p));
                normalized(&v)
            }
        };
        for q in 0..nq {
            let t = match mode {
                EmbeddingMode::Patch => queries.patch_part(q),
                EmbeddingMode::ClsPatch => queries.full(q),
            };
            vol.logits[p * nq + q] = dot(&feat, t);
        }
        vol.weights[p] = 1.0;
    }
    Ok(vol)
}

/// Lattice coordinate of pixel index `i` when `cells` cells span `pixels`
/// pixels: cell centres sit at half-integer pixel positions.
#[inline]
pub(crate) fn lattice_coord(i: usize, pixels: usize, cells: usize) -> f64 {
    ((i as f64 + 0.5) * cells as f64 / pixels as f64 - 0.5).clamp(0.0, (cells - 1) as f64)
}

/// Bilinear weights `(i0, i1, t)` for a clamped lattice coordinate.
#[inline]
pub(crate) fn bilinear_index(u: f64, cells: usize) -> (usize, usize, f64) {
    let i0 = (u.floor() as usize).min(cells - 1);
    let i1 = (i0 + 1).min(cells - 1);
    (i0, i1, u - i0 as f64)
}

/// Bilinear resize of a (cell-averaged) volume to `height × width` pixels;
/// returns pixel-major logits.
pub fn upsample(vol: &LogitVolume, height: usize, width: usize) -> Vec<f64> {
    let nq = vol.queries;
    let mut out = vec![0.0; height * width * nq];
    let cols: Vec<(usize, usize, f64)> =
        (0..width).map(|x| bilinear_index(lattice_coord(x, width, vol.width), vol.width)).collect();
    for y in 0..height {
        let (r0, r1, ty) = bilinear_index(lattice_coord(y, height, vol.height), vol.height);
        for (x, &(c0, c1, tx)) in cols.iter().enumerate() {
            let o = &mut out[(y * width + x) * nq..(y * width + x + 1) * nq];
            let (a, b, c, d) = (vol.cell(r0, c0), vol.cell(r0, c1), vol.cell(r1, c0), vol.cell(r1, c1));
            for q in 0..nq {
                let top = a[q] * (1.0 - tx) + b[q] * tx;
                let bot = c[q] * (1.0 - tx) + d[q] * tx;
                o[q] = top * (1.0 - ty) + bot * ty;
            }
        }
    }
    out
}

/// Per-pixel argmax over pixel-major logits.
pub fn argmax_map(logits: &[f64], height: usize, width: usize, names: &[String]) -> Result<SegmentationMap> {
    let nq = names.len();
    let labels = logits.chunks_exact(nq).map(|s| argmax(s) as u16).collect();
    SegmentationMap::new(height, width, labels, names.to_vec())
}

/// Window offsets along one axis: every `stride`, the last snapped to the edge.
pub fn window_offsets(side: usize, window: usize, stride: usize) -> Vec<usize> {
    let mut v: Vec<usize> = (0..).map(|i| i * stride).take_while(|&o| o + window <= side).collect();
    if *v.last().unwrap() + window < side {
        v.push(side - window);
    }
    v
}

/// Default window: the grid size seen in training, in pixels.
pub fn default_window(model: &AlignmentModel) -> usize {
    model.config().train_grid * model.config().encoder.patch_size
}

/// Averaged logit volume over all sliding windows of a raster.
pub fn sliding_window_logits(
    model: &AlignmentModel,
    encoder: &dyn VisionEncoder,
    raster: &Raster,
    queries: &QueryBank,
    window: usize,
    stride: usize,
    mode: EmbeddingMode,
) -> Result<LogitVolume> {
    let ps = encoder.patch_size();
    let (h, w) = (raster.height(), raster.width());
    if window == 0 || window > h || window > w {
        return Err(Error::invalid(format!("window {window} does not fit a {h}x{w} image")));
    }
    if stride == 0 {
        return Err(Error::invalid("stride must be at least 1"));
    }
    if !window.is_multiple_of(ps) || !stride.is_multiple_of(ps) || h % ps != 0 || w % ps != 0 {
        return Err(Error::invalid(format!("image, window and stride must be multiples of the patch size {ps}")));
    }
    let placements: Vec<(usize, usize)> = window_offsets(h, window, stride)
        .into_iter()
        .flat_map(|y| window_offsets(w, window, stride).into_iter().map(move |x| (y, x)))
        .collect();
    let parts: Vec<LogitVolume> = placements
        .par_iter()
        .map(|&(y, x)| dense_logits(model, &encoder.encode(&raster.crop(y, x, window, window)?)?, queries, mode))
        .collect::<Result<_>>()?;
    let mut vol = LogitVolume::zeros(h / ps, w / ps, queries.len());
    for (&(y, x), part) in placements.iter().zip(&parts) {
        vol.accumulate(part, y / ps, x / ps);
    }
    Ok(vol)
}

pub fn sliding_window_segment(
    model: &AlignmentModel,
    encoder: &dyn VisionEncoder,
    raster: &Raster,
    queries: &QueryBank,
    window: usize,
    stride: usize,
    mode: EmbeddingMode,
) -> Result<SegmentationMap> {
    let vol = sliding_window_logits(model, encoder, raster, queries, window, stride, mode)?.averaged()?;
    let px = upsample(&vol, raster.height(), raster.width());
    argmax_map(&px, raster.height(), raster.width(), queries.names())
}
