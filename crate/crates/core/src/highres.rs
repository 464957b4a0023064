//! High-resolution inference: many noisy quadrilateral crops are warped to
//! squares, encoded, projected back onto the pixel grid and averaged; the
//! per-pixel features are then clustered and the centroids classified.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::tape::Mat;
use crate::alignment::AlignmentModel;
use crate::clustering::{assign_nearest, kmeans_fit, seeded_rng, KMeansOptions};
use crate::encoder::{Raster, VisionEncoder};
use crate::error::{Error, Result};
use crate::inference::{argmax, bilinear_index, dot, QueryBank};
use crate::segmap::SegmentationMap;
use crate::tensor::Matrix;

const CROP_STREAM: u64 = 8;
const SUBSAMPLE_STREAM: u64 = 9;
const MAX_NOISE_TRIES: usize = 8;

pub type Point = (f64, f64);

/// Four corners in pixel coordinates, ordered TL, TR, BR, BL.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quadrilateral {
    corners: [Point; 4],
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

impl Quadrilateral {
    pub fn new(corners: [Point; 4]) -> Result<Self> {
        let q = Self { corners };
        if corners.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
            return Err(Error::invalid("quadrilateral corner is not finite"));
        }
        if !q.is_convex() || q.area() <= 0.0 {
            return Err(Error::Degenerate);
        }
        Ok(q)
    }

    pub fn rect(x0: f64, y0: f64, w: f64, h: f64) -> Result<Self> {
        Self::new([(x0, y0), (x0 + w, y0), (x0 + w, y0 + h), (x0, y0 + h)])
    }

    pub fn corners(&self) -> &[Point; 4] {
        &self.corners
    }

    /// Shoelace area; positive for the TL, TR, BR, BL order in image
    /// coordinates (y down).
    pub fn area(&self) -> f64 {
        let c = &self.corners;
        0.5 * (0..4).map(|i| c[i].0 * c[(i + 1) % 4].1 - c[(i + 1) % 4].0 * c[i].1).sum::<f64>()
    }

    /// Strictly convex with a consistent (clockwise on screen) winding.
    pub fn is_convex(&self) -> bool {
        let c = &self.corners;
        (0..4).all(|i| cross(c[i], c[(i + 1) % 4], c[(i + 2) % 4]) > 1e-9)
    }

    fn bounding_box(&self) -> (f64, f64, f64, f64) {
        let xs = self.corners.iter().map(|p| p.0);
        let ys = self.corners.iter().map(|p| p.1);
        (
            xs.clone().fold(f64::INFINITY, f64::min),
            ys.clone().fold(f64::INFINITY, f64::min),
            xs.fold(f64::NEG_INFINITY, f64::max),
            ys.fold(f64::NEG_INFINITY, f64::max),
        )
    }
}

/// Projective map from the unit square onto a quadrilateral.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Homography {
    h: [f64; 9],
    inv: [f64; 9],
}

/// Solves `a x = b` for a square system by Gaussian elimination with
/// partial pivoting.
fn solve<const N: usize>(mut a: [[f64; N]; N], mut b: [f64; N]) -> Option<[f64; N]> {
    for col in 0..N {
        let piv = (col..N).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..N {
            let f = a[row][col] / a[col][col];
            for k in col..N {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; N];
    for row in (0..N).rev() {
        let s: f64 = (row + 1..N).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

fn det3(m: &[f64; 9]) -> f64 {
    m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) + m[2] * (m[3] * m[7] - m[4] * m[6])
}

fn inverse3(m: &[f64; 9]) -> Option<[f64; 9]> {
    let d = det3(m);
    if d.abs() <= 1e-12 {
        return None;
    }
    let adj = [
        m[4] * m[8] - m[5] * m[7],
        m[2] * m[7] - m[1] * m[8],
        m[1] * m[5] - m[2] * m[4],
        m[5] * m[6] - m[3] * m[8],
        m[0] * m[8] - m[2] * m[6],
        m[2] * m[3] - m[0] * m[5],
        m[3] * m[7] - m[4] * m[6],
        m[1] * m[6] - m[0] * m[7],
        m[0] * m[4] - m[1] * m[3],
    ];
    Some(adj.map(|v| v / d))
}

fn project(m: &[f64; 9], p: Point) -> Point {
    let w = m[6] * p.0 + m[7] * p.1 + m[8];
    ((m[0] * p.0 + m[1] * p.1 + m[2]) / w, (m[3] * p.0 + m[4] * p.1 + m[5]) / w)
}

pub const UNIT_CORNERS: [Point; 4] = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];

impl Homography {
    /// Direct linear solve of the four-point correspondence.
    pub fn fit(quad: &Quadrilateral) -> Result<Self> {
        let mut a = [[0.0; 8]; 8];
        let mut b = [0.0; 8];
        for (i, (&(u, v), &(x, y))) in UNIT_CORNERS.iter().zip(quad.corners()).enumerate() {
            a[2 * i] = [u, v, 1.0, 0.0, 0.0, 0.0, -u * x, -v * x];
            b[2 * i] = x;
            a[2 * i + 1] = [0.0, 0.0, 0.0, u, v, 1.0, -u * y, -v * y];
            b[2 * i + 1] = y;
        }
        let s = solve(a, b).ok_or(Error::Degenerate)?;
        let h = [s[0], s[1], s[2], s[3], s[4], s[5], s[6], s[7], 1.0];
        let inv = inverse3(&h).ok_or(Error::Degenerate)?;
        Ok(Self { h, inv })
    }

    pub fn matrix(&self) -> &[f64; 9] {
        &self.h
    }

    pub fn det(&self) -> f64 {
        det3(&self.h)
    }

    /// Unit-square coordinates → pixel coordinates.
    pub fn apply(&self, p: Point) -> Point {
        project(&self.h, p)
    }

    /// Pixel coordinates → unit-square coordinates.
    pub fn apply_inverse(&self, p: Point) -> Point {
        project(&self.inv, p)
    }
}

/// Crop sizes and placement density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropSchedule {
    pub area_fracs: Vec<f64>,
    pub noise_frac: f64,
    /// Window stride as a fraction of the shorter image side, shared by
    /// every crop size.
    pub stride_frac: f64,
}

impl Default for CropSchedule {
    fn default() -> Self {
        Self { area_fracs: vec![0.01, 0.1, 1.0], noise_frac: 0.05, stride_frac: 1.0 / 24.0 }
    }
}

fn offsets(side: f64, crop: f64, stride: f64) -> Vec<f64> {
    let mut v = vec![];
    let mut o = 0.0;
    let mut i = 0usize;
    while o + crop <= side + 1e-9 {
        v.push(o);
        i += 1;
        o = i as f64 * stride;
    }
    let last = side - crop;
    if v.last().is_none_or(|&l| l < last - 1e-9) {
        v.push(last.max(0.0));
    }
    v
}

/// Noisy quadrilateral crops in a dense sliding-window layout. Corners on
/// the image border keep their border coordinate so full-size crops always
/// cover the whole image.
pub fn sample_crops(height: usize, width: usize, schedule: &CropSchedule, seed: u64) -> Result<Vec<Quadrilateral>> {
    if height == 0 || width == 0 {
        return Err(Error::invalid("empty image"));
    }
    if schedule.area_fracs.is_empty() || schedule.area_fracs.iter().any(|&f| !(f > 0.0 && f <= 1.0)) {
        return Err(Error::invalid("area fractions must lie in (0, 1]"));
    }
    if !(0.0..0.5).contains(&schedule.noise_frac) {
        return Err(Error::invalid("noise fraction must lie in [0, 0.5)"));
    }
    if !(schedule.stride_frac > 0.0 && schedule.stride_frac <= 1.0) {
        return Err(Error::invalid("stride fraction must lie in (0, 1]"));
    }
    let (h, w) = (height as f64, width as f64);
    let stride = schedule.stride_frac * h.min(w);
    let mut rng = seeded_rng(seed, CROP_STREAM);
    let mut out = Vec::new();
    for &frac in &schedule.area_fracs {
        // Crops keep the image aspect ratio, so a unit fraction is the
        // whole image.
        let (cw, ch) = (w * frac.sqrt(), h * frac.sqrt());
        let noise = schedule.noise_frac * cw.min(ch);
        for &y0 in &offsets(h, ch, stride) {
            for &x0 in &offsets(w, cw, stride) {
                let base = [(x0, y0), (x0 + cw, y0), (x0 + cw, y0 + ch), (x0, y0 + ch)];
                out.push(jitter(base, noise, w, h, &mut rng));
            }
        }
    }
    Ok(out)
}

fn jitter(base: [Point; 4], noise: f64, w: f64, h: f64, rng: &mut impl Rng) -> Quadrilateral {
    if noise > 0.0 {
        for _ in 0..MAX_NOISE_TRIES {
            let mut c = base;
            for p in c.iter_mut() {
                let dx: f64 = rng.random_range(-noise..=noise);
                let dy: f64 = rng.random_range(-noise..=noise);
                let on_x_border = p.0 <= 0.0 || p.0 >= w;
                let on_y_border = p.1 <= 0.0 || p.1 >= h;
                if !on_x_border {
                    p.0 = (p.0 + dx).clamp(0.0, w);
                }
                if !on_y_border {
                    p.1 = (p.1 + dy).clamp(0.0, h);
                }
            }
            if let Ok(q) = Quadrilateral::new(c) {
                return q;
            }
        }
    }
    Quadrilateral::new(base).expect("axis-aligned crop is valid")
}

fn sample_bilinear(r: &Raster, x: f64, y: f64) -> [u8; 3] {
    let (h, w) = (r.height(), r.width());
    let fx = (x - 0.5).clamp(0.0, (w - 1) as f64);
    let fy = (y - 0.5).clamp(0.0, (h - 1) as f64);
    let (x0, x1, tx) = bilinear_index(fx, w);
    let (y0, y1, ty) = bilinear_index(fy, h);
    let (a, b, c, d) = (r.get(y0, x0), r.get(y0, x1), r.get(y1, x0), r.get(y1, x1));
    let mut out = [0u8; 3];
    for k in 0..3 {
        let top = a[k] as f64 * (1.0 - tx) + b[k] as f64 * tx;
        let bot = c[k] as f64 * (1.0 - tx) + d[k] as f64 * tx;
        out[k] = (top * (1.0 - ty) + bot * ty).round().clamp(0.0, 255.0) as u8;
    }
    out
}

/// Resamples the quad's content into a `size × size` raster.
pub fn warp_raster(raster: &Raster, hmg: &Homography, size: usize) -> Raster {
    let mut out = Raster::filled(size, size, [0, 0, 0]);
    for j in 0..size {
        for i in 0..size {
            let (x, y) = hmg.apply(((i as f64 + 0.5) / size as f64, (j as f64 + 0.5) / size as f64));
            out.set(j, i, sample_bilinear(raster, x, y));
        }
    }
    out
}

/// Patch outputs `f′` of one warped crop, L2-normalized per patch.
#[derive(Debug, Clone)]
pub struct CropFeatures {
    pub grid_h: usize,
    pub grid_w: usize,
    pub patches: Mat,
}

pub fn warp_extract(
    model: &AlignmentModel,
    encoder: &dyn VisionEncoder,
    raster: &Raster,
    hmg: &Homography,
    sample_res: usize,
) -> Result<CropFeatures> {
    if sample_res == 0 || !sample_res.is_multiple_of(encoder.patch_size()) {
        return Err(Error::invalid(format!("sample resolution {sample_res} is not a multiple of the patch size")));
    }
    let warped = warp_raster(raster, hmg, sample_res);
    let grid = encoder.encode(&warped)?;
    let (_, mut patches) = model.vision_values(&grid)?;
    for i in 0..patches.rows {
        let row = patches.row_mut(i);
        let n = row.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        row.iter_mut().for_each(|x| *x /= n);
    }
    Ok(CropFeatures { grid_h: grid.grid_h(), grid_w: grid.grid_w(), patches })
}

/// Running sums of projected features and their weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelFeatureField {
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub accum: Vec<f64>,
    pub weight: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplatMode {
    /// Inverse-map every covered pixel and interpolate the patch lattice.
    Gather,
    /// Push each patch feature onto its four nearest pixels.
    Scatter,
    /// Scatter followed by gather.
    Both,
}

impl PixelFeatureField {
    pub fn new(height: usize, width: usize, dim: usize) -> Self {
        Self { height, width, dim, accum: vec![0.0; height * width * dim], weight: vec![0.0; height * width] }
    }

    pub fn value(&self, y: usize, x: usize) -> Option<Vec<f64>> {
        let i = y * self.width + x;
        let w = self.weight[i];
        (w > 0.0).then(|| self.accum[i * self.dim..(i + 1) * self.dim].iter().map(|v| v / w).collect())
    }

    pub fn uncovered(&self) -> usize {
        self.weight.iter().filter(|&&w| w <= 0.0).count()
    }

    pub fn mean_weight(&self) -> f64 {
        self.weight.iter().sum::<f64>() / self.weight.len() as f64
    }

    /// Averaged features, pixel-major; errors if any pixel is uncovered.
    pub fn averaged_values(&self) -> Result<Vec<f64>> {
        let missing = self.uncovered();
        if missing > 0 {
            return Err(Error::Coverage(missing));
        }
        let mut out = self.accum.clone();
        for (i, &w) in self.weight.iter().enumerate() {
            out[i * self.dim..(i + 1) * self.dim].iter_mut().for_each(|v| *v /= w);
        }
        Ok(out)
    }

    /// Averaged features, L2-normalized per pixel.
    pub fn normalized_values(&self) -> Result<Vec<f64>> {
        let mut out = self.averaged_values()?;
        for row in out.chunks_exact_mut(self.dim) {
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            row.iter_mut().for_each(|x| *x /= n);
        }
        Ok(out)
    }

    /// Adds one crop's features.
    pub fn splat(&mut self, crop: &CropFeatures, hmg: &Homography, quad: &Quadrilateral, mode: SplatMode) {
        match mode {
            SplatMode::Gather => {
                let width = self.width;
                let dim = self.dim;
                let rows = self.accum.par_chunks_mut(width * dim).zip(self.weight.par_chunks_mut(width));
                rows.enumerate().for_each(|(y, (acc, wt))| gather_row(acc, wt, y, dim, crop, hmg, quad));
            }
            SplatMode::Scatter => self.scatter(crop, hmg),
            SplatMode::Both => {
                self.scatter(crop, hmg);
                self.splat(crop, hmg, quad, SplatMode::Gather);
            }
        }
    }

    fn scatter(&mut self, crop: &CropFeatures, hmg: &Homography) {
        let (gh, gw, d) = (crop.grid_h, crop.grid_w, self.dim);
        for r in 0..gh {
            for c in 0..gw {
                let (x, y) = hmg.apply(((c as f64 + 0.5) / gw as f64, (r as f64 + 0.5) / gh as f64));
                let (fx, fy) = (x - 0.5, y - 0.5);
                let (x0, y0) = (fx.floor(), fy.floor());
                let (tx, ty) = (fx - x0, fy - y0);
                let f = crop.patches.row(r * gw + c);
                for (dy, wy) in [(0.0, 1.0 - ty), (1.0, ty)] {
                    for (dx, wx) in [(0.0, 1.0 - tx), (1.0, tx)] {
                        let (px, py) = (x0 + dx, y0 + dy);
                        let wgt = wx * wy;
                        if wgt <= 0.0 || px < 0.0 || py < 0.0 || px >= self.width as f64 || py >= self.height as f64 {
                            continue;
                        }
                        let i = py as usize * self.width + px as usize;
                        for (a, v) in self.accum[i * d..(i + 1) * d].iter_mut().zip(f) {
                            *a += wgt * v;
                        }
                        self.weight[i] += wgt;
                    }
                }
            }
        }
    }

    pub fn merge(&mut self, other: &PixelFeatureField) {
        for (a, b) in self.accum.iter_mut().zip(&other.accum) {
            *a += b;
        }
        for (a, b) in self.weight.iter_mut().zip(&other.weight) {
            *a += b;
        }
    }
}

const INSIDE_EPS: f64 = 1e-9;

fn gather_row(acc: &mut [f64], wt: &mut [f64], y: usize, dim: usize, crop: &CropFeatures, hmg: &Homography, quad: &Quadrilateral) {
    let (x_min, y_min, x_max, y_max) = quad.bounding_box();
    let py = y as f64 + 0.5;
    if py < y_min || py > y_max {
        return;
    }
    let width = wt.len();
    let x_lo = (x_min - 0.5).ceil().max(0.0) as usize;
    let x_hi = ((x_max - 0.5).floor().max(-1.0) as isize).min(width as isize - 1);
    let (gh, gw) = (crop.grid_h, crop.grid_w);
    for x in x_lo..(x_hi + 1).max(0) as usize {
        let (u, v) = hmg.apply_inverse((x as f64 + 0.5, py));
        if !(-INSIDE_EPS..=1.0 + INSIDE_EPS).contains(&u) || !(-INSIDE_EPS..=1.0 + INSIDE_EPS).contains(&v) {
            continue;
        }
        let a = (u * gw as f64 - 0.5).clamp(0.0, (gw - 1) as f64);
        let b = (v * gh as f64 - 0.5).clamp(0.0, (gh - 1) as f64);
        let (c0, c1, tx) = bilinear_index(a, gw);
        let (r0, r1, ty) = bilinear_index(b, gh);
        let out = &mut acc[x * dim..(x + 1) * dim];
        let p = &crop.patches;
        let (f00, f01, f10, f11) = (p.row(r0 * gw + c0), p.row(r0 * gw + c1), p.row(r1 * gw + c0), p.row(r1 * gw + c1));
        for k in 0..dim {
            let top = f00[k] * (1.0 - tx) + f01[k] * tx;
            let bot = f10[k] * (1.0 - tx) + f11[k] * tx;
            out[k] += top * (1.0 - ty) + bot * ty;
        }
        wt[x] += 1.0;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HighResParams {
    pub schedule: CropSchedule,
    /// Side of the warped square; defaults to the model's training input size.
    pub sample_res: Option<usize>,
    pub k: usize,
    pub seed: u64,
    pub splat: SplatMode,
    /// Upper bound on pixels used to fit k-means; all pixels are assigned.
    pub max_fit_pixels: usize,
}

impl HighResParams {
    pub fn new(seed: u64) -> Self {
        Self { schedule: CropSchedule::default(), sample_res: None, k: 32, seed, splat: SplatMode::Gather, max_fit_pixels: 65536 }
    }

    pub fn resolved_sample_res(&self, model: &AlignmentModel) -> usize {
        self.sample_res.unwrap_or(model.config().train_grid * model.config().encoder.patch_size)
    }
}

/// Runs every crop and accumulates the pixel feature field.
pub fn build_field(
    model: &AlignmentModel,
    encoder: &dyn VisionEncoder,
    raster: &Raster,
    params: &HighResParams,
) -> Result<PixelFeatureField> {
    if encoder.dim() != model.config().dim {
        return Err(Error::DimMismatch { expected: model.config().dim, got: encoder.dim() });
    }
    let res = params.resolved_sample_res(model);
    let quads = sample_crops(raster.height(), raster.width(), &params.schedule, params.seed)?;
    let crops: Vec<(Quadrilateral, Homography, CropFeatures)> = quads
        .into_par_iter()
        .map(|q| {
            let hmg = Homography::fit(&q)?;
            let f = warp_extract(model, encoder, raster, &hmg, res)?;
            Ok((q, hmg, f))
        })
        .collect::<Result<_>>()?;
    let mut field = PixelFeatureField::new(raster.height(), raster.width(), model.config().dim);
    // Crops are applied in schedule order; rows are independent, so the
    // result does not depend on the thread count.
    for (q, hmg, f) in &crops {
        field.splat(f, hmg, q, params.splat);
    }
    Ok(field)
}

/// Pixel-major scores of the averaged (not renormalized) field against the
/// patch-aligned query slices.
pub fn field_logits(field: &PixelFeatureField, queries: &QueryBank) -> Result<Vec<f64>> {
    let vals = field.averaged_values()?;
    let nq = queries.len();
    let mut out = vec![0.0; field.height * field.width * nq];
    out.par_chunks_mut(nq).zip(vals.par_chunks(field.dim)).for_each(|(o, f)| {
        for (q, s) in o.iter_mut().enumerate() {
            *s = dot(f, queries.patch_part(q));
        }
    });
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct HighResOutput {
    pub map: SegmentationMap,
    pub crops: usize,
    pub mean_visits: f64,
    pub centroid_classes: Vec<u16>,
}

pub fn highres_segment(
    model: &AlignmentModel,
    encoder: &dyn VisionEncoder,
    raster: &Raster,
    queries: &QueryBank,
    params: &HighResParams,
) -> Result<HighResOutput> {
    if params.k == 0 {
        return Err(Error::invalid("k must be positive"));
    }
    let field = build_field(model, encoder, raster, params)?;
    let crops = sample_crops(raster.height(), raster.width(), &params.schedule, params.seed)?.len();
    let feats = field.normalized_values()?;
    let n = raster.height() * raster.width();
    let dim = field.dim;
    let all = Matrix::new(n, dim, feats.iter().map(|&v| v as f32).collect())?;
    let fit = if n > params.max_fit_pixels {
        let mut rng = seeded_rng(params.seed, SUBSAMPLE_STREAM);
        let mut idx = rand::seq::index::sample(&mut rng, n, params.max_fit_pixels).into_vec();
        idx.sort_unstable();
        let mut data = Vec::with_capacity(idx.len() * dim);
        for i in idx {
            data.extend_from_slice(all.row(i));
        }
        Matrix::new(params.max_fit_pixels, dim, data)?
    } else {
        all.clone()
    };
    let k = params.k.min(fit.rows());
    let km = kmeans_fit(&fit, k, params.seed, &KMeansOptions::default())?;
    let assignment = if n > params.max_fit_pixels { assign_nearest(&all, &km.centroids)? } else { km.assignment };
    let centroid_classes: Vec<u16> = km
        .centroids
        .iter_rows()
        .map(|c| {
            let c: Vec<f64> = c.iter().map(|&v| v as f64).collect();
            let c = crate::inference::normalized(&c);
            let scores: Vec<f64> = (0..queries.len()).map(|q| dot(&c, queries.patch_part(q))).collect();
            argmax(&scores) as u16
        })
        .collect();
    let labels = assignment.iter().map(|&a| centroid_classes[a as usize]).collect();
    let map = SegmentationMap::new(raster.height(), raster.width(), labels, queries.names().to_vec())?;
    Ok(HighResOutput { map, crops, mean_visits: field.mean_weight(), centroid_classes })
}

/// Mean number of crops covering a pixel (pixel centre inside the quad).
pub fn visit_statistics(height: usize, width: usize, quads: &[Quadrilateral]) -> Result<(f64, usize)> {
    let mut count = vec![0u32; height * width];
    for q in quads {
        let hmg = Homography::fit(q)?;
        let (x_min, y_min, x_max, y_max) = q.bounding_box();
        let y_lo = (y_min - 0.5).ceil().max(0.0) as usize;
        let y_hi = ((y_max - 0.5).floor() as isize).min(height as isize - 1);
        let x_lo = (x_min - 0.5).ceil().max(0.0) as usize;
        let x_hi = ((x_max - 0.5).floor() as isize).min(width as isize - 1);
        for y in y_lo..(y_hi + 1).max(0) as usize {
            for x in x_lo..(x_hi + 1).max(0) as usize {
                let (u, v) = hmg.apply_inverse((x as f64 + 0.5, y as f64 + 0.5));
                if (-INSIDE_EPS..=1.0 + INSIDE_EPS).contains(&u) && (-INSIDE_EPS..=1.0 + INSIDE_EPS).contains(&v) {
                    count[y * width + x] += 1;
                }
            }
        }
    }
    let zero = count.iter().filter(|&&c| c == 0).count();
    Ok((count.iter().map(|&c| c as f64).sum::<f64>() / count.len() as f64, zero))
}
