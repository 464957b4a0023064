//! The frozen vision side: a common encoder interface, a colour-anchored
//! synthetic encoder with known ground truth, a file-backed provider for
//! precomputed features, and the shapes corpus generator.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::clustering::seeded_rng;
use crate::error::{Error, FormatError, Result};
use crate::formats::{self, ByteReader, ByteWriter, CaptionLine};
use crate::records::FeatureGrid;
use crate::segmap::{self, SegmentationMap};
use crate::tensor::{Matrix, Vector};

pub const RASTER_MAGIC: &[u8; 4] = b"DTXR";
pub const DEFAULT_PATCH_SIZE: usize = 14;
pub const DEFAULT_JITTER: f32 = 0.05;
/// Colour cube quantization per channel.
pub const COLOR_LEVELS: usize = 4;
pub const COLOR_BINS: usize = COLOR_LEVELS * COLOR_LEVELS * COLOR_LEVELS;

/// 8-bit RGB image, row-major, interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    height: usize,
    width: usize,
    pixels: Vec<u8>,
}

impl Raster {
    pub fn new(height: usize, width: usize, pixels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("raster must be non-empty"));
        }
        if pixels.len() != height * width * 3 {
            return Err(Error::DimMismatch { expected: height * width * 3, got: pixels.len() });
        }
        Ok(Self { height, width, pixels })
    }

    pub fn filled(height: usize, width: usize, rgb: [u8; 3]) -> Self {
        let pixels = rgb.iter().copied().cycle().take(height * width * 3).collect();
        Self { height, width, pixels }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn fill_rect(&mut self, y0: usize, x0: usize, h: usize, w: usize, rgb: [u8; 3]) {
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                self.set(y, x, rgb);
            }
        }
    }

    /// Copy of the `h`×`w` window with top-left corner `(y0, x0)`.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Raster> {
        if y0 + h > self.height || x0 + w > self.width || h == 0 || w == 0 {
            return Err(Error::invalid("crop window outside raster"));
        }
        let mut pixels = Vec::with_capacity(h * w * 3);
        for y in y0..y0 + h {
            let start = (y * self.width + x0) * 3;
            pixels.extend_from_slice(&self.pixels[start..start + w * 3]);
        }
        Ok(Raster { height: h, width: w, pixels })
    }
}

pub fn encode_raster(r: &Raster) -> Vec<u8> {
    let mut w = ByteWriter::new(RASTER_MAGIC);
    w.u32(r.height as u32);
    w.u32(r.width as u32);
    w.bytes(&r.pixels);
    w.finish()
}

pub fn decode_raster(buf: &[u8]) -> Result<Raster, FormatError> {
    let mut r = ByteReader::open(buf, RASTER_MAGIC)?;
    let h = r.u32("DTXR header")? as usize;
    let w = r.u32("DTXR header")? as usize;
    if h == 0 || w == 0 {
        return Err(FormatError::Malformed { what: "DTXR header", detail: "zero extent".into() });
    }
    let pixels = r.take(h * w * 3, "DTXR pixels")?.to_vec();
    r.expect_end("DTXR")?;
    Ok(Raster { height: h, width: w, pixels })
}

pub fn write_raster(path: impl AsRef<Path>, r: &Raster) -> Result<()> {
    fs::write(path, encode_raster(r))?;
    Ok(())
}

pub fn read_raster(path: impl AsRef<Path>) -> Result<Raster> {
    Ok(decode_raster(&fs::read(path)?)?)
}

/// Index of the 4×4×4 colour-cube bin containing `rgb`.
#[inline]
pub fn color_bin(rgb: [u8; 3]) -> usize {
    let q = |c: u8| c as usize * COLOR_LEVELS / 256;
    q(rgb[0]) * COLOR_LEVELS * COLOR_LEVELS + q(rgb[1]) * COLOR_LEVELS + q(rgb[2])
}

/// Named colours, each the centre of a distinct colour-cube bin.
pub const PALETTE: &[(&str, [u8; 3])] = &[
    ("black", [32, 32, 32]),
    ("gray", [160, 160, 160]),
    ("white", [224, 224, 224]),
    ("red", [224, 32, 32]),
    ("green", [32, 224, 32]),
    ("blue", [32, 32, 224]),
    ("yellow", [224, 224, 32]),
    ("cyan", [32, 224, 224]),
    ("magenta", [224, 32, 224]),
    ("orange", [224, 160, 32]),
    ("purple", [160, 32, 224]),
    ("brown", [160, 96, 32]),
    ("pink", [224, 160, 224]),
    ("olive", [160, 160, 32]),
    ("teal", [32, 160, 160]),
    ("navy", [32, 32, 160]),
    ("maroon", [160, 32, 32]),
    ("lime", [160, 224, 32]),
];

pub fn palette_color(name: &str) -> Option<[u8; 3]> {
    PALETTE.iter().find(|(n, _)| *n == name).map(|&(_, c)| c)
}

/// A frozen encoder producing `[CLS]` + patch tokens; register tokens are
/// never emitted.
pub trait VisionEncoder: Sync {
    fn patch_size(&self) -> usize;
    fn dim(&self) -> usize;
    fn encode(&self, raster: &Raster) -> Result<FeatureGrid>;
}

/// Colour-anchored stand-in for a self-supervised backbone: each patch maps
/// to a fixed unit vector for its dominant quantized colour, plus a small
/// position-dependent jitter.
#[derive(Debug, Clone)]
pub struct SyntheticEncoder {
    dim: usize,
    seed: u64,
    patch_size: usize,
    jitter: f32,
    anchors: Vec<f32>,
    jitter_cache: Vec<f32>,
}

const JITTER_CACHE_SIDE: usize = 32;
const JITTER_STREAM_BASE: u64 = 1 << 32;

fn unit_gaussian(seed: u64, stream: u64, dim: usize) -> Vec<f32> {
    let mut rng = seeded_rng(seed, stream);
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| (x / n) as f32).collect()
}

impl SyntheticEncoder {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        Self::with_options(dim, seed, DEFAULT_PATCH_SIZE, DEFAULT_JITTER)
    }

    pub fn with_options(dim: usize, seed: u64, patch_size: usize, jitter: f32) -> Result<Self> {
        if dim < 8 {
            return Err(Error::invalid("synthetic encoder needs dim >= 8"));
        }
        if patch_size == 0 {
            return Err(Error::invalid("patch size must be positive"));
        }
        let anchors = (0..COLOR_BINS as u64).flat_map(|b| unit_gaussian(seed, b, dim)).collect();
        let jitter_cache = (0..JITTER_CACHE_SIDE * JITTER_CACHE_SIDE)
            .flat_map(|i| {
                let (r, c) = (i / JITTER_CACHE_SIDE, i % JITTER_CACHE_SIDE);
                unit_gaussian(seed, jitter_stream(r, c), dim)
            })
            .collect();
        Ok(Self { dim, seed, patch_size, jitter, anchors, jitter_cache })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn jitter(&self) -> f32 {
        self.jitter
    }

    pub fn anchor(&self, bin: usize) -> &[f32] {
        &self.anchors[bin * self.dim..(bin + 1) * self.dim]
    }

    fn patch_vector(&self, bin: usize, row: usize, col: usize, out: &mut [f32]) {
        let anchor = self.anchor(bin);
        if self.jitter == 0.0 {
            out.copy_from_slice(anchor);
            return;
        }
        let owned;
        let noise: &[f32] = if row < JITTER_CACHE_SIDE && col < JITTER_CACHE_SIDE {
            let i = row * JITTER_CACHE_SIDE + col;
            &self.jitter_cache[i * self.dim..(i + 1) * self.dim]
        } else {
            owned = unit_gaussian(self.seed, jitter_stream(row, col), self.dim);
            &owned
        };
        let j = self.jitter as f64;
        let v: Vec<f64> = anchor.iter().zip(noise).map(|(&a, &n)| a as f64 + j * n as f64).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for (o, x) in out.iter_mut().zip(v) {
            *o = (x / norm) as f32;
        }
    }
}

fn jitter_stream(row: usize, col: usize) -> u64 {
    JITTER_STREAM_BASE + ((row as u64) << 16) + col as u64
}

/// Most frequent colour bin inside a patch; ties go to the lowest bin.
fn dominant_bin(raster: &Raster, y0: usize, x0: usize, size: usize) -> usize {
    let mut hist = [0u32; COLOR_BINS];
    for y in y0..y0 + size {
        let row = &raster.pixels[(y * raster.width + x0) * 3..(y * raster.width + x0 + size) * 3];
        for px in row.chunks_exact(3) {
            hist[color_bin([px[0], px[1], px[2]])] += 1;
        }
    }
    let mut best = 0;
    for b in 1..COLOR_BINS {
        if hist[b] > hist[best] {
            best = b;
        }
    }
    best
}

impl VisionEncoder for SyntheticEncoder {
    fn patch_size(&self) -> usize {
        self.patch_size
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, raster: &Raster) -> Result<FeatureGrid> {
        let ps = self.patch_size;
        if !raster.height.is_multiple_of(ps) || !raster.width.is_multiple_of(ps) {
            return Err(Error::invalid(format!(
                "raster {}x{} not divisible by patch size {ps}",
                raster.height, raster.width
            )));
        }
        let (gh, gw) = (raster.height / ps, raster.width / ps);
        let mut patches = vec![0f32; gh * gw * self.dim];
        let mut mean = vec![0f64; self.dim];
        for r in 0..gh {
            for c in 0..gw {
                let bin = dominant_bin(raster, r * ps, c * ps, ps);
                let out = &mut patches[(r * gw + c) * self.dim..(r * gw + c + 1) * self.dim];
                self.patch_vector(bin, r, c, out);
                for (m, &x) in mean.iter_mut().zip(out.iter()) {
                    *m += x as f64;
                }
            }
        }
        let norm = mean.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
        let cls = mean.iter().map(|x| (x / norm) as f32).collect();
        FeatureGrid::new(Vector::new(cls)?, Matrix::new(gh * gw, self.dim, patches)?, gh, gw)
    }
}

/// Loads a stored DTXF grid, checking it against the configured width.
pub fn file_encode(path: impl AsRef<Path>, dim: usize) -> Result<FeatureGrid> {
    let g = formats::read_feature_grid(path)?;
    if g.dim() != dim {
        return Err(FormatError::DimMismatch { expected: dim, found: g.dim() }.into());
    }
    Ok(g)
}

/// Serves precomputed grids from disk, one DTXF file per image id.
#[derive(Debug, Clone)]
pub struct FileFeatureProvider {
    root: std::path::PathBuf,
    dim: usize,
}

impl FileFeatureProvider {
    pub fn new(root: impl Into<std::path::PathBuf>, dim: usize) -> Self {
        Self { root: root.into(), dim }
    }

    pub fn load(&self, id: &str) -> Result<FeatureGrid> {
        file_encode(self.root.join(format!("{id}.dtxf")), self.dim)
    }
}

// ---------------------------------------------------------------------------
// Shapes corpus

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapesConfig {
    pub height: usize,
    pub width: usize,
    /// Rectangle edges snap to multiples of this many pixels.
    pub align: usize,
    /// Rectangle side range, in `align` units.
    pub min_side: usize,
    pub max_side: usize,
    pub min_rects: usize,
    pub max_rects: usize,
    /// Fixed background class index, or a random class per image.
    pub background: Option<usize>,
}

impl Default for ShapesConfig {
    fn default() -> Self {
        Self {
            height: 112,
            width: 112,
            align: DEFAULT_PATCH_SIZE,
            min_side: 2,
            max_side: 4,
            min_rects: 1,
            max_rects: 3,
            background: Some(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeSample {
    pub id: String,
    pub raster: Raster,
    pub mask: SegmentationMap,
    pub caption: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapesCorpus {
    pub classes: Vec<String>,
    pub samples: Vec<ShapeSample>,
}

/// Classes in raster-scan order of first appearance.
pub fn first_appearance(mask: &SegmentationMap) -> Vec<u16> {
    let mut seen = vec![false; mask.num_classes()];
    let mut order = Vec::new();
    for &l in mask.labels() {
        if l != mask.ignore_index() && !seen[l as usize] {
            seen[l as usize] = true;
            order.push(l);
        }
    }
    order
}

pub fn caption_for(mask: &SegmentationMap) -> String {
    let names: Vec<&str> = first_appearance(mask).iter().map(|&l| mask.class_names()[l as usize].as_str()).collect();
    format!("a photo of {}", names.join(" and "))
}

/// Non-overlapping axis-aligned rectangles of distinct class colours on a
/// background class.
pub fn make_shapes_dataset(n_images: usize, classes: &[String], seed: u64, cfg: &ShapesConfig) -> Result<ShapesCorpus> {
    let colors: Vec<[u8; 3]> = classes
        .iter()
        .map(|c| palette_color(c).ok_or_else(|| Error::invalid(format!("unknown palette colour {c:?}"))))
        .collect::<Result<_>>()?;
    let mut bins: Vec<usize> = colors.iter().map(|&c| color_bin(c)).collect();
    bins.sort_unstable();
    bins.dedup();
    if bins.len() != classes.len() {
        return Err(Error::invalid("classes must occupy pairwise distinct colour bins"));
    }
    if classes.len() < 2 {
        return Err(Error::invalid("need a background class and at least one shape class"));
    }
    if let Some(b) = cfg.background {
        if b >= classes.len() {
            return Err(Error::invalid("background class out of range"));
        }
    }
    if cfg.align == 0 || !cfg.height.is_multiple_of(cfg.align) || !cfg.width.is_multiple_of(cfg.align) {
        return Err(Error::invalid("image size must be a multiple of the alignment"));
    }
    let (ch, cw) = (cfg.height / cfg.align, cfg.width / cfg.align);
    if cfg.min_side == 0 || cfg.min_side > cfg.max_side || cfg.max_side > ch.min(cw) {
        return Err(Error::invalid("rectangle side range does not fit the image"));
    }
    if cfg.min_rects == 0 || cfg.min_rects > cfg.max_rects || cfg.max_rects >= classes.len() {
        return Err(Error::invalid("rectangle count range incompatible with class count"));
    }

    let mut rng = seeded_rng(seed, 3);
    let mut samples = Vec::with_capacity(n_images);
    for i in 0..n_images {
        let bg = cfg.background.unwrap_or_else(|| rng.random_range(0..classes.len()));
        let mut pool: Vec<usize> = (0..classes.len()).filter(|&c| c != bg).collect();
        let n_rects = rng.random_range(cfg.min_rects..=cfg.max_rects);
        let mut occupied = vec![false; ch * cw];
        let mut labels = vec![bg as u16; cfg.height * cfg.width];
        let mut raster = Raster::filled(cfg.height, cfg.width, colors[bg]);
        let mut placed = 0;
        for _ in 0..n_rects {
            let mut done = false;
            for _attempt in 0..200 {
                let h = rng.random_range(cfg.min_side..=cfg.max_side);
                let w = rng.random_range(cfg.min_side..=cfg.max_side);
                let y = rng.random_range(0..=ch - h);
                let x = rng.random_range(0..=cw - w);
                let clash = (y..y + h).any(|r| (x..x + w).any(|c| occupied[r * cw + c]));
                if clash {
                    continue;
                }
                let cls = pool.swap_remove(rng.random_range(0..pool.len()));
                for r in y..y + h {
                    for c in x..x + w {
                        occupied[r * cw + c] = true;
                    }
                }
                let a = cfg.align;
                raster.fill_rect(y * a, x * a, h * a, w * a, colors[cls]);
                for py in y * a..(y + h) * a {
                    labels[py * cfg.width + x * a..py * cfg.width + (x + w) * a].fill(cls as u16);
                }
                done = true;
                break;
            }
            if done {
                placed += 1;
            }
        }
        if placed == 0 {
            return Err(Error::Numeric("could not place any rectangle".into()));
        }
        let mask = SegmentationMap::new(cfg.height, cfg.width, labels, classes.to_vec())?;
        let caption = caption_for(&mask);
        samples.push(ShapeSample { id: format!("shape-{i:05}"), raster, mask, caption });
    }
    Ok(ShapesCorpus { classes: classes.to_vec(), samples })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct IndexLine {
    id: String,
    raster: String,
    mask: String,
    caption: String,
}

/// Directory layout: `rasters/<id>.dtxr`, `masks/<id>.dtxs` (+ sidecar),
/// `captions.jsonl`, `index.jsonl`, `classes.txt`.
pub fn write_shapes_corpus(dir: impl AsRef<Path>, corpus: &ShapesCorpus) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir.join("rasters"))?;
    fs::create_dir_all(dir.join("masks"))?;
    let mut index = String::new();
    let mut captions = Vec::with_capacity(corpus.samples.len());
    for s in &corpus.samples {
        let raster = format!("rasters/{}.dtxr", s.id);
        let mask = format!("masks/{}.dtxs", s.id);
        write_raster(dir.join(&raster), &s.raster)?;
        segmap::write_segmap(dir.join(&mask), &s.mask)?;
        let line = IndexLine { id: s.id.clone(), raster, mask, caption: s.caption.clone() };
        index.push_str(&serde_json::to_string(&line)?);
        index.push('\n');
        captions.push(CaptionLine { id: s.id.clone(), caption: s.caption.clone() });
    }
    fs::write(dir.join("index.jsonl"), index)?;
    formats::write_captions(dir.join("captions.jsonl"), &captions)?;
    let mut classes = corpus.classes.join("\n");
    classes.push('\n');
    fs::write(dir.join("classes.txt"), classes)?;
    Ok(())
}

pub fn read_shapes_corpus(dir: impl AsRef<Path>) -> Result<ShapesCorpus> {
    let dir = dir.as_ref();
    let classes = formats::read_lines(dir.join("classes.txt"))?;
    let text = fs::read_to_string(dir.join("index.jsonl"))?;
    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let l: IndexLine = serde_json::from_str(line).map_err(|e| FormatError::Malformed {
            what: "shapes index",
            detail: format!("line {}: {e}", i + 1),
        })?;
        let raster = read_raster(dir.join(&l.raster))?;
        let mask = segmap::read_segmap(dir.join(&l.mask))?;
        samples.push(ShapeSample { id: l.id, raster, mask, caption: l.caption });
    }
    Ok(ShapesCorpus { classes, samples })
}
