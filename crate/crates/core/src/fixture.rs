//! The desk-scale shapes setup shared by the test suites and the CLI:
//! corpus recipes, the matching synthetic encoder and a reference model.

use std::collections::BTreeSet;
use std::path::Path;

use rayon::prelude::*;

use crate::alignment::{self, AlignmentModel, EncoderInfo, ModelConfig, Pooling, Tokenizer, TrainConfig, TrainPair, TrainReport};
use rand::Rng;

use crate::clustering::seeded_rng;
use crate::encoder::{
    caption_for, make_shapes_dataset, palette_color, Raster, ShapeSample, ShapesConfig, ShapesCorpus, SyntheticEncoder,
    VisionEncoder,
};
use crate::segmap::SegmentationMap;
use crate::error::Result;

/// Colours seen during training.
pub const TRAIN_COLORS: [&str; 12] =
    ["gray", "red", "green", "blue", "yellow", "cyan", "magenta", "orange", "purple", "pink", "teal", "navy"];

/// Segmentation classes; index 0 is the background.
pub const SEG_CLASSES: [&str; 5] = ["gray", "red", "green", "blue", "yellow"];

/// Wrong candidates offered alongside the true class names.
pub const NAME_DISTRACTORS: [&str; 10] =
    ["cyan", "magenta", "orange", "purple", "pink", "teal", "navy", "square", "black", "brown"];

pub const TRAIN_PAIRS: usize = 256;
pub const HELDOUT_PAIRS: usize = 32;
pub const SEG_IMAGES: usize = 16;

fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

const TILE_SIDE: usize = 56;
const TILE_STREAM: u64 = 7;

/// One image split into 1, 2 or 4 equal tiles of distinct colours.
fn tile_sample(id: String, colours: &[usize], vertical: bool, classes: &[String]) -> Result<ShapeSample> {
    let n = TILE_SIDE;
    let half = n / 2;
    let mut labels = vec![0u16; n * n];
    let mut raster = Raster::filled(n, n, [0, 0, 0]);
    for y in 0..n {
        for x in 0..n {
            let slot = match colours.len() {
                1 => 0,
                2 if vertical => (x >= half) as usize,
                2 => (y >= half) as usize,
                _ => 2 * (y >= half) as usize + (x >= half) as usize,
            };
            let c = colours[slot];
            labels[y * n + x] = c as u16;
            raster.set(y, x, palette_color(&classes[c]).expect("palette colour"));
        }
    }
    let mask = SegmentationMap::new(n, n, labels, classes.to_vec())?;
    let caption = caption_for(&mask);
    Ok(ShapeSample { id, raster, mask, caption })
}

/// 56×56 images tiled into equal-area colour blocks (solid, halves or
/// quadrants). Every image carries a distinct set of colours, so no two
/// captions describe the same content, and equal areas keep the mean patch
/// a fair summary of the caption. Returns `(train, held_out)`.
pub fn alignment_corpus(seed: u64) -> Result<(ShapesCorpus, ShapesCorpus)> {
    let classes = names(&TRAIN_COLORS);
    let mut rng = seeded_rng(seed, TILE_STREAM);
    let mut seen = BTreeSet::new();
    let mut samples = Vec::with_capacity(TRAIN_PAIRS + HELDOUT_PAIRS);
    while samples.len() < TRAIN_PAIRS + HELDOUT_PAIRS {
        let u: f64 = rng.random();
        let k = if u < 0.05 {
            1
        } else if u < 0.4 {
            2
        } else {
            4
        };
        let colours: Vec<usize> = rand::seq::index::sample(&mut rng, classes.len(), k).into_vec();
        let vertical: bool = rng.random();
        let mut set = colours.clone();
        set.sort_unstable();
        if !seen.insert(set) {
            continue;
        }
        samples.push(tile_sample(format!("tile-{:05}", samples.len()), &colours, vertical, &classes)?);
    }
    let heldout = samples.split_off(TRAIN_PAIRS);
    Ok((ShapesCorpus { classes: classes.clone(), samples }, ShapesCorpus { classes, samples: heldout }))
}

/// 112×112 evaluation images with a gray background and up to three of the
/// four foreground colours.
pub fn segmentation_corpus(seed: u64) -> Result<ShapesCorpus> {
    let cfg = ShapesConfig { min_rects: 1, max_rects: 3, ..ShapesConfig::default() };
    make_shapes_dataset(SEG_IMAGES, &names(&SEG_CLASSES), seed, &cfg)
}

pub fn encoder(info: &EncoderInfo, dim: usize) -> Result<SyntheticEncoder> {
    SyntheticEncoder::with_options(dim, info.seed, info.patch_size, info.jitter)
}

pub fn model_config() -> ModelConfig {
    ModelConfig { pooling: Pooling::ClsAvg, train_grid: 4, ..ModelConfig::default() }
}

/// Strong weight decay keeps the vision blocks close to the identity, which
/// stops them from adding a window-dependent offset to every patch.
pub const FIXTURE_WEIGHT_DECAY: f64 = 5.0;

pub fn train_config(seed: u64) -> TrainConfig {
    TrainConfig { batch_size: 32, steps: 500, seed, weight_decay: FIXTURE_WEIGHT_DECAY, ..TrainConfig::default() }
}

/// Encodes every sample and tokenizes its caption.
pub fn train_pairs(enc: &dyn VisionEncoder, tok: &Tokenizer, corpus: &ShapesCorpus) -> Result<Vec<TrainPair>> {
    corpus
        .samples
        .par_iter()
        .map(|s| Ok(TrainPair { grid: enc.encode(&s.raster)?, ids: tok.tokenize(&s.caption) }))
        .collect()
}

pub struct TrainedFixture {
    pub model: AlignmentModel,
    pub report: TrainReport,
}

/// Trains the reference model; the returned model has been round-tripped
/// through its checkpoint so it matches what a reload would produce.
pub fn train_reference(seed: u64) -> Result<TrainedFixture> {
    let (train, _) = alignment_corpus(seed)?;
    let config = model_config();
    let tok = Tokenizer::from_corpus(train.samples.iter().map(|s| s.caption.as_str()), config.max_len, config.hash_buckets);
    let enc = encoder(&config.encoder, config.dim)?;
    let data = train_pairs(&enc, &tok, &train)?;
    let mut model = AlignmentModel::new(config, tok, seed)?;
    let report = alignment::train(&mut model, &data, &train_config(seed))?;
    let model = alignment::decode_model(&alignment::encode_model(&model))?;
    Ok(TrainedFixture { model, report })
}

/// Loads the reference model from `dir` or trains and stores it there.
pub fn cached_reference(dir: &Path, seed: u64) -> Result<TrainedFixture> {
    let model_path = dir.join(format!("reference-{seed}.dtxm"));
    let report_path = dir.join(format!("reference-{seed}.json"));
    if model_path.exists() && report_path.exists() {
        if let (Ok(model), Ok(bytes)) = (alignment::read_model(&model_path), std::fs::read(&report_path)) {
            if let Ok(report) = serde_json::from_slice(&bytes) {
                return Ok(TrainedFixture { model, report });
            }
        }
    }
    let fx = train_reference(seed)?;
    std::fs::create_dir_all(dir)?;
    // Write to temporary names first so concurrent test binaries never read
    // a half-written file.
    let tmp_model = dir.join(format!("reference-{seed}.dtxm.{}", std::process::id()));
    let tmp_report = dir.join(format!("reference-{seed}.json.{}", std::process::id()));
    alignment::write_model(&tmp_model, &fx.model)?;
    std::fs::write(&tmp_report, serde_json::to_vec(&fx.report)?)?;
    std::fs::rename(tmp_model, model_path)?;
    std::fs::rename(tmp_report, report_path)?;
    Ok(fx)
}
