use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Debug, Parser, Serialize)]
#[command(name = "vtalign", version, about = "Text-to-vision alignment, curation and open-vocabulary inference")]
pub struct Cli {
    /// Flat key=value file supplying defaults for any flag.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Emit JSON log events on standard error.
    #[arg(long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Generate a synthetic shapes corpus with encoded features.
    GenShapes(GenShapes),
    /// Frequency-capped caption curation.
    CurateText(CurateText),
    /// Cluster-balanced image curation.
    CurateImage(CurateImage),
    /// Fit a hierarchical k-means tree over embeddings.
    FitTree(FitTree),
    /// Intersect two selection lists.
    Intersect(Intersect),
    /// Concept and cluster histograms before and after a selection.
    CurationReport(CurationReportArgs),
    /// Train the text encoder and vision blocks.
    Train(Train),
    /// Zero-shot classification accuracy over a corpus.
    EvalClassify(EvalClassify),
    /// Text-to-image Recall@1 over a corpus.
    EvalRetrieval(EvalRetrieval),
    /// Sliding-window dense segmentation.
    EvalSeg(EvalSeg),
    /// Quadrilateral-crop high-resolution segmentation.
    EvalSegHighres(EvalSegHighres),
    /// mIoU between two segmentation maps.
    EvalMiou(EvalMiou),
    /// Segmentation with ground-truth masks in place of clustering.
    Topline(Topline),
    /// Pick the closest vocabulary word for every class.
    OptimizeNames(OptimizeNames),
    /// Run the bundled numerical self-checks.
    Selfcheck(Selfcheck),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenShapes(_) => "gen-shapes",
            Command::CurateText(_) => "curate-text",
            Command::CurateImage(_) => "curate-image",
            Command::FitTree(_) => "fit-tree",
            Command::Intersect(_) => "intersect",
            Command::CurationReport(_) => "curation-report",
            Command::Train(_) => "train",
            Command::EvalClassify(_) => "eval-classify",
            Command::EvalRetrieval(_) => "eval-retrieval",
            Command::EvalSeg(_) => "eval-seg",
            Command::EvalSegHighres(_) => "eval-seg-highres",
            Command::EvalMiou(_) => "eval-miou",
            Command::Topline(_) => "topline",
            Command::OptimizeNames(_) => "optimize-names",
            Command::Selfcheck(_) => "selfcheck",
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct GenShapes {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
    /// shapes | alignment | segmentation
    #[arg(long, default_value = "shapes")]
    pub preset: String,
    /// Image count (shapes preset).
    #[arg(long, default_value_t = 64)]
    pub n: usize,
    /// Comma-separated colour names (shapes preset); the first is the background.
    #[arg(long, value_delimiter = ',', default_values_t = ["gray".to_string(), "red".into(), "green".into(), "blue".into(), "yellow".into()])]
    pub classes: Vec<String>,
    #[arg(long, default_value_t = 112)]
    pub height: usize,
    #[arg(long, default_value_t = 112)]
    pub width: usize,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 0)]
    pub encoder_seed: u64,
    #[arg(long, default_value_t = 14)]
    pub patch_size: usize,
    #[arg(long, default_value_t = 0.05)]
    pub jitter: f32,
}

#[derive(Debug, Args, Serialize)]
pub struct CurateText {
    #[arg(long)]
    pub captions: PathBuf,
    #[arg(long)]
    pub concepts: PathBuf,
    #[arg(long, default_value_t = 256)]
    pub cap: u64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct CurateImage {
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub tree: PathBuf,
    #[arg(long)]
    pub budget: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct FitTree {
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Cluster counts per level, strictly decreasing.
    #[arg(long, value_delimiter = ',', default_values_t = [1024usize, 128, 16])]
    pub ks: Vec<usize>,
    #[arg(long)]
    pub seed: u64,
    /// L2-normalize embeddings before clustering.
    #[arg(long)]
    pub normalize: bool,
    #[arg(long, default_value_t = 100)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct Intersect {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct CurationReportArgs {
    /// Selection list to report on.
    #[arg(long)]
    pub selection: PathBuf,
    #[arg(long, requires = "concepts")]
    pub captions: Option<PathBuf>,
    #[arg(long, requires = "captions")]
    pub concepts: Option<PathBuf>,
    #[arg(long, requires = "tree")]
    pub embeddings: Option<PathBuf>,
    #[arg(long, requires = "embeddings")]
    pub tree: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct Train {
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-step losses as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// cls | avg | max | cls_max | cls_avg
    #[arg(long, default_value = "cls_avg")]
    pub pooling: String,
    /// Normalize the descriptor as a whole or per half: whole | per_half
    #[arg(long, default_value = "whole")]
    pub norm: String,
    #[arg(long, default_value_t = 2)]
    pub vision_blocks: usize,
    #[arg(long, default_value_t = 1)]
    pub text_depth: usize,
    /// Must equal the feature dimension when given.
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long, default_value_t = 64)]
    pub text_dim: usize,
    #[arg(long, default_value_t = 16)]
    pub max_len: usize,
    #[arg(long, default_value_t = 1)]
    pub heads: usize,
    #[arg(long, default_value_t = 64)]
    pub hash_buckets: u32,
    /// Grid side seen in training (default: that of the first pair).
    #[arg(long)]
    pub train_grid: Option<usize>,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 500)]
    pub steps: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.1)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 0.1)]
    pub warmup: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct QueryArgs {
    /// Class names, one per line (default: the corpus class list).
    #[arg(long)]
    pub classes: Option<PathBuf>,
    /// Prompt template with one `{}` placeholder.
    #[arg(long)]
    pub template: Option<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalClassify {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[command(flatten)]
    pub query: QueryArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalRetrieval {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
}

/// Either one image or a whole corpus directory.
#[derive(Debug, Args, Serialize)]
pub struct SegInput {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, conflicts_with = "corpus", required_unless_present = "corpus")]
    pub image: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Map file for `--image`, output directory for `--corpus`.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write a colour render (PPM).
    #[arg(long)]
    pub ppm: bool,
    #[command(flatten)]
    pub query: QueryArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalSeg {
    #[command(flatten)]
    pub input: SegInput,
    /// Window side in pixels (default: training grid × patch size).
    #[arg(long)]
    pub window: Option<usize>,
    /// Default: half the window.
    #[arg(long)]
    pub stride: Option<usize>,
    /// patch | cls_patch
    #[arg(long, default_value = "patch")]
    pub embedding: String,
}

#[derive(Debug, Args, Serialize)]
pub struct HighResArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long, value_delimiter = ',', default_values_t = [0.01, 0.1, 1.0])]
    pub areas: Vec<f64>,
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    /// Crop stride as a fraction of the shorter image side.
    #[arg(long, default_value_t = 1.0 / 24.0)]
    pub stride_frac: f64,
    /// Warped crop side (default: training grid × patch size).
    #[arg(long)]
    pub sample_res: Option<usize>,
    #[arg(long, default_value_t = 32)]
    pub k: usize,
    /// gather | scatter | both
    #[arg(long, default_value = "gather")]
    pub splat: String,
    #[arg(long, default_value_t = 65536)]
    pub max_fit_pixels: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalSegHighres {
    #[command(flatten)]
    pub input: SegInput,
    #[command(flatten)]
    pub highres: HighResArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalMiou {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct Topline {
    #[command(flatten)]
    pub input: SegInput,
    /// Ground-truth map for `--image`; a corpus carries its own masks.
    #[arg(long, requires = "image")]
    pub gt: Option<PathBuf>,
    #[command(flatten)]
    pub highres: HighResArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct OptimizeNames {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Candidate words, one per line.
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub template: Option<String>,
    #[command(flatten)]
    pub highres: HighResArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct Selfcheck {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 120)]
    pub grad_samples: usize,
    #[arg(long, default_value_t = 200)]
    pub kmeans_instances: usize,
    #[arg(long, default_value_t = 1000)]
    pub miou_trials: usize,
    #[arg(long, default_value_t = 100)]
    pub quads: usize,
}
