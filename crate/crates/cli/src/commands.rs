use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use vtalign_core::alignment::{self, AlignmentModel, EncoderInfo, ModelConfig, NormMode, Pooling, Tokenizer, TrainConfig, TrainPair};
use vtalign_core::analysis::{self, miou, miou_many, optimize_class_names, topline_with_gt_masks};
use vtalign_core::clustering::{hierarchical_fit, read_tree, write_tree, KMeansOptions};
use vtalign_core::curation::{self, curation_report, image_balance, match_concepts, text_balance, ConceptVocabulary, CurationSelection, Provenance};
use vtalign_core::encoder::{make_shapes_dataset, read_raster, read_shapes_corpus, write_shapes_corpus, ShapesConfig, ShapesCorpus, SyntheticEncoder, VisionEncoder};
use vtalign_core::fixture;
use vtalign_core::formats::{self, read_captions, read_embeddings, read_lines, read_manifest, read_selection, write_embeddings, write_selection, ManifestLine};
use vtalign_core::highres::{highres_segment, CropSchedule, HighResParams, SplatMode};
use vtalign_core::inference::{classify, default_window, embed_queries, prompts_for, retrieve_r1, sliding_window_segment, EmbeddingMode, QueryBank};
use vtalign_core::segmap::{read_segmap, render_ppm, write_segmap, DEFAULT_IGNORE};
use vtalign_core::{verify, Error, Matrix, SegmentationMap};

use crate::cli::*;

pub type Res<T> = std::result::Result<T, Error>;

fn usage(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

/// Encoder parameters stored next to a generated pair manifest.
#[derive(Debug, Serialize, Deserialize)]
struct EncoderFile {
    dim: usize,
    #[serde(flatten)]
    info: EncoderInfo,
}

const ENCODER_FILE: &str = "encoder.json";

pub fn run(cmd: &Command) -> Res<Value> {
    match cmd {
        Command::GenShapes(a) => gen_shapes(a),
        Command::CurateText(a) => curate_text(a),
        Command::CurateImage(a) => curate_image(a),
        Command::FitTree(a) => fit_tree(a),
        Command::Intersect(a) => intersect(a),
        Command::CurationReport(a) => report(a),
        Command::Train(a) => train(a),
        Command::EvalClassify(a) => eval_classify(a),
        Command::EvalRetrieval(a) => eval_retrieval(a),
        Command::EvalSeg(a) => eval_seg(a),
        Command::EvalSegHighres(a) => eval_seg_highres(a),
        Command::EvalMiou(a) => eval_miou(a),
        Command::Topline(a) => topline(a),
        Command::OptimizeNames(a) => optimize_names(a),
        Command::Selfcheck(a) => selfcheck(a),
    }
}

// ---------------------------------------------------------------------------
// Data generation

/// Writes a corpus plus encoded features, a pair manifest and a DTXE file
/// of CLS embeddings.
fn write_encoded(dir: &Path, corpus: &ShapesCorpus, enc: &SyntheticEncoder, info: EncoderInfo) -> Res<()> {
    write_shapes_corpus(dir, corpus)?;
    fs::create_dir_all(dir.join("features"))?;
    let grids = corpus.samples.par_iter().map(|s| enc.encode(&s.raster)).collect::<Res<Vec<_>>>()?;
    let mut lines = Vec::with_capacity(grids.len());
    for (s, g) in corpus.samples.iter().zip(&grids) {
        let rel = format!("features/{}.dtxf", s.id);
        formats::write_feature_grid(dir.join(&rel), g)?;
        lines.push(ManifestLine { id: s.id.clone(), caption: s.caption.clone(), features: rel });
    }
    formats::write_manifest(dir.join("pairs.manifest"), &lines)?;
    let ids: Vec<String> = corpus.samples.iter().map(|s| s.id.clone()).collect();
    let cls: Vec<Vec<f32>> = grids.iter().map(|g| g.cls().as_slice().to_vec()).collect();
    write_embeddings(dir.join("embeddings.dtxe"), &ids, &Matrix::from_rows(&cls)?)?;
    fs::write(dir.join(ENCODER_FILE), serde_json::to_vec_pretty(&EncoderFile { dim: enc.dim(), info })?)?;
    Ok(())
}

fn gen_shapes(a: &GenShapes) -> Res<Value> {
    let info = EncoderInfo { seed: a.encoder_seed, patch_size: a.patch_size, jitter: a.jitter };
    let enc = SyntheticEncoder::with_options(a.dim, info.seed, info.patch_size, info.jitter)?;
    let mut written = Vec::new();
    match a.preset.as_str() {
        "shapes" => {
            let cfg = ShapesConfig { height: a.height, width: a.width, ..ShapesConfig::default() };
            let corpus = make_shapes_dataset(a.n, &a.classes, a.seed, &cfg)?;
            write_encoded(&a.out, &corpus, &enc, info)?;
            written.push(json!({"dir": a.out, "images": corpus.samples.len()}));
        }
        "alignment" => {
            let (train, held) = fixture::alignment_corpus(a.seed)?;
            for (name, c) in [("train", &train), ("heldout", &held)] {
                let dir = a.out.join(name);
                write_encoded(&dir, c, &enc, info)?;
                written.push(json!({"dir": dir, "images": c.samples.len()}));
            }
        }
        "segmentation" => {
            let corpus = fixture::segmentation_corpus(a.seed)?;
            write_encoded(&a.out, &corpus, &enc, info)?;
            written.push(json!({"dir": a.out, "images": corpus.samples.len()}));
        }
        other => return Err(usage(format!("unknown preset `{other}` (shapes, alignment, segmentation)"))),
    }
    Ok(json!({"preset": a.preset, "written": written}))
}

// ---------------------------------------------------------------------------
// Curation

fn concept_counts(captions: &Path, concepts: &Path) -> Res<(curation::ConceptCounts, usize)> {
    let file = read_captions(captions)?;
    let vocab = ConceptVocabulary::new(read_lines(concepts)?)?;
    Ok((match_concepts(&file.lines, &vocab), file.dropped_invalid_utf8))
}

fn curate_text(a: &CurateText) -> Res<Value> {
    let (counts, dropped) = concept_counts(&a.captions, &a.concepts)?;
    let sel = text_balance(&counts, a.cap, a.seed)?;
    write_selection(&a.out, &sel.kept_ids)?;
    Ok(json!({"total": counts.ids.len(), "kept": sel.len(), "dropped_invalid_utf8": dropped}))
}

fn curate_image(a: &CurateImage) -> Res<Value> {
    let (ids, _) = read_embeddings(&a.embeddings)?;
    let tree = read_tree(&a.tree)?;
    let sel = image_balance(&ids, &tree, a.budget, a.seed)?;
    write_selection(&a.out, &sel.kept_ids)?;
    Ok(json!({"total": ids.len(), "kept": sel.len()}))
}

fn fit_tree(a: &FitTree) -> Res<Value> {
    let (_, m) = read_embeddings(&a.embeddings)?;
    let opts = KMeansOptions { max_iters: a.max_iters, tol: a.tol, normalize: a.normalize };
    let tree = hierarchical_fit(&m, &a.ks, a.seed, &opts)?;
    write_tree(&a.out, &tree)?;
    let levels: Vec<Value> = tree.levels.iter().map(|l| json!({"k": l.k(), "inertia": l.inertia, "iterations": l.inertia_trace.len()})).collect();
    Ok(json!({"points": m.rows(), "levels": levels}))
}

fn intersect(a: &Intersect) -> Res<Value> {
    let sa = CurationSelection { kept_ids: read_selection(&a.a)?, provenance: Provenance::Text };
    let sb = CurationSelection { kept_ids: read_selection(&a.b)?, provenance: Provenance::Image };
    let both = curation::intersect(&sa, &sb);
    write_selection(&a.out, &both.kept_ids)?;
    Ok(json!({"a": sa.len(), "b": sb.len(), "kept": both.len()}))
}

fn report(a: &CurationReportArgs) -> Res<Value> {
    let sel = CurationSelection { kept_ids: read_selection(&a.selection)?, provenance: Provenance::Intersection };
    let counts = match (&a.captions, &a.concepts) {
        (Some(c), Some(v)) => Some(concept_counts(c, v)?.0),
        _ => None,
    };
    let tree = match (&a.embeddings, &a.tree) {
        (Some(e), Some(t)) => Some((read_embeddings(e)?.0, read_tree(t)?)),
        _ => None,
    };
    let ids = match (&counts, &tree) {
        (Some(c), Some((e, _))) if &c.ids != e => return Err(usage("captions and embeddings list different ids or orders")),
        (Some(c), _) => c.ids.clone(),
        (None, Some((e, _))) => e.clone(),
        (None, None) => return Err(usage("curation-report needs --captions/--concepts or --embeddings/--tree")),
    };
    let r = curation_report(&ids, &sel, counts.as_ref(), tree.as_ref().map(|t| &t.1))?;
    Ok(serde_json::to_value(r)?)
}

// ---------------------------------------------------------------------------
// Training

fn train(a: &Train) -> Res<Value> {
    let manifest = read_manifest(&a.pairs)?;
    if manifest.is_empty() {
        return Err(usage("pair manifest is empty"));
    }
    let grids = manifest.par_iter().map(|(_, p)| formats::read_feature_grid(p)).collect::<Res<Vec<_>>>()?;
    let feat_dim = grids[0].dim();
    if let Some(d) = a.dim {
        if d != feat_dim {
            return Err(Error::DimMismatch { expected: d, got: feat_dim });
        }
    }
    let enc_path = a.pairs.parent().unwrap_or(Path::new(".")).join(ENCODER_FILE);
    let info = if enc_path.exists() {
        let f: EncoderFile = serde_json::from_slice(&fs::read(&enc_path)?)?;
        if f.dim != feat_dim {
            return Err(Error::DimMismatch { expected: f.dim, got: feat_dim });
        }
        f.info
    } else {
        EncoderInfo::default()
    };
    let norm = match a.norm.as_str() {
        "whole" => NormMode::Whole,
        "per_half" => NormMode::PerHalf,
        other => return Err(usage(format!("unknown norm mode `{other}`"))),
    };
    let config = ModelConfig {
        dim: feat_dim,
        text_dim: a.text_dim,
        max_len: a.max_len,
        text_depth: a.text_depth,
        vision_blocks: a.vision_blocks,
        heads: a.heads,
        hash_buckets: a.hash_buckets,
        pooling: a.pooling.parse::<Pooling>()?,
        norm,
        encoder: info,
        train_grid: a.train_grid.unwrap_or(grids[0].grid_h()),
    };
    let tok = Tokenizer::from_corpus(manifest.iter().map(|(m, _)| m.caption.as_str()), config.max_len, config.hash_buckets);
    let data: Vec<TrainPair> = manifest.iter().zip(grids).map(|((m, _), grid)| TrainPair { grid, ids: tok.tokenize(&m.caption) }).collect();
    let mut model = AlignmentModel::new(config, tok, a.seed)?;
    let tc = TrainConfig { batch_size: a.batch, steps: a.steps, lr: a.lr, weight_decay: a.weight_decay, warmup: a.warmup, seed: a.seed, ..TrainConfig::default() };
    let report = alignment::train_with(&mut model, &data, &tc, |step, loss| {
        crate::log(json!({"event": "step", "step": step, "loss": loss}));
    })?;
    alignment::write_model(&a.out, &model)?;
    if let Some(p) = &a.report {
        fs::write(p, serde_json::to_vec(&report)?)?;
    }
    let tail = &report.losses[report.losses.len().saturating_sub(10)..];
    Ok(json!({
        "pairs": data.len(),
        "steps": report.losses.len(),
        "final_loss": tail.iter().sum::<f64>() / tail.len().max(1) as f64,
        "final_log_temperature": report.final_log_temperature,
        "parameters": model.num_scalars(),
    }))
}

// ---------------------------------------------------------------------------
// Inference helpers

fn load_model(path: &Path) -> Res<(AlignmentModel, SyntheticEncoder)> {
    let model = alignment::read_model(path)?;
    let info = model.config().encoder;
    let enc = SyntheticEncoder::with_options(model.config().dim, info.seed, info.patch_size, info.jitter)?;
    Ok((model, enc))
}

fn class_names(q: &QueryArgs, corpus: Option<&ShapesCorpus>) -> Res<Vec<String>> {
    match (&q.classes, corpus) {
        (Some(p), _) => read_lines(p),
        (None, Some(c)) => Ok(c.classes.clone()),
        (None, None) => Err(usage("--classes is required without --corpus")),
    }
}

fn queries(model: &AlignmentModel, names: &[String], template: Option<&str>) -> Res<QueryBank> {
    if names.is_empty() {
        return Err(usage("class list is empty"));
    }
    embed_queries(model, &prompts_for(names, template)?)
}

/// Relabels a ground-truth map onto `names` by class name; classes missing
/// from `names` become ignore pixels.
fn align_gt(gt: &SegmentationMap, names: &[String]) -> Res<SegmentationMap> {
    let lut: Vec<u16> = gt.class_names().iter().map(|c| names.iter().position(|n| n == c).map_or(DEFAULT_IGNORE, |i| i as u16)).collect();
    let labels = gt.labels().iter().map(|&l| if l == gt.ignore_index() { DEFAULT_IGNORE } else { lut[l as usize] }).collect();
    SegmentationMap::with_ignore(gt.height(), gt.width(), labels, names.to_vec(), DEFAULT_IGNORE)
}

fn save_map(path: &Path, map: &SegmentationMap, ppm: bool) -> Res<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_segmap(path, map)?;
    if ppm {
        fs::write(path.with_extension("ppm"), render_ppm(map))?;
    }
    Ok(())
}

fn label_histogram(map: &SegmentationMap) -> Vec<u64> {
    let mut h = vec![0u64; map.num_classes()];
    for &l in map.labels() {
        if l != map.ignore_index() {
            h[l as usize] += 1;
        }
    }
    h
}

/// Runs `segment` on one image or every image of a corpus, writing maps and
/// scoring corpus predictions against their masks.
fn segment_input<F>(input: &SegInput, segment: F) -> Res<Value>
where
    F: Fn(&AlignmentModel, &SyntheticEncoder, &vtalign_core::encoder::Raster, &QueryBank, Option<&SegmentationMap>) -> Res<(SegmentationMap, Value)>,
{
    let (model, enc) = load_model(&input.model)?;
    if let Some(img) = &input.image {
        let names = class_names(&input.query, None)?;
        let qs = queries(&model, &names, input.query.template.as_deref())?;
        let raster = read_raster(img)?;
        let (map, extra) = segment(&model, &enc, &raster, &qs, None)?;
        save_map(&input.out, &map, input.ppm)?;
        return Ok(json!({"height": map.height(), "width": map.width(), "histogram": label_histogram(&map), "details": extra}));
    }
    let dir = input.corpus.as_ref().expect("clap enforces image or corpus");
    let corpus = read_shapes_corpus(dir)?;
    let names = class_names(&input.query, Some(&corpus))?;
    let qs = queries(&model, &names, input.query.template.as_deref())?;
    let mut preds = Vec::with_capacity(corpus.samples.len());
    let mut gts = Vec::with_capacity(corpus.samples.len());
    let mut per_image = Vec::new();
    for s in &corpus.samples {
        let gt = align_gt(&s.mask, &names)?;
        let (map, extra) = segment(&model, &enc, &s.raster, &qs, Some(&gt))?;
        save_map(&input.out.join(format!("{}.dtxs", s.id)), &map, input.ppm)?;
        per_image.push(json!({"id": s.id, "miou": miou(&map, &gt)?.miou, "details": extra}));
        preds.push(map);
        gts.push(gt);
    }
    let pairs: Vec<_> = preds.iter().zip(&gts).collect();
    let r = miou_many(&pairs)?;
    Ok(json!({"images": corpus.samples.len(), "classes": names, "miou": r.miou, "per_class": r.per_class, "confusion": r.confusion, "per_image": per_image}))
}

fn eval_classify(a: &EvalClassify) -> Res<Value> {
    let (model, enc) = load_model(&a.model)?;
    let corpus = read_shapes_corpus(&a.corpus)?;
    let names = class_names(&a.query, Some(&corpus))?;
    let qs = queries(&model, &names, a.query.template.as_deref())?;
    let results = corpus
        .samples
        .par_iter()
        .map(|s| {
            // Ground truth: the class covering the most pixels.
            let hist = label_histogram(&s.mask);
            let dom = (0..hist.len()).max_by(|&x, &y| hist[x].cmp(&hist[y]).then(y.cmp(&x))).ok_or_else(|| usage("empty mask"))?;
            let gt_name = &s.mask.class_names()[dom];
            let gt = names.iter().position(|n| n == gt_name).ok_or_else(|| usage(format!("class `{gt_name}` missing from the class list")))?;
            let (pred, _) = classify(&model, &enc.encode(&s.raster)?, &qs)?;
            Ok((pred, gt))
        })
        .collect::<Res<Vec<_>>>()?;
    let (preds, gts): (Vec<usize>, Vec<usize>) = results.into_iter().unzip();
    Ok(json!({"images": preds.len(), "accuracy": analysis::accuracy(&preds, &gts)?}))
}

fn eval_retrieval(a: &EvalRetrieval) -> Res<Value> {
    let (model, enc) = load_model(&a.model)?;
    let corpus = read_shapes_corpus(&a.corpus)?;
    let grids = corpus.samples.par_iter().map(|s| enc.encode(&s.raster)).collect::<Res<Vec<_>>>()?;
    let captions: Vec<String> = corpus.samples.iter().map(|s| s.caption.clone()).collect();
    Ok(json!({"pairs": captions.len(), "recall_at_1": retrieve_r1(&model, &grids, &captions)?}))
}

fn eval_seg(a: &EvalSeg) -> Res<Value> {
    let mode: EmbeddingMode = a.embedding.parse()?;
    segment_input(&a.input, |model, enc, raster, qs, _| {
        let window = a.window.unwrap_or_else(|| default_window(model));
        let stride = a.stride.unwrap_or((window / 2).max(1));
        let map = sliding_window_segment(model, enc, raster, qs, window, stride, mode)?;
        Ok((map, json!({"window": window, "stride": stride})))
    })
}

fn highres_params(h: &HighResArgs) -> Res<HighResParams> {
    let splat = match h.splat.as_str() {
        "gather" => SplatMode::Gather,
        "scatter" => SplatMode::Scatter,
        "both" => SplatMode::Both,
        other => return Err(usage(format!("unknown splat mode `{other}`"))),
    };
    Ok(HighResParams {
        schedule: CropSchedule { area_fracs: h.areas.clone(), noise_frac: h.noise, stride_frac: h.stride_frac },
        sample_res: h.sample_res,
        k: h.k,
        seed: h.seed,
        splat,
        max_fit_pixels: h.max_fit_pixels,
    })
}

fn eval_seg_highres(a: &EvalSegHighres) -> Res<Value> {
    let params = highres_params(&a.highres)?;
    segment_input(&a.input, |model, enc, raster, qs, _| {
        let out = highres_segment(model, enc, raster, qs, &params)?;
        Ok((out.map, json!({"crops": out.crops, "mean_visits": out.mean_visits})))
    })
}

fn eval_miou(a: &EvalMiou) -> Res<Value> {
    let pred = read_segmap(&a.pred)?;
    let gt = read_segmap(&a.gt)?;
    Ok(serde_json::to_value(miou(&pred, &gt)?)?)
}

fn topline(a: &Topline) -> Res<Value> {
    let params = highres_params(&a.highres)?;
    if a.input.image.is_some() && a.gt.is_none() {
        return Err(usage("--gt is required with --image"));
    }
    let gt_file = a.gt.as_ref().map(read_segmap).transpose()?;
    segment_input(&a.input, |model, enc, raster, qs, gt| {
        let gt = match (gt, &gt_file) {
            (Some(g), _) => g.clone(),
            (None, Some(g)) => align_gt(g, qs.names())?,
            (None, None) => unreachable!("checked above"),
        };
        let r = topline_with_gt_masks(model, enc, raster, &gt, qs, &params)?;
        Ok((r.map, json!({"miou": r.miou.miou})))
    })
}

fn optimize_names(a: &OptimizeNames) -> Res<Value> {
    let params = highres_params(&a.highres)?;
    let (model, enc) = load_model(&a.model)?;
    let corpus = read_shapes_corpus(&a.corpus)?;
    let vocab = read_lines(&a.vocab)?;
    let data: Vec<_> = corpus.samples.iter().map(|s| (s.raster.clone(), s.mask.clone())).collect();
    let choices = optimize_class_names(&model, &enc, &data, &vocab, a.template.as_deref(), &params)?;
    Ok(json!({"names": choices}))
}

fn selfcheck(a: &Selfcheck) -> Res<Value> {
    let grad = verify::gradient_suite(a.grad_samples, a.seed)?;
    let kmeans = verify::kmeans_suite(a.kmeans_instances, 20, a.seed)?;
    let miou = verify::miou_suite(a.miou_trials, a.seed)?;
    let hmg = verify::homography_suite(a.quads, 100, a.seed)?;
    let loss = verify::loss_suite()?;
    let pooling = verify::pooling_suite(a.seed)?;
    let passed = pooling.passed() && grad.failures == 0 && grad.checked >= 100.min(a.grad_samples) && kmeans.passed() && miou.passed() && hmg.passed() && loss.passed();
    let v = json!({
        "passed": passed,
        "gradient": grad,
        "kmeans": kmeans,
        "miou": miou,
        "homography": hmg,
        "loss": loss,
        "pooling": pooling,
    });
    if !passed {
        return Err(Error::Numeric(format!("self-check failed: {v}")));
    }
    Ok(v)
}
