//! Properties of the trained reference model. The model is trained once and
//! cached under the cargo target directory.

use std::path::Path;

use vtalign_core::analysis::{miou_many, topline_with_gt_masks};
use vtalign_core::encoder::{make_shapes_dataset, ShapesConfig, VisionEncoder};
use vtalign_core::fixture::{self, TrainedFixture, SEG_CLASSES};
use vtalign_core::highres::{highres_segment, CropSchedule, HighResParams};
use vtalign_core::inference::{
    classify, default_window, embed_queries, prompts_for, sliding_window_segment, EmbeddingMode,
};

fn reference() -> TrainedFixture {
    fixture::cached_reference(Path::new(env!("CARGO_TARGET_TMPDIR")), 0).unwrap()
}

fn seg_classes() -> Vec<String> {
    SEG_CLASSES.iter().map(|s| s.to_string()).collect()
}

#[test]
fn single_shape_images_are_classified_by_colour() {
    let fx = reference();
    let model = &fx.model;
    let enc = fixture::encoder(&model.config().encoder, model.config().dim).unwrap();
    let cfg = ShapesConfig { height: 56, width: 56, min_side: 2, max_side: 4, min_rects: 1, max_rects: 1, ..ShapesConfig::default() };
    let corpus = make_shapes_dataset(64, &seg_classes(), 11, &cfg).unwrap();
    // candidates are the shape colours; the background is not a class here
    let qs = embed_queries(model, &prompts_for(&seg_classes()[1..], None).unwrap()).unwrap();
    let mut right = 0;
    for s in &corpus.samples {
        let colour = *s.mask.labels().iter().find(|&&l| l != 0).unwrap() as usize - 1;
        let (pred, _) = classify(model, &enc.encode(&s.raster).unwrap(), &qs).unwrap();
        right += usize::from(pred == colour);
    }
    let acc = right as f64 / corpus.samples.len() as f64;
    assert!(acc >= 0.95, "accuracy {acc}");
}

#[test]
fn topline_is_at_least_the_pipeline() {
    let fx = reference();
    let model = &fx.model;
    let enc = fixture::encoder(&model.config().encoder, model.config().dim).unwrap();
    let seg = fixture::segmentation_corpus(0).unwrap();
    let qs = embed_queries(model, &prompts_for(&seg.classes, None).unwrap()).unwrap();
    let params = HighResParams::new(0);
    let mut pipeline = Vec::new();
    let mut topline = Vec::new();
    for s in seg.samples.iter().take(6) {
        pipeline.push(highres_segment(model, &enc, &s.raster, &qs, &params).unwrap().map);
        topline.push(topline_with_gt_masks(model, &enc, &s.raster, &s.mask, &qs, &params).unwrap().map);
    }
    let gts: Vec<_> = seg.samples.iter().map(|s| &s.mask).collect();
    let p = miou_many(&pipeline.iter().zip(gts.iter().copied()).collect::<Vec<_>>()).unwrap().miou;
    let t = miou_many(&topline.iter().zip(gts.iter().copied()).collect::<Vec<_>>()).unwrap().miou;
    assert!(t >= p, "topline {t} < pipeline {p}");
}

#[test]
fn single_crop_clustering_tracks_dense_argmax() {
    let fx = reference();
    let model = &fx.model;
    let enc = fixture::encoder(&model.config().encoder, model.config().dim).unwrap();
    let seg = fixture::segmentation_corpus(0).unwrap();
    let qs = embed_queries(model, &prompts_for(&seg.classes, None).unwrap()).unwrap();
    let (mut differ, mut total) = (0usize, 0usize);
    for s in seg.samples.iter().take(6) {
        let h = s.raster.height();
        let params = HighResParams {
            schedule: CropSchedule { area_fracs: vec![1.0], noise_frac: 0.0, ..CropSchedule::default() },
            sample_res: Some(h),
            k: qs.len(),
            ..HighResParams::new(0)
        };
        let hr = highres_segment(model, &enc, &s.raster, &qs, &params).unwrap().map;
        let dense = sliding_window_segment(model, &enc, &s.raster, &qs, h, h, EmbeddingMode::Patch).unwrap();
        differ += hr.labels().iter().zip(dense.labels()).filter(|(a, b)| a != b).count();
        total += hr.labels().len();
    }
    let frac = differ as f64 / total as f64;
    assert!(frac < 0.05, "disagreement {frac}");
}

#[test]
fn sliding_window_reaches_target_on_fixture() {
    let fx = reference();
    let model = &fx.model;
    let enc = fixture::encoder(&model.config().encoder, model.config().dim).unwrap();
    let seg = fixture::segmentation_corpus(0).unwrap();
    let qs = embed_queries(model, &prompts_for(&seg.classes, None).unwrap()).unwrap();
    let w = default_window(model);
    let maps: Vec<_> = seg
        .samples
        .iter()
        .map(|s| sliding_window_segment(model, &enc, &s.raster, &qs, w, w / 2, EmbeddingMode::Patch).unwrap())
        .collect();
    let pairs: Vec<_> = maps.iter().zip(seg.samples.iter().map(|s| &s.mask)).collect();
    assert!(miou_many(&pairs).unwrap().miou >= 0.9);
}
