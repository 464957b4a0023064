//! End-to-end acceptance run: one PASS/FAIL line per criterion.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use vtalign_core::analysis::{miou_many, optimize_class_names};
use vtalign_core::clustering::{balanced_sample, compose_assignment, water_fill, ClusterLevel, ClusterTree};
use vtalign_core::curation::{text_balance, ConceptCounts};
use vtalign_core::encoder::VisionEncoder;
use vtalign_core::fixture::{self, NAME_DISTRACTORS, SEG_CLASSES};
use vtalign_core::highres::{build_field, field_logits, highres_segment, sample_crops, visit_statistics, CropSchedule, HighResParams};
use vtalign_core::inference::{
    default_window, dense_logits, embed_queries, prompts_for, retrieve_r1, sliding_window_segment, upsample, EmbeddingMode,
};
use vtalign_core::{verify, Matrix};

struct Outcome {
    passed: bool,
    detail: String,
}

fn check(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn gradient_exactness() -> Outcome {
    let t = Instant::now();
    let r = verify::gradient_suite(120, 0).unwrap();
    let el = t.elapsed();
    check(
        r.checked >= 100 && r.failures == 0 && el < Duration::from_secs(60),
        format!("{} parameters checked, {} failures, max rel error {:.2e}, {:.1}s", r.checked, r.failures, r.max_rel_error, secs(el)),
    )
}

fn pooling_routing() -> Outcome {
    let r = verify::pooling_suite(0).unwrap();
    check(r.passed(), format!("CLS max patch grad {:e}, CLS_AVG max deviation {:.2e}", r.cls_max_patch_grad, r.cls_avg_max_deviation))
}

fn loss_anchors() -> Outcome {
    let r = verify::loss_suite().unwrap();
    check(r.passed(), format!("B=1 {:e}, uniform {:.12}, identity {:.12}", r.single, r.uniform, r.identity))
}

struct Trained {
    fixture: fixture::TrainedFixture,
    elapsed: Duration,
}

fn convergence(tr: &Trained) -> Outcome {
    let model = &tr.fixture.model;
    let losses = &tr.fixture.report.losses;
    let last = *losses.last().unwrap();
    let tail = losses[losses.len() - 10..].iter().sum::<f64>() / 10.0;
    let (_, held) = fixture::alignment_corpus(0).unwrap();
    let enc = fixture::encoder(&model.config().encoder, model.config().dim).unwrap();
    let grids: Vec<_> = held.samples.iter().map(|s| enc.encode(&s.raster).unwrap()).collect();
    let captions: Vec<String> = held.samples.iter().map(|s| s.caption.clone()).collect();
    let r1 = retrieve_r1(model, &grids, &captions).unwrap();
    check(
        last < 0.1 && tail < 0.1 && r1 >= 0.95 && tr.elapsed < Duration::from_secs(300),
        format!("{} steps, final loss {last:.4} (last-10 mean {tail:.4}), held-out R@1 {r1:.3}, {:.1}s", losses.len(), secs(tr.elapsed)),
    )
}

fn segmentation(tr: &Trained) -> (Outcome, f64) {
    let t = Instant::now();
    let model = &tr.fixture.model;
    let enc = fixture::encoder(&model.config().encoder, model.config().dim).unwrap();
    let seg = fixture::segmentation_corpus(0).unwrap();
    let qs = embed_queries(model, &prompts_for(&seg.classes, None).unwrap()).unwrap();
    let w = default_window(model);
    let params = HighResParams::new(0);
    let mut dense = Vec::new();
    let mut hr = Vec::new();
    for s in &seg.samples {
        dense.push(sliding_window_segment(model, &enc, &s.raster, &qs, w, w / 2, EmbeddingMode::Patch).unwrap());
        hr.push(highres_segment(model, &enc, &s.raster, &qs, &params).unwrap().map);
    }
    let d: Vec<_> = dense.iter().zip(seg.samples.iter().map(|s| &s.mask)).collect();
    let h: Vec<_> = hr.iter().zip(seg.samples.iter().map(|s| &s.mask)).collect();
    let dm = miou_many(&d).unwrap().miou;
    let hm = miou_many(&h).unwrap().miou;
    let el = t.elapsed();
    let o = check(
        dm >= 0.90 && hm >= dm - 0.02 && el < Duration::from_secs(600),
        format!("{} images, sliding-window mIoU {dm:.4}, high-res mIoU {hm:.4}, {:.1}s", seg.samples.len(), secs(el)),
    );
    (o, dm)
}

fn degeneration(tr: &Trained) -> Outcome {
    let model = &tr.fixture.model;
    let enc = fixture::encoder(&model.config().encoder, model.config().dim).unwrap();
    let seg = fixture::segmentation_corpus(0).unwrap();
    let qs = embed_queries(model, &prompts_for(&seg.classes, None).unwrap()).unwrap();
    let mut worst = 0.0f64;
    for s in seg.samples.iter().take(4) {
        let (h, w) = (s.raster.height(), s.raster.width());
        let params = HighResParams {
            schedule: CropSchedule { area_fracs: vec![1.0], noise_frac: 0.0, ..CropSchedule::default() },
            sample_res: Some(h),
            ..HighResParams::new(0)
        };
        let field = build_field(model, &enc, &s.raster, &params).unwrap();
        let got = field_logits(&field, &qs).unwrap();
        let want = upsample(&dense_logits(model, &enc.encode(&s.raster).unwrap(), &qs, EmbeddingMode::Patch).unwrap(), h, w);
        worst = got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
    }
    check(worst <= 1e-5, format!("max per-logit difference {worst:.2e} over 4 images"))
}

fn coverage() -> Outcome {
    let quads = sample_crops(448, 448, &CropSchedule::default(), 0).unwrap();
    let (mean, zero) = visit_statistics(448, 448, &quads).unwrap();
    check(
        (600..=1000).contains(&quads.len()) && (30.0..=50.0).contains(&mean) && zero == 0,
        format!("{} crops, mean visits {mean:.2}, uncovered pixels {zero}", quads.len()),
    )
}

fn kmeans_oracle() -> Outcome {
    let r = verify::kmeans_suite(200, 20, 0).unwrap();
    check(
        r.passed(),
        format!("{} instances, {} mismatches, max rel gap {:.2e}, non-monotone fits {}", r.instances, r.mismatches, r.max_rel_gap, r.non_monotone_fits),
    )
}

fn water_filling() -> Outcome {
    let exact = water_fill(&[10, 2, 1], 6);
    let mut assignment = vec![0u32; 900];
    for c in 1..10u32 {
        assignment.extend(std::iter::repeat_n(c, 10));
    }
    let tree = ClusterTree { levels: vec![ClusterLevel { centroids: Matrix::zeros(10, 1), assignment, inertia: None, inertia_trace: vec![] }] };
    let top = compose_assignment(&tree, 0).unwrap();
    let ratio = |idx: &mut dyn Iterator<Item = usize>| {
        let mut h = [0u64; 10];
        idx.for_each(|i| h[top[i] as usize] += 1);
        *h.iter().max().unwrap() as f64 / *h.iter().min().unwrap() as f64
    };
    let before = ratio(&mut (0..top.len()));
    let after = ratio(&mut balanced_sample(&tree, 100, 0).into_iter());
    check(exact == vec![3, 2, 1] && after < before, format!("[10,2,1]/6 -> {exact:?}, max/min ratio {before:.1} -> {after:.2}"))
}

fn text_balancing() -> Outcome {
    // 200 pairs of one concept, 5 of a rare concept, 10 with no concept.
    let mut ids = Vec::new();
    let mut matched = Vec::new();
    for i in 0..215 {
        ids.push(format!("p{i:03}"));
        matched.push(match i {
            0..200 => vec![0],
            200..205 => vec![1],
            _ => vec![],
        });
    }
    let counts = ConceptCounts { ids: ids.clone(), counts: vec![200, 5], matched };
    let (mut lo, mut hi, mut sum) = (usize::MAX, 0, 0usize);
    let mut rules_hold = true;
    for seed in 0..100 {
        let sel = text_balance(&counts, 100, seed).unwrap();
        let common = sel.kept_ids.iter().filter(|id| id.as_str() < "p200").count();
        lo = lo.min(common);
        hi = hi.max(common);
        sum += common;
        rules_hold &= ids[200..205].iter().all(|id| sel.kept_ids.contains(id));
        rules_hold &= ids[205..].iter().all(|id| !sel.kept_ids.contains(id));
    }
    let mean = sum as f64 / 100.0;
    check(
        lo >= 70 && hi <= 130 && (95.0..=105.0).contains(&mean) && rules_hold,
        format!("kept range [{lo}, {hi}], mean {mean:.2}, under-cap kept and unmatched dropped: {rules_hold}"),
    )
}

fn miou_oracle() -> Outcome {
    let r = verify::miou_suite(1000, 0).unwrap();
    check(r.passed(), format!("{} random maps, {} mismatches, 2x2 case {:.6}", r.trials, r.mismatches, r.hand_case))
}

fn homography() -> Outcome {
    let r = verify::homography_suite(100, 100, 0).unwrap();
    check(r.passed(), format!("{} quads, max corner error {:.2e} px, max round trip {:.2e}", r.quads, r.max_corner_error, r.max_roundtrip_error))
}

fn name_optimization(tr: &Trained) -> Outcome {
    let model = &tr.fixture.model;
    let enc = fixture::encoder(&model.config().encoder, model.config().dim).unwrap();
    let seg = fixture::segmentation_corpus(0).unwrap();
    let data: Vec<_> = seg.samples.iter().map(|s| (s.raster.clone(), s.mask.clone())).collect();
    let vocab: Vec<String> = SEG_CLASSES.iter().chain(NAME_DISTRACTORS.iter()).map(|s| s.to_string()).collect();
    let choices = optimize_class_names(model, &enc, &data, &vocab, None, &HighResParams::new(0)).unwrap();
    let right = choices.iter().filter(|c| c.chosen == c.class && !c.flagged).count();
    check(right == choices.len(), format!("{right}/{} classes recovered among {} candidates", choices.len(), vocab.len()))
}

// ---------------------------------------------------------------------------
// CLI determinism

fn collect_files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn cli_pipeline(work: &Path, shared: &Path, threads: usize) -> (Vec<(String, Vec<u8>)>, Vec<String>) {
    let s = |p: &str| shared.join(p).to_string_lossy().into_owned();
    let concepts = s("concepts.txt");
    let vocab = s("vocab.txt");
    let steps: Vec<Vec<String>> = [
        vec!["gen-shapes", "--preset", "shapes", "--n", "4", "--seed", "3", "--out", "shapes"],
        vec!["gen-shapes", "--preset", "alignment", "--seed", "0", "--out", "align"],
        vec!["curate-text", "--captions", "align/train/captions.jsonl", "--concepts", &concepts, "--cap", "40", "--seed", "1", "--out", "text.ids"],
        vec!["fit-tree", "--embeddings", "align/train/embeddings.dtxe", "--ks", "16,4", "--seed", "1", "--out", "tree.dtxt"],
        vec!["curate-image", "--embeddings", "align/train/embeddings.dtxe", "--tree", "tree.dtxt", "--budget", "100", "--seed", "1", "--out", "img.ids"],
        vec!["intersect", "--a", "text.ids", "--b", "img.ids", "--out", "final.ids"],
        vec![
            "curation-report", "--selection", "final.ids", "--captions", "align/train/captions.jsonl", "--concepts", &concepts,
            "--embeddings", "align/train/embeddings.dtxe", "--tree", "tree.dtxt",
        ],
        vec!["train", "--pairs", "align/train/pairs.manifest", "--steps", "30", "--batch", "16", "--seed", "0", "--out", "m.dtxm", "--report", "r.json"],
        vec!["eval-classify", "--model", "m.dtxm", "--corpus", "shapes"],
        vec!["eval-retrieval", "--model", "m.dtxm", "--corpus", "align/heldout"],
        vec!["eval-seg", "--model", "m.dtxm", "--corpus", "shapes", "--out", "seg", "--ppm"],
        vec!["eval-seg-highres", "--model", "m.dtxm", "--corpus", "shapes", "--out", "hr", "--seed", "0"],
        vec!["eval-miou", "--pred", "hr/shape-00000.dtxs", "--gt", "shapes/masks/shape-00000.dtxs"],
        vec!["topline", "--model", "m.dtxm", "--corpus", "shapes", "--out", "top", "--seed", "0"],
        vec!["optimize-names", "--model", "m.dtxm", "--corpus", "shapes", "--vocab", &vocab, "--seed", "0"],
        vec!["selfcheck", "--kmeans-instances", "50", "--miou-trials", "200", "--quads", "20"],
    ]
    .iter()
    .map(|v| v.iter().map(|x| x.to_string()).collect())
    .collect();
    let mut stdout = Vec::new();
    let mut failures = Vec::new();
    for args in steps {
        let out = Command::new(env!("CARGO_BIN_EXE_vtalign")).args(&args).arg("--threads").arg(threads.to_string()).current_dir(work).output().unwrap();
        if !out.status.success() {
            failures.push(format!("{} exited {:?}: {}", args[0], out.status.code(), String::from_utf8_lossy(&out.stderr)));
        }
        stdout.push((args[0].clone(), out.stdout));
    }
    (stdout, failures)
}

fn cli_determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let shared = tmp.path().join("shared");
    std::fs::create_dir_all(&shared).unwrap();
    std::fs::write(shared.join("concepts.txt"), fixture::TRAIN_COLORS.join("\n")).unwrap();
    let vocab: Vec<&str> = SEG_CLASSES.iter().chain(NAME_DISTRACTORS.iter()).copied().collect();
    std::fs::write(shared.join("vocab.txt"), vocab.join("\n")).unwrap();
    let mut runs = Vec::new();
    for (i, threads) in [1usize, 3, 1].into_iter().enumerate() {
        let work = tmp.path().join(format!("run{i}"));
        std::fs::create_dir_all(&work).unwrap();
        let (stdout, failures) = cli_pipeline(&work, &shared, threads);
        if !failures.is_empty() {
            return check(false, failures.join("; "));
        }
        runs.push((stdout, collect_files(&work)));
    }
    let commands = runs[0].0.len();
    let files = runs[0].1.len();
    let same = runs.windows(2).all(|w| w[0] == w[1]);
    let mut detail = format!("{commands} subcommand runs, {files} output files, threads 1/3/1 byte-identical: {same}");
    if !same {
        for (a, b) in runs[0].0.iter().zip(&runs[1].0) {
            if a != b {
                detail.push_str(&format!("; stdout differs for {}", a.0));
            }
        }
        for (k, v) in &runs[0].1 {
            if runs[1].1.get(k) != Some(v) {
                detail.push_str(&format!("; {} differs", k.display()));
            }
        }
    }
    check(same, detail)
}

fn main() {
    let t = Instant::now();
    let fixture = fixture::train_reference(0).unwrap();
    let trained = Trained { fixture, elapsed: t.elapsed() };
    let (seg, _) = segmentation(&trained);
    let results: Vec<(&str, Outcome)> = vec![
        ("gradient exactness", gradient_exactness()),
        ("pooling gradient routing", pooling_routing()),
        ("contrastive loss anchors", loss_anchors()),
        ("synthetic alignment convergence", convergence(&trained)),
        ("open-vocabulary segmentation", seg),
        ("high-res single-crop degeneration", degeneration(&trained)),
        ("crop coverage statistics", coverage()),
        ("k-means oracle", kmeans_oracle()),
        ("water-filling sampler", water_filling()),
        ("text balancing", text_balancing()),
        ("mIoU oracle", miou_oracle()),
        ("homography", homography()),
        ("class-name optimization", name_optimization(&trained)),
        ("CLI determinism", cli_determinism()),
    ];
    let mut failed = 0;
    for (i, (name, o)) in results.iter().enumerate() {
        println!("criterion {:>2} {}: {} ({})", i + 1, if o.passed { "PASS" } else { "FAIL" }, name, o.detail);
        failed += usize::from(!o.passed);
    }
    println!("acceptance: {}/{} criteria passed in {:.1}s", results.len() - failed, results.len(), secs(t.elapsed()));
    if failed > 0 {
        std::process::exit(1);
    }
}
