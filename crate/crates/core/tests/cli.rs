//! The `topoot` binary end to end.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use topoot::grid_io::load_mask;
use topoot::metrics::score;
use topoot::pipeline::PipelineConfig;

fn topoot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_topoot"))
        .args(args)
        .env("TOPOOT_LOG", "error")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = topoot(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// `count` synthetic samples of side `size` in `dir`.
fn corpus(dir: &Path, count: usize, size: usize) {
    ok(&["synth", "-o", s(dir), "--count", &count.to_string(), "--size", &size.to_string(), "--seed", "3"]);
}

#[test]
fn synth_writes_grids_and_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path(), 3, 24);
    for i in 0..3 {
        assert!(dir.path().join(format!("sample_{i:03}.f32")).is_file());
        assert!(dir.path().join(format!("sample_{i:03}.gt.png")).is_file());
    }
}

#[test]
fn synth_from_spec_file() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    fs::write(
        &spec,
        r#"{"height":12,"width":12,"background":0.1,"noise":0.0,"seed":1,
            "defects":[{"kind":"disk","row":5,"col":5,"radius":0,"peak":0.9}]}"#,
    )
    .unwrap();
    let out = dir.path().join("o");
    ok(&["synth", "-o", s(&out), "--spec", s(&spec)]);
    let gt = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.to_str().unwrap().ends_with(".gt.png"))
        .unwrap();
    assert_eq!(load_mask(&gt).unwrap().count(), 1);
}

#[test]
fn segment_finds_the_synthetic_defect() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    corpus(&data, 1, 32);
    let out = dir.path().join("out");
    ok(&["segment", s(&data.join("sample_000.f32")), "-o", s(&out), "--save-pseudo"]);
    let mask = load_mask(&out.join("sample_000.mask.png")).unwrap();
    let gt = load_mask(&data.join("sample_000.gt.png")).unwrap();
    assert!(score(&mask, &gt).unwrap().iou >= 0.9);
    assert!(out.join("sample_000.pseudo.png").is_file());
    assert!(!out.join("manifest.json.partial").exists());
}

#[test]
fn skip_ttt_mask_is_the_pseudo_label() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path(), 1, 24);
    let out = dir.path().join("out");
    ok(&["segment", s(&dir.path().join("sample_000.f32")), "-o", s(&out), "--skip-ttt", "--save-pseudo"]);
    assert_eq!(
        load_mask(&out.join("sample_000.mask.png")).unwrap(),
        load_mask(&out.join("sample_000.pseudo.png")).unwrap()
    );
}

#[test]
fn top_one_mask_is_inside_top_three() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path(), 2, 24);
    for i in 0..2 {
        let input = dir.path().join(format!("sample_{i:03}.f32"));
        let masks: Vec<_> = ["1", "3"]
            .iter()
            .map(|k| {
                let out = dir.path().join(format!("k{k}"));
                ok(&["segment", s(&input), "-o", s(&out), "--skip-ttt", "--top-k", k]);
                load_mask(&out.join(format!("sample_{i:03}.mask.png"))).unwrap()
            })
            .collect();
        assert!(masks[0].is_subset_of(&masks[1]));
    }
}

#[test]
fn manifest_records_every_setting() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path(), 1, 16);
    let out = dir.path().join("out");
    let args = [
        "--thresholds", "7", "--threshold-mode", "quantile", "--alpha", "0.25", "--top-k", "2",
        "--top-m", "5", "--delta-sub", "0.15", "--delta-sup", "0.1", "--restrict-component",
        "--aggregate", "mean", "--epsilon", "0.07", "--max-iter", "150", "--tol", "1e-8",
        "--lambda", "0.3", "--margin", "0.5", "--epochs", "2", "--lr", "0.002", "--pairs", "64",
        "--batch-pixels", "20", "--seed", "11", "--jobs", "1",
    ];
    let input = dir.path().join("sample_000.f32");
    let mut full = vec!["segment", s(&input), "-o", s(&out)];
    full.extend(args);
    ok(&full);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    let cfg: PipelineConfig = serde_json::from_value(manifest["config"].clone()).unwrap();
    assert_eq!(cfg.thresholds, 7);
    assert_eq!(serde_json::to_value(cfg.threshold_mode).unwrap(), "quantile");
    assert_eq!(cfg.chain.alpha, 0.25);
    assert_eq!((cfg.chain.top_k, cfg.chain.top_m), (2, 5));
    assert_eq!((cfg.chain.delta_sub, cfg.chain.delta_sup), (0.15, 0.1));
    assert!(cfg.chain.restrict_component);
    assert_eq!(serde_json::to_value(cfg.chain.aggregate).unwrap(), "mean");
    assert_eq!((cfg.sinkhorn.epsilon, cfg.sinkhorn.max_iter, cfg.sinkhorn.tol), (0.07, 150, 1e-8));
    assert_eq!((cfg.ttt.lambda, cfg.ttt.margin, cfg.ttt.epochs), (0.3, 0.5, 2));
    assert_eq!((cfg.ttt.lr, cfg.ttt.pairs, cfg.ttt.batch_pixels), (0.002, 64, 20));
    assert_eq!(manifest["global_seed"], 11);
    assert_eq!(manifest["jobs"], 1);
    let sample = &manifest["samples"][0];
    for key in ["seed", "thresholds", "candidates", "timings", "mask"] {
        assert!(!sample[key].is_null(), "missing {key}");
    }
    for c in sample["candidates"].as_array().unwrap() {
        for key in ["birth", "death", "score", "tau_bp"] {
            assert!(c[key].is_number(), "candidate missing {key}");
        }
    }
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(topoot(&[]).status.code(), Some(1));
    assert_eq!(topoot(&["segment"]).status.code(), Some(1));
    assert_eq!(topoot(&["frobnicate"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path(), 1, 12);
    let input = dir.path().join("sample_000.f32");
    let out = dir.path().join("o");
    let code = |extra: &[&str]| {
        let mut a = vec!["segment", s(&input), "-o", s(&out)];
        a.extend(extra);
        topoot(&a).status.code()
    };
    assert_eq!(code(&["--top-k", "9", "--top-m", "8"]), Some(1));
    assert_eq!(code(&["--thresholds", "1"]), Some(1));
    assert_eq!(code(&["--delta-sub", "1.5"]), Some(1));
    assert_eq!(code(&["--epochs", "0"]), Some(1));
}

#[test]
fn data_errors_exit_with_two_and_keep_partial_outputs() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path(), 1, 12);
    let bad = dir.path().join("broken.f32");
    fs::write(&bad, b"{\"h\":4,\"w\":4}\n\x00\x01").unwrap();
    let out = dir.path().join("o");
    let r = topoot(&["segment", s(&dir.path().join("sample_000.f32")), s(&bad), "-o", s(&out)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(out.join("manifest.json.partial").is_file());
    assert!(out.join("sample_000.mask.png.partial").is_file());
    assert!(!out.join("manifest.json").exists());

    let missing = dir.path().join("nope.f32");
    assert_eq!(topoot(&["pd", s(&missing)]).status.code(), Some(2));
}

#[test]
fn pd_writes_clamped_diagrams() {
    let dir = tempfile::tempdir().unwrap();
    let grid = dir.path().join("g.csv");
    fs::write(&grid, "0.1,0.9,0.1\n0.1,0.1,0.1\n").unwrap();
    let out = ok(&["pd", s(&grid)]);
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("dim,tag,birth,death,birth_row,birth_col"));
    let rows: Vec<&str> = lines.collect();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| !r.contains("inf")));
    // one essential component per filtration, clamped past the data range
    assert!(rows.iter().any(|r| r.starts_with("0,sub,0,2,")));
    assert!(rows.iter().any(|r| r.starts_with("0,sup,-1,1,")));
}

#[test]
fn ot_match_reports_cost_and_partners() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    fs::write(&a, "dim,tag,birth,death,birth_row,birth_col\n0,sub,0,1,0,0\n").unwrap();
    fs::write(
        &b,
        "dim,tag,birth,death,birth_row,birth_col\n0,sub,0,1,0,0\n0,sub,0.5,0.6,1,1\n",
    )
    .unwrap();
    let out = ok(&["ot-match", s(&a), s(&b), "--exact"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("cost"), "{text}");
    assert!(text.contains("partner"), "{text}");
    assert!(text.contains("exact"), "{text}");
}

#[test]
fn eval_and_bench_reports() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    corpus(&data, 2, 20);
    let seg = dir.path().join("seg");
    ok(&["segment", s(&data.join("sample_000.f32")), s(&data.join("sample_001.f32")), "-o", s(&seg)]);
    let ev = dir.path().join("eval");
    ok(&["eval", "--pred", s(&seg), "--gt", s(&data), "--grids", s(&data), "--baseline", "thr", "-o", s(&ev)]);
    let per_sample = fs::read_to_string(ev.join("per_sample.csv")).unwrap();
    assert_eq!(per_sample.lines().count(), 1 + 2 * 2, "{per_sample}");
    assert!(ev.join("aggregate.csv").is_file());
    assert!(fs::read_to_string(ev.join("report.md")).unwrap().contains("IoU"));

    let bench = dir.path().join("bench");
    ok(&["bench", s(&data), "-o", s(&bench)]);
    let md = fs::read_to_string(bench.join("report.md")).unwrap();
    assert!(md.contains("| Method | Prec. | Rec. | F1 | IoU |"), "{md}");
    assert!(bench.join("report.csv").is_file());
}

#[test]
fn bench_on_an_empty_corpus_fails() {
    let dir = tempfile::tempdir().unwrap();
    let r = topoot(&["bench", s(dir.path())]);
    assert_eq!(r.status.code(), Some(2));
}
