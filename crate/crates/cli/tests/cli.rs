use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use capeval::embedding_store::{
    save_store, write_jsonl, EmbeddingRecord, EmbeddingStore, Modality, NliRecord, RatedPairRecord, Split,
};
use capeval::task_harness::NliLabel;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

fn toy() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/toy")
}

fn capeval(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_capeval"))
        .current_dir(cwd)
        .args(args)
        .output()
        .expect("spawn capeval")
}

fn ok(cwd: &Path, args: &[&str]) -> String {
    let out = capeval(cwd, args);
    assert!(
        out.status.success(),
        "capeval {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn write_lines<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) {
    let mut buf = Vec::new();
    write_jsonl(rows, &mut buf).unwrap();
    fs::write(path, buf).unwrap();
}

/// `cos` of the returned unit vector with the first axis.
fn at_angle(d: usize, cos: f32) -> Vec<f32> {
    let mut v = vec![0.0; d];
    v[0] = cos;
    v[1] = (1.0 - cos * cos).sqrt();
    v
}

/// One image along the first axis; each caption at the given cosine to it.
fn write_stores(dir: &Path, captions: &[(&str, f32)]) {
    let d = 4;
    let mut images = EmbeddingStore::new(d).unwrap();
    images
        .insert(EmbeddingRecord::new("img", at_angle(d, 1.0), Modality::Image))
        .unwrap();
    let mut texts = EmbeddingStore::new(d).unwrap();
    for (id, cos) in captions {
        texts
            .insert(EmbeddingRecord::new(*id, at_angle(d, *cos), Modality::Text))
            .unwrap();
    }
    save_store(&images, dir.join("images.capevec")).unwrap();
    save_store(&texts, dir.join("texts.capevec")).unwrap();
}

fn rated(id: &str, candidate: &str, rating: f64, language: &str) -> RatedPairRecord {
    RatedPairRecord {
        instance_id: id.into(),
        image_id: "img".into(),
        candidate_id: candidate.into(),
        reference_ids: vec![],
        rating,
        language: language.into(),
        split: Split::Test,
    }
}

const STORES: [&str; 4] = ["--images", "images.capevec", "--texts", "texts.capevec"];

fn toy_args<'a>(out: &'a str, args: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec!["--out-dir", out];
    v.extend_from_slice(args);
    v
}

#[test]
fn missing_store_is_an_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = capeval(
        tmp.path(),
        &["score", "--images", "nope.capevec", "--texts", "nope.capevec", "--pairs", "p.jsonl"],
    );
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error: ") && err.contains("file not found"), "{err}");
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(capeval(tmp.path(), &["score", "--bogus"]).status.code(), Some(2));
    let out = capeval(tmp.path(), &["--jobs", "0", "mt-select", "--candidates", "x.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn score_reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let args = [&["score", "--pairs", "pairs.jsonl"][..], &STORES].concat();
        ok(&toy(), &toy_args(dir.to_str().unwrap(), &args));
    }
    let first = fs::read(a.join("scores.csv")).unwrap();
    assert_eq!(first, fs::read(b.join("scores.csv")).unwrap());
    assert_eq!(
        fs::read(a.join("score.manifest.json")).unwrap(),
        fs::read(b.join("score.manifest.json")).unwrap()
    );
    assert!(String::from_utf8(first).unwrap().starts_with("instance_id,language,clipscore,refclipscore\n"));
}

#[test]
fn manifest_records_output_digests() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    ok(&toy(), &toy_args(out, &["--seed", "5", "mt-select", "--candidates", "mt_candidates.jsonl"]));
    let manifest = json(tmp.path().join("mt-select.manifest.json"));
    assert_eq!(manifest["subcommand"], "mt-select");
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["inputs"]["candidates"], "mt_candidates.jsonl");
    for name in ["selected.jsonl", "dropped.jsonl"] {
        let digest = hex::encode(Sha256::digest(fs::read(tmp.path().join(name)).unwrap()));
        assert_eq!(manifest["outputs"][name], digest.as_str());
    }
}

#[test]
fn perfectly_ordered_scores_agree_fully() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let captions: Vec<(String, f32)> = (0..5).map(|i| (format!("c{i}"), 0.1 + 0.2 * i as f32)).collect();
    let refs: Vec<(&str, f32)> = captions.iter().map(|(id, c)| (id.as_str(), *c)).collect();
    write_stores(dir, &refs);
    let pairs: Vec<RatedPairRecord> = (0..5)
        .map(|i| rated(&format!("p{i}"), &format!("c{i}"), (i + 1) as f64, "en"))
        .collect();
    write_lines(dir.join("pairs.jsonl"), &pairs);
    ok(dir, &[&["score", "--pairs", "pairs.jsonl"][..], &STORES].concat());
    let stdout = ok(dir, &["correlate", "--scores", "scores.csv", "--pairs", "pairs.jsonl"]);
    let row = stdout.lines().find(|l| l.starts_with("all")).unwrap();
    let cols: Vec<&str> = row.split_whitespace().collect();
    assert_eq!(cols, ["all", "5", "100.0", "100.0", "100.0"]);
}

#[test]
fn constant_ratings_are_a_numeric_error() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_stores(dir, &[("a", 0.2), ("b", 0.6), ("c", 0.9)]);
    let pairs: Vec<RatedPairRecord> = ["a", "b", "c"].iter().map(|c| rated(c, c, 3.0, "en")).collect();
    write_lines(dir.join("pairs.jsonl"), &pairs);
    ok(dir, &[&["score", "--pairs", "pairs.jsonl"][..], &STORES].concat());
    let out = capeval(dir, &["correlate", "--scores", "scores.csv", "--pairs", "pairs.jsonl"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn missing_score_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_stores(dir, &[("a", 0.2), ("b", 0.6)]);
    write_lines(dir.join("pairs.jsonl"), &[rated("a", "a", 1.0, "en")]);
    ok(dir, &[&["score", "--pairs", "pairs.jsonl"][..], &STORES].concat());
    write_lines(dir.join("more.jsonl"), &[rated("a", "a", 1.0, "en"), rated("b", "b", 2.0, "en")]);
    let out = capeval(dir, &["correlate", "--scores", "scores.csv", "--pairs", "more.jsonl"]);
    assert_eq!(out.status.code(), Some(3));
}

fn correlate_toy(out: &Path, seed: &str) -> Value {
    let o = out.to_str().unwrap();
    ok(&toy(), &toy_args(o, &[&["score", "--pairs", "pairs.jsonl"][..], &STORES].concat()));
    let scores = out.join("scores.csv");
    ok(
        &toy(),
        &toy_args(
            o,
            &[
                "--seed", seed, "correlate", "--scores", scores.to_str().unwrap(), "--pairs", "pairs.jsonl",
                "--per-language", "--bootstrap", "--boot-iters", "100", "--strata", "none",
            ],
        ),
    );
    json(out.join("correlation.json"))
}

#[test]
fn seeded_bootstrap_repeats_and_seed_matters() {
    let tmp = tempfile::tempdir().unwrap();
    let a = correlate_toy(&tmp.path().join("a"), "7");
    let b = correlate_toy(&tmp.path().join("b"), "7");
    let c = correlate_toy(&tmp.path().join("c"), "8");
    assert_eq!(a, b);
    let std = |v: &Value| v["groups"][0]["bootstrap"]["tau_b"]["std"].as_f64().unwrap();
    assert!(std(&a) > 0.0);
    assert_ne!(std(&a), std(&c));
    // The point estimates do not depend on the seed.
    assert_eq!(a["groups"][0]["report"], c["groups"][0]["report"]);
}

#[test]
fn macro_average_is_the_mean_over_languages() {
    let tmp = tempfile::tempdir().unwrap();
    let report = correlate_toy(tmp.path(), "1");
    let groups = report["groups"].as_array().unwrap();
    let langs: Vec<&str> = groups.iter().map(|g| g["language"].as_str().unwrap()).collect();
    assert_eq!(langs, ["de", "en", "fr"]);
    for key in ["rho", "tau_b", "tau_c"] {
        let mean = groups.iter().map(|g| g["report"][key].as_f64().unwrap()).sum::<f64>() / 3.0;
        let got = report["macro_average"][key].as_f64().unwrap();
        assert!((got - mean).abs() < 1e-15, "{key}: {got} vs {mean}");
    }
}

#[test]
fn ordered_entailment_scores_solve_every_xvnli_task() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_stores(dir, &[("e", 0.9), ("n", 0.5), ("c", 0.1)]);
    let records: Vec<NliRecord> = [("e", NliLabel::Entailment), ("n", NliLabel::Neutral), ("c", NliLabel::Contradiction)]
        .into_iter()
        .map(|(id, label)| NliRecord {
            image_id: "img".into(),
            caption_id: id.into(),
            label,
            language: "en".into(),
        })
        .collect();
    write_lines(dir.join("xvnli.jsonl"), &records);
    ok(dir, &[&["task", "xvnli", "--data", "xvnli.jsonl"][..], &STORES].concat());
    let results = json(dir.join("xvnli.json"));
    let results = results.as_array().unwrap();
    assert_eq!(results.len(), 3);
    for r in results {
        assert_eq!(r["accuracy"], 1.0, "{r}");
    }
}

#[test]
fn malformed_marvl_group_is_skipped() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    ok(
        &toy(),
        &toy_args(out, &[&["task", "marvl", "--task", "2", "--data", "marvl.jsonl"][..], &STORES].concat()),
    );
    let results = json(tmp.path().join("marvl.json"));
    let skipped: Vec<(String, u64)> = results
        .as_array()
        .unwrap()
        .iter()
        .map(|r| (r["language"].as_str().unwrap().to_string(), r["skipped"].as_u64().unwrap()))
        .collect();
    assert_eq!(skipped, [("de".into(), 0), ("en".into(), 1), ("fr".into(), 0)]);
}

#[test]
fn pascal_refclipscore_needs_references() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let args = [&["task", "pascal", "--metric", "refclipscore", "--data", "pascal.jsonl"][..], &STORES].concat();
    let res = capeval(&toy(), &toy_args(out, &args));
    assert_ne!(res.status.code(), Some(0));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("reference"), "{err}");
    assert!(!tmp.path().join("pascal.json").exists());
}

#[test]
fn identical_languages_correlate_perfectly() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let mut csv = String::from("instance_id,language,clipscore,refclipscore\n");
    for lang in ["de", "en"] {
        for (i, s) in [0.3, 1.1, 0.7, 2.0, 1.5].iter().enumerate() {
            csv.push_str(&format!("p{i},{lang},{s},\n"));
        }
    }
    fs::write(dir.join("scores.csv"), csv).unwrap();
    ok(dir, &["heatmap", "--scores", "scores.csv"]);
    let heatmap = fs::read_to_string(dir.join("heatmap.csv")).unwrap();
    let rows: Vec<Vec<String>> = heatmap
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    assert_eq!(rows[0], ["language", "de", "en"]);
    for row in &rows[1..] {
        for cell in &row[1..] {
            assert_eq!(cell.parse::<f64>().unwrap(), 1.0, "{heatmap}");
        }
    }
    assert_eq!(rows.len(), 3);
}

#[test]
fn mt_select_reports_dropped_sources() {
    let tmp = tempfile::tempdir().unwrap();
    let stdout = ok(&toy(), &toy_args(tmp.path().to_str().unwrap(), &["mt-select", "--candidates", "mt_candidates.jsonl"]));
    assert!(stdout.contains("23"), "{stdout}");
    let selected = fs::read_to_string(tmp.path().join("selected.jsonl")).unwrap();
    let dropped = fs::read_to_string(tmp.path().join("dropped.jsonl")).unwrap();
    assert_eq!(selected.lines().count(), 23);
    assert_eq!(dropped.lines().count(), 1);
    assert!(dropped.contains("\"p12\"") && dropped.contains("\"fr\""));
}

#[test]
fn finetune_writes_checkpoint_curve_and_stores() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let args = [
        &[
            "--seed", "3", "finetune", "--pairs", "pairs.jsonl", "--captions", "captions.jsonl", "--batch-size", "8",
            "--lr", "0.05", "--epochs", "2", "--export",
        ][..],
        &STORES,
    ]
    .concat();
    ok(&toy(), &toy_args(out, &args));
    let ckpt = capeval::adapter_finetune::load_checkpoint(tmp.path().join("adapter.ckpt")).unwrap();
    assert_eq!(ckpt.dim(), 16);
    assert!(ckpt.step > 0);
    let curve = fs::read_to_string(tmp.path().join("loss_curve.csv")).unwrap();
    assert_eq!(curve.lines().count() as u64, ckpt.step + 1);
    let images = capeval::embedding_store::load_store(tmp.path().join("adapted_images.capevec")).unwrap();
    assert_eq!(images.len(), 12);

    // Same seed, same bytes.
    let again = tempfile::tempdir().unwrap();
    ok(&toy(), &toy_args(again.path().to_str().unwrap(), &args));
    assert_eq!(
        fs::read(tmp.path().join("adapter.ckpt")).unwrap(),
        fs::read(again.path().join("adapter.ckpt")).unwrap()
    );
}

#[test]
fn worker_count_does_not_change_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for jobs in ["1", "3"] {
        let dir = tmp.path().join(jobs);
        let o = dir.to_str().unwrap();
        ok(&toy(), &toy_args(o, &[&["--jobs", jobs, "score", "--pairs", "pairs.jsonl"][..], &STORES].concat()));
        let scores = dir.join("scores.csv");
        ok(
            &toy(),
            &toy_args(
                o,
                &[
                    "--jobs", jobs, "correlate", "--scores", scores.to_str().unwrap(), "--pairs", "pairs.jsonl",
                    "--bootstrap", "--boot-iters", "50",
                ],
            ),
        );
        outputs.push((fs::read(scores).unwrap(), fs::read(dir.join("correlation.json")).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
}
