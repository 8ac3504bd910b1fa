use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use proptest::prelude::*;
use semshift::cli::run_with;
use semshift::store::{HEADER_LEN, STORE_MAGIC};
use semshift::synthetic::{planted_drift, DriftConfig};
use semshift::{ConstraintSet, EmbeddingStore, Error, Label, MahalanobisMatrix, ManifestRow};

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut argv = vec!["semshift"];
    argv.extend_from_slice(args);
    let code = run_with(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn small_drift(dir: &Path) {
    let data = planted_drift(&DriftConfig {
        dim: 12,
        aware: 3,
        words: 8,
        occurrences: 8,
        train_pairs: 200,
        dev_pairs: 80,
        ..DriftConfig::default()
    })
    .unwrap();
    data.write_to(dir).unwrap();
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

#[test]
fn empty_store_is_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.bin");
    EmbeddingStore::new(4).write(&path).unwrap();
    let bytes = fs::read(&path).unwrap();
    assert_eq!(bytes.len(), HEADER_LEN);
    assert_eq!(&bytes[..4], STORE_MAGIC);
    assert_eq!(fs::read_to_string(EmbeddingStore::manifest_path(&path)).unwrap(), "");
    let back = EmbeddingStore::read(&path).unwrap();
    assert_eq!((back.dim(), back.len()), (4, 0));
}

#[test]
fn payload_is_little_endian_f32() {
    let mut store = EmbeddingStore::new(2);
    store.push(ManifestRow::new("r", "w", "c", "s"), &[0.5, -0.5]).unwrap();
    let bytes = store.to_bytes();
    let mut expected = 0.5f32.to_le_bytes().to_vec();
    expected.extend_from_slice(&(-0.5f32).to_le_bytes());
    assert_eq!(&bytes[HEADER_LEN..], &expected[..]);
}

#[test]
fn store_read_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.bin");
    let mut store = EmbeddingStore::new(2);
    store.push(ManifestRow::new("r1", "w", "c", "s"), &[1.0, 2.0]).unwrap();
    store.push(ManifestRow::new("r2", "w", "c", "s"), &[3.0, 4.0]).unwrap();
    store.write(&path).unwrap();
    let good = fs::read(&path).unwrap();
    let manifest = EmbeddingStore::manifest_path(&path);

    let mut bad = good.clone();
    bad[..4].copy_from_slice(b"XXXX");
    fs::write(&path, &bad).unwrap();
    assert!(matches!(EmbeddingStore::read(&path), Err(Error::Format { .. })));

    fs::write(&path, &good[..good.len() - 3]).unwrap();
    assert!(matches!(EmbeddingStore::read(&path), Err(Error::Corrupt { .. })));

    fs::write(&path, &good).unwrap();
    fs::write(&manifest, "r1\tw\tc\ts\nr1\tw\tc\ts\n").unwrap();
    assert!(matches!(EmbeddingStore::read(&path), Err(Error::Consistency(_))));

    fs::write(&manifest, "r1\tw\tc\ts\n").unwrap();
    assert!(matches!(EmbeddingStore::read(&path), Err(Error::Consistency(_))));
}

#[test]
fn constraint_file_examples() {
    let mut store = EmbeddingStore::new(1);
    store.push(ManifestRow::new("r1", "w", "c", "s"), &[0.0]).unwrap();
    store.push(ManifestRow::new("r2", "w", "c", "s"), &[1.0]).unwrap();
    let cs = ConstraintSet::parse("r1\tr2\t1\n", &store).unwrap();
    assert_eq!(cs.len(), 1);
    assert_eq!(cs.constraints[0].label, Label::Same);
    assert!(ConstraintSet::parse("r1\tr1\t0\n", &store).is_err());
    assert!(matches!(ConstraintSet::parse("r1\tr2\t2\n", &store), Err(Error::Parse { line: 1, .. })));
    let err = ConstraintSet::parse("r1\tr2\t1\nr1\tzz\t0\n", &store).unwrap_err();
    assert!(err.to_string().contains("2"), "{err}");
    let back = ConstraintSet::parse(&cs.to_text(), &store).unwrap();
    assert_eq!(back, cs);
}

#[test]
fn cli_usage_errors_exit_one() {
    let (code, _, err) = run(&["score", "--bogus"]);
    assert_eq!(code, 1);
    assert!(err.contains("Usage"), "{err}");
    let (code, _, err) = run(&["score", "--metric", "m.bin"]);
    assert_eq!(code, 1);
    assert!(err.contains("--store") || err.contains("does not exist"), "{err}");
    let (code, _, err) = run(&["frobnicate"]);
    assert_eq!(code, 1, "{err}");
    let (code, out, _) = run(&["--help"]);
    assert_eq!(code, 0);
    for sub in ["learn-metric", "score", "analyze-dims", "eval-wic", "eval-scd", "inspect"] {
        assert!(out.contains(sub), "{sub} missing from help");
    }
}

#[test]
fn cli_pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_drift(d);

    let (code, out, err) = run(&[
        "learn-metric", "--store", &p(d, "store.bin"), "--constraints", &p(d, "train.tsv"),
        "--dev", &p(d, "dev.tsv"), "--gamma-grid", "0.1,1,10", "--out", &p(d, "metric.bin"),
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("dev_accuracy"), "{out}");
    assert!(d.join("metric.bin").exists() && d.join("metric.bin.meta").exists());

    let (code, _, err) = run(&[
        "score", "--store", &p(d, "store.bin"), "--metric", &p(d, "metric.bin"),
        "--targets", &p(d, "targets.tsv"), "--workers", "3", "--out", &p(d, "scores.tsv"),
    ]);
    assert_eq!(code, 0, "{err}");
    let scores = semshift::scoring::read_scores(&d.join("scores.tsv")).unwrap();
    assert_eq!(scores.len(), 8);

    let (code, out, err) = run(&["eval-scd", "--scores", &p(d, "scores.tsv"), "--gold", &p(d, "gold.tsv")]);
    assert_eq!(code, 0, "{err}");
    assert!(out.starts_with("spearman_r = "), "{out}");

    let (code, out, err) = run(&[
        "analyze-dims", "--store", &p(d, "store.bin"), "--metric", &p(d, "metric.bin"),
        "--targets", &p(d, "targets.tsv"), "--gold", &p(d, "gold.tsv"), "--out", &p(d, "dims"),
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("Top-25%"), "{out}");
    assert!(d.join("dims/dimensions.tsv").exists());

    let (code, out, err) = run(&[
        "eval-wic", "--store", &p(d, "store.bin"), "--test", &p(d, "dev.tsv"), "--metric", &p(d, "metric.bin"),
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("ci95_low"), "{out}");
    let (code, out, _) = run(&["eval-wic", "--store", &p(d, "store.bin"), "--test", &p(d, "dev.tsv"), "--cosine-baseline"]);
    assert_eq!(code, 0);
    assert!(out.contains("accuracy"));

    let (code, out, _) = run(&["inspect", "--path", &p(d, "metric.bin")]);
    assert_eq!(code, 0);
    assert!(out.contains("kind = metric") && out.contains("positive_definite = true"), "{out}");
    let (code, out, _) = run(&["inspect", "--path", &p(d, "store.bin")]);
    assert_eq!(code, 0);
    assert!(out.contains("kind = embedding-store") && out.contains("dim = 12"), "{out}");

    // A target with no occurrences in one corpus is a runtime failure.
    fs::write(d.join("bad_targets.tsv"), "t0\t1\t2\nt1\t1\t9\n").unwrap();
    let (code, _, err) = run(&[
        "score", "--store", &p(d, "store.bin"), "--metric", &p(d, "metric.bin"),
        "--targets", &p(d, "bad_targets.tsv"), "--out", &p(d, "partial.tsv"),
    ]);
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("t1"), "{err}");
    assert_eq!(semshift::scoring::read_scores(&d.join("partial.tsv")).unwrap().len(), 1);
}

#[test]
fn cli_learns_without_dev_and_honours_mode() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_drift(d);
    let (code, out, err) = run(&[
        "learn-metric", "--store", &p(d, "store.bin"), "--constraints", &p(d, "train.tsv"),
        "--gamma-grid", "default", "--mode", "diagonal", "--out", &p(d, "diag.bin"),
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(err.contains("ignored"), "{err}");
    assert!(out.contains("gamma = 1"), "{out}");
    let a = MahalanobisMatrix::load(&d.join("diag.bin")).unwrap();
    assert_eq!(a.mode(), semshift::MetricMode::Diagonal);
}

#[test]
fn config_file_sits_between_flags_and_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_drift(d);
    fs::write(
        d.join("run.toml"),
        "store = \"store.bin\"\ntargets = \"targets.tsv\"\nmode = \"baseline-cosine\"\nout = \"from_config.tsv\"\n",
    )
    .unwrap();
    let cfg = p(d, "run.toml");
    let (code, _, err) = run(&["score", "--config", &cfg]);
    assert_eq!(code, 0, "{err}");
    let from_file = semshift::scoring::read_scores(&d.join("from_config.tsv")).unwrap();
    assert!(from_file.iter().all(|s| s.mode == semshift::scoring::ScoreMode::BaselineCosine));

    // The flag overrides the file's output path; everything else comes from the file.
    let (code, _, err) = run(&["score", "--config", &cfg, "--out", &p(d, "from_flag.tsv")]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(
        fs::read(d.join("from_flag.tsv")).unwrap(),
        fs::read(d.join("from_config.tsv")).unwrap()
    );

    fs::write(d.join("bad.toml"), "colour = 1\n").unwrap();
    let (code, _, _) = run(&["score", "--config", &p(d, "bad.toml")]);
    assert_eq!(code, 1);
}

#[test]
fn binary_reports_exit_codes() {
    let exe = PathBuf::from(env!("CARGO_BIN_EXE_semshift"));
    let status = Command::new(&exe).args(["score"]).output().unwrap();
    assert_eq!(status.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&status.stderr).contains("--store"));
    let ok = Command::new(&exe).arg("--version").output().unwrap();
    assert_eq!(ok.status.code(), Some(0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn store_round_trips_bit_exactly(d in 1usize..8, rows in prop::collection::vec(prop::collection::vec(-1e6f32..1e6, 8), 0..12)) {
        let mut store = EmbeddingStore::new(d);
        for (i, r) in rows.iter().enumerate() {
            let v: Vec<f64> = r[..d].iter().map(|x| f64::from(*x)).collect();
            store.push(ManifestRow::new(format!("r{i}"), format!("w{}", i % 3), "c", format!("s{i}")), &v).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.bin");
        store.write(&path).unwrap();
        let back = EmbeddingStore::read(&path).unwrap();
        prop_assert_eq!(back.raw_values(), store.raw_values());
        prop_assert_eq!(back, store);
    }
}
