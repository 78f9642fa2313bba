use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_constrainlab");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("spawn constrainlab")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small toy corpus plus the prepared BPE and vocabulary.
fn prepared(dir: &Path) -> PathBuf {
    let raw = dir.join("raw");
    ok(&["toy-corpus", "--seed", "3", "--out", p(&raw), "--train", "600", "--dev", "20", "--test", "20"]);
    let prep = dir.join("prep");
    let f = |n: &str| raw.join(n);
    ok(&[
        "prepare",
        "--train-src",
        p(&f("train.src")),
        "--train-tgt",
        p(&f("train.tgt")),
        "--dev-src",
        p(&f("dev.src")),
        "--dev-tgt",
        p(&f("dev.tgt")),
        "--test-src",
        p(&f("test.src")),
        "--test-tgt",
        p(&f("test.tgt")),
        "--num-merges",
        "500",
        "--out",
        p(&prep),
    ]);
    prep
}

#[test]
fn truncate_zero_empties_sources_only() {
    let dir = TempDir::new().unwrap();
    let raw = dir.path().join("raw");
    ok(&["toy-corpus", "--seed", "1", "--out", p(&raw), "--train", "50", "--dev", "5", "--test", "5"]);
    let out = dir.path().join("t0");
    ok(&[
        "truncate",
        "--source",
        p(&raw.join("train.src")),
        "--target",
        p(&raw.join("train.tgt")),
        "--s",
        "0",
        "--out",
        p(&out),
    ]);
    let src = fs::read_to_string(out.join("source.txt")).unwrap();
    let tgt_lines = fs::read_to_string(raw.join("train.tgt")).unwrap().lines().count();
    assert_eq!(src.lines().count(), tgt_lines);
    assert!(src.lines().all(str::is_empty));
    assert_eq!(
        fs::read_to_string(out.join("target.txt")).unwrap(),
        fs::read_to_string(raw.join("train.tgt")).unwrap()
    );
    assert!(out.join("manifest.json").exists());
}

#[test]
fn eval_identical_files() {
    let dir = TempDir::new().unwrap();
    let f = dir.path().join("h.txt");
    fs::write(&f, "a b c d e\nf g h i\n").unwrap();
    for metric in ["length-ratio", "bleu"] {
        let out = ok(&["eval", "--metric", metric, "--hyp", p(&f), "--ref", p(&f)]);
        assert_eq!(out.trim(), "1.0", "{metric}");
    }
}

#[test]
fn errors_are_one_json_line() {
    let out = run(&["eval", "--metric", "length-ratio", "--hyp", "/nonexistent/h", "--ref", "/nonexistent/r"]);
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    let last = err.lines().last().unwrap();
    let v: serde_json::Value = serde_json::from_str(last).unwrap();
    assert_eq!(v["error"], "io");
    assert!(v["message"].as_str().unwrap().contains("nonexistent"));
}

#[test]
fn bad_truncation_level_fails() {
    let dir = TempDir::new().unwrap();
    let f = dir.path().join("x");
    fs::write(&f, "a\n").unwrap();
    let out = run(&["truncate", "--source", p(&f), "--target", p(&f), "--s", "101", "--out", p(dir.path())]);
    assert!(!out.status.success());
}

#[test]
fn sweep_bytes_do_not_depend_on_workers() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(
        &cfg,
        r#"{"s_values":[0,50,100],"beam_sizes":[1,3],"samples_per_sentence":20,"restarts":2,
            "corpus":{"toy":{"seed":5,"train":400,"dev":10,"test":15,"copy_noise":45}},
            "num_merges":300,"dump_outputs":true}"#,
    )
    .unwrap();
    let mut csvs = Vec::new();
    for (i, workers) in ["1", "4", "4"].iter().enumerate() {
        let out = dir.path().join(format!("o{i}"));
        ok(&["sweep", "--config", p(&cfg), "--seed", "7", "--out", p(&out), "--workers", workers]);
        csvs.push((
            fs::read(out.join("sweep.csv")).unwrap(),
            fs::read(out.join("sweep_std.csv")).unwrap(),
            fs::read(out.join("plots/fig5.dat")).unwrap(),
        ));
    }
    assert!(csvs.windows(2).all(|w| w[0] == w[1]));
    let header = String::from_utf8(csvs[0].0.clone()).unwrap();
    assert!(header.starts_with(
        "s,decoder,k,N,epsilon,restart_seed,length_ratio,uniq1,uniq2,uniq4,uniq6,bleu,entropy_nats,mass_coverage,unique_samples,excluded\n"
    ));
}

#[test]
fn fit_decode_sample_eval_pipeline() {
    let dir = TempDir::new().unwrap();
    let prep = prepared(dir.path());
    let bpe = prep.join("bpe.codes");
    let vocab = prep.join("vocab.txt");
    let model_dir = dir.path().join("m");
    ok(&[
        "fit",
        "--source",
        p(&prep.join("train.src")),
        "--target",
        p(&prep.join("train.tgt")),
        "--bpe",
        p(&bpe),
        "--vocab",
        p(&vocab),
        "--s",
        "50",
        "--out",
        p(&model_dir),
    ]);
    let model = model_dir.join("model.txt");
    let decode = |k: &str, out: &Path| {
        ok(&[
            "decode",
            "--source",
            p(&prep.join("test.src")),
            "--bpe",
            p(&bpe),
            "--vocab",
            p(&vocab),
            "--model",
            p(&model),
            "--beam-size",
            k,
            "--max-len",
            "40",
            "--out",
            p(out),
        ])
    };
    let g = dir.path().join("g");
    decode("1", &g);
    let test_lines = fs::read_to_string(prep.join("test.src")).unwrap().lines().count();
    assert_eq!(fs::read_to_string(g.join("hyp.txt")).unwrap().lines().count(), test_lines);
    let b = dir.path().join("b");
    decode("4", &b);

    let lr = ok(&["eval", "--metric", "length-ratio", "--hyp", p(&g.join("hyp.txt")), "--ref", p(&prep.join("test.tgt"))]);
    assert!(lr.trim().parse::<f64>().unwrap() >= 0.0);

    let samples = |out: &Path| {
        ok(&[
            "sample",
            "--source",
            p(&prep.join("test.src")),
            "--bpe",
            p(&bpe),
            "--vocab",
            p(&vocab),
            "--model",
            p(&model),
            "--samples",
            "30",
            "--seed",
            "11",
            "--max-len",
            "40",
            "--out",
            p(out),
        ]);
        fs::read(out.join("samples.tsv")).unwrap()
    };
    let s1 = samples(&dir.path().join("s1"));
    let s2 = samples(&dir.path().join("s2"));
    assert_eq!(s1, s2);
    let dump = dir.path().join("s1/samples.tsv");
    let h = ok(&["eval", "--metric", "entropy", "--samples", p(&dump)]);
    assert!(h.trim().parse::<f64>().unwrap() >= 0.0);
    let c = ok(&["eval", "--metric", "mass-coverage", "--samples", p(&dump)]);
    let c: f64 = c.trim().parse().unwrap();
    assert!((0.0..=1.0 + 1e-9).contains(&c));
}
