use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn distill(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_distill"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn assert_code(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        stdout(out),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn gen_corpus(dir: &Path, seed: &str) -> Output {
    distill(&[
        "gen",
        "--features",
        "4",
        "--n-train",
        "6",
        "--n-val",
        "2",
        "--n-test",
        "2",
        "--support-max",
        "4",
        "--seed",
        seed,
        "--out",
        dir.to_str().unwrap(),
    ])
}

#[test]
fn gen_writes_corpus_refuses_overwrite_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let dir_a = tmp.path().join("a");
    let dir_b = tmp.path().join("b");

    let out = gen_corpus(&dir_a, "7");
    assert_code(&out, 0);
    for f in ["manifest.json", "train.jsonl", "val.jsonl", "test.jsonl", "resolved-config.txt"] {
        assert!(dir_a.join(f).exists(), "missing {f}");
    }
    // rerun without --overwrite refuses with a config error
    assert_code(&gen_corpus(&dir_a, "7"), 2);

    // identical config + seed => byte-identical primary outputs
    assert_code(&gen_corpus(&dir_b, "7"), 0);
    assert_eq!(
        fs::read(dir_a.join("train.jsonl")).unwrap(),
        fs::read(dir_b.join("train.jsonl")).unwrap()
    );

    let snapshot = fs::read_to_string(dir_a.join("resolved-config.txt")).unwrap();
    assert!(snapshot.contains("seed=7"));
    assert!(snapshot.contains("n-train=6"));
}

#[test]
fn rr_benchmark_prediction_matches_published_value() {
    let out = distill(&["rr", "--benchmark", "medin-schaffer", "--b", "1", "--max-literals", "4"]);
    assert_code(&out, 0);
    let text = stdout(&out);
    let a1 = text
        .lines()
        .find(|l| l.starts_with("A1,"))
        .expect("A1 row present");
    let value: f64 = a1.rsplit(',').next().unwrap().parse().unwrap();
    assert!((value - 0.82).abs() <= 0.08, "A1 = {value}");
}

#[test]
fn rr_block_sweep_equals_scaled_b() {
    let blocks = distill(&[
        "rr",
        "--benchmark",
        "shj-ii",
        "--b",
        "2",
        "--blocks",
        "3",
        "--max-literals",
        "3",
    ]);
    let scaled = distill(&["rr", "--benchmark", "shj-ii", "--b", "6", "--max-literals", "3"]);
    assert_code(&blocks, 0);
    assert_code(&scaled, 0);
    assert_eq!(stdout(&blocks), stdout(&scaled));
}

#[test]
fn config_file_is_overridden_by_flags_and_unknown_keys_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.cfg");
    fs::write(&cfg, "benchmark=shj-i\nb=6\nmax-literals=3\n").unwrap();

    // flag wins over the file's b=6
    let flagged = distill(&["rr", "--config", cfg.to_str().unwrap(), "--b", "1"]);
    let direct = distill(&["rr", "--benchmark", "shj-i", "--b", "1", "--max-literals", "3"]);
    assert_code(&flagged, 0);
    assert_eq!(stdout(&flagged), stdout(&direct));

    let bad = tmp.path().join("bad.cfg");
    fs::write(&bad, "benchmark=shj-i\nno-such-key=1\n").unwrap();
    assert_code(&distill(&["rr", "--config", bad.to_str().unwrap()]), 2);

    // missing examples file is an I/O error
    assert_code(&distill(&["rr", "--examples", "/nonexistent/examples.txt"]), 4);
}

#[test]
fn rr_out_writes_predictions_and_snapshot() {
    let tmp = tempfile::tempdir().unwrap();
    let examples = tmp.path().join("examples.txt");
    fs::write(&examples, "# two noiseless examples\n00 1\n11 0\n").unwrap();
    let out_file = tmp.path().join("pred.csv");
    let out = distill(&[
        "rr",
        "--examples",
        examples.to_str().unwrap(),
        "--max-literals",
        "3",
        "--out",
        out_file.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    let csv = fs::read_to_string(&out_file).unwrap();
    assert!(csv.starts_with("row,object,prob_a"));
    assert_eq!(csv.lines().count(), 5); // header + all four 2-feature objects
    assert!(tmp.path().join("resolved-config.txt").exists());
}

#[test]
fn train_then_eval_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    assert_code(&gen_corpus(&corpus, "3"), 0);

    let run = tmp.path().join("run");
    let out = distill(&[
        "train",
        "--corpus",
        corpus.to_str().unwrap(),
        "--arch",
        "tiny",
        "--passes",
        "1",
        "--batch",
        "3",
        "--out",
        run.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    let ck = run.join("checkpoint.bin");
    assert!(ck.exists());
    assert!(run.join("train.log").exists());
    assert!(run.join("resolved-config.txt").exists());
    let loaded = distill::meta::Checkpoint::load(&ck).unwrap();
    assert_eq!(loaded.mlp_config.input_dim, 4);

    // rerun refuses without --overwrite
    let rerun = distill(&[
        "train",
        "--corpus",
        corpus.to_str().unwrap(),
        "--arch",
        "tiny",
        "--passes",
        "1",
        "--out",
        run.to_str().unwrap(),
    ]);
    assert_code(&rerun, 2);

    let eval_dir = tmp.path().join("eval");
    let ck_arg = |b: u32| format!("{b}={}", ck.display());
    let out = distill(&[
        "eval",
        "--experiment",
        "ls-nls",
        "--sweep",
        "b=1..2",
        "--checkpoint",
        &ck_arg(1),
        "--checkpoint",
        &ck_arg(2),
        "--rr",
        "--max-literals",
        "3",
        "--out",
        eval_dir.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    let text = stdout(&out);
    assert!(text.contains("error_network"), "summary:\n{text}");
    assert!(text.contains("error_rr"));
    for f in ["summary.csv", "predictions.csv", "benchmarks.csv", "resolved-config.txt"] {
        assert!(eval_dir.join(f).exists(), "missing {f}");
    }

    // a b sweep point without a checkpoint is a config error
    let missing = distill(&[
        "eval",
        "--experiment",
        "ls-nls",
        "--sweep",
        "b=1..3",
        "--checkpoint",
        &ck_arg(1),
        "--out",
        tmp.path().join("eval2").to_str().unwrap(),
    ]);
    assert_code(&missing, 2);

    // unreadable checkpoint is an I/O error
    let broken = distill(&[
        "eval",
        "--experiment",
        "shj",
        "--sweep",
        "epochs=1..2",
        "--checkpoint",
        "/nonexistent/ck.bin",
    ]);
    assert_code(&broken, 4);

    // malformed sweep is a config error
    let bad_sweep = distill(&[
        "eval",
        "--experiment",
        "shj",
        "--sweep",
        "b=oops",
        "--checkpoint",
        &ck_arg(1),
    ]);
    assert_code(&bad_sweep, 2);
}
