use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn pgan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pgan"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stopwords() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/stopwords.txt")
}

/// Dialogues of 8 turns over a small vocabulary, every turn long enough to
/// survive the response filter.
fn write_dialogues(p: &Path, n: usize, offset: usize) {
    let words = [
        "tea", "coffee", "rain", "sun", "train", "bus", "book", "film", "cat", "dog",
    ];
    let lines: Vec<String> = (0..n)
        .map(|d| {
            (0..8)
                .map(|t| {
                    let turn: Vec<&str> = (0..5)
                        .map(|k| words[(d * 7 + t * 3 + k + offset) % words.len()])
                        .collect();
                    format!("{} __eou__", turn.join(" "))
                })
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    fs::write(p, lines.join("\n") + "\n").unwrap();
}

fn setup(dir: &Path) -> PathBuf {
    write_dialogues(&dir.join("raw_train.txt"), 12, 0);
    write_dialogues(&dir.join("raw_test.txt"), 3, 5);
    fs::write(
        dir.join("emb.txt"),
        "tea 1 0 0\ncoffee 0.9 0.1 0\nrain 0 1 0\nsun 0 0.8 0.6\ncat 0 0 1\n",
    )
    .unwrap();
    let d = |f: &str| dir.join(f).to_string_lossy().into_owned();
    let cfg = serde_json::json!({
        "seed": 7,
        "paths.raw_train": d("raw_train.txt"),
        "paths.raw_test": d("raw_test.txt"),
        "paths.train": d("train.jsonl"),
        "paths.test": d("test.jsonl"),
        "paths.vocab": d("vocab.txt"),
        "paths.embeddings": d("emb.txt"),
        "paths.stopwords": stopwords().to_string_lossy(),
        "paths.checkpoint_dir": d("ckpt"),
        "model.vocab_size": 64,
        "model.embed_dim": 6,
        "model.hidden": 6,
        "model.attn_dim": 6,
        "optim.lr": 0.001,
        "train.batch_size": 4,
        "train.max_decode_len": 6,
        "train.gen_epochs": 1,
        "train.disc_epochs": 1,
        "schedule.g_steps": 3,
        "schedule.d_steps": 2,
        "schedule.cycles": 2,
        "curriculum.initial": 2,
        "curriculum.interval": 2,
    });
    let p = dir.join("config.json");
    fs::write(&p, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    p
}

fn ok(o: Output) -> Output {
    assert_eq!(code(&o), 0, "stderr: {}", String::from_utf8_lossy(&o.stderr));
    o
}

#[test]
fn full_pipeline_runs_and_reproduces() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let cfg = setup(dir);
    let c = cfg.to_str().unwrap();

    let prep = ok(pgan(&["prepare-data", "--config", c]));
    let report: serde_json::Value = serde_json::from_slice(&prep.stdout).unwrap();
    // 8 turns leave 2 candidate responses per dialogue
    assert_eq!(report["train"]["emitted"], 24);
    assert_eq!(report["test"]["emitted"], 6);

    for t in ["gen", "d1", "d2"] {
        ok(pgan(&["pretrain", "--config", c, "--target", t]));
        assert!(dir.join(format!("ckpt/{t}-pretrained.ckpt")).is_file());
    }
    let log = fs::read_to_string(dir.join("ckpt/pretrain-gen.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 1);

    ok(pgan(&["train-adversarial", "--config", c]));
    let log = fs::read_to_string(dir.join("ckpt/train.jsonl")).unwrap();
    let records: Vec<serde_json::Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 10);
    for k in [
        "phase",
        "step",
        "loss",
        "mean_R1_true",
        "mean_R1_gen",
        "mean_R2_true",
        "mean_R2_gen",
        "grad_norm_preclip",
        "T",
    ] {
        assert!(records[0].get(k).is_some(), "log record lacks {k}");
    }
    let first = fs::read(dir.join("ckpt/gen-adversarial.ckpt")).unwrap();

    let hyp = dir.join("hyp.txt");
    ok(pgan(&["generate", "--config", c, "--output", hyp.to_str().unwrap()]));
    assert_eq!(fs::read_to_string(&hyp).unwrap().lines().count(), 6);

    let refs = dir.join("ref.txt");
    let test = fs::read_to_string(dir.join("test.jsonl")).unwrap();
    let ref_lines: Vec<String> = test
        .lines()
        .map(|l| {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            v["response"].as_str().unwrap().to_string()
        })
        .collect();
    fs::write(&refs, ref_lines.join("\n") + "\n").unwrap();
    let test_path = dir.join("test.jsonl");
    let eval = ok(pgan(&[
        "evaluate",
        "--config",
        c,
        "--hyp",
        refs.to_str().unwrap(),
        "--ref",
        refs.to_str().unwrap(),
        "--contexts",
        test_path.to_str().unwrap(),
    ]));
    let m: serde_json::Value = serde_json::from_slice(&eval.stdout).unwrap();
    assert_eq!(m["bleu"], 1.0);
    assert!((m["freq_similarity"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!((m["emb_average"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    assert!(m["context_matching"].as_f64().is_some());

    let csv = dir.join("rewards.csv");
    ok(pgan(&[
        "analyze-rewards",
        "--config",
        c,
        "--output",
        csv.to_str().unwrap(),
    ]));
    let text = fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("id,r1_shifted,r2_mean,r_combined\n"));
    assert_eq!(text.lines().count(), 7);

    ok(pgan(&["train-adversarial", "--config", c]));
    assert_eq!(fs::read(dir.join("ckpt/gen-adversarial.ckpt")).unwrap(), first);
    assert_eq!(fs::read_to_string(dir.join("ckpt/train.jsonl")).unwrap(), log);
}

#[test]
fn usage_errors_exit_2() {
    let o = pgan(&["frobnicate"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(code(&pgan(&["gradcheck", "--bogus"])), 2);
    assert_eq!(code(&pgan(&["gradcheck", "--config", "/nonexistent/c.json"])), 2);
    assert_eq!(code(&pgan(&["gradcheck", "--set", "model.hiden=4"])), 2);
    assert_eq!(code(&pgan(&["gradcheck", "--set", "reward.discount=0"])), 2);
    assert_eq!(
        code(&pgan(&[
            "evaluate",
            "--hyp",
            "/nonexistent/h",
            "--ref",
            "/nonexistent/r"
        ])),
        2
    );
    assert_eq!(code(&pgan(&["pretrain", "--target", "d3"])), 2);

    let tmp = tempfile::tempdir().unwrap();
    let cfg = setup(tmp.path());
    // triples were never prepared: rejected before any training
    let o = pgan(&["pretrain", "--config", cfg.to_str().unwrap(), "--target", "gen"]);
    assert_eq!(code(&o), 2);
    assert!(!tmp.path().join("ckpt").exists());
    ok(pgan(&["prepare-data", "--config", cfg.to_str().unwrap()]));
    let o = pgan(&["train-adversarial", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 2, "pretrained checkpoints are required");
}

#[test]
fn evaluate_prints_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let h = tmp.path().join("h.txt");
    let r = tmp.path().join("r.txt");
    fs::write(&h, "the cat sat\na a a\n").unwrap();
    fs::write(&r, "the cat sat down\na b a\n").unwrap();
    let o = ok(pgan(&[
        "evaluate",
        "--hyp",
        h.to_str().unwrap(),
        "--ref",
        r.to_str().unwrap(),
    ]));
    let m: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((m["dist1"].as_f64().unwrap() - 4.0 / 6.0).abs() < 1e-12);
    assert!(m["emb_greedy"].is_null());
    let p = tmp.path().join("short.txt");
    fs::write(&p, "one line\n").unwrap();
    assert_eq!(
        code(&pgan(&[
            "evaluate",
            "--hyp",
            p.to_str().unwrap(),
            "--ref",
            r.to_str().unwrap()
        ])),
        2
    );
}

#[test]
fn gradcheck_passes() {
    let o = ok(pgan(&["gradcheck"]));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("all 72 parameters"));
    assert!(!out.contains("FAIL"));
}

#[test]
fn abort_keeps_the_last_good_models() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let cfg = setup(dir);
    let c = cfg.to_str().unwrap();
    ok(pgan(&["prepare-data", "--config", c]));
    for t in ["gen", "d1", "d2"] {
        ok(pgan(&["pretrain", "--config", c, "--target", t]));
    }
    // an enormous learning rate drives the generator to non-finite values
    let o = pgan(&[
        "train-adversarial",
        "--config",
        c,
        "--set",
        "optim.lr=1e30",
        "--set",
        "optim.max_grad_norm=1e30",
    ]);
    assert_eq!(code(&o), 1, "stderr: {}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("non-finite"));
    for t in ["gen", "d1", "d2"] {
        let bytes = fs::read(dir.join(format!("ckpt/{t}-adversarial.ckpt"))).unwrap();
        let tensors = pgan::numerics::checkpoint::read_tensors(&mut bytes.as_slice()).unwrap();
        assert!(tensors.iter().flat_map(|t| &t.values).all(|v| v.is_finite()));
    }
}
