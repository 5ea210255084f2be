use std::path::Path;
use std::process::{Command, Output};

fn csrrm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_csrrm")).args(args).output().unwrap()
}

fn json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn flops_reports_the_full_size_ratio() {
    let v = json(&csrrm(&["flops"]));
    let ratio = v["full_size_semantic"]["ratio"].as_f64().unwrap();
    assert!((2.7..=3.1).contains(&ratio));
    assert_eq!(v["full_size_fusion_heads"].as_array().unwrap().len(), 3);
}

#[test]
fn train_then_eval_on_a_generated_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let run = dir.path().join("run");
    let small = [
        "--train-scenes", "16", "--test-scenes", "8", "--stage1-epochs", "1", "--stage2-epochs", "1",
        "--seed", "3",
    ];
    let mut gen = vec!["generate", "--out", corpus.to_str().unwrap()];
    gen.extend(small);
    assert!(csrrm(&gen).status.success());
    assert!(corpus.join("manifest.json").exists());

    let mut train = vec!["train", "--corpus", corpus.to_str().unwrap(), "--outdir", run.to_str().unwrap()];
    train.extend(small);
    let t = json(&csrrm(&train));
    assert_eq!(t["freeze_holds"], true);
    for f in ["metrics.jsonl", "config.toml", "stage1", "stage2"] {
        assert!(Path::new(&run).join(f).exists(), "{f}");
    }

    let eval = csrrm(&["eval", "--config", run.join("config.toml").to_str().unwrap()]);
    let e = json(&eval);
    assert_eq!(e["scenes"], 8);
    assert_eq!(e["accuracy"], t["test"]);
}

#[test]
fn bad_inputs_fail_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "filter_window = 3\n").unwrap();
    for args in [
        vec!["train", "--config", cfg.to_str().unwrap(), "--outdir", "/tmp/x"],
        vec!["train"],
        vec!["eval", "--outdir", dir.path().to_str().unwrap()],
        vec!["train", "--optimizer", "adam", "--outdir", "/tmp/x"],
    ] {
        let out = csrrm(&args);
        assert!(!out.status.success(), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
}
