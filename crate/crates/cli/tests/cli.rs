use std::path::Path;
use std::process::{Command, Output};

fn multihead(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_multihead"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

fn synth(dir: &Path, name: &str, seed: &str, size: &str) -> std::path::PathBuf {
    let out = dir.join(name);
    let r = multihead(&["synth", "--seed", seed, "--size", size, "--output", path(&out)]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    out
}

fn report(stdout: &[u8]) -> serde_json::Value {
    serde_json::from_slice(stdout).expect("eval prints a JSON report")
}

#[test]
fn synth_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth(dir.path(), "a.jsonl", "7", "50");
    let b = synth(dir.path(), "b.jsonl", "7", "50");
    let a = std::fs::read(a).unwrap();
    assert_eq!(a, std::fs::read(b).unwrap());
    assert_eq!(a.iter().filter(|&&c| c == b'\n').count(), 50);
    let stdout = multihead(&["synth", "--seed", "7", "--size", "50"]).stdout;
    assert_eq!(a, stdout);
}

#[test]
fn eval_of_gold_against_itself_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let gold = synth(dir.path(), "gold.jsonl", "3", "30");
    for mode in ["strict", "boundaries"] {
        for averaging in ["micro", "macro"] {
            let r = multihead(&[
                "eval", "--gold", path(&gold), "--pred", path(&gold), "--mode", mode, "--averaging", averaging,
            ]);
            assert!(r.status.success());
            let v = report(&r.stdout);
            assert_eq!(v["entities"]["f1"], 1.0);
            assert_eq!(v["relations"]["f1"], 1.0);
            assert_eq!(v["overall_f1"], 1.0);
        }
    }
}

#[test]
fn eval_counts_a_dropped_relation() {
    let dir = tempfile::tempdir().unwrap();
    let gold = dir.path().join("gold.jsonl");
    let pred = dir.path().join("pred.jsonl");
    let tokens = r#""tokens":["Ann","works","for","Acme","in","Rome"]"#;
    let entities = r#""entities":[{"start":0,"end":0,"type":"PER"},{"start":3,"end":3,"type":"ORG"},{"start":5,"end":5,"type":"LOC"}]"#;
    std::fs::write(
        &gold,
        format!(
            "{{{tokens},{entities},\"relations\":[{{\"from\":0,\"to\":1,\"label\":\"Works_for\"}},{{\"from\":0,\"to\":2,\"label\":\"Lives_in\"}}]}}\n"
        ),
    )
    .unwrap();
    std::fs::write(
        &pred,
        format!("{{{tokens},{entities},\"relations\":[{{\"from\":0,\"to\":1,\"label\":\"Works_for\"}}]}}\n"),
    )
    .unwrap();
    let r = multihead(&["eval", "--gold", path(&gold), "--pred", path(&pred)]);
    assert!(r.status.success());
    let v = report(&r.stdout);
    assert_eq!(v["relations"]["precision"], 1.0);
    assert_eq!(v["relations"]["recall"], 0.5);
    assert_eq!(v["relations"]["per_class"]["Lives_in"]["fn"], 1);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(multihead(&["eval", "--bogus"]).status.code(), Some(1));
    assert_eq!(multihead(&[]).status.code(), Some(1));
    assert_eq!(multihead(&["synth", "--multiplicity", "3"]).status.code(), Some(1));
    assert_eq!(multihead(&["--help"]).status.code(), Some(0));
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.jsonl");
    let r = multihead(&["eval", "--gold", path(&missing), "--pred", path(&missing)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("missing.jsonl"));

    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"tokens\":[\"a\"],\"entities\":[{\"start\":0,\"end\":4,\"type\":\"X\"}]}\n").unwrap();
    let r = multihead(&["eval", "--gold", path(&bad), "--pred", path(&bad)]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn train_then_predict_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let train = synth(dir.path(), "train.jsonl", "1", "12");
    let dev = synth(dir.path(), "dev.jsonl", "2", "6");
    let config = dir.path().join("small.cfg");
    std::fs::write(
        &config,
        "lstm_size = 6\nlayer_width = 6\nword_dim = 5\nchar_dim = 3\nchar_hidden = 3\nlabel_dim = 3\nbatch_size = 4\nmax_epochs = 9\n",
    )
    .unwrap();
    let ckpt = dir.path().join("model.json");
    let history = dir.path().join("history.jsonl");
    let r = multihead(&[
        "train", "--config", path(&config), "--train", path(&train), "--dev", path(&dev), "--out", path(&ckpt),
        "--history", path(&history), "--max-epochs", "2", "--seed", "5",
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let rows = std::fs::read_to_string(&history).unwrap();
    assert_eq!(rows.lines().count(), 2, "flag overrides the config file");

    let preds = dir.path().join("pred.jsonl");
    let r = multihead(&["predict", "--checkpoint", path(&ckpt), "--input", path(&dev), "--output", path(&preds)]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let text = std::fs::read_to_string(&preds).unwrap();
    assert_eq!(text.lines().count(), 6);
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["pred_entities"].is_array());
        assert!(v["pred_relations"].is_array());
        assert!(v["tokens"].is_array());
    }

    let r = multihead(&["eval", "--gold", path(&dev), "--pred", path(&preds)]);
    assert!(r.status.success());
    let v = report(&r.stdout);
    let f1 = v["overall_f1"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&f1));
}
