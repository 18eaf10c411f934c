use std::path::Path;
use std::process::{Command, Output};

fn lal(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lal"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("run lal")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const CONFIG: &str = r#"{
  "model": {"num_layers": 1, "d_content": 12, "d_position": 4, "max_len": 16,
            "self_attention_heads": 2, "self_attention_d_ff": 16, "label_heads": 3,
            "d_qk": 6, "d_v": 6, "d_out": 4, "use_pfl": false, "pfl_d_ff": 16,
            "span_hidden": 10, "arc_hidden": 8, "label_hidden": 6},
  "train": {"epochs": 2},
  "data": {"trees": "toy/trees.txt", "deps": "toy/deps.conll"}
}"#;

#[test]
fn end_to_end_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    let o = lal(&["gen-toy", "--seed", "3", "--size", "8", "--out-dir", "toy"], d);
    assert!(o.status.success(), "{o:?}");
    assert_eq!(std::fs::read_to_string(d.join("toy/trees.txt")).unwrap().lines().count(), 8);

    std::fs::write(d.join("run.json"), CONFIG).unwrap();
    let o = lal(&["train", "--config", "run.json", "--out", "model.lal", "--log-json", "log.json"], d);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("trained 2 epochs"));
    let log: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("log.json")).unwrap()).unwrap();
    assert_eq!(log["epochs"].as_array().unwrap().len(), 2);

    let o = lal(&["eval", "--model", "model.lal", "--trees", "toy/trees.txt", "--deps", "toy/deps.conll"], d);
    assert!(o.status.success());
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["sentences"], 8);
    assert!(report["f1"].as_f64().unwrap() >= 0.0);

    std::fs::write(d.join("input.txt"), "the/D cat/N sat/V\na/D dog/N saw/V the/D bird/N ./PUNCT\n").unwrap();
    let o = lal(&["parse", "--model", "model.lal", "--input", "input.txt"], d);
    assert!(o.status.success());
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 2);
    assert!(out.contains("(D the)") && out.contains("(PUNCT .)"));
    let o = lal(&["parse", "--model", "model.lal", "--input", "input.txt", "--format", "conll"], d);
    assert!(stdout(&o).contains("1\tthe\tD\t"));

    let o = lal(
        &["inspect-heads", "--model", "model.lal", "--trees", "toy/trees.txt", "--out-dir", "heads", "--mode", "softmax"],
        d,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["traces.jsonl", "head_stats.csv", "head_stats.json"] {
        assert!(d.join("heads").join(f).exists(), "{f}");
    }
}

#[test]
fn failures_exit_nonzero_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = lal(&["eval", "--model", "missing.lal", "--trees", "a", "--deps", "b"], d);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));

    let o = lal(&["frobnicate"], d);
    assert_eq!(o.status.code(), Some(1));

    std::fs::write(d.join("bad.txt"), "the cat\n").unwrap();
    let o = lal(&["gen-toy", "--size", "3", "--out-dir", "toy"], d);
    assert!(o.status.success());
    std::fs::write(d.join("run.json"), CONFIG).unwrap();
    assert!(lal(&["train", "--config", "run.json", "--out", "m.lal"], d).status.success());
    let o = lal(&["parse", "--model", "m.lal", "--input", "bad.txt"], d);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("word/TAG"));

    let o = lal(&["--help"], d);
    assert!(o.status.success());
}
