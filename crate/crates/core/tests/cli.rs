use std::path::Path;
use std::process::{Command, Output};

fn sstrack(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sstrack"))
        .args(args)
        .env("SSTRACK_THREADS", "1")
        .env("SOURCE_DATE_EPOCH", "0")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let o = sstrack(args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn generate_writes_the_dataset_layout() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    ok(&["generate", "--preset", "easy", "--seed", "3", "--num", "2", "--frames", "5", "--out", p(&out)]);
    let list = std::fs::read_to_string(out.join("list.txt")).unwrap();
    assert_eq!(list.lines().collect::<Vec<_>>(), ["seq_0000", "seq_0001"]);
    let seq = out.join("seq_0001");
    assert_eq!(std::fs::read_to_string(seq.join("groundtruth.txt")).unwrap().lines().count(), 5);
    for i in 1..=5 {
        assert!(seq.join("frames").join(format!("{i:06}.ppm")).exists());
    }
}

#[test]
fn oracle_eval_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    let report = dir.path().join("r.json");
    let plots = dir.path().join("plots");
    ok(&["generate", "--preset", "easy", "--seed", "1", "--num", "3", "--frames", "8", "--out", p(&data)]);
    let line = ok(&["eval", "--oracle", "--data", p(&data), "--report", p(&report)]);
    assert!(line.contains("AO 1.0000"), "{line}");

    let rep: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(rep["meta"]["oracle"], true);
    assert_eq!(rep["meta"]["timestamp"], "0");
    assert_eq!(rep["per_sequence"].as_object().unwrap().len(), 3);
    assert_eq!(rep["per_sequence"]["seq_0000"]["iou"].as_array().unwrap().len(), 7);
    for k in ["AUC", "P", "P_Norm", "AO", "SR_0.5", "SR_0.75"] {
        assert!(rep["aggregate"][k].is_f64(), "{k}");
    }

    ok(&["plot", "--report", p(&report), "--out", p(&plots)]);
    for name in ["success.svg", "precision.svg"] {
        let svg = std::fs::read_to_string(plots.join(name)).unwrap();
        let doc = roxmltree::Document::parse(&svg).unwrap();
        assert_eq!(doc.root_element().tag_name().name(), "svg");
        assert!(doc.descendants().any(|n| n.has_tag_name("polyline")), "{name}");
    }
}

#[test]
fn train_eval_plot_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    let cfg = dir.path().join("run.json");
    let ckpt = dir.path().join("m.ckpt");
    let report = dir.path().join("r.json");
    let plots = dir.path().join("plots");
    ok(&["generate", "--preset", "ci", "--seed", "2", "--num", "3", "--frames", "6", "--out", p(&data)]);
    std::fs::write(
        &cfg,
        r#"{"model": {"patch_size": 8, "embed_dim": 16, "depth": 1, "num_heads": 2, "ref_size": 16, "search_size": 32},
            "train": {"epochs": 1, "steps_per_epoch": 2, "batch_size": 1}}"#,
    )
    .unwrap();
    ok(&["train", "--config", p(&cfg), "--data", p(&data), "--out", p(&ckpt)]);
    assert!(ckpt.exists() && dir.path().join("m.log.jsonl").exists());
    ok(&["eval", "--ckpt", p(&ckpt), "--data", p(&data), "--report", p(&report)]);
    let rep: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(rep["meta"]["ckpt_hash"].as_str().unwrap().len(), 64);
    ok(&["plot", "--report", p(&report), "--out", p(&plots), "--log", p(&ckpt)]);
    let svg = std::fs::read_to_string(plots.join("loss.svg")).unwrap();
    roxmltree::Document::parse(&svg).unwrap();
}

#[test]
fn usage_errors_exit_2_and_runtime_errors_exit_1() {
    assert_eq!(sstrack(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(sstrack(&["generate", "--preset", "medium", "--out", "x"]).status.code(), Some(2));
    assert_eq!(sstrack(&["eval", "--data", "x", "--report", "y"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.ckpt");
    let o = sstrack(&["eval", "--ckpt", p(&missing), "--data", p(dir.path()), "--report", p(&dir.path().join("r.json"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!o.stderr.is_empty());
}

#[test]
fn bad_config_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"train": {"m_views": 1}}"#).unwrap();
    let o = sstrack(&["train", "--config", p(&cfg), "--data", p(dir.path()), "--out", p(&dir.path().join("m.ckpt"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("m_views"));
}
