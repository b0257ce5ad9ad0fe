use std::fs;
use std::path::Path;
use std::process::Command;

fn tailgraph(dir: &Path, args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_tailgraph"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const CONFIG: &str = r#"{
  "epochs": 3,
  "finetune_epochs": 2,
  "batch_size": 8,
  "hidden_dim": 12,
  "embed_dim": 12,
  "layers": 2,
  "top_q": 3
}"#;

#[test]
fn full_pipeline_through_the_command_line() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("cfg.json"), CONFIG).unwrap();
    tailgraph(d, &["--seed", "2", "gen-data", "--classes", "4", "--per-class", "30", "--noise", "0.3"]);
    tailgraph(d, &["--seed", "2", "split", "--data", "dataset.jsonl"]);
    let lt = tailgraph(d, &["--seed", "2", "longtail", "--data", "train.jsonl", "--imbalance-factor", "6", "--head", "18"]);
    assert!(lt.contains("[18,") || lt.contains("[18, "), "{lt}");
    tailgraph(d, &["--seed", "2", "--out", "ret", "train-retriever", "--data", "longtail.jsonl", "--epochs", "3"]);
    tailgraph(d, &["--out", "idx", "build-index", "--data", "longtail.jsonl", "--retriever", "ret"]);
    let q = tailgraph(d, &["--out", "q", "query", "--index", "idx", "--graph", "0", "--top-q", "3"]);
    assert!(q.contains("neighbor"), "{q}");

    for run in ["a", "b"] {
        let train = ["--config", "cfg.json", "--seed", "2", "--out"];
        let out1 = format!("{run}/s1");
        let out2 = format!("{run}/s2");
        let ev = format!("{run}/eval");
        let mut args: Vec<&str> = train.to_vec();
        args.extend([out1.as_str(), "train", "--data", "longtail.jsonl", "--val", "val.jsonl", "--index", "idx"]);
        tailgraph(d, &args);
        tailgraph(d, &["--out", &out2, "finetune", "--run", &out1, "--data", "longtail.jsonl", "--val", "val.jsonl"]);
        tailgraph(d, &["--out", &ev, "eval", "--run", &out2, "--data", "test.jsonl", "--train", "longtail.jsonl"]);
    }
    for f in ["a/s2/history.csv", "a/eval/metrics.json", "a/eval/per_class.csv", "a/s2/model.json"] {
        let g = f.replacen('a', "b", 1);
        assert_eq!(fs::read(d.join(f)).unwrap(), fs::read(d.join(&g)).unwrap(), "{f}");
    }

    let history = fs::read_to_string(d.join("a/s2/history.csv")).unwrap();
    let mut lines = history.lines();
    assert_eq!(lines.next().unwrap(), "epoch,l_base,l_ret,l_con,l_total,val_acc,seconds");
    assert_eq!(lines.count(), 5);

    let metrics: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("a/eval/metrics.json")).unwrap()).unwrap();
    for key in ["overall_acc", "per_class_acc", "many_acc", "med_acc", "few_acc"] {
        assert!(metrics.get(key).is_some(), "{key}");
    }
    assert!(fs::read_to_string(d.join("a/eval/per_class.csv")).unwrap().starts_with("class,group,"));

    tailgraph(d, &["--out", "rep", "report", "--train", "longtail.jsonl", "--index", "idx", "--top-q", "3", "--metrics", "a/eval", "b/eval"]);
    let dist = fs::read_to_string(d.join("rep/label_dist.csv")).unwrap();
    assert_eq!(dist.lines().count(), 1 + 4 + 1);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("rep/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["runs"], 2);
    assert_eq!(summary["overall_acc"]["std"], 0.0);

    tailgraph(d, &["--out", "emb", "export-embeddings", "--run", "a/s2", "--data", "test.jsonl"]);
    let emb = fs::read_to_string(d.join("emb/embeddings.csv")).unwrap();
    let test_lines = fs::read_to_string(d.join("test.jsonl")).unwrap().lines().count();
    assert_eq!(emb.lines().count(), test_lines + 1);
}

#[test]
fn bad_input_exits_nonzero_with_location() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("bad.jsonl"), "{\"not\": \"a graph\"}\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_tailgraph"))
        .current_dir(tmp.path())
        .args(["split", "--data", "bad.jsonl"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.jsonl") && err.contains('1'), "{err}");
}

#[test]
fn unknown_config_keys_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("cfg.json"), "{\"epoch\": 3}").unwrap();
    fs::write(tmp.path().join("d.jsonl"), "").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_tailgraph"))
        .current_dir(tmp.path())
        .args(["--config", "cfg.json", "train", "--data", "d.jsonl", "--val", "d.jsonl"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
