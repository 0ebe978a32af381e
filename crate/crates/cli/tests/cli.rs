use std::path::Path;
use std::process::{Command, Output};

fn demorph(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_demorph"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(args: &[&str]) -> Output {
    let o = demorph(args);
    assert_eq!(o.status.code(), Some(0), "{args:?} failed: {}", stderr(&o));
    o
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn no_arguments_prints_usage_and_exits_1() {
    let o = demorph(&[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"));
}

#[test]
fn unknown_subcommand_and_flag_exit_1() {
    assert_eq!(demorph(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(demorph(&["split", "--bogus"]).status.code(), Some(1));
}

#[test]
fn version_mentions_formats() {
    let o = ok(&["--version"]);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("checkpoint format 1"), "{text}");
}

#[test]
fn missing_manifest_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.jsonl");
    let o = demorph(&["evaluate", "--manifest", s(&missing), "--stub", "replication"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("nope.jsonl"), "{}", stderr(&o));
}

#[test]
fn invalid_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[demorpher]\nlambda2 = -1.0\n").unwrap();
    let o = demorph(&["--config", s(&cfg), "split"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("lambda2"), "{}", stderr(&o));
}

#[test]
fn flags_are_validated() {
    let dir = tempfile::tempdir().unwrap();
    let o = demorph(&["gen-toyfaces", "--count", "3", "--res", "30", "--out", s(&dir.path().join("f"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("resolution"));
}

const TINY_CONFIG: &str = r#"
seed = 3

[codec]
base_width = 8
batch_size = 4

[demorpher]
generator_widths = [8, 16, 16]
discriminator_width = 4
batch_size = 4
"#;

/// gen → split → morph → train-codec → train → evaluate → demorph, plus the
/// embedding audit, on a tiny corpus.
#[test]
fn seeded_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("exp.toml");
    std::fs::write(&cfg, TINY_CONFIG).unwrap();
    let c = s(&cfg);
    let faces = d.join("faces");
    let plan = d.join("pairs.json");
    let morphs = d.join("morphs");
    let codec = d.join("codec.ckpt");

    ok(&["--config", c, "gen-toyfaces", "--count", "12", "--res", "32", "--out", s(&faces)]);
    ok(&[
        "--config", c, "split", "--registry", s(&faces), "--scenario", "3", "--train-count", "10",
        "--test-count", "6", "--out", s(&plan),
    ]);
    ok(&["--config", c, "morph", "--pairs", s(&plan), "--out", s(&morphs)]);
    ok(&["--config", c, "train-codec", "--data", s(&faces), "--out", s(&codec), "--epochs", "1"]);

    let train = |out: &Path| {
        let o = ok(&[
            "--config", c, "--threads", "1", "train", "--manifest", s(&morphs.join("train.jsonl")), "--codec",
            s(&codec), "--out", s(out), "--epochs", "2",
        ]);
        let lines: Vec<serde_json::Value> = String::from_utf8_lossy(&o.stdout)
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[1]["loss_d"].is_number());
    };
    let (ck1, ck2) = (d.join("a.ckpt"), d.join("b.ckpt"));
    train(&ck1);
    train(&ck2);
    assert_eq!(std::fs::read(&ck1).unwrap(), std::fs::read(&ck2).unwrap());

    let report = d.join("report.json");
    let grid = d.join("grid.png");
    ok(&[
        "--config", c, "evaluate", "--manifest", s(&morphs.join("test.jsonl")), "--codec", s(&codec), "--ckpt",
        s(&ck1), "--provider", "toy", "--fmr", "0.1,0.01,0.001", "--out", s(&report), "--grid", s(&grid),
    ]);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 6);
    assert_eq!(v["thresholds"].as_array().unwrap().len(), 3);
    assert!(v["aggregates"]["restoration_accuracy"]["0.1"].is_number());
    assert!(grid.is_file());

    let first_morph = std::fs::read_dir(morphs.join("test_morphs")).unwrap().next().unwrap().unwrap().path();
    let out_dir = d.join("split");
    ok(&["demorph", "--input", s(&first_morph), "--codec", s(&codec), "--ckpt", s(&ck1), "--out-dir", s(&out_dir)]);
    let stem = first_morph.file_stem().unwrap().to_str().unwrap();
    assert!(out_dir.join(format!("{stem}_out1.png")).is_file());
    assert!(out_dir.join(format!("{stem}_out2.png")).is_file());

    let (train_emb, test_emb) = (d.join("train.emb"), d.join("test.emb"));
    ok(&["embed", "--images", s(&morphs.join("train.jsonl")), "--out", s(&train_emb)]);
    ok(&["embed", "--images", s(&morphs.join("test.jsonl")), "--out", s(&test_emb)]);
    let o = ok(&["audit", "--train-emb", s(&train_emb), "--test-emb", s(&test_emb), "--percents", "0.1,1,5"]);
    let rows: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 3);
}

#[test]
fn stub_evaluation_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let faces = d.join("faces");
    let plan = d.join("pairs.json");
    let morphs = d.join("morphs");
    ok(&["gen-toyfaces", "--count", "8", "--res", "32", "--seed", "2", "--out", s(&faces)]);
    ok(&[
        "split", "--registry", s(&faces), "--scenario", "3", "--seed", "2", "--train-count", "3", "--test-count",
        "5", "--out", s(&plan),
    ]);
    ok(&["morph", "--pairs", s(&plan), "--out", s(&morphs)]);
    let report = d.join("r.json");
    let test = morphs.join("test.jsonl");
    let o = ok(&["evaluate", "--manifest", s(&test), "--stub", "ground-truth", "--out", s(&report)]);
    let agg: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(agg["restoration_accuracy"]["0.1"], 1.0);
    assert_eq!(agg["replication_rate"], 0.0);
    let o = ok(&["evaluate", "--manifest", s(&test), "--stub", "replication", "--out", s(&report)]);
    let agg: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(agg["replication_rate"], 1.0);
    assert_eq!(agg["separation_rate"], 0.0);
}
