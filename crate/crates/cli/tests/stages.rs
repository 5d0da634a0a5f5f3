use std::path::Path;
use std::process::{Command, Output};

fn cadgraph(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cadgraph"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = cadgraph(args);
    assert!(
        out.status.success(),
        "cadgraph {}: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn stages_run_one_at_a_time_and_match_run_all() {
    let tmp = tempfile::tempdir().unwrap();
    let gt = tmp.path().join("gt");
    let staged = tmp.path().join("staged");
    let whole = tmp.path().join("whole");
    ok(&["synth", "--case", "valve_gauge_direct", "--out-dir", s(&gt)]);
    let scene = gt.join("scene.json");
    let labels = gt.join("gt_labels.json");
    let vocab = gt.join("vocabulary.json");

    let w = s(&staged);
    ok(&["ingest", "--work-dir", w, "--input", s(&scene), "--format", "json"]);
    ok(&["preprocess", "--work-dir", w]);
    ok(&["group", "--work-dir", w, "--vthresh", "1e-6", "--rmax", "0.10"]);
    ok(&["cluster", "--work-dir", w, "--epsilon", "0.01", "--min-samples", "1"]);
    ok(&["graph", "--work-dir", w]);
    ok(&["label", "--work-dir", w, "--labeler", "file", "--labels", s(&labels), "--vocabulary", s(&vocab)]);
    let func = tmp.path().join("func.json");
    let dot = tmp.path().join("func.dot");
    ok(&[
        "functional",
        "--work-dir",
        w,
        "--graph",
        s(&staged.join("graph.json")),
        "--pipe-groups",
        "Pipe assembly",
        "--unit-groups",
        "Valve assembly,Gauge,Tank,Pump Unit",
        "--out",
        s(&func),
        "--dot",
        s(&dot),
    ]);
    ok(&["eval", "--work-dir", w, "--gt-dir", s(&gt)]);

    ok(&[
        "run-all",
        "--input",
        s(&scene),
        "--labels",
        s(&labels),
        "--vocabulary",
        s(&vocab),
        "--out-dir",
        s(&whole),
    ]);
    for f in ["graph.json", "graph.dot", "functional.json", "labels.json", "clusters.json"] {
        assert_eq!(
            std::fs::read(staged.join(f)).unwrap(),
            std::fs::read(whole.join(f)).unwrap(),
            "{f}"
        );
    }
    assert_eq!(std::fs::read(&func).unwrap(), std::fs::read(whole.join("functional.json")).unwrap());
    assert!(std::fs::read_to_string(&dot).unwrap().starts_with("graph functional"));

    let eval: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(staged.join("eval.json")).unwrap()).unwrap();
    assert_eq!(eval["functional_match"], true);
    assert_eq!(eval["clusters_match"], true);

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(staged.join("manifest.json")).unwrap()).unwrap();
    let stages: Vec<&str> = manifest["stages"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["stage"].as_str().unwrap())
        .collect();
    assert_eq!(
        stages,
        ["ingest", "preprocess", "group", "cluster", "graph", "label", "functional", "eval"]
    );
    assert_eq!(manifest["config"]["epsilon"], 0.01);
}

#[test]
fn render_writes_six_images_for_a_mesh() {
    let tmp = tempfile::tempdir().unwrap();
    let gt = tmp.path().join("gt");
    let work = tmp.path().join("work");
    let imgs = tmp.path().join("imgs");
    ok(&["synth", "--case", "valve_gauge_direct", "--out-dir", s(&gt)]);
    ok(&["run-all", "--input", s(&gt.join("scene.json")), "--labeler", "none", "--out-dir", s(&work)]);
    ok(&["render", "--work-dir", s(&work), "--mesh", "/run00/a00_valve/wheel", "--out-dir", s(&imgs)]);
    let mut files: Vec<_> = std::fs::read_dir(&imgs).unwrap().map(|e| e.unwrap().file_name()).collect();
    files.sort();
    assert_eq!(files.len(), 6);
    for f in files {
        assert_eq!(&std::fs::read(imgs.join(&f)).unwrap()[1..4], b"PNG");
    }
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = s(tmp.path());
    let missing = tmp.path().join("missing.obj");
    assert_eq!(cadgraph(&["run-all", "--input", s(&missing), "--out-dir", out]).status.code(), Some(3));
    let bad = cadgraph(&["run-all", "--input", s(&missing), "--epsilon", "0.2", "--out-dir", out]);
    assert_eq!(bad.status.code(), Some(2));
    let cfg = tmp.path().join("c.json");
    std::fs::write(&cfg, r#"{"voxel_pich": 0.01}"#).unwrap();
    assert_eq!(cadgraph(&["preprocess", "--config", s(&cfg)]).status.code(), Some(2));
    assert_eq!(cadgraph(&["preprocess", "--work-dir", out]).status.code(), Some(3));
    assert_eq!(cadgraph(&["synth", "--case", "nope", "--out-dir", out]).status.code(), Some(2));
}

#[test]
fn config_file_values_apply_and_flags_override_them() {
    let tmp = tempfile::tempdir().unwrap();
    let gt = tmp.path().join("gt");
    ok(&["synth", "--case", "disconnected", "--out-dir", s(&gt)]);
    let cfg = tmp.path().join("cfg.json");
    let work = tmp.path().join("work");
    std::fs::write(
        &cfg,
        serde_json::json!({
            "input": gt.join("scene.json"),
            "output_dir": work,
            "epsilon": 0.02,
            "labeler": {"kind": "none"}
        })
        .to_string(),
    )
    .unwrap();
    ok(&["run-all", "--config", s(&cfg), "--epsilon", "0.015"]);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(work.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["epsilon"], 0.015);
    assert_eq!(manifest["config"]["labeler"]["kind"], "none");
}
