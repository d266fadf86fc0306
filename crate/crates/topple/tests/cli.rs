mod common;

use std::process::{Command, Output};

use topple::core::scene::GroupTag;
use topple::formats;

fn topple(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_topple"))
        .args(args)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).to_string()
}

#[test]
fn help_lists_every_subcommand() {
    let o = topple(&["--help"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    for cmd in ["dataset", "experiment", "train", "study", "analyze", "render-one"] {
        assert!(text.contains(cmd), "{cmd} missing from --help");
    }
}

#[test]
fn render_one_writes_an_800_pixel_png() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.png");
    let o = topple(&["render-one", "--group", "6B-3D-NonUni", "--seed", "3", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let img = formats::decode_png(&out, &std::fs::read(&out).unwrap()).unwrap();
    assert_eq!((img.width, img.height), (800, 800));
    let again = dir.path().join("t.png");
    topple(&["render-one", "--group", "6B-3D-NonUni", "--seed", "3", "--out", again.to_str().unwrap()]);
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn failures_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let o = topple(&["dataset", "--out", d, "--count", "3"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("even"));

    let missing = format!("{d}/none");
    let o = topple(&["experiment", "intra", "--dataset", &missing, "--out", d]);
    assert_eq!(o.status.code(), Some(5));
    assert!(stderr(&o).contains("topple dataset"));

    let o = topple(&["dataset", "--groups", "5B-2D-Uni"]);
    assert!(!o.status.success());

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"per_group_count\": 4, \"bogus\": 1}").unwrap();
    let o = topple(&["dataset", "--out", d, "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn dataset_and_experiment_round_trip_their_effective_config() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let data_s = data.to_str().unwrap();
    let o = topple(&["--jobs", "2", "dataset", "--out", data_s, "--count", "8", "--seed", "9", "--groups", "4B-2D-Uni"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("8 scenes"));
    let manifest = std::fs::read(data.join("manifest.jsonl")).unwrap();

    // Rebuilding from the echoed config reproduces the same manifest.
    let copy = dir.path().join("copy");
    let cfg = data.join("config.effective.json");
    let o = topple(&["dataset", "--out", copy.to_str().unwrap(), "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read(copy.join("manifest.jsonl")).unwrap(), manifest);

    let report = dir.path().join("report");
    let o = topple(&[
        "experiment", "intra", "--dataset", data_s, "--out", report.to_str().unwrap(),
        "--groups", "4B-2D-Uni", "--epochs", "1",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("Intra-group accuracy"));
    let echo = report.join("config.effective.json");
    let again = dir.path().join("again");
    let o = topple(&[
        "experiment", "intra", "--dataset", data_s, "--out", again.to_str().unwrap(),
        "--config", echo.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["tables/intra.csv", "predictions.jsonl", "models/intra-4B-2D-Uni.slnn"] {
        assert_eq!(std::fs::read(report.join(f)).unwrap(), std::fs::read(again.join(f)).unwrap(), "{f}");
    }

    let model = dir.path().join("model");
    let o = topple(&[
        "train", "--dataset", data_s, "--out", model.to_str().unwrap(), "--groups", "4B-2D-Uni", "--epochs", "1",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["model.slnn", "curve.csv", "predictions.jsonl", "config.effective.json"] {
        assert!(model.join(f).exists(), "{f}");
    }
}

#[test]
fn analyze_accepts_an_empty_ratings_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let ds = common::fake_dataset(&data, &GroupTag::all());
    let preds: Vec<_> = ds
        .records
        .iter()
        .filter(|r| ds.study.as_ref().unwrap().contains(&r.scene_id))
        .map(|r| topple::core::eval::ScenePrediction {
            scene_id: r.scene_id.clone(),
            experiment: "generalization".into(),
            p_stable: 0.5,
            label: topple::core::stability::StabilityLabel::Stable,
            truth: r.label,
        })
        .collect();
    let pred_path = dir.path().join("predictions.jsonl");
    formats::write_jsonl(&pred_path, &preds).unwrap();
    let ratings = dir.path().join("ratings.jsonl");
    std::fs::write(&ratings, "").unwrap();
    let out = dir.path().join("analysis");
    let o = topple(&[
        "analyze", "--dataset", data.to_str().unwrap(), "--ratings", ratings.to_str().unwrap(),
        "--predictions", pred_path.to_str().unwrap(), "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("tables/human_machine.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().starts_with("4B-2D-Uni,0,0,0,,"));
    assert!(out.join("config.effective.json").exists());

    std::fs::write(&ratings, "{\"session\":1}\n").unwrap();
    let o = topple(&[
        "analyze", "--dataset", data.to_str().unwrap(), "--ratings", ratings.to_str().unwrap(),
        "--predictions", pred_path.to_str().unwrap(), "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn study_reports_a_taken_port() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    common::fake_dataset(&data, &GroupTag::all());
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = listener.local_addr().unwrap().port().to_string();
    let o = topple(&[
        "study", "--dataset", data.to_str().unwrap(), "--state", dir.path().join("s").to_str().unwrap(),
        "--port", &port,
    ]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains(&format!("127.0.0.1:{port}")), "{}", stderr(&o));
}
