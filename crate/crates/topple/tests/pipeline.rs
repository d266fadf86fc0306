use std::collections::BTreeMap;
use std::path::Path;

use topple::config::{DatasetConfig, ExperimentConfig};
use topple::core::dataset::Split;
use topple::core::eval::ScenePrediction;
use topple::core::stability::StabilityLabel;
use topple::experiments::{run_experiments, ExperimentKind};
use topple::formats;
use topple::pipeline::{build_dataset, verify_dataset, Dataset, MANIFEST};

fn small_config() -> DatasetConfig {
    DatasetConfig {
        per_group_count: 12,
        seed: 5,
        groups: vec!["4B-2D-Uni".parse().unwrap(), "6B-3D-NonUni".parse().unwrap()],
        ..DatasetConfig::default()
    }
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().to_string();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn build_with_threads(dir: &Path, cfg: &DatasetConfig, threads: usize) {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(|| build_dataset(dir, cfg, &|_, _| {}))
        .unwrap();
}

#[test]
fn small_dataset_build_is_complete_deterministic_and_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let cfg = small_config();
    build_with_threads(&a, &cfg, 1);
    build_with_threads(&b, &cfg, 3);
    let ta = tree(&a);
    assert_eq!(ta, tree(&b), "thread count changed the output");

    let ds = Dataset::open(&a).unwrap();
    assert_eq!(ds.records.len(), 24);
    assert!(ds.study.is_none());
    verify_dataset(&a, &ds.records).unwrap();
    for g in &cfg.groups {
        let recs: Vec<_> = ds.records.iter().filter(|r| r.group == *g).collect();
        assert_eq!(recs.len(), 12);
        assert_eq!(recs.iter().filter(|r| r.split == Split::Train).count(), 6);
        let stable = recs.iter().filter(|r| r.label == StabilityLabel::Stable).count();
        assert!((6..=7).contains(&stable), "{g}: {stable} stable");
        for r in recs {
            assert!(a.join(format!("scenes/{}.json", r.scene_id)).exists());
            let csv = std::fs::read_to_string(a.join(format!("trajectories/{}.csv", r.scene_id))).unwrap();
            assert_eq!(csv.lines().count(), 1 + g.num_blocks as usize);
            let png = formats::read_bytes(&a.join(&r.image_path)).unwrap();
            let img = formats::decode_png(Path::new("p"), &png).unwrap();
            assert_eq!((img.width, img.height), (800, 800));
        }
    }
    let examples = ds.examples().unwrap();
    assert!(examples.iter().all(|e| e.input.len() == 64 * 64));

    // A second run with the same config rewrites nothing.
    let before = std::fs::metadata(a.join(MANIFEST)).unwrap().modified().unwrap();
    build_dataset(&a, &cfg, &|_, _| panic!("no group should be regenerated")).unwrap();
    assert_eq!(std::fs::metadata(a.join(MANIFEST)).unwrap().modified().unwrap(), before);
    assert_eq!(tree(&a), ta);

    // A corrupted image forces a rebuild that restores it.
    let victim = ds.records[0].image_path.clone();
    std::fs::write(a.join(&victim), b"garbage").unwrap();
    build_dataset(&a, &cfg, &|_, _| {}).unwrap();
    assert_eq!(tree(&a), ta);

    // Another seed gives another dataset.
    let c = tmp.path().join("c");
    build_dataset(&c, &DatasetConfig { seed: 6, ..cfg.clone() }, &|_, _| {}).unwrap();
    assert_ne!(
        std::fs::read(a.join(MANIFEST)).unwrap(),
        std::fs::read(c.join(MANIFEST)).unwrap()
    );
}

#[test]
fn intra_experiment_report_matches_its_prediction_log() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    build_dataset(&data, &small_config(), &|_, _| {}).unwrap();
    let ds = Dataset::open(&data).unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.train.epochs = 2;
    let out = tmp.path().join("report");
    let report = run_experiments(&ds, &out, ExperimentKind::Intra, &cfg).unwrap();
    assert_eq!(report.runs.len(), 2);
    assert!(report.cross.is_none() && report.general.is_none());

    let preds: Vec<ScenePrediction> = formats::read_jsonl(&out.join("predictions.jsonl")).unwrap();
    assert_eq!(preds.len(), 12);
    let cells = std::fs::read_to_string(out.join("tables/intra_cells.csv")).unwrap();
    let mut lines = cells.lines();
    assert_eq!(lines.next(), Some("group,correct,count,accuracy"));
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        let exp = format!("intra-{}", f[0]);
        let mine: Vec<_> = preds.iter().filter(|p| p.experiment == exp).collect();
        let correct = mine.iter().filter(|p| p.is_correct()).count();
        assert_eq!(f[1].parse::<usize>().unwrap(), correct);
        assert_eq!(f[2].parse::<usize>().unwrap(), mine.len());
        assert_eq!(f[3], format!("{:.4}", correct as f64 / mine.len() as f64));
    }
    let grid = std::fs::read_to_string(out.join("tables/intra.csv")).unwrap();
    let rows: Vec<&str> = grid.lines().collect();
    assert_eq!(rows[0], "blocks,Uni-2D,Uni-3D,NonUni-2D,NonUni-3D");
    assert!(rows[1].starts_with("4,0.") || rows[1].starts_with("4,1."));
    assert!(rows[1].ends_with(",,,"));
    assert!(rows[2].starts_with("6,,,,"));
    assert_eq!(rows[3], "10,,,,");

    for name in ["intra-4B-2D-Uni", "intra-6B-3D-NonUni"] {
        let model = formats::read_bytes(&out.join(format!("models/{name}.slnn"))).unwrap();
        formats::decode_model(Path::new(name), &model).unwrap();
        let curve = std::fs::read_to_string(out.join(format!("curves/{name}.csv"))).unwrap();
        assert_eq!(curve.lines().count(), 3);
    }

    // Same inputs, same bytes.
    let again = tmp.path().join("again");
    run_experiments(&ds, &again, ExperimentKind::Intra, &cfg).unwrap();
    for f in ["tables/intra.csv", "predictions.jsonl", "models/intra-4B-2D-Uni.slnn"] {
        assert_eq!(std::fs::read(out.join(f)).unwrap(), std::fs::read(again.join(f)).unwrap(), "{f}");
    }

    // Designs that need every group refuse a partial dataset.
    assert!(run_experiments(&ds, &tmp.path().join("x"), ExperimentKind::Cross, &cfg).is_err());
}

#[test]
fn missing_dataset_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let err = Dataset::open(&tmp.path().join("nothing")).unwrap_err();
    assert_eq!(err.exit_code(), 5);
}
