//! Dataset build: generate, label, render and split every group, then write
//! the manifest.
//!
//! Layout under the dataset root:
//!
//! ```text
//! manifest.jsonl            one ManifestRecord per scene, ordered by scene id
//! study.json                the 96-scene study sample (only with all 16 groups)
//! config.effective.json     the DatasetConfig that produced this directory
//! scenes/<scene_id>.json    block poses and dimensions
//! trajectories/<scene_id>.csv
//! images/<sha256>.png       800x800 study renders, named by content
//! tensors/<sha256>.f32      64x64 network inputs, named by content
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use topple_core::dataset::{assign_splits, sample_study_set, ManifestRecord, Split, StudySet};
use topple_core::eval::Example;
use topple_core::learn::INPUT_SIDE;
use topple_core::physics::{simulate, Trajectory};
use topple_core::render::{downsample, frame_camera, rasterize, CameraConfig, Lighting};
use topple_core::scene::{
    generate_group_with_quota, BalancePolicy, GroupError, GroupTag, LabeledScene, Scene,
};
use topple_core::stability::{label_from_trajectory, static_equilibrium_check, StabilityLabel};

use crate::config::{DatasetConfig, EFFECTIVE_CONFIG};
use crate::error::{Error, Result};
use crate::formats;

pub const MANIFEST: &str = "manifest.jsonl";
pub const STUDY: &str = "study.json";

/// Simulate and label one scene.
pub fn label_scene(scene: &Scene, cfg: &DatasetConfig) -> Result<(Trajectory, StabilityLabel)> {
    let traj = simulate(scene, &cfg.sim).map_err(|e| Error::Scene {
        scene_id: scene.id.clone(),
        msg: e.to_string(),
    })?;
    let label = label_from_trajectory(&traj, &cfg.stability)?;
    Ok((traj, label))
}

/// Generate one group. Candidates whose static-equilibrium class is already
/// full are dropped before simulation; every accepted label comes from the
/// simulator.
pub fn generate_labeled_group(
    group: GroupTag,
    cfg: &DatasetConfig,
) -> Result<Vec<(LabeledScene, Trajectory)>> {
    let mut trajectories: BTreeMap<u64, Trajectory> = BTreeMap::new();
    let scenes = generate_group_with_quota(
        group,
        cfg.seed,
        cfg.per_group_count,
        BalancePolicy::FiftyFifty,
        &cfg.sampler,
        |scene, quota| {
            // The oracle can refuse a degenerate contact; the simulator still
            // decides those scenes.
            if let Ok(guess) = static_equilibrium_check(scene, cfg.sim.friction_mu) {
                if !quota.accepts(guess) {
                    return Ok(None);
                }
            }
            let (traj, label) = label_scene(scene, cfg)?;
            if quota.accepts(label) {
                trajectories.insert(scene.params.seed, traj);
            }
            Ok(Some(label))
        },
    )
    .map_err(|e| match e {
        GroupError::Scene(e) => Error::Generation(e),
        GroupError::Labeler { source, .. } => source,
    })?;
    Ok(scenes
        .into_iter()
        .map(|l| {
            let t = trajectories
                .remove(&l.scene.params.seed)
                .expect("accepted scenes were simulated");
            (l, t)
        })
        .collect())
}

/// The 64x64 network input for a scene.
pub fn render_tensor(scene: &Scene, camera: &CameraConfig, render_side: usize) -> Result<Vec<f32>> {
    let cfg = CameraConfig {
        resolution: render_side,
        ..*camera
    };
    let cam = frame_camera(scene, &cfg)?;
    let img = rasterize(scene, &cam, &Lighting::default());
    Ok(downsample(&img, INPUT_SIDE)?)
}

/// PNG bytes of the study render.
pub fn render_png(scene: &Scene, camera: &CameraConfig) -> Result<Vec<u8>> {
    let cam = frame_camera(scene, camera)?;
    Ok(formats::encode_png(&rasterize(scene, &cam, &Lighting::default())))
}

struct Artifacts {
    record: ManifestRecord,
    files: Vec<(String, Vec<u8>)>,
}

fn build_artifacts(
    labeled: &LabeledScene,
    traj: &Trajectory,
    split: Split,
    cfg: &DatasetConfig,
) -> Result<Artifacts> {
    let scene = &labeled.scene;
    let png = render_png(scene, &cfg.camera)?;
    let tensor = formats::encode_tensor(&render_tensor(scene, &cfg.camera, cfg.tensor_render_side)?);
    let image_path = format!("images/{}.png", formats::sha256_hex(&png));
    let tensor_path = format!("tensors/{}.f32", formats::sha256_hex(&tensor));
    let files = vec![
        (format!("scenes/{}.json", scene.id), formats::to_json_pretty(scene)),
        (
            format!("trajectories/{}.csv", scene.id),
            formats::trajectory_csv(traj),
        ),
        (image_path.clone(), png),
        (tensor_path.clone(), tensor),
    ];
    Ok(Artifacts {
        record: ManifestRecord {
            scene_id: scene.id.clone(),
            group: scene.group(),
            image_path,
            tensor_path,
            label: labeled.label,
            split,
        },
        files,
    })
}

/// Progress callback: `(group, scenes done in that group)`.
pub type Progress<'a> = &'a (dyn Fn(GroupTag, usize) + Sync);

/// Build (or verify and reuse) the dataset in `dir`.
///
/// If `dir` already holds a complete dataset made from the same config whose
/// content-addressed files still match their names, nothing is rewritten.
pub fn build_dataset(dir: &Path, cfg: &DatasetConfig, progress: Progress) -> Result<Vec<ManifestRecord>> {
    cfg.validate()?;
    if let Some(existing) = reusable(dir, cfg)? {
        return Ok(existing);
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    // The manifest marks completion, so drop a stale one first.
    let manifest_path = dir.join(MANIFEST);
    if manifest_path.exists() {
        std::fs::remove_file(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    }
    formats::write_json(&dir.join(EFFECTIVE_CONFIG), cfg)?;

    let groups: Vec<Vec<(LabeledScene, Trajectory)>> = cfg
        .groups
        .par_iter()
        .map(|&g| {
            let out = generate_labeled_group(g, cfg)?;
            progress(g, out.len());
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let mut records: Vec<ManifestRecord> = Vec::new();
    for scenes in &groups {
        let ids: Vec<&str> = scenes.iter().map(|(l, _)| l.scene.id.as_str()).collect();
        let splits = assign_splits(&ids, cfg.seed)?;
        let batch: Vec<ManifestRecord> = scenes
            .par_iter()
            .zip(splits)
            .map(|((l, t), split)| {
                let art = build_artifacts(l, t, split, cfg)?;
                for (rel, bytes) in &art.files {
                    formats::write_atomic(&dir.join(rel), bytes)?;
                }
                Ok(art.record)
            })
            .collect::<Result<_>>()?;
        records.extend(batch);
    }
    records.sort_by(|a, b| a.scene_id.cmp(&b.scene_id));

    let study_path = dir.join(STUDY);
    if cfg.groups.len() == GroupTag::all().len() {
        let study = sample_study_set(&records, cfg.study_seed)?;
        formats::write_json(&study_path, &study)?;
    } else if study_path.exists() {
        std::fs::remove_file(&study_path).map_err(|e| Error::io(&study_path, e))?;
    }
    formats::write_jsonl(&manifest_path, &records)?;
    Ok(records)
}

fn reusable(dir: &Path, cfg: &DatasetConfig) -> Result<Option<Vec<ManifestRecord>>> {
    let (manifest, config) = (dir.join(MANIFEST), dir.join(EFFECTIVE_CONFIG));
    if !manifest.exists() || !config.exists() {
        return Ok(None);
    }
    let Ok(old) = formats::read_json::<DatasetConfig>(&config) else {
        return Ok(None);
    };
    if old != *cfg {
        return Ok(None);
    }
    let records: Vec<ManifestRecord> = formats::read_jsonl(&manifest)?;
    if verify_dataset(dir, &records).is_err() {
        return Ok(None);
    }
    Ok(Some(records))
}

/// Check that every referenced file exists and that content-addressed files
/// hash to their names.
pub fn verify_dataset(dir: &Path, records: &[ManifestRecord]) -> Result<()> {
    for r in records {
        for rel in [&r.image_path, &r.tensor_path] {
            let path = dir.join(rel);
            let bytes = formats::read_bytes(&path)?;
            let stem = Path::new(rel)
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default();
            if formats::sha256_hex(&bytes) != stem {
                return Err(Error::format(path, "content does not match its name"));
            }
        }
    }
    Ok(())
}

/// A dataset on disk: its manifest and, when present, its study set.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
    pub study: Option<StudySet>,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Dataset> {
        let manifest = root.join(MANIFEST);
        if !manifest.exists() {
            return Err(Error::MissingDataset(root.into()));
        }
        let records = formats::read_jsonl(&manifest)?;
        let study_path = root.join(STUDY);
        let study = if study_path.exists() {
            Some(formats::read_json(&study_path)?)
        } else {
            None
        };
        Ok(Dataset {
            root: root.into(),
            records,
            study,
        })
    }

    /// Records joined with their tensors.
    pub fn examples(&self) -> Result<Vec<Example>> {
        self.records
            .par_iter()
            .map(|r| {
                let path = self.root.join(&r.tensor_path);
                let bytes = formats::read_bytes(&path)?;
                Ok(Example {
                    scene_id: r.scene_id.clone(),
                    group: r.group,
                    split: r.split,
                    label: r.label,
                    input: formats::decode_tensor(&path, &bytes, INPUT_SIDE * INPUT_SIDE)?,
                })
            })
            .collect()
    }

    pub fn record(&self, scene_id: &str) -> Option<&ManifestRecord> {
        self.records.iter().find(|r| r.scene_id == scene_id)
    }
}
