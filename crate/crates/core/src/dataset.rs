//! Dataset bookkeeping that does not touch the filesystem: manifest records,
//! the fixed train/test split and the 96-scene study sample.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::scene::{mix_seed, GroupTag};
use crate::stability::StabilityLabel;

/// Scenes per group in the study sample.
pub const STUDY_PER_GROUP: usize = 6;

const SPLIT_STREAM: u64 = 0x0053_504c_4954;
const STUDY_STREAM: u64 = 0x0053_5455_4459;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// One line of `manifest.jsonl`. Paths are relative to the dataset root.
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ManifestRecord {
    pub scene_id: String,
    pub group: GroupTag,
    pub image_path: String,
    pub tensor_path: String,
    pub label: StabilityLabel,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum DatasetError {
    #[error("per-group count must be even and at least 2, got {0}")]
    InvalidCount(usize),
    #[error("group {group} has {available} test scenes, the study needs {needed}")]
    InsufficientTestScenes {
        group: GroupTag,
        available: usize,
        needed: usize,
    },
    #[error("scene {0} appears more than once")]
    DuplicateScene(String),
}

/// FNV-1a over the id bytes, then mixed with the seed.
pub fn split_key(scene_id: &str, seed: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in scene_id.as_bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    mix_seed(seed, SPLIT_STREAM, h)
}

/// Split one group's scenes in half: the half with the smaller keys trains.
///
/// The result depends only on the ids and the seed, never on their order.
pub fn assign_splits(scene_ids: &[&str], seed: u64) -> Result<Vec<Split>, DatasetError> {
    let n = scene_ids.len();
    if n < 2 || !n.is_multiple_of(2) {
        return Err(DatasetError::InvalidCount(n));
    }
    let mut ranked: Vec<(u64, &str, usize)> = scene_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (split_key(id, seed), *id, i))
        .collect();
    ranked.sort_unstable();
    for w in ranked.windows(2) {
        if w[0].1 == w[1].1 {
            return Err(DatasetError::DuplicateScene(String::from(w[0].1)));
        }
    }
    let mut out = alloc::vec![Split::Test; n];
    for &(_, _, i) in &ranked[..n / 2] {
        out[i] = Split::Train;
    }
    Ok(out)
}

/// The scenes shown to every study participant (each session reshuffles).
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StudySet {
    pub scene_ids: Vec<String>,
}

impl StudySet {
    pub fn len(&self) -> usize {
        self.scene_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scene_ids.is_empty()
    }

    pub fn contains(&self, scene_id: &str) -> bool {
        self.scene_ids.iter().any(|s| s == scene_id)
    }
}

/// Pick six Test scenes from each of the 16 groups and shuffle them.
pub fn sample_study_set(records: &[ManifestRecord], seed: u64) -> Result<StudySet, DatasetError> {
    let mut by_group: BTreeMap<GroupTag, Vec<&str>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.split == Split::Test) {
        by_group.entry(r.group).or_default().push(&r.scene_id);
    }
    let mut picked: Vec<String> = Vec::with_capacity(16 * STUDY_PER_GROUP);
    for group in GroupTag::all() {
        let mut ids = by_group.remove(&group).unwrap_or_default();
        if ids.len() < STUDY_PER_GROUP {
            return Err(DatasetError::InsufficientTestScenes {
                group,
                available: ids.len(),
                needed: STUDY_PER_GROUP,
            });
        }
        ids.sort_unstable_by_key(|id| (mix_seed(seed, STUDY_STREAM, split_key(id, 0)), *id));
        ids.dedup();
        if ids.len() < STUDY_PER_GROUP {
            return Err(DatasetError::InsufficientTestScenes {
                group,
                available: ids.len(),
                needed: STUDY_PER_GROUP,
            });
        }
        picked.extend(ids[..STUDY_PER_GROUP].iter().map(|s| String::from(*s)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, STUDY_STREAM, u64::MAX));
    picked.shuffle(&mut rng);
    Ok(StudySet { scene_ids: picked })
}
