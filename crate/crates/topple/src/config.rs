//! Run configuration shared by the CLI and the library entry points.

use serde::{Deserialize, Serialize};
use topple_core::learn::TrainConfig;
use topple_core::physics::SimConfig;
use topple_core::render::CameraConfig;
use topple_core::scene::{GroupTag, SamplerParams};
use topple_core::stability::StabilityConfig;

use crate::error::{Error, Result};

/// Name of the configuration echo written next to every output.
pub const EFFECTIVE_CONFIG: &str = "config.effective.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// 200 scenes per group.
    Desk,
    /// 1000 scenes per group.
    Full,
}

impl Preset {
    pub fn per_group_count(self) -> usize {
        match self {
            Preset::Desk => 200,
            Preset::Full => 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub per_group_count: usize,
    pub seed: u64,
    pub groups: Vec<GroupTag>,
    pub sampler: SamplerParams,
    pub sim: SimConfig,
    pub stability: StabilityConfig,
    /// Camera for the study images; tensors reuse it at `tensor_render_side`.
    pub camera: CameraConfig,
    /// Resolution rendered before box-filtering down to the network input.
    pub tensor_render_side: usize,
    pub study_seed: u64,
}

impl DatasetConfig {
    pub fn preset(p: Preset) -> Self {
        DatasetConfig {
            per_group_count: p.per_group_count(),
            seed: 0,
            groups: GroupTag::all(),
            sampler: SamplerParams::default(),
            sim: SimConfig::default(),
            stability: StabilityConfig::default(),
            camera: CameraConfig::default(),
            tensor_render_side: 512,
            study_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.per_group_count;
        if n < 2 || !n.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "per_group_count must be even and at least 2, got {n}"
            )));
        }
        if self.groups.is_empty() {
            return Err(Error::Config("no groups selected".into()));
        }
        let mut g = self.groups.clone();
        g.sort();
        g.dedup();
        if g.len() != self.groups.len() {
            return Err(Error::Config("groups listed twice".into()));
        }
        self.sampler.validate()?;
        self.sim.validate()?;
        self.camera.validate()?;
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(self.stability.tau > 0.0) {
            return Err(Error::Config("tau must be positive".into()));
        }
        let side = topple_core::learn::INPUT_SIDE;
        if self.tensor_render_side < side || !self.tensor_render_side.is_multiple_of(side) {
            return Err(Error::Config(format!(
                "tensor_render_side must be a multiple of {side}"
            )));
        }
        Ok(())
    }
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::preset(Preset::Desk)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[derive(Default)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    /// Groups for the intra-group experiment; every group when empty.
    pub intra_groups: Vec<GroupTag>,
}


impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate().map_err(Error::Learn)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets() {
        assert_eq!(DatasetConfig::preset(Preset::Desk).per_group_count, 200);
        assert_eq!(DatasetConfig::preset(Preset::Full).per_group_count, 1000);
        assert_eq!(DatasetConfig::default().groups.len(), 16);
        DatasetConfig::default().validate().unwrap();
    }

    #[test]
    fn round_trips_through_json() {
        let c = DatasetConfig::default();
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<DatasetConfig>(&s).unwrap(), c);
    }

    #[test]
    fn odd_count_rejected() {
        let c = DatasetConfig {
            per_group_count: 3,
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }
}
