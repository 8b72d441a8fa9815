//! Run configuration: TOML file with every key optional. Unknown keys are
//! rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::anchors::{layer_specs_for, LayerSpec};
use crate::datagen::SceneSpec;
use crate::error::{Error, Result};
use crate::inference::DetectConfig;
use crate::net::{HeadConfig, NetworkSpec, PoseSharing, SgdConfig, Stage};
use crate::targets::{LossConfig, PatchSampler};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub count: usize,
    pub scene: SceneSpec,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            count: 2000,
            scene: SceneSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub input_size: usize,
    pub input_channels: usize,
    pub n_classes: usize,
    pub n_pose_bins: usize,
    pub pose_sharing: PoseSharing,
    pub s_min: f64,
    pub s_max: f64,
    pub aspect_ratios: Vec<f64>,
    /// Add the square box at `sqrt(s_k * s_{k+1})` in every cell.
    pub extra_box: bool,
    /// Backbone stages; the toy backbone when absent.
    pub stages: Option<Vec<Stage>>,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_size: 64,
            input_channels: 1,
            n_classes: 3,
            n_pose_bins: 8,
            pose_sharing: PoseSharing::Share,
            s_min: 0.2,
            s_max: 0.9,
            aspect_ratios: vec![1.0, 2.0, 0.5],
            extra_box: false,
            stages: None,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn network_spec(&self) -> NetworkSpec {
        match &self.stages {
            Some(stages) => NetworkSpec {
                input_size: self.input_size,
                input_channels: self.input_channels,
                stages: stages.clone(),
            },
            None => NetworkSpec::toy(self.input_size, self.input_channels),
        }
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        let grids = self.network_spec().prediction_grids();
        layer_specs_for(&grids, self.s_min, self.s_max, &self.aspect_ratios, self.extra_box)
    }

    pub fn head_config(&self) -> HeadConfig {
        HeadConfig::new(
            self.n_classes,
            self.n_pose_bins,
            self.pose_sharing,
            &self.layer_specs(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: u64,
    /// Seeds batch composition and patch sampling.
    pub seed: u64,
    /// Write a checkpoint every this many steps (0 = only at the end).
    pub checkpoint_every: u64,
    pub sampler: PatchSampler,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            steps: 20_000,
            seed: 0,
            checkpoint_every: 0,
            sampler: PatchSampler::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub n_bins: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_bins: vec![4, 8, 16, 24],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub optim: SgdConfig,
    pub train: TrainConfig,
    pub detect: DetectConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.data.scene.validate()?;
        if self.train.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be positive".into()));
        }
        if self.model.n_classes != self.data.scene.n_classes {
            return Err(Error::Config(format!(
                "model.n_classes = {} but data.scene.n_classes = {}",
                self.model.n_classes, self.data.scene.n_classes
            )));
        }
        if !(self.loss.alpha1 >= 0.0 && self.loss.alpha2 >= 0.0 && self.loss.neg_pos_ratio >= 0.0) {
            return Err(Error::Config("loss weights and ratio must be non-negative".into()));
        }
        let layers = self.model.layer_specs();
        self.model.network_spec().validate(&layers)?;
        self.model.head_config().validate()?;
        Ok(())
    }
}
