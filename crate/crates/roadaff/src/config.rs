//! Layered run configuration: built-in defaults, then a TOML file, then
//! command-line overrides, in that order of precedence.
//!
//! Every block tolerates missing keys (they fall back to the block's
//! defaults), so a config file only needs to spell out what it changes.
//! Module seed fields are not part of the file contract: the pipeline
//! derives every module seed from the global `seed`, so runs are
//! reproducible from a single number.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::annotation::CameraModel;
use crate::error::{Error, Result};
use crate::hdphmm::HdpHmmConfig;
use crate::net::NetConfig;
use crate::sampler::SamplerConfig;
use crate::synthgen::{DriveNoise, WorldSpec};

/// How many demonstrations to simulate and how frames are taken from them.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DrivesConfig {
    /// Total simulated drives over the generated world.
    pub count: usize,
    /// Drives (taken from the end) reserved for evaluation.
    pub holdout: usize,
    /// A frame is captured every this many poses.
    pub frame_stride: usize,
    pub noise: DriveNoise,
}

impl Default for DrivesConfig {
    fn default() -> Self {
        DrivesConfig {
            count: 3,
            holdout: 1,
            frame_stride: 1,
            noise: DriveNoise::default(),
        }
    }
}

/// Action segmentation block: the sequence model plus the angular-speed
/// band (rad/s) inside which a state reads as straight driving.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct SegmentationConfig {
    #[serde(flatten)]
    pub model: HdpHmmConfig,
    pub straight_band: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnotationConfig {
    /// Window radius in meters for asserting a class from future poses.
    pub max_dist: f64,
}

impl Default for AnnotationConfig {
    fn default() -> Self {
        AnnotationConfig { max_dist: 15.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Grid cell size in pixels for attention offsets; 0 means use the
    /// net's downsample factor.
    pub grid: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { grid: 0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Single source of randomness; per-module seeds derive from it.
    pub seed: u64,
    /// Directory all artifacts are written into.
    pub workspace: PathBuf,
    pub world: WorldSpec,
    pub drives: DrivesConfig,
    pub camera: CameraModel,
    pub hdphmm: SegmentationConfig,
    pub annotation: AnnotationConfig,
    pub sampler: SamplerConfig,
    pub net: NetConfig,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 7,
            workspace: PathBuf::from("workspace"),
            world: WorldSpec::default(),
            drives: DrivesConfig::default(),
            camera: CameraModel::default(),
            hdphmm: SegmentationConfig {
                model: HdpHmmConfig::default(),
                straight_band: 0.05,
            },
            annotation: AnnotationConfig::default(),
            sampler: SamplerConfig::default(),
            net: NetConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        toml::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        self.hdphmm.model.validate()?;
        self.sampler.validate()?;
        self.net.validate()?;
        if self.drives.count == 0 {
            return Err(Error::InvalidConfig("drives.count must be positive".into()));
        }
        if self.drives.holdout >= self.drives.count {
            return Err(Error::InvalidConfig(format!(
                "drives.holdout ({}) must leave at least one training drive of {}",
                self.drives.holdout, self.drives.count
            )));
        }
        if self.drives.frame_stride == 0 {
            return Err(Error::InvalidConfig(
                "drives.frame_stride must be positive".into(),
            ));
        }
        if !(self.annotation.max_dist > 0.0) {
            return Err(Error::InvalidConfig(
                "annotation.max_dist must be positive".into(),
            ));
        }
        if !(self.hdphmm.straight_band > 0.0) {
            return Err(Error::InvalidConfig(
                "hdphmm.straight_band must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Grid cell size for attention offsets, resolving 0 to the net's
    /// downsample factor.
    pub fn eval_grid(&self) -> usize {
        if self.eval.grid == 0 {
            self.net.downsample()
        } else {
            self.eval.grid
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("flag {key}: cannot parse value {value:?}")))
}

/// Apply one namespaced command-line override, e.g. ("net.lr", "0.002").
pub fn apply_override(cfg: &mut PipelineConfig, key: &str, value: &str) -> Result<()> {
    match key {
        "world.junctions" => cfg.world.junctions = parse(key, value)?,
        "world.leg_min" => cfg.world.leg_min = parse(key, value)?,
        "world.leg_max" => cfg.world.leg_max = parse(key, value)?,
        "world.stub_len" => cfg.world.stub_len = parse(key, value)?,
        "world.road_width" => cfg.world.road_width = parse(key, value)?,
        "drives.count" => cfg.drives.count = parse(key, value)?,
        "drives.holdout" => cfg.drives.holdout = parse(key, value)?,
        "drives.frame_stride" => cfg.drives.frame_stride = parse(key, value)?,
        "drives.lateral_std" => cfg.drives.noise.lateral_std = parse(key, value)?,
        "drives.heading_std" => cfg.drives.noise.heading_std = parse(key, value)?,
        "drives.speed_std" => cfg.drives.noise.speed_std = parse(key, value)?,
        "hdphmm.gamma" => cfg.hdphmm.model.gamma = parse(key, value)?,
        "hdphmm.alpha" => cfg.hdphmm.model.alpha = parse(key, value)?,
        "hdphmm.kappa" => cfg.hdphmm.model.kappa = parse(key, value)?,
        "hdphmm.truncation" => cfg.hdphmm.model.truncation_l = parse(key, value)?,
        "hdphmm.iterations" => cfg.hdphmm.model.iterations = parse(key, value)?,
        "hdphmm.burn_in" => cfg.hdphmm.model.burn_in = parse(key, value)?,
        "hdphmm.straight_band" => cfg.hdphmm.straight_band = parse(key, value)?,
        "annotation.max_dist" => cfg.annotation.max_dist = parse(key, value)?,
        "sampler.straight_keep_ratio" => cfg.sampler.straight_keep_ratio = parse(key, value)?,
        "sampler.mirror_prob" => cfg.sampler.mirror_prob = parse(key, value)?,
        "net.lr" | "net.learning_rate" => cfg.net.learning_rate = parse(key, value)?,
        "net.iterations" => cfg.net.iterations = parse(key, value)?,
        "net.rounds" => cfg.net.rounds = parse(key, value)?,
        "net.batch_size" => cfg.net.batch_size = parse(key, value)?,
        "net.positive_threshold" => cfg.net.positive_threshold = parse(key, value)?,
        "net.max_dist" => cfg.net.max_dist = parse(key, value)?,
        "eval.grid" => cfg.eval.grid = parse(key, value)?,
        _ => {
            return Err(Error::InvalidConfig(format!(
                "unknown override key {key:?}"
            )))
        }
    }
    Ok(())
}
