//! Experiment configuration files.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::scene::io::write_file;
use crate::scene::SceneConfig;
use crate::student::{PillarConfig, TrainConfig};
use crate::teacher::{TeacherConfig, TeacherKind};
use crate::{Error, Result};

pub const CONFIG_VERSION: u64 = 1;

/// How training pairs relate to each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Diversity {
    /// Runs of `sequence_length` consecutive pairs share one scene layout.
    Contiguous,
    /// Every pair has its own layout.
    Diverse,
}

/// What an experiment evaluates on the held-out split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    /// A student distilled from the configured teacher.
    Student,
    /// The teacher's own labels.
    Teacher,
    /// All-zero flow.
    ZeroFlow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    /// Scene generation; train pair `i` uses `dataset + 2i`, val pair `i` uses
    /// `dataset + 2i + 1`.
    pub dataset: u64,
    /// Base of the per-pair teacher seeds.
    pub teacher: u64,
    /// Student parameter init.
    pub model: u64,
}

impl Seeds {
    pub fn from_master(seed: u64) -> Self {
        Seeds {
            dataset: seed,
            teacher: seed,
            model: seed,
        }
    }
}

/// Runtime measurement in method comparisons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    /// Leading held-out pairs to time.
    pub samples: usize,
    pub repeats: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub name: String,
    pub arm: Arm,
    pub scene: SceneConfig,
    pub train_n: usize,
    pub val_n: usize,
    pub diversity: Diversity,
    pub sequence_length: usize,
    pub teacher: TeacherKind,
    pub teacher_config: TeacherConfig,
    /// Also label the held-out split and score the teacher there.
    pub evaluate_teacher: bool,
    pub pillar: PillarConfig,
    pub train: TrainConfig,
    /// Side length, meters, of the centered square scored at evaluation.
    pub eval_crop: f64,
    pub seeds: Seeds,
    pub bench: Option<BenchConfig>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let pillar = PillarConfig::desk();
        ExperimentConfig {
            name: "experiment".into(),
            arm: Arm::Student,
            scene: SceneConfig {
                area_half_extent: pillar.area_half_extent,
                n_background_points: 1000,
                n_static_structures: 12,
                n_objects: 4,
                object_points: 250,
                ..SceneConfig::default()
            },
            train_n: 200,
            val_n: 20,
            diversity: Diversity::Diverse,
            sequence_length: 50,
            teacher: TeacherKind::Nsfp,
            teacher_config: TeacherConfig::default(),
            evaluate_teacher: false,
            // Same ratio as a 70 m box inside a 102.4 m training area.
            eval_crop: 2.0 * pillar.area_half_extent * 70.0 / 102.4,
            pillar,
            train: TrainConfig {
                lr: 1e-3,
                batch_size: 4,
                epochs: 30,
                ..TrainConfig::default()
            },
            seeds: Seeds::from_master(0),
            bench: None,
        }
    }
}

impl ExperimentConfig {
    /// Derives every seed, including the shuffle seed, from one value.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seeds = Seeds::from_master(seed);
        self.train.seed = seed;
        self
    }

    pub fn eval_half_extent(&self) -> f64 {
        self.eval_crop / 2.0
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.teacher_config.validate()?;
        self.pillar.validate()?;
        self.train.validate()?;
        if self.train_n == 0 || self.val_n == 0 {
            return Err(Error::InvalidConfig(
                "train_n and val_n must be >= 1".into(),
            ));
        }
        if self.sequence_length == 0 {
            return Err(Error::InvalidConfig("sequence_length must be >= 1".into()));
        }
        if self.scene.area_half_extent != self.pillar.area_half_extent {
            return Err(Error::ConfigMismatch(format!(
                "scene area half extent {} m differs from the student's {} m",
                self.scene.area_half_extent, self.pillar.area_half_extent
            )));
        }
        if !(self.eval_crop > 0.0) || self.eval_half_extent() > self.scene.area_half_extent {
            return Err(Error::InvalidConfig(format!(
                "eval_crop {} m must be positive and fit inside the {} m scene",
                self.eval_crop,
                2.0 * self.scene.area_half_extent
            )));
        }
        if let Some(b) = self.bench {
            if b.samples == 0 || b.repeats < 3 {
                return Err(Error::InvalidConfig(
                    "bench needs samples >= 1 and repeats >= 3".into(),
                ));
            }
        }
        Ok(())
    }

    /// Scene config of train (`val = false`) or held-out pair `index`.
    pub fn scene_for(&self, val: bool, index: usize) -> SceneConfig {
        let offset = 2 * index as u64 + u64::from(val);
        let seed = self.seeds.dataset.wrapping_add(offset);
        let mut scene = SceneConfig {
            seed,
            layout_seed: None,
            sequence_step: 0,
            ..self.scene.clone()
        };
        if !val && self.diversity == Diversity::Contiguous {
            let run = index / self.sequence_length;
            scene.layout_seed = Some(
                self.seeds
                    .dataset
                    .wrapping_add(2 * (run * self.sequence_length) as u64),
            );
            scene.sequence_step = (index % self.sequence_length) as u32;
        }
        scene
    }
}

/// Reads a JSON config file carrying a top-level `version` field. Unknown
/// keys are errors.
pub fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| Error::format(path, "config must be a JSON object"))?;
    match obj.remove("version") {
        Some(v) if v.as_u64() == Some(CONFIG_VERSION) => {}
        Some(v) => {
            return Err(Error::format(
                path,
                format!("unsupported config version {v}"),
            ))
        }
        None => return Err(Error::format(path, "missing `version` field")),
    }
    serde_json::from_value(value).map_err(|e| Error::json(path, e))
}

/// Writes `value` as a versioned JSON config.
pub fn write_config<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut v = serde_json::to_value(value).map_err(|e| Error::json(path, e))?;
    if let Some(obj) = v.as_object_mut() {
        let mut out = serde_json::Map::new();
        out.insert("version".into(), CONFIG_VERSION.into());
        out.append(obj);
        v = serde_json::Value::Object(out);
    }
    let text = serde_json::to_string_pretty(&v).map_err(|e| Error::json(path, e))?;
    write_file(path, text.as_bytes())
}

pub fn read_experiment(path: &Path) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = read_config(path)?;
    cfg.validate()?;
    Ok(cfg)
}
