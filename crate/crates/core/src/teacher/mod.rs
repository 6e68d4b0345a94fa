//! Pseudo-label teachers and dataset labeling.

mod label_file;
mod nsfp;

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use label_file::{
    decode_label, encode_label, label_path, load_label, save_label, LABEL_MAGIC, LABEL_VERSION,
};
pub use nsfp::{init_networks, Evaluated, Objective};
pub use nsfp::{nsfp_optimize, nsfp_optimize_traced, NsfpTrace, TeacherConfig};

use crate::neighbors::nn_flow_teacher;
use crate::scene::io::{read_json, write_json};
use crate::scene::{Dataset, FlowField, SceneSample};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TeacherKind {
    Nsfp,
    Nn,
    Gt,
}

impl TeacherKind {
    pub fn name(self) -> &'static str {
        match self {
            TeacherKind::Nsfp => "nsfp",
            TeacherKind::Nn => "nn",
            TeacherKind::Gt => "gt",
        }
    }
}

impl fmt::Display for TeacherKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TeacherKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nsfp" => Ok(TeacherKind::Nsfp),
            "nn" => Ok(TeacherKind::Nn),
            "gt" => Ok(TeacherKind::Gt),
            other => Err(Error::InvalidConfig(format!(
                "unknown teacher {other:?} (expected nsfp, nn or gt)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabel {
    pub flow: FlowField,
    pub teacher: TeacherKind,
    pub final_loss: f64,
    pub iters_run: u32,
    pub wall_time_ms: u64,
    /// Cycle term of the best iterate; only the optimizing teacher has one.
    pub cycle_loss: Option<f64>,
}

/// Labels one sample. `seed` replaces the configured teacher seed.
pub fn label_sample(
    sample: &SceneSample,
    kind: TeacherKind,
    cfg: &TeacherConfig,
    seed: u64,
) -> Result<PseudoLabel> {
    match kind {
        TeacherKind::Nsfp => {
            let cfg = TeacherConfig {
                seed,
                ..cfg.clone()
            };
            nsfp_optimize(&sample.cloud_t, &sample.cloud_t1, &cfg)
        }
        TeacherKind::Nn => nn_flow_teacher(&sample.cloud_t, &sample.cloud_t1, &cfg.chamfer),
        TeacherKind::Gt => Ok(PseudoLabel {
            flow: sample.gt_flow.clone(),
            teacher: TeacherKind::Gt,
            final_loss: 0.0,
            iters_run: 0,
            wall_time_ms: 0,
            cycle_loss: None,
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelFailure {
    pub index: usize,
    pub error: String,
}

/// Written as `manifest.json` next to the label files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelManifest {
    pub teacher: TeacherKind,
    pub split: String,
    pub global_seed: u64,
    pub config: TeacherConfig,
    pub labeled: Vec<usize>,
    pub failures: Vec<LabelFailure>,
    pub mean_final_loss: f64,
    pub wall_time_ms: Vec<u64>,
}

impl LabelManifest {
    pub fn total(&self) -> usize {
        self.labeled.len() + self.failures.len()
    }

    pub fn load(dir: &Path) -> Result<Self> {
        read_json(&dir.join("manifest.json"))
    }
}

#[derive(Debug, Clone)]
pub struct LabelJob<'a> {
    pub split: &'a str,
    pub teacher: TeacherKind,
    pub config: &'a TeacherConfig,
    pub global_seed: u64,
    /// Worker threads; results do not depend on it.
    pub jobs: usize,
    /// Store measured wall time in the label files. Off by default so that
    /// label files are byte-identical across runs; the manifest always has it.
    pub record_wall_time: bool,
}

/// Per-pair teacher seed.
pub fn pair_seed(global_seed: u64, index: usize) -> u64 {
    global_seed ^ index as u64
}

/// Labels every sample of a split into `out_dir`. Per-sample failures are
/// recorded in the manifest rather than aborting the run.
pub fn pseudolabel_dataset(
    dataset: &Dataset,
    out_dir: &Path,
    job: &LabelJob<'_>,
    progress: &(dyn Fn(usize, usize) + Sync),
) -> Result<LabelManifest> {
    job.config.validate()?;
    if job.jobs == 0 {
        return Err(Error::InvalidConfig("jobs must be >= 1".into()));
    }
    let indices = dataset.indices(job.split)?;
    if indices.is_empty() {
        return Err(Error::Empty("dataset split"));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(job.jobs)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let done = AtomicUsize::new(0);
    let total = indices.len();

    let results: Vec<(usize, Result<PseudoLabel>)> = pool.install(|| {
        indices
            .par_iter()
            .map(|&index| {
                let start = Instant::now();
                let result = dataset.load(job.split, index).and_then(|sample| {
                    let mut label = label_sample(
                        &sample,
                        job.teacher,
                        job.config,
                        pair_seed(job.global_seed, index),
                    )?;
                    let measured = start.elapsed().as_millis() as u64;
                    let stored = PseudoLabel {
                        wall_time_ms: if job.record_wall_time { measured } else { 0 },
                        ..label.clone()
                    };
                    save_label(out_dir, index, &stored)?;
                    label.wall_time_ms = measured;
                    Ok(label)
                });
                progress(done.fetch_add(1, Ordering::SeqCst) + 1, total);
                (index, result)
            })
            .collect()
    });

    let mut labeled = Vec::new();
    let mut failures = Vec::new();
    let mut loss_sum = 0.0;
    let mut wall_time_ms = Vec::new();
    for (index, result) in results {
        match result {
            Ok(label) => {
                loss_sum += label.final_loss;
                wall_time_ms.push(label.wall_time_ms);
                labeled.push(index);
            }
            Err(e) => {
                log::warn!("labeling sample {index} failed: {e}");
                let _ = std::fs::remove_file(label_path(out_dir, index));
                failures.push(LabelFailure {
                    index,
                    error: e.to_string(),
                });
            }
        }
    }
    let manifest = LabelManifest {
        teacher: job.teacher,
        split: job.split.to_string(),
        global_seed: job.global_seed,
        config: job.config.clone(),
        mean_final_loss: if labeled.is_empty() {
            f64::NAN
        } else {
            loss_sum / labeled.len() as f64
        },
        labeled,
        failures,
        wall_time_ms,
    };
    write_json(&out_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}
