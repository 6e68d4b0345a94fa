//! Single pipeline steps, shared by the experiment runner and the CLI.

use std::path::{Path, PathBuf};

use super::config::ExperimentConfig;
use super::progress::Progress;
use crate::eval::{evaluate_samples, ThreewayReport};
use crate::scene::{generate_scene, Dataset, FlowField, SceneConfig, SceneSample};
use crate::student::{
    train_student, EpochRecord, PillarConfig, StudentModel, TrainPair, Validation,
};
use crate::teacher::{
    load_label, pseudolabel_dataset, LabelJob, LabelManifest, TeacherConfig, TeacherKind,
};
use crate::{Error, Result};

pub const TRAIN_SPLIT: &str = "train";
pub const VAL_SPLIT: &str = "val";

/// Writes `train/` and `val/` splits under `root`.
pub fn generate_dataset(
    cfg: &ExperimentConfig,
    root: &Path,
    progress: &Progress,
) -> Result<Dataset> {
    cfg.validate()?;
    let ds = Dataset::new(root);
    for (split, n, val) in [
        (TRAIN_SPLIT, cfg.train_n, false),
        (VAL_SPLIT, cfg.val_n, true),
    ] {
        let p = progress.stage(&format!("generate_{split}"), n);
        for i in 0..n {
            let scene = cfg.scene_for(val, i);
            let sample = generate_scene(&scene).map_err(|e| Error::Seed {
                seed: scene.seed,
                source: Box::new(e),
            })?;
            ds.save(split, i, &sample, &scene)?;
            p.tick(i + 1);
        }
    }
    Ok(ds)
}

/// `<dataset>/labels/<teacher>`.
pub fn default_labels_dir(dataset_root: &Path, teacher: TeacherKind) -> PathBuf {
    dataset_root.join("labels").join(teacher.name())
}

/// Allowed label failures: 1% of the split, rounded down.
pub fn failure_limit(total: usize) -> usize {
    total / 100
}

pub fn check_label_failures(manifest: &LabelManifest) -> Result<()> {
    let total = manifest.total();
    let limit = failure_limit(total);
    if manifest.failures.len() > limit {
        return Err(Error::TooManyFailures {
            failed: manifest.failures.len(),
            total,
            limit,
        });
    }
    Ok(())
}

/// Labels one split into `out_dir` and applies the failure policy.
#[allow(clippy::too_many_arguments)]
pub fn label_split(
    dataset: &Dataset,
    split: &str,
    out_dir: &Path,
    teacher: TeacherKind,
    config: &TeacherConfig,
    seed: u64,
    jobs: usize,
    progress: &Progress,
) -> Result<LabelManifest> {
    let total = dataset.indices(split)?.len();
    let p = progress.stage(&format!("pseudolabel_{split}"), total);
    let job = LabelJob {
        split,
        teacher,
        config,
        global_seed: seed,
        jobs,
        record_wall_time: false,
    };
    let manifest = pseudolabel_dataset(dataset, out_dir, &job, &|done, _| p.tick(done))?;
    check_label_failures(&manifest)?;
    Ok(manifest)
}

/// Indices with a usable label: those listed in the label manifest, or every
/// sample of the split when there is no manifest.
pub fn labeled_indices(
    dataset: &Dataset,
    split: &str,
    labels_dir: &Path,
) -> Result<(Vec<usize>, TeacherKind)> {
    if labels_dir.join("manifest.json").exists() {
        let m = LabelManifest::load(labels_dir)?;
        check_label_failures(&m)?;
        Ok((m.labeled, m.teacher))
    } else {
        Ok((dataset.indices(split)?, TeacherKind::Gt))
    }
}

pub fn load_training_pairs(
    dataset: &Dataset,
    labels_dir: &Path,
    teacher: TeacherKind,
    indices: &[usize],
) -> Result<Vec<TrainPair>> {
    indices
        .iter()
        .map(|&i| {
            let sample = dataset.load(TRAIN_SPLIT, i)?;
            let label = load_label(labels_dir, i, teacher)?;
            label.flow.check_len(sample.cloud_t.len())?;
            Ok(TrainPair {
                sample,
                label: label.flow,
            })
        })
        .collect()
}

/// Fresh seeded student trained on `pairs`, scored on `val` each epoch.
pub fn train_on_pairs(
    cfg: &ExperimentConfig,
    pairs: &[TrainPair],
    val: &[SceneSample],
    progress: &Progress,
) -> Result<(StudentModel, Vec<EpochRecord>)> {
    let mut model = StudentModel::new(cfg.pillar.clone(), cfg.seeds.model)?;
    let p = progress.stage("train", cfg.train.epochs);
    let validation = Validation {
        samples: val,
        crop_half_extent: Some(cfg.eval_half_extent()),
    };
    let records = train_student(&mut model, pairs, validation, &cfg.train, &mut |r| {
        log::info!(
            "epoch {} train_loss {:.6} threeway {}",
            r.epoch,
            r.train_loss,
            r.threeway
                .as_ref()
                .map(|t| format!("{:.6}", t.threeway_epe))
                .unwrap_or_default()
        );
        p.tick(r.epoch)
    })?;
    Ok((model, records))
}

/// Errors unless the student was built for exactly this scene area.
pub fn check_model_matches(model: &PillarConfig, scene: &SceneConfig) -> Result<()> {
    if model.area_half_extent != scene.area_half_extent {
        return Err(Error::ConfigMismatch(format!(
            "model covers a {} m half extent but the dataset was generated with {} m",
            model.area_half_extent, scene.area_half_extent
        )));
    }
    Ok(())
}

/// Loads a split, checking every sample against the model's area.
pub fn load_split_for(
    model: &PillarConfig,
    dataset: &Dataset,
    split: &str,
) -> Result<Vec<SceneSample>> {
    dataset
        .indices(split)?
        .into_iter()
        .map(|i| {
            let (sample, scene) = dataset.load_with_config(split, i)?;
            check_model_matches(model, &scene)?;
            Ok(sample)
        })
        .collect()
}

pub fn evaluate_model(
    model: &StudentModel,
    samples: &[SceneSample],
    crop_half_extent: f64,
) -> Result<ThreewayReport> {
    evaluate_samples(samples, Some(crop_half_extent), |s| {
        model.forward(&s.cloud_t, &s.cloud_t1)
    })
}

pub fn evaluate_zero_flow(
    samples: &[SceneSample],
    crop_half_extent: f64,
) -> Result<ThreewayReport> {
    evaluate_samples(samples, Some(crop_half_extent), |s| {
        Ok(FlowField::zeros(s.cloud_t.len()))
    })
}

/// Scores stored labels of `split` as predictions.
pub fn evaluate_labels(
    dataset: &Dataset,
    split: &str,
    labels_dir: &Path,
    teacher: TeacherKind,
    indices: &[usize],
    crop_half_extent: f64,
) -> Result<ThreewayReport> {
    let samples = indices
        .iter()
        .map(|&i| dataset.load(split, i))
        .collect::<Result<Vec<_>>>()?;
    let mut next = indices.iter();
    evaluate_samples(&samples, Some(crop_half_extent), |_| {
        let i = *next.next().expect("one index per sample");
        Ok(load_label(labels_dir, i, teacher)?.flow)
    })
}
