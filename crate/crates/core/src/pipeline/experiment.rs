//! End-to-end experiments over the stage cache.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::cache::{sha256_hex, stage_hash, StageCache, StageOutput};
use super::config::{Arm, Diversity, ExperimentConfig, Seeds};
use super::ops::{
    evaluate_labels, evaluate_model, evaluate_zero_flow, generate_dataset, label_split,
    labeled_indices, load_training_pairs, train_on_pairs, TRAIN_SPLIT, VAL_SPLIT,
};
use super::progress::Progress;
use crate::eval::{
    bench_runtime, loglog_slope, report_csv, scaling_csv, scaling_curve, sort_rows, ReportRow,
    RuntimeStats, ScalingPoint, ThreewayReport,
};
use crate::scene::io::{read_json, write_file, write_json};
use crate::scene::{Dataset, FlowField, SceneConfig, SceneSample};
use crate::student::{write_epoch_log, EpochRecord, PillarConfig, StudentModel, TrainConfig};
use crate::teacher::{label_sample, pair_seed, TeacherConfig, TeacherKind};
use crate::{Error, Result};

pub const MODEL_FILE: &str = "model.zfck";
pub const EPOCH_LOG_FILE: &str = "epoch_log.csv";
pub const REPORT_FILE: &str = "report.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub cache: StageCache,
    /// Experiment outputs go to `<artifacts_root>/<name>/`.
    pub artifacts_root: PathBuf,
    /// Pseudo-labeling worker threads.
    pub jobs: usize,
    pub progress: Progress,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageEntry {
    pub stage: String,
    pub hash: String,
    pub cache_hit: bool,
    pub wall_time_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub stages: Vec<StageEntry>,
    pub label_failures: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub report: ThreewayReport,
    /// The teacher's labels scored on the held-out split, when requested.
    pub teacher_report: Option<ThreewayReport>,
    pub model: Option<StudentModel>,
    pub epochs: Vec<EpochRecord>,
    pub artifacts: PathBuf,
    pub manifest: Manifest,
}

#[derive(Serialize)]
struct DatasetKey<'a> {
    scene: &'a SceneConfig,
    train_n: usize,
    val_n: usize,
    diversity: Diversity,
    sequence_length: usize,
    seed: u64,
}

#[derive(Serialize)]
struct LabelKey<'a> {
    split: &'a str,
    teacher: TeacherKind,
    config: &'a TeacherConfig,
    seed: u64,
}

#[derive(Serialize)]
struct TrainKey<'a> {
    pillar: &'a PillarConfig,
    train: &'a TrainConfig,
    model_seed: u64,
    eval_crop: f64,
    indices: &'a [usize],
}

#[derive(Serialize, Deserialize)]
struct EvalRecord {
    report: ThreewayReport,
    teacher_report: Option<ThreewayReport>,
}

pub fn config_hash(cfg: &ExperimentConfig) -> String {
    sha256_hex(&serde_json::to_vec(cfg).expect("config serializes"))
}

fn dataset_key(cfg: &ExperimentConfig) -> DatasetKey<'_> {
    DatasetKey {
        scene: &cfg.scene,
        train_n: cfg.train_n,
        val_n: cfg.val_n,
        diversity: cfg.diversity,
        sequence_length: cfg.sequence_length,
        seed: cfg.seeds.dataset,
    }
}

struct Runner<'a> {
    cfg: &'a ExperimentConfig,
    opts: &'a RunOptions,
    stages: Vec<StageEntry>,
}

struct Labels {
    out: StageOutput,
    indices: Vec<usize>,
    failures: usize,
}

struct Trained {
    out: StageOutput,
    model: StudentModel,
    epochs: Vec<EpochRecord>,
}

impl<'a> Runner<'a> {
    fn new(cfg: &'a ExperimentConfig, opts: &'a RunOptions) -> Result<Self> {
        cfg.validate()?;
        Ok(Runner {
            cfg,
            opts,
            stages: Vec::new(),
        })
    }

    fn record(&mut self, out: &StageOutput) {
        if out.cache_hit {
            log::info!(
                "stage {} cache hit ({})",
                out.record.stage,
                &out.record.hash[..12]
            );
        }
        self.stages.push(StageEntry {
            stage: out.record.stage.clone(),
            hash: out.record.hash.clone(),
            cache_hit: out.cache_hit,
            wall_time_ms: out.record.wall_time_ms,
        });
    }

    fn dataset(&mut self) -> Result<(StageOutput, Dataset)> {
        let hash = stage_hash("dataset", None, &dataset_key(self.cfg));
        let (cfg, progress) = (self.cfg, &self.opts.progress);
        let out = self
            .opts
            .cache
            .get_or_build("dataset", &hash, |dir| {
                generate_dataset(cfg, dir, progress).map(|_| ())
            })
            .map_err(|e| e.in_stage("dataset"))?;
        self.record(&out);
        let ds = Dataset::new(&out.dir);
        Ok((out, ds))
    }

    fn labels(&mut self, parent: &StageOutput, ds: &Dataset, split: &str) -> Result<Labels> {
        let cfg = self.cfg;
        let key = LabelKey {
            split,
            teacher: cfg.teacher,
            config: &cfg.teacher_config,
            seed: cfg.seeds.teacher,
        };
        let stage = if split == TRAIN_SPLIT {
            "labels"
        } else {
            "val_labels"
        };
        let hash = stage_hash(stage, Some(&parent.record.hash), &key);
        let opts = self.opts;
        let out = opts
            .cache
            .get_or_build(stage, &hash, |dir| {
                label_split(
                    ds,
                    split,
                    dir,
                    cfg.teacher,
                    &cfg.teacher_config,
                    cfg.seeds.teacher,
                    opts.jobs,
                    &opts.progress,
                )
                .map(|_| ())
            })
            .map_err(|e| e.in_stage(stage))?;
        self.record(&out);
        let (indices, _) = labeled_indices(ds, split, &out.dir).map_err(|e| e.in_stage(stage))?;
        let failures = ds.indices(split)?.len() - indices.len();
        Ok(Labels {
            out,
            indices,
            failures,
        })
    }

    fn train(
        &mut self,
        labels: &Labels,
        ds: &Dataset,
        indices: &[usize],
        val: &[SceneSample],
    ) -> Result<Trained> {
        let cfg = self.cfg;
        let key = TrainKey {
            pillar: &cfg.pillar,
            train: &cfg.train,
            model_seed: cfg.seeds.model,
            eval_crop: cfg.eval_crop,
            indices,
        };
        let hash = stage_hash("train", Some(&labels.out.record.hash), &key);
        let progress = &self.opts.progress;
        let out = self
            .opts
            .cache
            .get_or_build("train", &hash, |dir| {
                let pairs = load_training_pairs(ds, &labels.out.dir, cfg.teacher, indices)?;
                let (model, epochs) = train_on_pairs(cfg, &pairs, val, progress)?;
                model.save(&dir.join(MODEL_FILE))?;
                write_epoch_log(&dir.join(EPOCH_LOG_FILE), &epochs)?;
                write_json(&dir.join("epochs.json"), &epochs)
            })
            .map_err(|e| e.in_stage("train"))?;
        self.record(&out);
        let model = StudentModel::load(&out.dir.join(MODEL_FILE))?;
        let epochs: Vec<EpochRecord> = read_json(&out.dir.join("epochs.json"))?;
        Ok(Trained { out, model, epochs })
    }

    fn eval<F>(&mut self, parent: &str, method: &str, build: F) -> Result<(StageOutput, EvalRecord)>
    where
        F: FnOnce() -> Result<EvalRecord>,
    {
        let hash = stage_hash("eval", Some(parent), &(config_hash(self.cfg), method));
        let out = self
            .opts
            .cache
            .get_or_build("eval", &hash, |dir| {
                let rec = build()?;
                let row = ReportRow {
                    method: method.to_string(),
                    report: rec.report.clone(),
                    runtime: None,
                };
                write_file(&dir.join(REPORT_FILE), report_csv(&[row]).as_bytes())?;
                write_json(&dir.join("eval.json"), &rec)
            })
            .map_err(|e| e.in_stage("eval"))?;
        self.record(&out);
        let rec: EvalRecord = read_json(&out.dir.join("eval.json"))?;
        Ok((out, rec))
    }
}

fn copy_into(src: &Path, dst_dir: &Path, name: &str) -> Result<()> {
    let dst = dst_dir.join(name);
    std::fs::copy(src, &dst).map_err(|e| Error::io(&dst, e))?;
    Ok(())
}

/// Generates (or reuses) the dataset, labels it, trains and evaluates as the
/// config's arm requires, and writes the report, checkpoint, epoch log and
/// manifest to `<artifacts_root>/<name>/`.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<ExperimentResult> {
    let mut run = Runner::new(cfg, opts)?;
    let (data_out, ds) = run.dataset()?;
    let val = ds.load_split(VAL_SPLIT)?;
    let crop = cfg.eval_half_extent();
    let method = cfg.name.clone();

    let teacher_on_val =
        cfg.arm == Arm::Teacher || (cfg.arm == Arm::Student && cfg.evaluate_teacher);
    let val_labels = if teacher_on_val {
        Some(run.labels(&data_out, &ds, VAL_SPLIT)?)
    } else {
        None
    };
    let teacher_report = match &val_labels {
        Some(l) => Some(evaluate_labels(
            &ds,
            VAL_SPLIT,
            &l.out.dir,
            cfg.teacher,
            &l.indices,
            crop,
        )?),
        None => None,
    };

    let mut model = None;
    let mut epochs = Vec::new();
    let mut label_failures = 0;
    let (eval_out, rec) = match cfg.arm {
        Arm::ZeroFlow => run.eval(&data_out.record.hash, &method, || {
            Ok(EvalRecord {
                report: evaluate_zero_flow(&val, crop)?,
                teacher_report: None,
            })
        })?,
        Arm::Teacher => {
            let l = val_labels.as_ref().expect("labels for teacher arm");
            label_failures = l.failures;
            let report = teacher_report.clone().expect("teacher report");
            run.eval(&l.out.record.hash, &method, || {
                Ok(EvalRecord {
                    report,
                    teacher_report: None,
                })
            })?
        }
        Arm::Student => {
            let labels = run.labels(&data_out, &ds, TRAIN_SPLIT)?;
            label_failures = labels.failures + val_labels.as_ref().map_or(0, |l| l.failures);
            let trained = run.train(&labels, &ds, &labels.indices, &val)?;
            let parent = trained.out.record.hash.clone();
            let m = &trained.model;
            let tr = teacher_report.clone();
            let out = run.eval(&parent, &method, || {
                Ok(EvalRecord {
                    report: evaluate_model(m, &val, crop)?,
                    teacher_report: tr,
                })
            })?;
            let artifacts = opts.artifacts_root.join(&cfg.name);
            std::fs::create_dir_all(&artifacts).map_err(|e| Error::io(&artifacts, e))?;
            copy_into(&trained.out.dir.join(MODEL_FILE), &artifacts, MODEL_FILE)?;
            copy_into(
                &trained.out.dir.join(format!("{MODEL_FILE}.json")),
                &artifacts,
                &format!("{MODEL_FILE}.json"),
            )?;
            copy_into(
                &trained.out.dir.join(EPOCH_LOG_FILE),
                &artifacts,
                EPOCH_LOG_FILE,
            )?;
            epochs = trained.epochs;
            model = Some(trained.model);
            out
        }
    };

    let artifacts = opts.artifacts_root.join(&cfg.name);
    std::fs::create_dir_all(&artifacts).map_err(|e| Error::io(&artifacts, e))?;
    copy_into(&eval_out.dir.join(REPORT_FILE), &artifacts, REPORT_FILE)?;
    let manifest = Manifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config_hash(cfg),
        config: cfg.clone(),
        stages: run.stages,
        label_failures,
    };
    write_json(&artifacts.join(MANIFEST_FILE), &manifest)?;
    Ok(ExperimentResult {
        report: rec.report,
        teacher_report: rec.teacher_report,
        model,
        epochs,
        artifacts,
        manifest,
    })
}

#[derive(Debug, Clone)]
pub struct ScalingResult {
    pub points: Vec<ScalingPoint>,
    pub slope: f64,
    pub csv_path: PathBuf,
}

/// Trains one student per fraction on leading subsets of the labeled
/// training pairs and scores each on the same held-out split. Writes
/// `scaling.csv` to `<artifacts_root>/<name>/`.
pub fn run_scaling(
    cfg: &ExperimentConfig,
    fractions: &[f64],
    opts: &RunOptions,
) -> Result<ScalingResult> {
    if cfg.arm != Arm::Student {
        return Err(Error::InvalidConfig(
            "scaling runs need a student arm".into(),
        ));
    }
    let mut run = Runner::new(cfg, opts)?;
    let (data_out, ds) = run.dataset()?;
    let val = ds.load_split(VAL_SPLIT)?;
    let labels = run.labels(&data_out, &ds, TRAIN_SPLIT)?;
    let crop = cfg.eval_half_extent();
    let all = labels.indices.clone();
    let points = scaling_curve(fractions, all.len(), |k| {
        let trained = run.train(&labels, &ds, &all[..k], &val)?;
        let parent = trained.out.record.hash.clone();
        let m = &trained.model;
        let (_, rec) = run.eval(&parent, &format!("{}_n{k}", cfg.name), || {
            Ok(EvalRecord {
                report: evaluate_model(m, &val, crop)?,
                teacher_report: None,
            })
        })?;
        Ok(rec.report)
    })?;
    let slope = if points.len() >= 2 {
        loglog_slope(&points)?
    } else {
        f64::NAN
    };
    let artifacts = opts.artifacts_root.join(&cfg.name);
    std::fs::create_dir_all(&artifacts).map_err(|e| Error::io(&artifacts, e))?;
    let csv_path = artifacts.join("scaling.csv");
    write_file(&csv_path, scaling_csv(&points).as_bytes())?;
    Ok(ScalingResult {
        points,
        slope,
        csv_path,
    })
}

#[derive(Serialize, PartialEq)]
struct ValSplitKey<'a> {
    scene: &'a SceneConfig,
    val_n: usize,
    seeds: Seeds,
    eval_crop: f64,
}

fn val_split_key(cfg: &ExperimentConfig) -> ValSplitKey<'_> {
    ValSplitKey {
        scene: &cfg.scene,
        val_n: cfg.val_n,
        // Only the dataset seed shapes the held-out split.
        seeds: Seeds {
            teacher: 0,
            model: 0,
            ..cfg.seeds
        },
        eval_crop: cfg.eval_crop,
    }
}

fn bench_arm(
    cfg: &ExperimentConfig,
    result: &ExperimentResult,
    samples: &[SceneSample],
) -> Result<RuntimeStats> {
    let b = cfg.bench.expect("bench configured");
    let repeats = b.repeats;
    match cfg.arm {
        Arm::ZeroFlow => bench_runtime(|s| Ok(FlowField::zeros(s.cloud_t.len())), samples, repeats),
        Arm::Student => {
            let m = result.model.as_ref().expect("student arm has a model");
            bench_runtime(|s| m.forward(&s.cloud_t, &s.cloud_t1), samples, repeats)
        }
        Arm::Teacher => {
            let mut i = 0usize;
            bench_runtime(
                |s| {
                    i += 1;
                    let seed = pair_seed(cfg.seeds.teacher, i);
                    Ok(label_sample(s, cfg.teacher, &cfg.teacher_config, seed)?.flow)
                },
                samples,
                repeats,
            )
        }
    }
}

/// Runs every arm and writes one combined table, sorted by Threeway EPE, to
/// `report_path`. All arms must share the held-out split.
pub fn compare_methods(
    arms: &[ExperimentConfig],
    opts: &RunOptions,
    report_path: &Path,
) -> Result<Vec<ReportRow>> {
    if arms.len() < 2 {
        return Err(Error::InvalidConfig(
            "compare needs at least two configs".into(),
        ));
    }
    let first = val_split_key(&arms[0]);
    for a in &arms[1..] {
        if val_split_key(a) != first {
            return Err(Error::ConfigMismatch(format!(
                "`{}` and `{}` do not share the held-out split",
                arms[0].name, a.name
            )));
        }
    }
    let mut names: Vec<&str> = arms.iter().map(|a| a.name.as_str()).collect();
    names.sort_unstable();
    if names.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidConfig(
            "compare configs need distinct names".into(),
        ));
    }

    let mut rows = Vec::with_capacity(arms.len());
    for cfg in arms {
        let result = run_experiment(cfg, opts)?;
        let runtime = match cfg.bench {
            Some(b) => {
                let ds = Dataset::new(
                    opts.cache
                        .stage_dir("dataset", &result.manifest.stages[0].hash),
                );
                let samples = ds
                    .indices(VAL_SPLIT)?
                    .into_iter()
                    .take(b.samples)
                    .map(|i| ds.load(VAL_SPLIT, i))
                    .collect::<Result<Vec<_>>>()?;
                Some(bench_arm(cfg, &result, &samples)?)
            }
            None => None,
        };
        rows.push(ReportRow {
            method: cfg.name.clone(),
            report: result.report,
            runtime,
        });
    }
    sort_rows(&mut rows);
    if let Some(dir) = report_path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_file(report_path, report_csv(&rows).as_bytes())?;
    Ok(rows)
}
