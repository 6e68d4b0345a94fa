use std::path::{Path, PathBuf};

use flowdistill::eval::{bench_runtime, write_report_csv, Heatmap, HeatmapSpec, ReportRow};
use flowdistill::pipeline::{
    self, compare_methods, default_cache_dir, default_labels_dir, read_config, read_experiment,
    Progress, RunOptions, StageCache, TRAIN_SPLIT, VAL_SPLIT,
};
use flowdistill::scene::Dataset;
use flowdistill::student::{write_epoch_log, StudentModel};
use flowdistill::teacher::TeacherConfig;
use flowdistill::{Error, Result};

use crate::Command;

fn progress() -> Progress {
    Progress::new(|line| eprintln!("{line}"))
}

fn run_options(jobs: usize) -> RunOptions {
    let root = default_cache_dir();
    RunOptions {
        cache: StageCache::new(&root),
        artifacts_root: root.join("artifacts"),
        jobs,
        progress: progress(),
    }
}

fn require_dir(path: &Path, what: &str) -> Result<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "{what} directory {} does not exist",
            path.display()
        )))
    }
}

fn experiment(path: &Path, seed: Option<u64>) -> Result<pipeline::ExperimentConfig> {
    let cfg = read_experiment(path)?;
    Ok(match seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn load_model(path: &Path) -> Result<StudentModel> {
    if !path.exists() {
        return Err(Error::InvalidConfig(format!(
            "checkpoint {} does not exist",
            path.display()
        )));
    }
    StudentModel::load(path)
}

fn val_samples(model: &StudentModel, dataset: &Path) -> Result<Vec<flowdistill::SceneSample>> {
    require_dir(dataset, "dataset")?;
    let ds = Dataset::new(dataset);
    let samples = pipeline::load_split_for(model.config(), &ds, VAL_SPLIT)?;
    if samples.is_empty() {
        return Err(Error::Empty("val split"));
    }
    Ok(samples)
}

pub fn run(command: Command, seed: Option<u64>) -> Result<()> {
    match command {
        Command::Generate { config, out } => {
            let cfg = experiment(&config, seed)?;
            pipeline::generate_dataset(&cfg, &out, &progress())?;
            log::info!(
                "wrote {} train and {} val pairs to {}",
                cfg.train_n,
                cfg.val_n,
                out.display()
            );
        }
        Command::Pseudolabel {
            dataset,
            teacher,
            jobs,
        } => {
            require_dir(&dataset, "dataset")?;
            let ds = Dataset::new(&dataset);
            let out = default_labels_dir(&dataset, teacher);
            let m = pipeline::label_split(
                &ds,
                TRAIN_SPLIT,
                &out,
                teacher,
                &TeacherConfig::default(),
                seed.unwrap_or(0),
                jobs,
                &progress(),
            )?;
            log::info!(
                "labeled {} pairs ({} failed) into {}",
                m.labeled.len(),
                m.failures.len(),
                out.display()
            );
        }
        Command::Train {
            dataset,
            labels,
            config,
            out,
        } => {
            let cfg = experiment(&config, seed)?;
            require_dir(&dataset, "dataset")?;
            require_dir(&labels, "labels")?;
            let ds = Dataset::new(&dataset);
            let (indices, kind) = pipeline::labeled_indices(&ds, TRAIN_SPLIT, &labels)?;
            let pairs = pipeline::load_training_pairs(&ds, &labels, kind, &indices)?;
            let (_, scene) = ds.load_with_config(TRAIN_SPLIT, indices[0])?;
            pipeline::check_model_matches(&cfg.pillar, &scene)?;
            let val = if ds.split_dir(VAL_SPLIT).is_dir() {
                pipeline::load_split_for(&cfg.pillar, &ds, VAL_SPLIT)?
            } else {
                Vec::new()
            };
            let (model, epochs) = pipeline::train_on_pairs(&cfg, &pairs, &val, &progress())?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)
                    .map_err(|e| Error::InvalidConfig(format!("{}: {e}", dir.display())))?;
            }
            model.save(&out)?;
            let log_path = with_suffix(&out, ".epochs.csv");
            write_epoch_log(&log_path, &epochs)?;
            log::info!("wrote {} and {}", out.display(), log_path.display());
        }
        Command::Eval {
            model,
            dataset,
            crop,
            report,
        } => {
            if !(crop > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "--crop must be positive, got {crop}"
                )));
            }
            let m = load_model(&model)?;
            let samples = val_samples(&m, &dataset)?;
            let r = pipeline::evaluate_model(&m, &samples, crop / 2.0)?;
            let row = ReportRow {
                method: "student".into(),
                report: r,
                runtime: None,
            };
            write_report_csv(&report, &[row])?;
            log::info!("wrote {}", report.display());
        }
        Command::Heatmap {
            model,
            dataset,
            spec,
            out,
        } => {
            let spec: HeatmapSpec = read_config(&spec)?;
            let m = load_model(&model)?;
            let samples = val_samples(&m, &dataset)?;
            let mut h = Heatmap::new(spec)?;
            for s in &samples {
                h.add(
                    &m.forward(&s.cloud_t, &s.cloud_t1)?,
                    &s.gt_flow,
                    s.dt_seconds,
                )?;
            }
            if h.is_empty() {
                log::warn!("no moving points in the val split; heatmap is empty");
            }
            let (pgm, csv) = h.write(&out, "student")?;
            log::info!(
                "wrote {} and {} ({} in extent, {} outside)",
                pgm.display(),
                csv.display(),
                h.in_extent(),
                h.out_of_extent
            );
        }
        Command::Scaling { config, fractions } => {
            let cfg = experiment(&config, seed)?;
            let r = pipeline::run_scaling(&cfg, &fractions, &run_options(1))?;
            log::info!(
                "wrote {} (log-log slope {:.4})",
                r.csv_path.display(),
                r.slope
            );
        }
        Command::Compare { configs } => {
            require_dir(&configs, "configs")?;
            let mut paths: Vec<PathBuf> = std::fs::read_dir(&configs)
                .map_err(|e| Error::InvalidConfig(format!("{}: {e}", configs.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "json"))
                .collect();
            paths.sort();
            let arms = paths
                .iter()
                .map(|p| experiment(p, seed))
                .collect::<Result<Vec<_>>>()?;
            let opts = run_options(1);
            let report = opts.artifacts_root.join("compare").join("report.csv");
            let rows = compare_methods(&arms, &opts, &report)?;
            log::info!("wrote {} ({} methods)", report.display(), rows.len());
        }
        Command::Bench {
            model,
            dataset,
            repeats,
        } => {
            let m = load_model(&model)?;
            let samples = val_samples(&m, &dataset)?;
            let r = bench_runtime(|s| m.forward(&s.cloud_t, &s.cloud_t1), &samples, repeats)?;
            log::info!(
                "student inference: {:.3} ms mean, {:.3} ms std over {} timed runs",
                r.mean_ms,
                r.std_ms,
                r.timed_runs
            );
        }
    }
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}
