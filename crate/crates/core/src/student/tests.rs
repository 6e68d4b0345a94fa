use super::*;
use crate::scene::{generate_scene, PointCloud, SceneConfig, Vec3};

fn tiny_config() -> PillarConfig {
    PillarConfig {
        pillar_size: 0.5,
        area_half_extent: 4.0,
        embed_dim: 4,
        unet_levels: 3,
        decoder_hidden: 8,
    }
}

fn tiny_scene(seed: u64) -> SceneConfig {
    SceneConfig {
        area_half_extent: 4.0,
        n_background_points: 60,
        n_static_structures: 2,
        n_objects: 1,
        object_points: 40,
        object_size_range: crate::scene::SizeRange {
            length: crate::scene::Range { min: 1.0, max: 1.5 },
            width: crate::scene::Range { min: 0.8, max: 1.0 },
            height: crate::scene::Range { min: 0.8, max: 1.2 },
        },
        seed,
        ..SceneConfig::default()
    }
}

#[test]
fn pillarize_is_permutation_invariant() {
    let model = StudentModel::new(tiny_config(), 1).unwrap();
    let sample = generate_scene(&tiny_scene(2)).unwrap();
    let a = model.pillarize(&sample.cloud_t).unwrap();
    let mut pts = sample.cloud_t.points.clone();
    pts.reverse();
    let b = model.pillarize(&PointCloud::new(pts, 0)).unwrap();
    assert_eq!(a.data, b.data);
}

#[test]
fn empty_cells_are_zero() {
    let model = StudentModel::new(tiny_config(), 1).unwrap();
    let cloud = PointCloud::new(vec![Vec3::new(0.1, 0.1, 0.5)], 0);
    let img = model.pillarize(&cloud).unwrap();
    assert_eq!(img.grid, 16);
    for r in 0..16 {
        for c in 0..16 {
            if (r, c) != (8, 8) {
                assert!(img.is_empty_cell(r, c));
                assert!(img.feature(r, c).iter().all(|&x| x == 0.0));
            }
        }
    }
}

#[test]
fn pillarize_translates_with_whole_pillar_shifts() {
    let cfg = tiny_config();
    let model = StudentModel::new(cfg.clone(), 3).unwrap();
    let pts = vec![
        Vec3::new(-1.2, 0.3, 0.2),
        Vec3::new(0.1, -2.0, 1.0),
        Vec3::new(0.2, -2.1, 0.4),
    ];
    let shifted: Vec<Vec3> = pts
        .iter()
        .map(|&p| p + Vec3::new(2.0 * cfg.pillar_size, 0.0, 0.0))
        .collect();
    let a = model.pillarize(&PointCloud::new(pts, 0)).unwrap();
    let b = model.pillarize(&PointCloud::new(shifted, 0)).unwrap();
    let g = a.grid;
    for r in 0..g {
        for c in 0..g - 2 {
            let (fa, fb) = (a.feature(r, c), b.feature(r, c + 2));
            for (x, y) in fa.iter().zip(fb) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn forward_is_finite_shaped_and_deterministic() {
    let model = StudentModel::new(tiny_config(), 4).unwrap();
    let s = generate_scene(&tiny_scene(5)).unwrap();
    let a = student_forward(&model, &s.cloud_t, &s.cloud_t1).unwrap();
    let b = student_forward(&model, &s.cloud_t, &s.cloud_t1).unwrap();
    assert_eq!(a.len(), s.cloud_t.len());
    assert!(a.vectors.iter().all(|v| v.is_finite()));
    assert_eq!(a, b);
    let outside = PointCloud::new(vec![Vec3::new(9.0, 0.0, 0.0)], 0);
    assert!(model.forward(&outside, &s.cloud_t1).is_err());
}

#[test]
fn single_level_model_runs() {
    let cfg = PillarConfig {
        unet_levels: 1,
        ..tiny_config()
    };
    let model = StudentModel::new(cfg, 0).unwrap();
    let s = generate_scene(&tiny_scene(6)).unwrap();
    assert_eq!(
        model.forward(&s.cloud_t, &s.cloud_t1).unwrap().len(),
        s.cloud_t.len()
    );
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.zfck");
    let model = StudentModel::new(tiny_config(), 7).unwrap();
    model.save(&path).unwrap();
    assert!(sidecar_path(&path).exists());
    let back = StudentModel::load(&path).unwrap();
    assert_eq!(back, model);
}

fn pairs(n: u64) -> Vec<TrainPair> {
    (0..n)
        .map(|i| {
            let sample = generate_scene(&tiny_scene(100 + i)).unwrap();
            TrainPair {
                label: sample.gt_flow.clone(),
                sample,
            }
        })
        .collect()
}

#[test]
fn zero_epochs_leave_model_unchanged() {
    let mut model = StudentModel::new(tiny_config(), 8).unwrap();
    let before = model.clone();
    let cfg = TrainConfig {
        epochs: 0,
        ..TrainConfig::default()
    };
    let log = train_student(
        &mut model,
        &pairs(2),
        Validation::default(),
        &cfg,
        &mut |_| {},
    )
    .unwrap();
    assert!(log.is_empty());
    assert_eq!(model, before);
}

#[test]
fn training_reduces_loss_and_is_deterministic() {
    let data = pairs(6);
    let val: Vec<_> = pairs(2).into_iter().map(|p| p.sample).collect();
    let cfg = TrainConfig {
        lr: 3e-3,
        batch_size: 2,
        epochs: 8,
        scheme: WeightScheme::Uniform,
        seed: 9,
    };
    let mut a = StudentModel::new(tiny_config(), 10).unwrap();
    let mut b = a.clone();
    let mut seen = 0;
    let log = train_student(
        &mut a,
        &data,
        Validation {
            samples: &val,
            crop_half_extent: Some(3.0),
        },
        &cfg,
        &mut |_| seen += 1,
    )
    .unwrap();
    assert_eq!(seen, 8);
    assert!(
        log.last().unwrap().train_loss < log[0].train_loss,
        "{log:?}"
    );
    assert!(log.iter().all(|r| r.threeway.is_some()));
    train_student(
        &mut b,
        &data,
        Validation {
            samples: &val,
            crop_half_extent: Some(3.0),
        },
        &cfg,
        &mut |_| {},
    )
    .unwrap();
    assert_eq!(a, b);
}

#[test]
fn epoch_log_format() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.csv");
    let rec = EpochRecord {
        epoch: 1,
        threeway: None,
        train_loss: 0.5,
    };
    write_epoch_log(&path, &[rec]).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text, format!("{EPOCH_LOG_HEADER}\n1,,,,,0.5\n"));
}
