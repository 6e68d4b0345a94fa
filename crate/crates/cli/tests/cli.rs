use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use flowdistill::pipeline::{write_config, ExperimentConfig};
use sha2::{Digest, Sha256};

fn bin(cache: &Path) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_flowdistill"));
    cmd.env("FLOWDISTILL_CACHE_DIR", cache);
    cmd
}

fn run(cache: &Path, args: &[&str]) -> Output {
    bin(cache).args(args).output().expect("spawn flowdistill")
}

fn ok(cache: &Path, args: &[&str]) -> Output {
    let out = run(cache, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn tiny_config(half_extent: f64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.name = "tiny".into();
    cfg.train_n = 3;
    cfg.val_n = 2;
    cfg.pillar.area_half_extent = half_extent;
    cfg.pillar.pillar_size = 0.8;
    cfg.pillar.embed_dim = 4;
    cfg.pillar.unet_levels = 2;
    cfg.pillar.decoder_hidden = 8;
    cfg.scene.area_half_extent = half_extent;
    cfg.scene.n_background_points = 60;
    cfg.scene.n_static_structures = 3;
    cfg.scene.n_objects = 1;
    cfg.scene.object_points = 30;
    cfg.train.epochs = 1;
    cfg.train.batch_size = 2;
    cfg.eval_crop = half_extent;
    cfg
}

fn write_tiny(dir: &Path, name: &str, half_extent: f64) -> PathBuf {
    let path = dir.join(name);
    write_config(&path, &tiny_config(half_extent)).unwrap();
    path
}

fn file_digests(dir: &Path) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "zffl"))
        .map(|p| {
            let bytes = std::fs::read(&p).unwrap();
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                hex::encode(Sha256::digest(bytes)),
            )
        })
        .collect();
    out.sort();
    out
}

#[test]
fn smoke_generate_label_train_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let cfg = write_tiny(root, "tiny.json", 6.4);
    let data = root.join("data");
    let ckpt = root.join("model.zfck");
    let report = root.join("report.csv");

    ok(
        root,
        &[
            "--seed",
            "3",
            "generate",
            "--config",
            p(&cfg),
            "--out",
            p(&data),
        ],
    );
    let out = ok(
        root,
        &["pseudolabel", "--dataset", p(&data), "--teacher", "gt"],
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("PROG "));
    assert!(out.stdout.is_empty());
    let labels = data.join("labels").join("gt");
    ok(
        root,
        &[
            "train",
            "--dataset",
            p(&data),
            "--labels",
            p(&labels),
            "--config",
            p(&cfg),
            "--out",
            p(&ckpt),
        ],
    );
    assert!(ckpt.exists());
    assert!(root.join("model.zfck.json").exists());
    assert!(root.join("model.zfck.epochs.csv").exists());
    ok(
        root,
        &[
            "eval",
            "--model",
            p(&ckpt),
            "--dataset",
            p(&data),
            "--crop",
            "8",
            "--report",
            p(&report),
        ],
    );

    let text = std::fs::read_to_string(&report).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2, "{text}");
    assert!(lines[1].starts_with("student,"));

    ok(
        root,
        &[
            "bench",
            "--model",
            p(&ckpt),
            "--dataset",
            p(&data),
            "--repeats",
            "3",
        ],
    );

    let spec = root.join("spec.json");
    std::fs::write(
        &spec,
        r#"{"version":1,"extent":4.0,"bins":20,"scale":"log10","rotated":true,"speed_threshold":0.5}"#,
    )
    .unwrap();
    let maps = root.join("maps");
    ok(
        root,
        &[
            "heatmap",
            "--model",
            p(&ckpt),
            "--dataset",
            p(&data),
            "--spec",
            p(&spec),
            "--out",
            p(&maps),
        ],
    );
    assert!(std::fs::read_dir(&maps).unwrap().count() >= 2);
}

#[test]
fn pseudolabel_jobs_do_not_change_labels() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let cfg = write_tiny(root, "tiny.json", 6.4);
    let a = root.join("a");
    let b = root.join("b");
    ok(root, &["generate", "--config", p(&cfg), "--out", p(&a)]);
    ok(root, &["generate", "--config", p(&cfg), "--out", p(&b)]);
    ok(
        root,
        &[
            "pseudolabel",
            "--dataset",
            p(&a),
            "--teacher",
            "nn",
            "--jobs",
            "1",
        ],
    );
    ok(
        root,
        &[
            "pseudolabel",
            "--dataset",
            p(&b),
            "--teacher",
            "nn",
            "--jobs",
            "8",
        ],
    );

    let da = file_digests(&a.join("labels").join("nn"));
    let db = file_digests(&b.join("labels").join("nn"));
    assert_eq!(da.len(), 3);
    assert_eq!(da, db);
}

#[test]
fn eval_area_mismatch_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let small = write_tiny(root, "small.json", 6.4);
    let large = write_tiny(root, "large.json", 9.6);
    let data_small = root.join("small");
    let data_large = root.join("large");
    let ckpt = root.join("model.zfck");
    ok(
        root,
        &["generate", "--config", p(&small), "--out", p(&data_small)],
    );
    ok(
        root,
        &["generate", "--config", p(&large), "--out", p(&data_large)],
    );
    ok(
        root,
        &[
            "pseudolabel",
            "--dataset",
            p(&data_small),
            "--teacher",
            "gt",
        ],
    );
    let labels = data_small.join("labels").join("gt");
    ok(
        root,
        &[
            "train",
            "--dataset",
            p(&data_small),
            "--labels",
            p(&labels),
            "--config",
            p(&small),
            "--out",
            p(&ckpt),
        ],
    );

    let report = root.join("report.csv");
    let out = run(
        root,
        &[
            "eval",
            "--model",
            p(&ckpt),
            "--dataset",
            p(&data_large),
            "--crop",
            "8",
            "--report",
            p(&report),
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("config mismatch"));
    assert!(!report.exists());
}

#[test]
fn runtime_errors_name_the_input() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let missing = root.join("nope.json");
    let out = run(
        root,
        &[
            "generate",
            "--config",
            p(&missing),
            "--out",
            p(&root.join("d")),
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.json"));

    let bad = root.join("bad.json");
    std::fs::write(&bad, r#"{"version":1,"nmae":"typo"}"#).unwrap();
    let out = run(
        root,
        &["generate", "--config", p(&bad), "--out", p(&root.join("d"))],
    );
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.json") && err.contains("nmae"), "{err}");
}

#[test]
fn usage_errors_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(tmp.path(), &["generate", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--bogus"));

    let out = run(
        tmp.path(),
        &["pseudolabel", "--dataset", "x", "--teacher", "oracle"],
    );
    assert_eq!(out.status.code(), Some(1));

    let out = run(tmp.path(), &[]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn help_lists_every_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(tmp.path(), &["--help"]);
    let top = String::from_utf8_lossy(&out.stdout).into_owned();
    for sub in [
        "generate",
        "pseudolabel",
        "train",
        "eval",
        "heatmap",
        "scaling",
        "compare",
        "bench",
        "--seed",
    ] {
        assert!(top.contains(sub), "missing {sub}");
    }
    let expected: &[(&str, &[&str])] = &[
        ("generate", &["--config", "--out"]),
        ("pseudolabel", &["--dataset", "--teacher", "--jobs"]),
        ("train", &["--dataset", "--labels", "--config", "--out"]),
        (
            "eval",
            &["--model", "--dataset", "--crop <METERS>", "--report"],
        ),
        ("heatmap", &["--model", "--dataset", "--spec", "--out"]),
        ("scaling", &["--config", "--fractions"]),
        ("compare", &["--configs"]),
        ("bench", &["--model", "--dataset", "--repeats"]),
    ];
    for (sub, flags) in expected {
        let out = ok(tmp.path(), &[sub, "--help"]);
        let text = String::from_utf8_lossy(&out.stdout).into_owned();
        for flag in *flags {
            assert!(text.contains(flag), "{sub} help lacks {flag}:\n{text}");
        }
    }
}
