use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use depthsweep::geometry::Vector3;
use depthsweep::pipeline::parse_config;
use depthsweep::scene::{read_ply, write_ply, PointCloud};

const TINY: &str = "\
seed = 7
W = 64
H = 64
scene_views = 4
spheres = 1
depth_count = 16
feature_channels = 4,4,8,8,8,8,8,8
regularizer_channels = 4
refiner_channels = 8
iterations = 20
prob_threshold = 0.2
min_consistent_views = 2
pixel_threshold = 2
rel_depth_threshold = 0.05
";

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_depthsweep"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn infer_without_checkpoint_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["infer", "--checkpoint", "missing/model.bin"]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    assert!(
        stderr(&out).contains("missing/model.bin"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn indivisible_width_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.txt"), "W = 100\n").unwrap();
    let out = run(dir.path(), &["synth", "-c", "c.txt"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("width"), "{}", stderr(&out));
}

#[test]
fn unknown_key_names_key_and_line() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.txt"), "seed = 1\n\nlamda = 2\n").unwrap();
    let out = run(dir.path(), &["synth", "-c", "c.txt"]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("lamda") && err.contains("c.txt:3"), "{err}");

    let out = run(dir.path(), &["synth", "--no-such-key", "1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("no_such_key"));
}

#[test]
fn missing_config_file_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["synth", "--config", "absent.txt"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("absent.txt"));
}

#[test]
fn bad_command_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["paint"]).status.code(), Some(1));
}

#[test]
fn config_command_prints_a_fixed_point() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        &[
            "config",
            "--lambda=0.5",
            "--d-min",
            "400",
            "--interval",
            "2",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    let cfg = parse_config(&text).unwrap();
    assert_eq!(cfg.lambda, 0.5);
    assert_eq!(cfg.d_min, Some(400.0));
    assert_eq!(cfg.to_text(), text);
}

#[test]
fn eval_of_identical_clouds_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let mut cloud = PointCloud::default();
    for i in 0..50 {
        let t = i as f64;
        cloud.push(
            Vector3::new(t, (t * 0.7).sin() * 10.0, t * t * 0.01),
            [1, 2, 3],
        );
    }
    write_ply(&dir.path().join("a.ply"), &cloud).unwrap();
    let out = run(
        dir.path(),
        &["eval", "--recon_ply", "a.ply", "--gt_ply", "a.ply"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let kv = fs::read_to_string(dir.path().join("output/report.kv")).unwrap();
    let value = |key: &str| -> f64 {
        kv.lines()
            .find_map(|l| l.strip_prefix(key)?.strip_prefix('='))
            .unwrap_or_else(|| panic!("{key} missing from {kv}"))
            .parse()
            .unwrap()
    };
    assert_eq!(value("overall"), 0.0);
    assert_eq!(value("f_score@1.0"), 100.0);
}

#[test]
fn pipeline_is_reproducible_and_stages_reload() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        fs::write(d.path().join("c.txt"), TINY).unwrap();
        let out = run(d.path(), &["synth", "-c", "c.txt"]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        let out = run(d.path(), &["pipeline", "-c", "c.txt"]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    }
    for name in [
        "fused.ply",
        "model.bin",
        "depths/00000000.pfm",
        "report.kv",
        "loss_history.txt",
    ] {
        let a = fs::read(dirs[0].path().join("output").join(name)).unwrap();
        let b = fs::read(dirs[1].path().join("output").join(name)).unwrap();
        assert!(a == b, "{name} differs between runs");
    }
    let fused = read_ply(&dirs[0].path().join("output/fused.ply")).unwrap();
    assert!(!fused.is_empty());

    // each stage reruns from the artifacts left on disk
    let d = dirs[0].path();
    let before = fs::read(d.join("output/fused.ply")).unwrap();
    for stage in ["infer", "filter", "fuse", "eval"] {
        let out = run(d, &[stage, "-c", "c.txt"]);
        assert_eq!(out.status.code(), Some(0), "{stage}: {}", stderr(&out));
    }
    assert_eq!(fs::read(d.join("output/fused.ply")).unwrap(), before);
    assert!(d.join("output/filtered/00000003.pfm").exists());
}
