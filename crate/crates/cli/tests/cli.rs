use std::path::Path;
use std::process::{Command, Output};

use hsi_core::cvae::{ModelConfig, TrainOptions};
use hsi_core::geometry::{SceneMesh, UpAxis};
use hsi_core::pipeline::{self, GenDataConfig, TrainConfig};
use hsi_core::placement::{PlaceSettings, PlacementOptions};

fn hsi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hsi")).args(args).env("HSI_LOG", "warn").output().unwrap()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

#[test]
fn missing_model_is_a_usage_error() {
    let out = hsi(&["place", "--body", "b.obj", "--scene", "s.ply", "--sdf", "s.sdf", "--out", "p.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--model"));
}

#[test]
fn help_and_version_succeed() {
    assert_eq!(hsi(&["--help"]).status.code(), Some(0));
    assert_eq!(hsi(&["--version"]).status.code(), Some(0));
    assert_eq!(hsi(&["eval", "--help"]).status.code(), Some(0));
}

#[test]
fn unknown_flags_and_values_are_rejected() {
    assert_eq!(hsi(&["gen-data", "--frames", "2", "--out", "x", "--bogus"]).status.code(), Some(1));
    assert_eq!(hsi(&["--up-axis", "x", "gen-data", "--frames", "2", "--out", "x"]).status.code(), Some(1));
    assert_eq!(hsi(&["place", "--mode", "sideways"]).status.code(), Some(1));
    assert_eq!(hsi(&[]).status.code(), Some(1));
}

#[test]
fn runtime_failures_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = hsi(&["build-sdf", "--scene", &s(&dir.path().join("missing.ply")), "--out", &s(&dir.path().join("x.sdf"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.ply"));
    let out = hsi(&["gen-data", "--frames", "0", "--out", &s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eval_json_has_report_keys() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    pipeline::gen_data(&GenDataConfig { frames: 8, scenes: 1, seed: 3 }, d).unwrap();
    let scene = d.join("scenes/scene_000.ply");
    let sdf = d.join("scene.sdf");
    pipeline::build_sdf_file(&scene, 48, &sdf, UpAxis::Z).unwrap();
    let cfg = TrainConfig {
        model: ModelConfig { latent_dim: 4, conv_width: 4, fc_width: 8, decoder_convs: 1, ..Default::default() },
        options: TrainOptions { epochs: 1, batch_size: 4, micro_batch: 4, ..Default::default() },
    };
    let ckpt = d.join("model.ckpt");
    pipeline::train_file(&d.join(pipeline::DATASET_FILE), &cfg, 3, &ckpt, |_| {}).unwrap();
    let settings = PlaceSettings {
        n_samples: 1,
        n_seeds: 4,
        options: PlacementOptions { iterations: 5, ..Default::default() },
        ..Default::default()
    };
    for pose in ["stand", "sit"] {
        let body = d.join(format!("bodies/{pose}.obj"));
        pipeline::place_file(&ckpt, &body, &scene, &sdf, &settings, 1, &d.join(format!("placements/{pose}.json")), UpAxis::Z).unwrap();
    }

    let report = d.join("eval.json");
    let out = hsi(&["--json", "eval", "--placements", &s(&d.join("placements")), "--sdf", &s(&sdf), "--k", "2", "--out", &s(&report)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    for key in ["non_collision_mean", "contact_mean", "entropy", "cluster_size"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert!(v["entropy"].as_f64().unwrap() <= 2f64.ln() + 1e-12);
    let nc = v["non_collision_mean"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&nc));
    let saved: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(saved, v);

    // k larger than the sample count: diversity is reported as null
    let out = hsi(&["--json", "eval", "--placements", &s(&d.join("placements")), "--sdf", &s(&sdf), "--out", &s(&report)]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["entropy"].is_null() && v["cluster_size"].is_null());

    let out = hsi(&[
        "--json", "--seed", "5", "sample", "--model", &s(&ckpt), "--body", &s(&d.join("bodies/lie.obj")), "--n", "3", "--out",
        &s(&d.join("maps.json")),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["maps"], 3);
}

#[test]
fn repeated_gen_data_is_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [a.path(), b.path()] {
        let out = hsi(&["--seed", "9", "--threads", "1", "--json", "gen-data", "--frames", "4", "--scenes", "1", "--out", &s(d)]);
        assert_eq!(out.status.code(), Some(0));
        let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(v["frames"].as_u64().unwrap() + v["skipped"].as_array().unwrap().len() as u64, 4);
    }
    for f in [pipeline::DATASET_FILE, pipeline::MANIFEST_FILE, "scenes/scene_000.ply"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn y_up_scene_builds_the_same_field() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let scene = hsi_core::synthgen::generate_scene(4);
    let zpath = d.join("z.ply");
    let ypath = d.join("y.ply");
    pipeline::save_scene(&scene, &zpath).unwrap();
    let yup = SceneMesh::new(UpAxis::Y.to_file().apply_mesh(&scene.mesh), scene.labels.clone(), scene.class_names.clone()).unwrap();
    pipeline::save_scene(&yup, &ypath).unwrap();
    let oz = hsi(&["build-sdf", "--scene", &s(&zpath), "--res", "32", "--out", &s(&d.join("z.sdf"))]);
    let oy = hsi(&["--up-axis", "y", "build-sdf", "--scene", &s(&ypath), "--res", "32", "--out", &s(&d.join("y.sdf"))]);
    assert_eq!(oz.status.code(), Some(0));
    assert_eq!(oy.status.code(), Some(0));
    let a = hsi_core::sdf::SdfGrid::load(&d.join("z.sdf")).unwrap();
    let b = hsi_core::sdf::SdfGrid::load(&d.join("y.sdf")).unwrap();
    assert_eq!(a.dims, b.dims);
    let worst = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).fold(0f32, f32::max);
    assert!(worst < 1e-4, "{worst}");
}
