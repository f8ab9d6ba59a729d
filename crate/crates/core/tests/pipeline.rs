use std::fs;

use hsi_core::cvae::{ModelConfig, TrainOptions};
use hsi_core::geometry::UpAxis;
use hsi_core::interaction::InteractionDataset;
use hsi_core::placement::{PlaceSettings, PlacementOptions};
use hsi_core::pipeline::*;

fn tiny_train() -> TrainConfig {
    TrainConfig {
        model: ModelConfig {
            latent_dim: 4,
            conv_width: 4,
            fc_width: 8,
            decoder_convs: 1,
            ..Default::default()
        },
        options: TrainOptions {
            epochs: 1,
            batch_size: 4,
            micro_batch: 4,
            lr: 1e-3,
            ..Default::default()
        },
    }
}

fn quick_place() -> PlaceSettings {
    PlaceSettings {
        n_samples: 2,
        n_seeds: 8,
        options: PlacementOptions {
            iterations: 20,
            ..Default::default()
        },
        ..Default::default()
    }
}

#[test]
fn files_flow_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let summary = gen_data(&GenDataConfig { frames: 8, scenes: 1, seed: 5 }, out).unwrap();
    assert_eq!(summary.frames + summary.skipped.len(), 8);
    assert_eq!(summary.vertex_count, 640);
    assert!(out.join(MANIFEST_FILE).exists());
    let data = InteractionDataset::load(&out.join(DATASET_FILE)).unwrap();
    assert_eq!(data.frames.len(), summary.frames);

    let body_path = out.join("bodies/stand.obj");
    assert!(skeleton_path(&body_path).exists());
    let body = load_body(&body_path, UpAxis::Z).unwrap();
    assert!(body.skeleton.is_some());
    assert_eq!(body.vertex_count(), 2562);

    let scene_path = out.join("scenes/scene_000.ply");
    let sdf_path = out.join("scene_000.sdf");
    let s = build_sdf_file(&scene_path, 48, &sdf_path, UpAxis::Z).unwrap();
    assert!(s.min_value < 0.0 && s.max_value > 0.0);

    let feats = extract_features_file(&body_path, &scene_path, 0.05, UpAxis::Z).unwrap();
    assert_eq!(feats.contact.len(), 2562);
    assert!(feats.contact_count > 0, "standing body touches the floor");

    let ckpt = out.join("model.ckpt");
    let meta = train_file(&out.join(DATASET_FILE), &tiny_train(), 5, &ckpt, |_| {}).unwrap();
    assert!(meta.steps > 0);

    let samples = sample_file(&ckpt, &body_path, 3, 1, UpAxis::Z).unwrap();
    assert_eq!(samples.maps.len(), 3);
    assert_eq!(samples.maps[0].contact.len(), 640);

    let pdir = out.join("placements");
    let report = place_file(&ckpt, &body_path, &scene_path, &sdf_path, &quick_place(), 9, &pdir.join("p0.json"), UpAxis::Z).unwrap();
    assert_eq!(report.alternatives.len(), 1);
    assert!(pdir.join("p0.obj").exists());
    let again: PlacementReport = read_json(&pdir.join("p0.json")).unwrap();
    assert_eq!(again, report);

    let eval = eval_dir(&pdir, &sdf_path, 2, 0).unwrap();
    assert_eq!(eval.placements, vec!["p0.json".to_string()]);
    assert!(eval.entropy.unwrap() <= 2f64.ln() + 1e-12);
    let eval20 = eval_dir(&pdir, &sdf_path, 20, 0).unwrap();
    assert!(eval20.entropy.is_none());
}

#[test]
fn generated_data_is_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = GenDataConfig { frames: 6, scenes: 2, seed: 42 };
    gen_data(&cfg, a.path()).unwrap();
    gen_data(&cfg, b.path()).unwrap();
    for f in [DATASET_FILE, MANIFEST_FILE, "scenes/scene_001.ply", "bodies/sit.obj", "bodies/sit.skeleton.json"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn y_up_files_load_into_z_up() {
    let dir = tempfile::tempdir().unwrap();
    let body = hsi_core::synthgen::generate_body(humanoid(), "stand", None).unwrap();
    let yup = UpAxis::Y.to_file().apply_mesh(&body.mesh);
    let path = dir.path().join("b.obj");
    hsi_core::geometry::save_obj(&yup, &path).unwrap();
    let loaded = load_body(&path, UpAxis::Y).unwrap();
    let (lo, hi) = loaded.mesh.bounds().unwrap();
    assert!(lo.z.abs() < 1e-9 && hi.z > 1.6);
}

#[test]
fn mismatched_skeleton_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let body = hsi_core::synthgen::generate_body(humanoid(), "sit", None).unwrap();
    let path = dir.path().join("b.obj");
    save_body(&body, &path).unwrap();
    let other = hsi_core::synthgen::generate_body(humanoid(), "stand", None).unwrap();
    hsi_core::geometry::save_obj(&other.mesh, &path).unwrap();
    assert!(matches!(load_body(&path, UpAxis::Z), Err(PipelineError::Invalid(_))));
    assert!(gen_data(&GenDataConfig { frames: 0, scenes: 0, seed: 0 }, dir.path()).is_err());
}
