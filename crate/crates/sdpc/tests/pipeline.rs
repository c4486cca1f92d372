//! End-to-end command plumbing at toy scale: caches, checkpoints, CSV
//! determinism and the on-disk formats.

mod common;

use sdpc::checkpoint::TensorContainer;
use sdpc::cli::{commands, RunConfig};
use sdpc::data::{stl10, synthetic};
use std::path::{Path, PathBuf};

fn workdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("sdpc-pipeline-{tag}"));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

/// Small but full configuration on synthetic contours in STL-10 binary
/// format: 3x96x96 images, a 2-layer net shrunk to toy atom counts.
fn toy_config(root: &Path, n_train: usize, n_test: usize) -> RunConfig {
    let images = synthetic::contour_images(n_train + n_test, 96, 96, 3, 11);
    let data_path = root.join("data.bin");
    stl10::save_stl10(&data_path, &images).unwrap();

    let mut cfg = RunConfig::default();
    cfg.out_dir = root.join("out").display().to_string();
    cfg.seed = 3;
    cfg.data_format = "stl10".into();
    cfg.data_train_path = data_path.display().to_string();
    cfg.data_train_count = n_train;
    cfg.data_test_count = n_test;
    cfg.set("net.l1.features", "6").unwrap();
    cfg.set("net.l2.features", "8").unwrap();
    cfg.epochs = 2;
    cfg.eta_l = vec![0.01, 0.02];
    cfg.set("train.step_refresh", "batch").unwrap();
    cfg.batch = 4;
    cfg.max_iters = 120;
    cfg.k_fb_grid = vec![0.0, 1.0];
    cfg.sigma_grid = vec![0.0, 5.0];
    cfg.test_subset = 6;
    cfg.gabor_r2 = 0.0;
    cfg
}

#[test]
fn preprocess_train_and_experiments_run_end_to_end() {
    let root = workdir("full");
    let cfg = toy_config(&root, 12, 6);

    commands::cmd_preprocess(&cfg).unwrap();
    let cache = cfg.cache_dir();
    assert!(cache.join("train.tensors").exists());
    assert!(cache.join("test.tensors").exists());
    assert!(cache.join("whitening.tensors").exists());
    // split manifests never share an id
    let train_ids = sdpc::data::read_manifest(&cache.join("train_manifest.txt")).unwrap();
    let test_ids = sdpc::data::read_manifest(&cache.join("test_manifest.txt")).unwrap();
    assert_eq!(train_ids.len(), 12);
    assert_eq!(test_ids.len(), 6);
    for id in &test_ids {
        assert!(!train_ids.contains(id), "id {id} leaked across the split");
    }
    assert!(root.join("out/preprocess/manifest.txt").exists());
    assert!(root.join("out/preprocess/config.txt").exists());

    // cache reuse: second run must not rewrite the tensors
    let mtime = |p: &Path| std::fs::metadata(p).unwrap().modified().unwrap();
    let before = mtime(&cache.join("train.tensors"));
    commands::cmd_preprocess(&cfg).unwrap();
    assert_eq!(before, mtime(&cache.join("train.tensors")), "cache was rebuilt");

    let ckpt = commands::cmd_train(&cfg).unwrap();
    assert!(ckpt.exists());
    let losses = std::fs::read_to_string(root.join("out/train/losses.csv")).unwrap();
    assert!(losses.starts_with("epoch,layer,reconstruction_loss,sparsity_loss,feedback_loss"));
    // one row per epoch per layer
    assert_eq!(losses.lines().count(), 1 + 2 * 2);

    commands::cmd_denoise(&cfg, &ckpt).unwrap();
    let stats = commands::read_stats_csv(&root.join("out/denoise/stats.csv")).unwrap();
    assert!(stats.iter().any(|r| r.metric == "ssim_baseline"));
    assert!(stats
        .iter()
        .any(|r| r.metric == "ssim_l1" && r.k_fb == Some(1.0) && r.sigma == Some(5.0)));
    assert!(root.join("out/denoise/reconstructions.png").exists());

    commands::cmd_sparsity(&cfg, &ckpt).unwrap();
    let stats = commands::read_stats_csv(&root.join("out/sparsity/stats.csv")).unwrap();
    let fraction_rows: Vec<_> = stats.iter().filter(|r| r.metric == "active_fraction").collect();
    assert_eq!(fraction_rows.len(), 2);
    for row in fraction_rows {
        assert!((0.0..=1.0).contains(&row.median));
        assert_eq!(row.n, 6);
    }

    commands::cmd_show_rfs(&cfg, &ckpt).unwrap();
    assert!(root.join("out/show_rfs/rfs_layer1.png").exists());
    assert!(root.join("out/show_rfs/rfs_layer2.png").exists());
    let ranking = std::fs::read_to_string(root.join("out/show_rfs/rf_ranking.csv")).unwrap();
    assert_eq!(ranking.lines().count(), 1 + 6 + 8);
}

#[test]
fn training_is_deterministic_across_runs() {
    let root = workdir("determinism");
    let cfg = toy_config(&root, 10, 4);
    commands::cmd_preprocess(&cfg).unwrap();
    commands::cmd_train(&cfg).unwrap();
    let first = std::fs::read(root.join("out/train/losses.csv")).unwrap();
    let first_ckpt = std::fs::read(root.join("out/train/checkpoint.sdpc")).unwrap();

    commands::cmd_train(&cfg).unwrap();
    let second = std::fs::read(root.join("out/train/losses.csv")).unwrap();
    let second_ckpt = std::fs::read(root.join("out/train/checkpoint.sdpc")).unwrap();
    assert_eq!(first, second, "loss history differs between identical runs");
    assert_eq!(first_ckpt, second_ckpt, "checkpoints differ between identical runs");
}

#[test]
fn zero_learning_rate_freezes_layer_one() {
    let root = workdir("frozen");
    let mut cfg = toy_config(&root, 8, 4);
    cfg.eta_l = vec![0.0, 0.02];
    commands::cmd_preprocess(&cfg).unwrap();
    let ckpt_path = commands::cmd_train(&cfg).unwrap();

    let (net, _, _) = commands::load_checkpoint(&ckpt_path).unwrap();
    let initial = cfg.build_network(3).unwrap();
    assert_eq!(
        net.layers[0].dictionary.atoms, initial.layers[0].dictionary.atoms,
        "layer-1 dictionary moved despite a zero learning rate"
    );
    assert_ne!(
        net.layers[1].dictionary.atoms, initial.layers[1].dictionary.atoms,
        "layer-2 dictionary never moved"
    );
}

#[test]
fn checkpoints_roundtrip_byte_exactly() {
    let root = workdir("roundtrip");
    let cfg = toy_config(&root, 8, 4);
    commands::cmd_preprocess(&cfg).unwrap();
    let ckpt_path = commands::cmd_train(&cfg).unwrap();

    let bytes = std::fs::read(&ckpt_path).unwrap();
    let container = TensorContainer::from_bytes(&bytes, "ckpt").unwrap();
    let resaved = container.to_bytes();
    assert_eq!(bytes, resaved, "save -> load -> save changed the bytes");
}

#[test]
fn denoise_with_single_feedback_column() {
    let root = workdir("singlek");
    let mut cfg = toy_config(&root, 8, 4);
    cfg.k_fb_grid = vec![0.0];
    cfg.sigma_grid = vec![0.0, 2.0];
    cfg.test_subset = 4;
    commands::cmd_preprocess(&cfg).unwrap();
    let ckpt = commands::cmd_train(&cfg).unwrap();
    commands::cmd_denoise(&cfg, &ckpt).unwrap();
    let stats = commands::read_stats_csv(&root.join("out/denoise/stats.csv")).unwrap();
    let ks: std::collections::BTreeSet<String> = stats
        .iter()
        .filter(|r| r.metric == "ssim_l1")
        .map(|r| format!("{:?}", r.k_fb))
        .collect();
    assert_eq!(ks.len(), 1, "expected a single feedback column, got {ks:?}");
}

#[test]
fn experiment_reruns_reproduce_csv_bytes() {
    let root = workdir("rerun");
    let cfg = toy_config(&root, 8, 4);
    commands::cmd_preprocess(&cfg).unwrap();
    let ckpt = commands::cmd_train(&cfg).unwrap();

    commands::cmd_sparsity(&cfg, &ckpt).unwrap();
    let first = std::fs::read(root.join("out/sparsity/stats.csv")).unwrap();
    commands::cmd_sparsity(&cfg, &ckpt).unwrap();
    let second = std::fs::read(root.join("out/sparsity/stats.csv")).unwrap();
    assert_eq!(first, second);
}

#[test]
fn missing_data_is_a_data_error() {
    let root = workdir("missing");
    let mut cfg = RunConfig::default();
    cfg.out_dir = root.join("out").display().to_string();
    cfg.data_train_path = root.join("nope.bin").display().to_string();
    let err = commands::cmd_preprocess(&cfg).unwrap_err();
    assert_eq!(err.exit_code(), 3, "missing data should map to exit code 3: {err}");
}

#[test]
fn corrupt_stl10_names_the_file() {
    let root = workdir("corrupt");
    let bad = root.join("bad.bin");
    std::fs::write(&bad, vec![0u8; 1000]).unwrap();
    let mut cfg = RunConfig::default();
    cfg.out_dir = root.join("out").display().to_string();
    cfg.data_train_path = bad.display().to_string();
    cfg.data_train_count = 1;
    cfg.data_test_count = 0;
    let err = commands::cmd_preprocess(&cfg).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("bad.bin"), "error does not name the file: {msg}");
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn insufficient_images_for_split_is_rejected() {
    let root = workdir("short");
    let images = synthetic::contour_images(3, 96, 96, 3, 5);
    let data_path = root.join("data.bin");
    stl10::save_stl10(&data_path, &images).unwrap();
    let mut cfg = RunConfig::default();
    cfg.out_dir = root.join("out").display().to_string();
    cfg.data_train_path = data_path.display().to_string();
    cfg.data_train_count = 5000;
    cfg.data_test_count = 1200;
    let err = commands::cmd_preprocess(&cfg).unwrap_err();
    assert_eq!(err.exit_code(), 3);
}
