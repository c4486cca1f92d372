//! Scale calibration scratch run (temporary).

use sdpc::cli::{commands, RunConfig};
use sdpc::data::{imagedir::save_png, synthetic};
use std::path::Path;
use std::time::Instant;

fn env_or<T: std::str::FromStr>(key: &str, default: T) -> T {
    std::env::var(key)
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(default)
}

fn main() -> sdpc::Result<()> {
    let tag: String = env_or("CAL_TAG", "a".to_string());
    let root_path = format!("/tmp/sdpc-calib-{tag}");
    let root = Path::new(&root_path);
    let _ = std::fs::remove_dir_all(root);
    std::fs::create_dir_all(root.join("images"))?;

    let n_train: usize = env_or("CAL_TRAIN", 140);
    let n_test: usize = env_or("CAL_TEST", 28);
    let side: usize = env_or("CAL_SIDE", 40);
    let f1: usize = env_or("CAL_F1", 48);
    let f2: usize = env_or("CAL_F2", 64);
    let epochs: usize = env_or("CAL_EPOCHS", 25);
    let eta1: f32 = env_or("CAL_ETA1", 0.015);
    let eta2: f32 = env_or("CAL_ETA2", 0.06);
    let lambda1: f32 = env_or("CAL_L1", 0.4);
    let lambda2: f32 = env_or("CAL_L2", 1.0);
    let wh_eps: f64 = env_or("CAL_WHEPS", 1e-3);

    let t0 = Instant::now();
    let batch = synthetic::contour_images(n_train + n_test, side, side, 3, 42);
    for i in 0..batch.len() {
        save_png(
            &root.join("images").join(format!("img_{i:05}.png")),
            &batch.image(i),
        )?;
    }
    println!("generated {} images in {:.1?}", batch.len(), t0.elapsed());

    let mut cfg = RunConfig::default();
    cfg.out_dir = root.join("out").display().to_string();
    cfg.seed = 7;
    cfg.data_format = "imagedir".into();
    cfg.data_train_path = root.join("images").display().to_string();
    cfg.data_test_path = String::new();
    cfg.data_resize_h = side;
    cfg.data_resize_w = side;
    cfg.data_train_count = n_train;
    cfg.data_test_count = n_test;
    cfg.set("net.l1.features", &f1.to_string())?;
    cfg.set("net.l2.features", &f2.to_string())?;
    cfg.set("net.l1.lambda", &lambda1.to_string())?;
    cfg.set("net.l2.lambda", &lambda2.to_string())?;
    cfg.whiten_epsilon_scale = wh_eps;
    cfg.epochs = epochs;
    cfg.eta_l = vec![eta1, eta2];
    cfg.set("train.step_refresh", "batch")?;
    cfg.max_iters = 300;
    cfg.k_fb_grid = vec![0.0, 1.0, 4.0];
    cfg.sigma_grid = vec![0.0, 5.0];

    let t0 = Instant::now();
    commands::cmd_preprocess(&cfg)?;
    println!("preprocess {:.1?}", t0.elapsed());

    let t0 = Instant::now();
    let ckpt = commands::cmd_train(&cfg)?;
    println!("train {:.1?}", t0.elapsed());

    let t0 = Instant::now();
    commands::cmd_sparsity(&cfg, &ckpt)?;
    println!("sparsity {:.1?}", t0.elapsed());

    let t0 = Instant::now();
    commands::cmd_maps(&cfg, &ckpt)?;
    println!("maps {:.1?}", t0.elapsed());

    let t0 = Instant::now();
    commands::cmd_denoise(&cfg, &ckpt)?;
    println!("denoise {:.1?}", t0.elapsed());

    let t0 = Instant::now();
    commands::cmd_show_rfs(&cfg, &ckpt)?;
    println!("show-rfs {:.1?}", t0.elapsed());

    for cmd in ["sparsity", "maps", "denoise"] {
        let path = root.join("out").join(cmd).join("verdicts.csv");
        if let Ok(text) = std::fs::read_to_string(&path) {
            println!("--- {cmd} verdicts ---\n{text}");
        }
    }
    let atlas = std::fs::read_to_string(root.join("out/maps/gabor_atlas.csv")).unwrap_or_default();
    let retained = atlas.lines().filter(|l| l.ends_with("true")).count();
    println!(
        "gabor atlas: {retained} retained of {}",
        atlas.lines().count().saturating_sub(1)
    );
    // key stats for tuning
    let stats = commands::read_stats_csv(&root.join("out/maps/stats.csv"))?;
    for metric in ["colin_dev_end", "colin_dev_marginal", "r_colin_end", "r_a_end", "r_a_center", "r_a_side"] {
        for row in stats.iter().filter(|r| r.metric == metric) {
            println!("{}: k={:?} median={:.4} mad={:.4} n={}", metric, row.k_fb, row.median, row.mad, row.n);
        }
    }
    Ok(())
}
