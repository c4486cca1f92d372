//! Temporary diagnostic of interaction-map structure on a trained model.

use ndarray::Axis;
use sdpc::analysis;
use sdpc::cli::{commands, RunConfig};
use std::path::Path;

fn main() -> sdpc::Result<()> {
    let root = Path::new("/tmp/sdpc-calib-b");
    let mut cfg = RunConfig::default();
    cfg.out_dir = root.join("out").display().to_string();
    cfg.set("net.l1.features", "48")?;
    cfg.set("net.l2.features", "64")?;

    let ckpt = root.join("out/train/checkpoint.sdpc");
    let (net, _, _) = commands::load_checkpoint(&ckpt)?;
    let batch = commands::load_cached_split(&cfg, "test")?;

    // fitted orientations and quality
    let fits = analysis::fit_dictionary(&net.layers[0].dictionary.atoms);
    let atlas = analysis::build_atlas(&fits, 0.5)?;
    println!("retained {} / {}", atlas.retained_count(), fits.len());
    let mut thetas: Vec<f64> = atlas
        .retained_features()
        .iter()
        .map(|&f| atlas.theta[f].to_degrees())
        .collect();
    thetas.sort_by(|a, b| a.partial_cmp(b).unwrap());
    println!("orientations: {:?}", thetas.iter().map(|t| t.round()).collect::<Vec<_>>());

    // one image, no feedback
    let mut net0 = net.clone();
    net0.k_fb = 0.0;
    let x = batch.data.index_axis(Axis(0), 0).to_owned();
    let result = sdpc::infer(&net0, &x)?;
    let gamma1 = result.gammas[0].data.clone();
    println!(
        "gamma1 active fraction {:.3}, max {:.3}",
        result.gammas[0].active_fraction(),
        gamma1.iter().cloned().fold(0.0f32, f32::max)
    );

    // strongest center of the best-matching feature for a few orientations
    for &feat in atlas.retained_features().iter().take(4) {
        let centers = analysis::select_centers(&gamma1, feat, 3, 4);
        if centers.is_empty() {
            println!("feature {feat}: no centers");
            continue;
        }
        let center = centers[0];
        let theta_c = atlas.theta[feat];
        println!(
            "feature {feat} (theta {:.0} deg): center {:?} value {:.3}",
            theta_c.to_degrees(),
            center,
            gamma1[(feat, center.0, center.1)]
        );
        let adj = analysis::adjusted_activity(&gamma1, &atlas, center, 4)?;
        println!("  contributing orientations: {}", adj.features.len());
        // central a values of the center feature
        let fi = adj.features.iter().position(|&f| f == feat).unwrap();
        let grid = &adj.values[fi];
        println!(
            "  a[center] = {:.2}, a row through center: {:?}",
            grid[(4, 4)],
            (0..9).map(|c| format!("{:.1}", grid[(4, c)])).collect::<Vec<_>>()
        );
        let map = analysis::interaction_map(&adj, theta_c, 0.0);
        let mask = analysis::region_mask(theta_c, 4);
        let dev = analysis::colinearity_deviation(&map, theta_c, &mask);
        println!(
            "  single-map colin dev: end {:.1} side {:.1}; center theta_bar {:.0} (magnitude {:.2})",
            dev.end,
            dev.side,
            map.theta_bar[(4, 4)].to_degrees(),
            map.magnitude[(4, 4)]
        );
    }
    Ok(())
}
