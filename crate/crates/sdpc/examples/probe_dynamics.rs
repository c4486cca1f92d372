//! Temporary probe of inference dynamics on preprocessed contour images.

use ndarray::Axis;
use sdpc::cli::{commands, RunConfig};
use sdpc::inference::{fista_momentum, inference_step, is_stable};
use sdpc::model::InferenceState;
use sdpc::util::l2_norm;
use std::path::Path;

fn main() -> sdpc::Result<()> {
    let root = Path::new("/tmp/sdpc-calib");
    let mut cfg = RunConfig::default();
    cfg.out_dir = root.join("out").display().to_string();
    cfg.set("net.l1.features", "32")?;
    cfg.set("net.l2.features", "64")?;
    cfg.seed = 7;

    let batch = commands::load_cached_split(&cfg, "train")?;
    let x = batch.data.index_axis(Axis(0), 0).to_owned();
    println!("input norm {:.3}, max {:.3}", l2_norm(&x), x.iter().fold(0f32, |a, &b| a.max(b.abs())));

    for k_fb in [0.0f32, 1.0] {
        let mut net = cfg.build_network(3)?;
        net.k_fb = k_fb;
        sdpc::learning::refresh_step_sizes(&mut net, x.dim())?;
        println!(
            "k_fb={k_fb}: eta_c = {:?}, sigma_max = {:?}",
            net.layers.iter().map(|l| l.eta_c.unwrap()).collect::<Vec<_>>(),
            net.layers.iter().map(|l| 1.0 / l.eta_c.unwrap()).collect::<Vec<_>>()
        );
        let mut state = InferenceState::zeros(&net, x.dim())?;
        for t in 0..120 {
            for layer in 0..net.num_layers() {
                if let Err(e) = inference_step(&mut state, &net, &x, layer) {
                    println!("  t={t}: {e}");
                    return Ok(());
                }
            }
            let stable = (0..net.num_layers())
                .all(|i| is_stable(&state.gamma[i], &state.gamma_prev[i], net.t_stab));
            if t % 10 == 0 || t < 5 || stable {
                println!(
                    "  t={t:3} alpha={:8.1} |g1|={:12.4} |g2|={:12.4} stable={stable}",
                    state.alpha,
                    l2_norm(&state.gamma[0]),
                    l2_norm(&state.gamma[1]),
                );
            }
            fista_momentum(&mut state);
            if stable {
                break;
            }
        }
    }
    Ok(())
}
