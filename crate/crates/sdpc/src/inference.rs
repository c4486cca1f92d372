//! Iterative inference over the layer stack.
//!
//! Each iteration sweeps the layers in ascending order. Every layer update
//! reads the momentum variables as they stood at the start of the iteration,
//! linearizes the coupled quadratic terms there, takes a gradient step scaled
//! by the layer's spectral step size, and applies the non-negative soft
//! threshold. Momentum variables and the extrapolation strength are advanced
//! once per iteration, after the sweep. Iteration stops when every layer's
//! relative change falls below the stability threshold, or at the safety cap.

use crate::error::{Result, SdpcError};
use crate::model::{ActivityMap, InferenceState, NetworkConfig};
use crate::ops::{forward_drive, predict, soft_threshold_inplace};
use crate::util::{all_finite, l1_norm, l2_norm};
use ndarray::Array3;

/// Whether the solver extrapolates with momentum or takes plain proximal
/// steps. The plain mode exists for descent diagnostics; `infer` always uses
/// momentum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverMode {
    Fista,
    Ista,
}

/// Outcome of a full inference run.
#[derive(Debug, Clone)]
pub struct InferenceResult {
    pub gammas: Vec<ActivityMap>,
    /// False when the iteration cap was hit before all layers stabilized.
    pub converged: bool,
    pub iterations: usize,
}

/// One update of layer `layer` (0-based) at the current iteration.
///
/// Reads only the momentum variables, so the sweep over layers sees a
/// consistent snapshot; writes the new activity and retires the previous one
/// into `gamma_prev`.
pub fn inference_step(
    state: &mut InferenceState,
    net: &NetworkConfig,
    x: &Array3<f32>,
    layer: usize,
) -> Result<()> {
    let cfg = &net.layers[layer];
    let eta = cfg.step_size()?;
    let dict = &cfg.dictionary;

    let below_hw = if layer == 0 {
        let d = x.dim();
        (d.1, d.2)
    } else {
        let d = state.gamma_m[layer - 1].dim();
        (d.1, d.2)
    };

    // Lower-layer error at the momentum point.
    let prediction = predict(dict, state.gamma_m[layer].view(), below_hw)?;
    let eps_ll = if layer == 0 {
        x - &prediction
    } else {
        &state.gamma_m[layer - 1] - &prediction
    };
    let drive = forward_drive(dict, eps_ll.view())?;

    let mut pre = &state.gamma_m[layer] + &drive.mapv(|v| v * eta);

    // Upper-layer error, scaled by the feedback strength; absent at the top.
    if layer + 1 < net.num_layers() {
        let above = &net.layers[layer + 1].dictionary;
        let here_hw = {
            let d = state.gamma_m[layer].dim();
            (d.1, d.2)
        };
        let fed_back = predict(above, state.gamma_m[layer + 1].view(), here_hw)?;
        let scale = net.k_fb * eta;
        ndarray::Zip::from(&mut pre)
            .and(&state.gamma_m[layer])
            .and(&fed_back)
            .for_each(|p, &m, &f| *p -= scale * (m - f));
    }

    soft_threshold_inplace(&mut pre, eta * cfg.lambda);

    if !all_finite(&pre) {
        return Err(SdpcError::Numerical(format!(
            "non-finite activity at layer {} iteration {}",
            layer + 1,
            state.iteration + 1
        )));
    }

    state.gamma_prev[layer] = std::mem::replace(&mut state.gamma[layer], pre);
    Ok(())
}

/// Advances the momentum strength and re-extrapolates every layer's momentum
/// variable from its last two iterates, rectifying the result.
pub fn fista_momentum(state: &mut InferenceState) {
    let alpha = state.alpha;
    let alpha_next = (1.0 + (1.0 + 4.0 * alpha * alpha).sqrt()) / 2.0;
    let beta = (alpha - 1.0) / alpha_next;
    for i in 0..state.gamma.len() {
        let extrapolated = ndarray::Zip::from(&state.gamma[i])
            .and(&state.gamma_prev[i])
            .map_collect(|&g, &p| {
                let v = g + beta * (g - p);
                if v > 0.0 {
                    v
                } else {
                    0.0
                }
            });
        state.gamma_m[i] = extrapolated;
    }
    state.alpha = alpha_next;
}

/// Relative-variation stability test between consecutive iterates.
///
/// An all-zero map is stable exactly when the previous map was also all-zero;
/// zero is a legitimate fixed point under a strong sparsity penalty and must
/// be allowed to terminate.
pub fn is_stable(gamma_t: &Array3<f32>, gamma_prev: &Array3<f32>, t_stab: f32) -> bool {
    let denom = l2_norm(gamma_t);
    if denom == 0.0 {
        return l2_norm(gamma_prev) == 0.0;
    }
    let diff = ndarray::Zip::from(gamma_t)
        .and(gamma_prev)
        .fold(0.0f64, |acc, &a, &b| {
            let d = a as f64 - b as f64;
            acc + d * d
        })
        .sqrt();
    diff / denom < t_stab as f64
}

/// Runs inference to stability (or the iteration cap) with momentum.
pub fn infer(net: &NetworkConfig, x: &Array3<f32>) -> Result<InferenceResult> {
    run_inference(net, x, SolverMode::Fista)
}

/// Inference with an explicit solver mode.
pub fn run_inference(
    net: &NetworkConfig,
    x: &Array3<f32>,
    mode: SolverMode,
) -> Result<InferenceResult> {
    if !all_finite(x) {
        return Err(SdpcError::Numerical("input contains non-finite values".into()));
    }
    // Validates channel/kernel geometry up front so failures name the layer.
    net.layer_dims(x.dim())?;

    let mut state = InferenceState::zeros(net, x.dim())?;
    let mut converged = false;

    while state.iteration < net.max_iters {
        for layer in 0..net.num_layers() {
            inference_step(&mut state, net, x, layer)?;
        }
        let stable = (0..net.num_layers())
            .all(|i| is_stable(&state.gamma[i], &state.gamma_prev[i], net.t_stab));
        match mode {
            SolverMode::Fista => fista_momentum(&mut state),
            SolverMode::Ista => {
                for i in 0..state.gamma.len() {
                    state.gamma_m[i] = state.gamma[i].clone();
                }
            }
        }
        state.iteration += 1;
        if stable {
            converged = true;
            break;
        }
    }

    let iterations = state.iteration;
    let gammas = state
        .gamma
        .into_iter()
        .map(ActivityMap::new)
        .collect::<Result<Vec<_>>>()?;
    Ok(InferenceResult {
        gammas,
        converged,
        iterations,
    })
}

/// Per-layer loss contributions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerLoss {
    pub reconstruction: f64,
    pub feedback: f64,
    pub sparsity: f64,
}

impl LayerLoss {
    pub fn total(&self) -> f64 {
        self.reconstruction + self.feedback + self.sparsity
    }
}

/// Evaluates the layered objective: per layer, half the squared lower-layer
/// residual, the feedback-weighted squared upper-layer residual (absent at
/// the top), and the weighted L1 penalty.
pub fn total_loss(
    net: &NetworkConfig,
    gammas: &[Array3<f32>],
    x: &Array3<f32>,
) -> Result<(Vec<LayerLoss>, f64)> {
    if gammas.len() != net.num_layers() {
        return Err(SdpcError::Config(format!(
            "expected {} activity maps, got {}",
            net.num_layers(),
            gammas.len()
        )));
    }
    let mut per_layer = Vec::with_capacity(gammas.len());
    for i in 0..gammas.len() {
        let below: &Array3<f32> = if i == 0 { x } else { &gammas[i - 1] };
        let hw = {
            let d = below.dim();
            (d.1, d.2)
        };
        let prediction = predict(&net.layers[i].dictionary, gammas[i].view(), hw)?;
        let residual = below - &prediction;
        let reconstruction = 0.5 * l2_norm(&residual).powi(2);

        let feedback = if i + 1 < gammas.len() {
            let here_hw = {
                let d = gammas[i].dim();
                (d.1, d.2)
            };
            let fed_back = predict(&net.layers[i + 1].dictionary, gammas[i + 1].view(), here_hw)?;
            let diff = &gammas[i] - &fed_back;
            0.5 * net.k_fb as f64 * l2_norm(&diff).powi(2)
        } else {
            0.0
        };

        let sparsity = net.layers[i].lambda as f64 * l1_norm(&gammas[i]);
        per_layer.push(LayerLoss {
            reconstruction,
            feedback,
            sparsity,
        });
    }
    let total = per_layer.iter().map(LayerLoss::total).sum();
    Ok((per_layer, total))
}
