//! Brute-force cross-checks of the operator algebra against dense
//! materializations and independent solvers.

mod common;

use common::*;
use ndarray::{Array1, Array3, Axis};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use sdpc::inference::{run_inference, total_loss, SolverMode};
use sdpc::ops;
use sdpc::util::dot;

#[test]
fn predict_matches_dense_toeplitz_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(401);
    let dict = sdpc::ConvDictionary::random(2, 1, 3, 1, &mut rng).unwrap();
    // sparse code on a 5x5 grid
    let mut gamma = Array3::<f32>::zeros((2, 5, 5));
    for _ in 0..6 {
        let f = rng.random_range(0..2usize);
        let r = rng.random_range(0..5usize);
        let c = rng.random_range(0..5usize);
        gamma[(f, r, c)] = rng.random_range(0.0..1.0);
    }
    let out = ops::predict(&dict, gamma.view(), (7, 7)).unwrap();

    let m = materialize_predict(&atoms_to_f64(&dict.atoms), 1, (5, 5), (7, 7));
    let dense = m.dot(&flatten3(&gamma));
    for (got, want) in out.iter().zip(dense.iter()) {
        assert!((*got as f64 - want).abs() < 1e-5, "{got} vs {want}");
    }
}

#[test]
fn adjoint_identity_on_eight_random_pairs() {
    // f64 instantiation of the same generic kernels the f32 path uses
    let mut rng = ChaCha8Rng::seed_from_u64(402);
    for pair in 0..8 {
        let (f, c, k, s, h) = (3usize, 2usize, 3usize, 1 + pair % 3, 10usize);
        let atoms = random4_f64(&mut rng, (f, c, k, k));
        let hc = (h - k) / s + 1;
        let code = Array3::from_shape_fn((f, hc, hc), |_| rng.random_range(-1.0..1.0));
        let field = Array3::from_shape_fn((c, h, h), |_| rng.random_range(-1.0..1.0));
        let recon = ops::predict_generic(atoms.view(), s, code.view(), (h, h)).unwrap();
        let drive = ops::forward_drive_generic(atoms.view(), s, field.view()).unwrap();
        let lhs = dot(&recon, &field);
        let rhs = dot(&code, &drive);
        assert!(
            (lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0),
            "pair {pair}: {lhs} vs {rhs}"
        );
    }
}

#[test]
fn step_size_matches_dense_gram_eigenvalue() {
    let mut rng = ChaCha8Rng::seed_from_u64(403);
    let dict = sdpc::ConvDictionary::random(4, 1, 3, 1, &mut rng).unwrap();
    let eta = ops::compute_step_size(&dict, (8, 8)).unwrap() as f64;

    let m = materialize_predict(&atoms_to_f64(&dict.atoms), 1, (6, 6), (8, 8));
    let gram = m.t().dot(&m);
    let (values, _) = sdpc::eig::eigh(&gram).unwrap();
    let sigma_max = values[0];
    assert!(
        (1.0 / eta - sigma_max).abs() <= 1e-3 * sigma_max,
        "power iteration {} vs dense {}",
        1.0 / eta,
        sigma_max
    );
}

#[test]
fn one_layer_inference_matches_coordinate_descent() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    // 4 atoms on a 6x6 image, 3x3 kernels: 4x4x4 = 64 coefficients
    let mut net = one_layer_net(405, 4, 1, 3, 1, 0.05, (6, 6));
    net.t_stab = 1e-7;
    net.max_iters = 20_000;
    let x = random3(&mut rng, (1, 6, 6), -1.0, 1.0);

    let result = run_inference(&net, &x, SolverMode::Fista).unwrap();
    assert!(result.converged);
    let gammas: Vec<Array3<f32>> = result.gammas.into_iter().map(|g| g.data).collect();
    let (_, fista_objective) = total_loss(&net, &gammas, &x).unwrap();

    let a = materialize_predict(&atoms_to_f64(&net.layers[0].dictionary.atoms), 1, (4, 4), (6, 6));
    let oracle = cd_nonneg_lasso(&a, &flatten3(&x), 0.05, 1e-12, 100_000);
    let oracle_objective = nn_lasso_objective(&a, &flatten3(&x), &oracle, 0.05);

    let gap = (fista_objective - oracle_objective).abs() / oracle_objective.abs().max(1e-12);
    assert!(
        gap <= 1e-4,
        "objective gap {gap}: fista {fista_objective} vs oracle {oracle_objective}"
    );
    // sanity: the solver never beats the oracle by more than rounding
    assert!(fista_objective >= oracle_objective - 1e-6);
}

#[test]
fn dictionary_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(406);
    let dict = sdpc::ConvDictionary::random(3, 2, 3, 2, &mut rng).unwrap();
    let gamma = random3(&mut rng, (3, 3, 3), 0.0, 1.0);
    let below = random3(&mut rng, (2, 7, 7), -1.0, 1.0);

    let analytic = sdpc::learning::reconstruction_gradient(&dict, &gamma, &below).unwrap();

    // f64 oracle: loss through the dense materialization, h = 1e-4
    let atoms64 = atoms_to_f64(&dict.atoms);
    let x = flatten3(&below);
    let g = flatten3(&gamma);
    let loss = |atoms: &ndarray::Array4<f64>| -> f64 {
        let m = materialize_predict(atoms, 2, (3, 3), (7, 7));
        let r = &x - &m.dot(&g);
        0.5 * r.dot(&r)
    };
    let h = 1e-4;
    let mut checked = 0;
    let grad_scale = analytic.iter().map(|v| v.abs()).fold(0.0f32, f32::max) as f64;
    while checked < 25 {
        let idx = (
            rng.random_range(0..3usize),
            rng.random_range(0..2usize),
            rng.random_range(0..3usize),
            rng.random_range(0..3usize),
        );
        let mut plus = atoms64.clone();
        plus[idx] += h;
        let mut minus = atoms64.clone();
        minus[idx] -= h;
        let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
        if fd.abs() < 1e-3 * grad_scale {
            continue; // skip near-degenerate coordinates
        }
        let rel = (analytic[idx] as f64 - fd).abs() / fd.abs();
        assert!(
            rel <= 1e-4,
            "coordinate {idx:?}: analytic {} vs fd {fd} (rel {rel})",
            analytic[idx]
        );
        checked += 1;
    }
}

#[test]
fn two_layer_feedback_decouples_at_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(407);
    let d1 = sdpc::ConvDictionary::random(3, 1, 3, 1, &mut rng).unwrap();
    let d2 = sdpc::ConvDictionary::random(5, 3, 3, 1, &mut rng).unwrap();
    let mut l1 = sdpc::LayerConfig::new(d1.clone(), 0.1).unwrap();
    l1.eta_c = Some(ops::compute_step_size(&d1, (8, 8)).unwrap());
    let mut l2 = sdpc::LayerConfig::new(d2.clone(), 0.1).unwrap();
    l2.eta_c = Some(ops::compute_step_size(&d2, (6, 6)).unwrap());

    let two = sdpc::NetworkConfig::new(vec![l1.clone(), l2], 0.0, 1e-8, 20_000).unwrap();
    let one = sdpc::NetworkConfig::new(vec![l1], 0.0, 1e-8, 20_000).unwrap();

    let x = random3(&mut rng, (1, 8, 8), -1.0, 1.0);
    let two_result = sdpc::infer(&two, &x).unwrap();
    let one_result = sdpc::infer(&one, &x).unwrap();
    for (a, b) in two_result.gammas[0]
        .data
        .iter()
        .zip(one_result.gammas[0].data.iter())
    {
        assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
    }

    // and with feedback, layer-1 codes genuinely differ
    let mut coupled = two.clone();
    coupled.k_fb = 1.0;
    let coupled_result = sdpc::infer(&coupled, &x).unwrap();
    let diff: f64 = coupled_result.gammas[0]
        .data
        .iter()
        .zip(one_result.gammas[0].data.iter())
        .map(|(a, b)| (a - b).abs() as f64)
        .sum();
    assert!(diff > 1e-4, "feedback had no effect on the layer-1 code");
}

#[test]
fn total_loss_matches_explicit_reevaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(408);
    let d1 = sdpc::ConvDictionary::random(3, 1, 3, 1, &mut rng).unwrap();
    let d2 = sdpc::ConvDictionary::random(4, 3, 3, 1, &mut rng).unwrap();
    let l1 = sdpc::LayerConfig::new(d1.clone(), 0.3).unwrap();
    let l2 = sdpc::LayerConfig::new(d2.clone(), 0.7).unwrap();
    let net = sdpc::NetworkConfig::new(vec![l1, l2], 0.8, 5e-3, 100).unwrap();

    let x = random3(&mut rng, (1, 8, 8), -1.0, 1.0);
    let g1 = random3(&mut rng, (3, 6, 6), 0.0, 1.0);
    let g2 = random3(&mut rng, (4, 4, 4), 0.0, 1.0);
    let (per_layer, total) = total_loss(&net, &[g1.clone(), g2.clone()], &x).unwrap();

    // independent evaluation through the dense operators
    let m1 = materialize_predict(&atoms_to_f64(&d1.atoms), 1, (6, 6), (8, 8));
    let m2 = materialize_predict(&atoms_to_f64(&d2.atoms), 1, (4, 4), (6, 6));
    let (xf, g1f, g2f) = (flatten3(&x), flatten3(&g1), flatten3(&g2));
    let r1 = &xf - &m1.dot(&g1f);
    let r2 = &g1f - &m2.dot(&g2f);
    let want1 = 0.5 * r1.dot(&r1) + 0.4 * r2.dot(&r2) + 0.3 * g1f.iter().map(|v| v.abs()).sum::<f64>();
    let want2 = 0.5 * r2.dot(&r2) + 0.7 * g2f.iter().map(|v| v.abs()).sum::<f64>();
    assert!((per_layer[0].total() - want1).abs() < 1e-4 * want1.abs().max(1.0));
    assert!((per_layer[1].total() - want2).abs() < 1e-4 * want2.abs().max(1.0));
    assert!((total - want1 - want2).abs() < 1e-4 * total.abs().max(1.0));
}

#[test]
fn coordinate_descent_oracle_is_self_consistent() {
    // the oracle itself: KKT conditions at its solution
    let mut rng = ChaCha8Rng::seed_from_u64(409);
    let a = ndarray::Array2::from_shape_fn((12, 8), |_| rng.random_range(-1.0..1.0));
    let x = Array1::from_shape_fn(12, |_| rng.random_range(-1.0..1.0));
    let lambda = 0.1;
    let gamma = cd_nonneg_lasso(&a, &x, lambda, 1e-13, 200_000);
    let grad = a.t().dot(&(&a.dot(&gamma) - &x));
    for j in 0..8 {
        if gamma[j] > 1e-10 {
            // active coordinate: gradient balances the penalty
            assert!((grad[j] + lambda).abs() < 1e-6, "active {j}: {}", grad[j]);
        } else {
            // inactive: no descent direction into the positive orthant
            assert!(grad[j] + lambda >= -1e-6, "inactive {j}: {}", grad[j]);
        }
    }
}
