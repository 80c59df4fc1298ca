mod common;

use common::*;
use qnn_core::baseline::{build_fair, predict, train_fair};
use qnn_core::circuit::{build_qnn, ParamVector, Readout};
use qnn_core::data::{encode_sample, prepare_split, DatasetSplit, PipelineConfig};
use qnn_core::harness::{accuracy, train_qnn, ModelKind, RunConfig};
use qnn_core::qml::{build_superposition_batch, loss_batch, loss_batch_from_samples, GradEngine, LabeledInput};
use qnn_core::statevec::PauliKind;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pixel0_split() -> DatasetSplit {
    synthetic_split(2, |g| g.bits()[0])
}

/// Full-batch training on the 16 grids, so epochs equal optimizer steps.
fn qnn_train_accuracy(split: &DatasetSplit, observable: PauliKind, r: f64, steps: usize, seed: u64) -> f64 {
    let config =
        RunConfig { learning_rate: r, observable, seed, ..RunConfig::new(ModelKind::Qnn, 2, steps, split.train.len()) };
    train_qnn(&config, split).unwrap().per_epoch.last().unwrap().test_accuracy
}

#[test]
fn qnn_learns_pixel_zero_with_y_readout() {
    // A Z readout is blind to a global bit flip (see circuit_oracle), and the
    // pixel-0 labelling is odd under that flip, so the task is posed on Y.
    let split = pixel0_split();
    let mean = (1..=5).map(|s| qnn_train_accuracy(&split, PauliKind::Y, 0.1, 200, s)).sum::<f64>() / 5.0;
    assert!(mean >= 0.95, "mean training accuracy {mean}");
}

#[test]
fn qnn_learns_pixel_zero_at_default_rate() {
    let split = pixel0_split();
    let mean = (1..=5).map(|s| qnn_train_accuracy(&split, PauliKind::Y, 0.02, 200, s)).sum::<f64>() / 5.0;
    assert!(mean >= 0.95, "mean training accuracy {mean}");
}

#[test]
fn qnn_learns_two_pixel_parity_with_z_readout() {
    let split = synthetic_split(2, |g| g.bits()[0] ^ g.bits()[1]);
    let mean = (1..=5).map(|s| qnn_train_accuracy(&split, PauliKind::Z, 0.1, 200, s)).sum::<f64>() / 5.0;
    assert!(mean >= 0.95, "mean training accuracy {mean}");
}

#[test]
fn z_readout_cannot_learn_pixel_zero() {
    // Every grid and its complement carry opposite labels but equal outputs.
    let split = pixel0_split();
    for s in 1..=3 {
        assert!(qnn_train_accuracy(&split, PauliKind::Z, 0.1, 50, s) <= 0.5);
    }
}

#[test]
fn fair_net_learns_pixel_zero() {
    let split = pixel0_split();
    for seed in 1..=5 {
        let net = build_fair(2, seed).unwrap();
        let (_, metrics) = train_fair(net, &split, 200, 16, 0.1, seed).unwrap();
        assert!(metrics.last().unwrap().test_accuracy >= 0.95, "seed {seed}");
    }
}

#[test]
fn training_is_deterministic() {
    let split = synthetic_split(2, |g| g.bits()[0] ^ g.bits()[3]);
    let config = RunConfig { seed: 9, ..RunConfig::new(ModelKind::Qnn, 2, 5, 4) };
    let a = train_qnn(&config, &split).unwrap();
    let b = train_qnn(&config, &split).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.per_epoch, b.per_epoch);
    let (na, ma) = train_fair(build_fair(2, 3).unwrap(), &split, 5, 4, 0.1, 3).unwrap();
    let (nb, mb) = train_fair(build_fair(2, 3).unwrap(), &split, 5, 4, 0.1, 3).unwrap();
    assert_eq!((na, ma), (nb, mb));
}

#[test]
fn batch_size_one_is_per_sample_sgd() {
    let split = pixel0_split();
    let config = RunConfig { observable: PauliKind::Y, ..RunConfig::new(ModelKind::Qnn, 2, 1, 1) };
    let trained = train_qnn(&config, &split).unwrap();

    // Replay: same init and shuffle, one plain step per sample.
    use qnn_core::qml::{grad_analytic, sgd_step_plain};
    let (circuit, r) = build_qnn(2).unwrap();
    let readout = Readout { qubit: r, observable: PauliKind::Y };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ParamVector::random(8, &mut rng);
    let mut order: Vec<usize> = (0..split.train.len()).collect();
    order.shuffle(&mut rng);
    for i in order {
        let sample = encode_sample(&split.train[i]).unwrap();
        let g = grad_analytic(&circuit, readout, &params, &sample).unwrap();
        params = sgd_step_plain(&params, &g, config.learning_rate).unwrap();
    }
    for (a, b) in params.as_slice().iter().zip(trained.params.as_slice()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn analytic_and_finite_difference_trajectories_agree() {
    let images = quadrant_images(140, &[3, 6], 21);
    let config = PipelineConfig { dim: 2, dedup: false, ..PipelineConfig::default() };
    let mut split = prepare_split(&images, &images, config).unwrap();
    split.train.truncate(100);
    assert_eq!(split.train.len(), 100);
    let run = |engine| {
        let c = RunConfig { grad_engine: engine, dedup: false, ..RunConfig::new(ModelKind::Qnn, 2, 4, 16) };
        train_qnn(&c, &split).unwrap().per_epoch
    };
    let analytic = run(GradEngine::Analytic);
    let fd = run(GradEngine::FiniteDiff { eps: 1e-5 });
    for (a, f) in analytic.iter().zip(&fd) {
        assert!((a.train_loss - f.train_loss).abs() < 1e-4, "{} vs {}", a.train_loss, f.train_loss);
    }
}

#[test]
fn fair_backprop_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst = 0.0f64;
    for draw in 0..50 {
        let dim = [2, 3, 4][draw % 3];
        let mut net = build_fair(dim, draw as u64).unwrap();
        let params: Vec<f64> = (0..net.param_count()).map(|_| rng.random_range(-1.5..1.5)).collect();
        net.set_params(&params).unwrap();
        let x: Vec<f64> = (0..dim * dim).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
        let label = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let (_, g) = net.loss_and_grad(&x, label).unwrap();
        let eps = 1e-5;
        for k in 0..params.len() {
            let mut p = params.clone();
            p[k] += eps;
            let plus = 1.0 - label * dense_forward(&p, &x);
            p[k] -= 2.0 * eps;
            let minus = 1.0 - label * dense_forward(&p, &x);
            let fd = (plus - minus) / (2.0 * eps);
            worst = worst.max((g[k] - fd).abs() / fd.abs().max(1.0));
        }
    }
    assert!(worst <= 1e-6, "worst relative error {worst:e}");
}

#[test]
fn fair_forward_matches_hand_rolled_network() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for dim in [2, 3, 4] {
        let net = build_fair(dim, 7).unwrap();
        for _ in 0..10 {
            let x: Vec<f64> = (0..dim * dim).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
            assert!((net.forward(&x).unwrap() - dense_forward(&net.params(), &x)).abs() < 1e-14);
        }
    }
}

#[test]
fn fair_loss_is_invariant_under_paired_permutation() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for dim in [2, 3, 4] {
        let n = dim * dim;
        let net = build_fair(dim, 5).unwrap();
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let px: Vec<f64> = perm.iter().map(|&i| x[i]).collect();
        let mut permuted = net.clone();
        for (row, orig) in permuted.layers[0].weights.iter_mut().zip(&net.layers[0].weights) {
            *row = perm.iter().map(|&i| orig[i]).collect();
        }
        let (a, _) = net.loss_and_grad(&x, 1.0).unwrap();
        let (b, _) = permuted.loss_and_grad(&px, 1.0).unwrap();
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn fair_predictions_use_signed_pixels() {
    let split = pixel0_split();
    let net = build_fair(2, 4).unwrap();
    let outputs: Vec<f64> = split.test.iter().map(|s| predict(&net, s).unwrap()).collect();
    let labels: Vec<i8> = split.test.iter().map(|s| s.label).collect();
    let acc = accuracy(&outputs, &labels).unwrap();
    assert!((0.0..=1.0).contains(&acc));
    for (s, o) in split.test.iter().zip(&outputs) {
        assert_eq!(*o, dense_forward(&net.params(), &s.grid.signed_features()));
    }
}

/// Superposition batches against per-sample class averages. Cross terms
/// `Re <a|U^dag O U|b>` between distinct basis inputs of the same class
/// survive in general, so the two losses differ; this reports by how much
/// and checks the cases where they must agree.
#[test]
fn superposition_batch_versus_sample_average() {
    let (circuit, r) = build_qnn(2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let grids = all_grids(2);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let params = ParamVector::new((0..8).map(|_| rng.random_range(-3.2..3.2)).collect()).unwrap();
        let mut picks: Vec<usize> = (0..16).collect();
        picks.shuffle(&mut rng);
        let samples: Vec<LabeledInput> = picks[..4]
            .iter()
            .enumerate()
            .map(|(i, &g)| LabeledInput::new(qnn_input(grids[g].bits()), if i < 2 { 1 } else { -1 }).unwrap())
            .collect();
        let batch = build_superposition_batch(&samples).unwrap();
        assert!((batch.plus_state.norm() - 1.0).abs() < 1e-12);
        assert!((batch.minus_state.norm() - 1.0).abs() < 1e-12);
        for observable in [PauliKind::Z, PauliKind::Y] {
            let readout = Readout { qubit: r, observable };
            let a = loss_batch(&circuit, readout, &params, &batch).unwrap();
            let b = loss_batch_from_samples(&circuit, readout, &params, &samples).unwrap();
            worst = worst.max((a - b).abs());

            // One sample per class: no cross terms, exact agreement.
            let pair = [samples[0].clone(), samples[2].clone()];
            let single = build_superposition_batch(&pair).unwrap();
            let e = |s: &LabeledInput| circuit.expectation(&params, s.state(), readout).unwrap();
            let want = 1.0 - 0.5 * (e(&pair[0]) - e(&pair[1]));
            assert_eq!(loss_batch(&circuit, readout, &params, &single).unwrap(), want);
        }
    }
    println!("largest superposition vs per-sample loss gap over 20 draws: {worst:.4}");
    assert!(worst > 1e-6, "cross terms were expected to show up");
}
