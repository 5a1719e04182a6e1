mod common;

use common::*;
use rand::Rng;
use repsense_core::model::{forward_features, Mode, ModelParams};
use repsense_core::training::{
    batch_loss, compute_gradients, finite_diff_params, sample_recurrent_masks, sequence_gradients,
};

const FD_STEP: f64 = 1e-5;

#[test]
fn analytic_matches_finite_differences() {
    let mut r = rng(2024);
    for case in 0..30 {
        let config = tiny_config(&mut r);
        let params = random_params(&config, &mut r, 1.0);
        let n = r.random_range(1..=3);
        let batch: Vec<_> = (0..n)
            .map(|_| random_sequence(&config, config.max_seq_len, 0.25, &mut r))
            .collect();
        let analytic = compute_gradients(&batch, &params, &config, 0.0, &mut r).unwrap();
        let numeric = finite_diff_params(
            |p| {
                batch
                    .iter()
                    .map(|s| reference_loss(s, p, &config, None))
                    .sum::<f64>()
                    / n as f64
            },
            &params,
            &config,
            FD_STEP,
        );
        let err = max_scaled_error(&analytic.grads, &numeric);
        assert!(err < 1e-6, "case {case}: {config:?} max error {err:e}");
    }
}

#[test]
fn analytic_matches_finite_differences_with_dropout_masks() {
    let mut r = rng(77);
    for case in 0..20 {
        let config = tiny_config(&mut r);
        let params = random_params(&config, &mut r, 1.0);
        let seq = random_sequence(&config, config.max_seq_len, 0.2, &mut r);
        let masks = sample_recurrent_masks::<f64>(&config, 0.3, &mut r);
        let g = sequence_gradients(&seq, &params, &config, Some(&masks), false).unwrap();
        let numeric = finite_diff_params(
            |p| reference_loss(&seq, p, &config, Some(&masks)),
            &params,
            &config,
            FD_STEP,
        );
        let err = max_scaled_error(&g.params, &numeric);
        assert!(err < 1e-6, "case {case}: max error {err:e}");
    }
}

#[test]
fn input_gradients_match_finite_differences_and_vanish_on_padding() {
    let mut r = rng(5);
    for _ in 0..10 {
        let config = tiny_config(&mut r);
        let params = random_params(&config, &mut r, 1.0);
        let seq = random_sequence(&config, config.max_seq_len, 0.4, &mut r);
        let g = sequence_gradients(&seq, &params, &config, None, true).unwrap();
        let inputs = g.inputs.unwrap();
        for (t, step) in seq.steps.iter().enumerate() {
            match step {
                None => assert!(inputs[t].iter().all(|&v| v == 0.0)),
                Some(x) => {
                    for (k, &a) in inputs[t].iter().enumerate().take(x.len()) {
                        let mut plus = seq.clone();
                        let mut minus = seq.clone();
                        plus.steps[t].as_mut().unwrap()[k] += FD_STEP;
                        minus.steps[t].as_mut().unwrap()[k] -= FD_STEP;
                        let fd = (reference_loss(&plus, &params, &config, None)
                            - reference_loss(&minus, &params, &config, None))
                            / (2.0 * FD_STEP);
                        assert!((a - fd).abs() / 1f64.max(a.abs()) < 1e-6, "{a} vs {fd}");
                    }
                }
            }
        }
    }
}

#[test]
fn one_hot_prediction_has_zero_output_gradient() {
    let mut r = rng(3);
    let config = tiny_config(&mut r);
    let mut params = random_params(&config, &mut r, 0.5);
    let seq = random_sequence(&config, config.max_seq_len, 0.0, &mut r);
    let target = seq.label.unwrap().index();
    params.dense_kernel.iter_mut().for_each(|v| *v = 0.0);
    for (k, b) in params.dense_bias.iter_mut().enumerate() {
        *b = if k == target { 800.0 } else { -800.0 };
    }
    let g = sequence_gradients(&seq, &params, &config, None, false).unwrap();
    assert!(g.params.dense_bias.iter().all(|&v| v == 0.0));
    assert!(g.params.dense_kernel.iter().all(|&v| v == 0.0));
    assert_eq!(g.loss, 0.0);
}

#[test]
fn batch_loss_is_mean_of_sequence_losses() {
    let mut r = rng(11);
    let config = tiny_config(&mut r);
    let params = random_params(&config, &mut r, 1.0);
    let batch: Vec<_> = (0..5)
        .map(|_| random_sequence(&config, config.max_seq_len, 0.2, &mut r))
        .collect();
    let g = compute_gradients(&batch, &params, &config, 0.0, &mut r).unwrap();
    let per: Vec<f64> = batch
        .iter()
        .map(|s| reference_loss(s, &params, &config, None))
        .collect();
    let mean = per.iter().sum::<f64>() / per.len() as f64;
    assert!((g.loss - mean).abs() < 1e-12);
    assert!((batch_loss(&batch, &params, &config).unwrap() - mean).abs() < 1e-12);
}

#[test]
fn repeated_sequence_batch_equals_single() {
    let mut r = rng(12);
    let config = tiny_config(&mut r);
    let params = random_params(&config, &mut r, 1.0);
    let seq = random_sequence(&config, config.max_seq_len, 0.2, &mut r);
    let single =
        compute_gradients(std::slice::from_ref(&seq), &params, &config, 0.0, &mut r).unwrap();
    let repeated = compute_gradients(&vec![seq; 7], &params, &config, 0.0, &mut r).unwrap();
    assert!(max_scaled_error(&single.grads, &repeated.grads) < 1e-14);
    // and the resulting optimizer steps agree
    let opt = repsense_core::training::RmsProp {
        learning_rate: 1e-3,
        rho: 0.9,
        epsilon: 1e-7,
    };
    let (mut a, mut b) = (params.clone(), params.clone());
    let mut sa = repsense_core::training::OptimizerState::new(&config);
    let mut sb = repsense_core::training::OptimizerState::new(&config);
    opt.step(&mut a, &single.grads, &mut sa);
    opt.step(&mut b, &repeated.grads, &mut sb);
    assert!(max_scaled_error(&a, &b) < 1e-14);
}

#[test]
fn zero_dropout_train_mode_equals_infer() {
    let mut r = rng(13);
    for _ in 0..10 {
        let config = tiny_config(&mut r);
        let params = random_params(&config, &mut r, 1.0);
        let seq = random_sequence(&config, config.max_seq_len, 0.2, &mut r);
        let masks = sample_recurrent_masks::<f64>(&config, 0.0, &mut r);
        let (_, train) = forward_features(
            &seq,
            &params,
            &config,
            Mode::Train {
                recurrent_masks: &masks,
            },
        )
        .unwrap();
        let (_, infer) = forward_features(&seq, &params, &config, Mode::Infer).unwrap();
        assert_eq!(train, infer);
    }
}

#[test]
fn masks_are_inverted_dropout() {
    let mut r = rng(14);
    let config = repsense_core::ModelConfig::default();
    let masks = sample_recurrent_masks::<f64>(&config, 0.3, &mut r);
    let all: Vec<f64> = masks.concat();
    assert!(all
        .iter()
        .all(|&v| v == 0.0 || (v - 1.0 / 0.7).abs() < 1e-15));
    let dropped = all.iter().filter(|&&v| v == 0.0).count() as f64 / all.len() as f64;
    assert!((dropped - 0.3).abs() < 0.15, "{dropped}");
}

#[test]
fn unlabeled_sequence_is_a_contract_violation() {
    let mut r = rng(15);
    let config = tiny_config(&mut r);
    let params: ModelParams<f64> = random_params(&config, &mut r, 1.0);
    let mut seq = random_sequence(&config, config.max_seq_len, 0.0, &mut r);
    seq.label = None;
    assert!(sequence_gradients(&seq, &params, &config, None, false).is_err());
}
