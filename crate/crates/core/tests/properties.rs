mod common;

use std::sync::Arc;

use common::*;
use proptest::prelude::*;
use repsense_core::evaluation::ConfusionMatrix;
use repsense_core::model::{read_model, write_model, SavedModel};
use repsense_core::serving::window_input;
use repsense_core::*;

fn small_config(units: Vec<usize>, k: usize, t: usize) -> ModelConfig {
    ModelConfig {
        input_dim: FRAME_FEATURES,
        lstm_units: units,
        num_classes: k,
        max_seq_len: t,
        pad_value: 0.0,
    }
}

fn registry(k: usize) -> ClassRegistry {
    ClassRegistry::new((0..k).map(|i| format!("Class{i}")).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tail_padding_never_changes_logits(seed in any::<u64>(), extra in 1usize..40) {
        let mut r = rng(seed);
        let config = tiny_config(&mut r);
        let params = random_params(&config, &mut r, 2.0);
        let seq = random_sequence(&config, config.max_seq_len, 0.3, &mut r);
        let (_, a) = forward_features(&seq, &params, &config, Mode::Infer).unwrap();
        let long_config = ModelConfig { max_seq_len: config.max_seq_len + extra, ..config.clone() };
        let mut long = seq.clone();
        long.steps.extend(std::iter::repeat_n(None, extra));
        let (_, b) = forward_features(&long, &params, &long_config, Mode::Infer).unwrap();
        prop_assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        let oracle = reference_logits(&seq, &params, &config, None);
        prop_assert!(a.iter().zip(&oracle).all(|(x, y)| (x - y).abs() <= 1e-12));
    }

    #[test]
    fn probabilities_are_a_distribution(seed in any::<u64>()) {
        let mut r = rng(seed);
        let config = tiny_config(&mut r);
        let params = random_params(&config, &mut r, 4.0);
        let seq = random_sequence(&config, config.max_seq_len, 0.3, &mut r);
        let (p, _) = forward_features(&seq, &params, &config, Mode::Infer).unwrap();
        let total: f64 = p.probs.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        prop_assert!(p.probs.iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert_eq!(p.probs[p.label.index()], p.probs.iter().cloned().fold(f64::MIN, f64::max));
    }

    #[test]
    fn model_files_round_trip_bit_exact(
        seed in any::<u64>(),
        units in prop::collection::vec(1usize..12, 1..4),
        k in 2usize..6,
        t in 1usize..40,
    ) {
        let config = small_config(units, k, t);
        let params = init_params::<f32>(&config, seed).unwrap();
        let reg = registry(k);
        let mut a = Vec::new();
        write_model(&mut a, &params, &config, &reg).unwrap();
        let back = read_model(&a[..]).unwrap();
        prop_assert_eq!(&back.config, &config);
        prop_assert_eq!(&back.registry, &reg);
        let mut b = Vec::new();
        write_model(&mut b, &back.params, &back.config, &back.registry).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn streaming_matches_rebuild_and_stays_bounded(
        seed in any::<u64>(),
        window in 1usize..12,
        frames in prop::collection::vec((any::<u16>(), 0.0f64..1.0), 1..60),
    ) {
        let config = small_config(vec![4], 3, 12);
        let model = Arc::new(SavedModel {
            params: init_params::<f32>(&config, seed).unwrap(),
            config: config.clone(),
            registry: registry(3),
        });
        let mut session = Session::new(7, model.clone(), window).unwrap();
        let mut kept: Vec<LandmarkFrame> = Vec::new();
        for (i, (base, p_nan)) in frames.into_iter().enumerate() {
            let mut raw: Vec<f32> = (0..FRAME_FEATURES).map(|j| ((base as usize * 31 + j * 7) % 101) as f32 / 50.0 - 1.0).collect();
            if p_nan < 0.15 {
                raw[i % FRAME_FEATURES] = f32::NAN;
            }
            let got = session.push_frame(&raw).unwrap();
            kept.push(sanitize_frame(&raw).unwrap());
            if kept.len() > window {
                kept.remove(0);
            }
            prop_assert!(session.window().len() <= window);
            let (want, _) = forward(&window_input(kept.clone(), 12), &model.params, &config, Mode::Infer).unwrap();
            prop_assert_eq!(&got.probs, &want);
            prop_assert_eq!(got.window_fill, kept.iter().filter(|f| !f.is_padding()).count());
        }
    }

    #[test]
    fn confusion_rows_sum_to_support(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..200)) {
        let m = ConfusionMatrix::from_pairs(
            ClassRegistry::default(),
            pairs.iter().map(|&(t, p)| (ExerciseLabel(t), ExerciseLabel(p))),
        )
        .unwrap();
        let report = EvalReport::from_confusion("P", m.clone()).unwrap();
        for k in 0..4 {
            let row: u64 = (0..4).map(|j| m.get(ExerciseLabel(k), ExerciseLabel(j))).sum();
            prop_assert_eq!(row, pairs.iter().filter(|(t, _)| *t == k).count() as u64);
            prop_assert_eq!(row, report.support[k]);
        }
        prop_assert_eq!(report.overall_accuracy, m.trace() as f64 / m.total() as f64);
    }
}
