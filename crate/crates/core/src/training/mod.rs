//! Loss, gradients, optimizer and the training loop.

mod bptt;
mod gradcheck;
mod rmsprop;

pub use bptt::{
    batch_loss, compute_gradients, sample_recurrent_masks, sequence_gradients, BatchGradients,
    SequenceGradients,
};
pub use gradcheck::{finite_diff_grad, finite_diff_params, scaled_relative_error};
pub use rmsprop::{OptimizerState, RmsProp};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::landmarks::{ExerciseLabel, PoseSequence};
use crate::model::{
    forward_features, init_params, ClassProbabilities, FeatureSequence, Mode, ModelConfig,
    ModelParams,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub rmsprop_rho: f64,
    pub rmsprop_epsilon: f64,
    pub recurrent_dropout: f64,
    pub val_fraction: f64,
    pub seed: u64,
    pub shuffle_each_epoch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 50,
            learning_rate: 1e-4,
            rmsprop_rho: 0.9,
            rmsprop_epsilon: 1e-7,
            recurrent_dropout: 0.3,
            val_fraction: 0.2,
            seed: 0,
            shuffle_each_epoch: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.into()));
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if self.epochs == 0 {
            return fail("epochs must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.rmsprop_rho) {
            return fail("rmsprop_rho must be in [0, 1)");
        }
        if self.rmsprop_epsilon.is_nan() || self.rmsprop_epsilon <= 0.0 {
            return fail("rmsprop_epsilon must be positive");
        }
        if !(0.0..1.0).contains(&self.recurrent_dropout) {
            return fail("recurrent_dropout must be in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return fail("val_fraction must be in [0, 1)");
        }
        Ok(())
    }

    pub fn optimizer(&self) -> RmsProp {
        RmsProp {
            learning_rate: self.learning_rate,
            rho: self.rmsprop_rho,
            epsilon: self.rmsprop_epsilon,
        }
    }
}

/// `-ln p[target]`.
pub fn cross_entropy(probs: &ClassProbabilities, target: ExerciseLabel) -> f64 {
    -probs.probs[target.index()].ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    /// Absent when the validation split is empty.
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        self.epochs
            .iter()
            .map(|r| serde_json::to_string(r).expect("plain record") + "\n")
            .collect()
    }
}

/// Indices into the dataset for each side of the split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

/// Per-class split: `round(val_fraction · n_c)` examples of each class go to
/// validation. Every class must have at least one example.
pub fn stratified_split(
    labels: &[ExerciseLabel],
    num_classes: usize,
    val_fraction: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Split> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, l) in labels.iter().enumerate() {
        by_class
            .get_mut(l.index())
            .ok_or_else(|| {
                Error::Config(format!("label {} outside {num_classes} classes", l.index()))
            })?
            .push(i);
    }
    let mut split = Split {
        train: Vec::new(),
        val: Vec::new(),
    };
    for (c, mut idx) in by_class.into_iter().enumerate() {
        if idx.is_empty() {
            return Err(Error::Config(format!("class {c} has no examples")));
        }
        idx.shuffle(rng);
        let n_val = (val_fraction * idx.len() as f64).round() as usize;
        split.val.extend_from_slice(&idx[..n_val]);
        split.train.extend_from_slice(&idx[n_val..]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    Ok(split)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams<f32>,
    pub history: TrainHistory,
    pub split: Split,
}

/// The train/validation split that [`train`] uses for this dataset and config.
pub fn dataset_split(
    dataset: &[PoseSequence],
    num_classes: usize,
    cfg: &TrainConfig,
) -> Result<Split> {
    split_with_rng(dataset, num_classes, cfg).map(|(s, _)| s)
}

fn split_with_rng(
    dataset: &[PoseSequence],
    num_classes: usize,
    cfg: &TrainConfig,
) -> Result<(Split, ChaCha8Rng)> {
    let labels: Vec<ExerciseLabel> = dataset
        .iter()
        .enumerate()
        .map(|(i, s)| {
            s.label
                .ok_or_else(|| Error::Config(format!("sequence {i} has no label")))
        })
        .collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let split = stratified_split(&labels, num_classes, cfg.val_fraction, &mut rng)?;
    Ok((split, rng))
}

/// Trains from scratch. See [`train_with`].
pub fn train(
    dataset: &[PoseSequence],
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with(dataset, model, cfg, |_| {})
}

/// Trains from scratch, calling `on_epoch` after every epoch.
///
/// Deterministic in `(dataset, model, cfg)`: parameters are initialized from
/// `cfg.seed`, and split, shuffling and dropout draw from a second stream of
/// the same seed.
pub fn train_with(
    dataset: &[PoseSequence],
    model: &ModelConfig,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    model.validate()?;
    cfg.validate()?;
    let mut params = init_params::<f32>(model, cfg.seed)?;
    let (split, mut rng) = split_with_rng(dataset, model.num_classes, cfg)?;
    let features: Vec<FeatureSequence<f32>> = dataset
        .iter()
        .map(|s| FeatureSequence::from_pose(s, model.pad_value))
        .collect();
    let val: Vec<FeatureSequence<f32>> = split.val.iter().map(|&i| features[i].clone()).collect();

    let opt = cfg.optimizer();
    let mut state = OptimizerState::new(model);
    let mut order = split.train.clone();
    let mut history = TrainHistory::default();
    for epoch in 0..cfg.epochs {
        if cfg.shuffle_each_epoch {
            order.shuffle(&mut rng);
        }
        let (mut loss_sum, mut acc_sum) = (0.0, 0.0);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<FeatureSequence<f32>> =
                chunk.iter().map(|&i| features[i].clone()).collect();
            let g = compute_gradients(&batch, &params, model, cfg.recurrent_dropout, &mut rng)?;
            opt.step(&mut params, &g.grads, &mut state);
            loss_sum += g.loss * chunk.len() as f64;
            acc_sum += g.accuracy * chunk.len() as f64;
        }
        let n = order.len().max(1) as f64;
        let (val_loss, val_acc) = if val.is_empty() {
            (None, None)
        } else {
            let (l, a) = loss_and_accuracy(&val, &params, model)?;
            (Some(l), Some(a))
        };
        let record = EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / n,
            train_acc: acc_sum / n,
            val_loss,
            val_acc,
        };
        on_epoch(&record);
        history.epochs.push(record);
    }
    Ok(TrainOutcome {
        params,
        history,
        split,
    })
}

/// Inference-mode mean loss and accuracy.
pub fn loss_and_accuracy(
    seqs: &[FeatureSequence<f32>],
    params: &ModelParams<f32>,
    model: &ModelConfig,
) -> Result<(f64, f64)> {
    use rayon::prelude::*;
    let per: Vec<(f64, bool)> = seqs
        .par_iter()
        .map(|s| {
            let target = s
                .label
                .ok_or_else(|| Error::Contract("unlabeled sequence".into()))?;
            let (p, _) = forward_features(s, params, model, Mode::Infer)?;
            Ok((cross_entropy(&p, target), p.label == target))
        })
        .collect::<Result<_>>()?;
    let n = per.len() as f64;
    Ok((
        per.iter().map(|p| p.0).sum::<f64>() / n,
        per.iter().filter(|p| p.1).count() as f64 / n,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::softmax;

    fn probs(p: Vec<f64>) -> ClassProbabilities {
        ClassProbabilities {
            label: ExerciseLabel(crate::model::argmax(&p)),
            probs: p,
        }
    }

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(
            cross_entropy(&probs(vec![0.0, 1.0, 0.0, 0.0]), ExerciseLabel(1)),
            0.0
        );
        let uniform = probs(softmax(&[0.0f64; 4]).unwrap());
        assert!((cross_entropy(&uniform, ExerciseLabel(3)) - 1.386294).abs() < 1e-6);
        assert!(
            (cross_entropy(&probs(vec![0.5, 0.5]), ExerciseLabel(0)) - std::f64::consts::LN_2)
                .abs()
                < 1e-12
        );
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig {
                batch_size: 0,
                ..Default::default()
            },
            TrainConfig {
                epochs: 0,
                ..Default::default()
            },
            TrainConfig {
                learning_rate: 0.0,
                ..Default::default()
            },
            TrainConfig {
                recurrent_dropout: 1.0,
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn split_is_stratified() {
        let labels: Vec<_> = (0..40).map(|i| ExerciseLabel(i % 4)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = stratified_split(&labels, 4, 0.2, &mut rng).unwrap();
        assert_eq!(s.val.len(), 8);
        assert_eq!(s.train.len(), 32);
        for c in 0..4 {
            assert_eq!(s.val.iter().filter(|&&i| labels[i].index() == c).count(), 2);
        }
    }

    #[test]
    fn split_rejects_missing_class() {
        let labels = vec![ExerciseLabel(0), ExerciseLabel(1), ExerciseLabel(3)];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            stratified_split(&labels, 4, 0.2, &mut rng),
            Err(Error::Config(_))
        ));
    }
}
