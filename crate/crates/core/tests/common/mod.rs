//! Test-only oracles, written independently of the library's packed kernels.
#![allow(dead_code, clippy::needless_range_loop)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use repsense_core::landmarks::ExerciseLabel;
use repsense_core::model::{FeatureSequence, ModelConfig, ModelParams};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// d ≤ 3, u ≤ 3, t ≤ 5, k ≤ 3, one or two layers.
pub fn tiny_config(rng: &mut impl Rng) -> ModelConfig {
    let layers = rng.random_range(1..=2);
    ModelConfig {
        input_dim: rng.random_range(1..=3),
        lstm_units: (0..layers).map(|_| rng.random_range(1..=3)).collect(),
        num_classes: rng.random_range(2..=3),
        max_seq_len: rng.random_range(1..=5),
        pad_value: 0.0,
    }
}

pub fn random_params(config: &ModelConfig, rng: &mut impl Rng, scale: f64) -> ModelParams<f64> {
    let mut p = ModelParams::<f64>::zeros(config);
    for t in p.tensors_mut() {
        for v in t {
            *v = rng.random_range(-scale..scale);
        }
    }
    p
}

/// Random sequence; each step is masked with probability `p_mask`.
pub fn random_sequence(
    config: &ModelConfig,
    len: usize,
    p_mask: f64,
    rng: &mut impl Rng,
) -> FeatureSequence<f64> {
    let steps = (0..len)
        .map(|_| {
            (!rng.random_bool(p_mask)).then(|| {
                (0..config.input_dim)
                    .map(|_| rng.random_range(-1.5..1.5))
                    .collect()
            })
        })
        .collect();
    FeatureSequence {
        steps,
        label: Some(ExerciseLabel(rng.random_range(0..config.num_classes))),
    }
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Straightforward per-gate, per-timestep evaluation. `masks` multiplies the
/// recurrent input of each layer.
pub fn reference_logits(
    seq: &FeatureSequence<f64>,
    p: &ModelParams<f64>,
    config: &ModelConfig,
    masks: Option<&[Vec<f64>]>,
) -> Vec<f64> {
    let mut hs: Vec<Vec<f64>> = config.lstm_units.iter().map(|&u| vec![0.0; u]).collect();
    let mut cs = hs.clone();
    for step in &seq.steps {
        let Some(x0) = step else { continue };
        let mut input = x0.clone();
        for (l, layer) in p.layers.iter().enumerate() {
            let (d, u) = (layer.input_dim, layer.units);
            let h_rec: Vec<f64> = match masks {
                Some(m) => (0..u).map(|j| hs[l][j] * m[l][j]).collect(),
                None => hs[l].clone(),
            };
            let pre = |gate: usize, j: usize| {
                let row = gate * u + j;
                let mut s = layer.bias[row];
                for k in 0..d {
                    s += layer.input_kernel[row * d + k] * input[k];
                }
                for k in 0..u {
                    s += layer.recurrent_kernel[row * u + k] * h_rec[k];
                }
                s
            };
            let mut h_new = vec![0.0; u];
            let mut c_new = vec![0.0; u];
            for j in 0..u {
                let i = sig(pre(0, j));
                let f = sig(pre(1, j));
                let g = pre(2, j).tanh();
                let o = sig(pre(3, j));
                c_new[j] = f * cs[l][j] + i * g;
                h_new[j] = o * c_new[j].tanh();
            }
            hs[l] = h_new.clone();
            cs[l] = c_new;
            input = h_new;
        }
    }
    let h = hs.last().unwrap();
    let u = h.len();
    (0..config.num_classes)
        .map(|k| {
            p.dense_bias[k]
                + (0..u)
                    .map(|j| p.dense_kernel[k * u + j] * h[j])
                    .sum::<f64>()
        })
        .collect()
}

pub fn reference_loss(
    seq: &FeatureSequence<f64>,
    p: &ModelParams<f64>,
    config: &ModelConfig,
    masks: Option<&[Vec<f64>]>,
) -> f64 {
    let z = reference_logits(seq, p, config, masks);
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    lse - z[seq.label.unwrap().index()]
}

pub fn max_scaled_error(a: &ModelParams<f64>, b: &ModelParams<f64>) -> f64 {
    a.to_flat()
        .iter()
        .zip(b.to_flat())
        .map(|(x, y)| (x - y).abs() / 1f64.max(x.abs()).max(y.abs()))
        .fold(0.0, f64::max)
}
