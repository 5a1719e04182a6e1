//! Backpropagation through time for the masked LSTM stack.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{
    argmax, check_shapes, FeatureSequence, Mode, ModelConfig, ModelParams, StepOutput,
};
use crate::real::Real;

/// Per-sequence gradient of the loss `-ln p[target]`.
#[derive(Debug, Clone)]
pub struct SequenceGradients<F> {
    pub params: ModelParams<F>,
    pub loss: f64,
    pub correct: bool,
    /// Gradient w.r.t. each frame's flattened features, `max_seq_len` rows.
    /// Only filled when requested; padding rows are always zero.
    pub inputs: Option<Vec<Vec<F>>>,
}

struct StepCache<F> {
    x: Vec<F>,
    h_in: Vec<F>,
    c_prev: Vec<F>,
    out: StepOutput<F>,
}

/// Draws one recurrent dropout mask per layer: each entry is `0` with
/// probability `p`, otherwise `1 / (1 - p)`.
pub fn sample_recurrent_masks<F: Real>(
    config: &ModelConfig,
    p: f64,
    rng: &mut impl Rng,
) -> Vec<Vec<F>> {
    let keep = F::from_f64_lossy(1.0 / (1.0 - p));
    config
        .lstm_units
        .iter()
        .map(|&u| {
            (0..u)
                .map(|_| {
                    if p > 0.0 && rng.random::<f64>() < p {
                        F::zero()
                    } else {
                        keep
                    }
                })
                .collect()
        })
        .collect()
}

/// `-ln softmax(logits)[target]` via log-sum-exp, and `softmax - onehot`.
pub(crate) fn loss_and_dlogits<F: Real>(logits: &[F], target: usize) -> (f64, Vec<F>) {
    let z: Vec<f64> = logits.iter().map(|v| v.to_f64_lossy()).collect();
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
    let lse = max + sum.ln();
    let d = z
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let p = (v - lse).exp();
            F::from_f64_lossy(if k == target { p - 1.0 } else { p })
        })
        .collect();
    (lse - z[target], d)
}

/// Gradient of one labeled sequence's loss. `masks` selects train mode.
pub fn sequence_gradients<F: Real>(
    seq: &FeatureSequence<F>,
    params: &ModelParams<F>,
    config: &ModelConfig,
    masks: Option<&[Vec<F>]>,
    want_inputs: bool,
) -> Result<SequenceGradients<F>> {
    let mode = match masks {
        Some(m) => Mode::Train { recurrent_masks: m },
        None => Mode::Infer,
    };
    check_shapes(seq, params, config, &mode)?;
    let target = seq
        .label
        .ok_or_else(|| Error::Contract("training sequence has no label".into()))?
        .index();
    if target >= config.num_classes {
        return Err(Error::Contract(format!("label {target} out of range")));
    }
    let n_layers = params.layers.len();

    // forward, recording every real step
    let mut state: Vec<(Vec<F>, Vec<F>)> = config
        .lstm_units
        .iter()
        .map(|&u| (vec![F::zero(); u], vec![F::zero(); u]))
        .collect();
    let mut steps: Vec<usize> = Vec::with_capacity(seq.real_len());
    let mut cache: Vec<Vec<StepCache<F>>> = Vec::with_capacity(seq.real_len());
    for (t, step) in seq.steps.iter().enumerate() {
        let Some(step) = step else { continue };
        let mut x: Vec<F> = step.clone();
        let mut per_layer = Vec::with_capacity(n_layers);
        for (l, layer) in params.layers.iter().enumerate() {
            let (h, c) = &state[l];
            let h_in: Vec<F> = match masks {
                Some(m) => h.iter().zip(&m[l]).map(|(a, b)| *a * *b).collect(),
                None => h.clone(),
            };
            let out = layer.step(&x, &h_in, c);
            let c_prev = std::mem::replace(&mut state[l], (out.h.clone(), out.c.clone())).1;
            let next_x = out.h.clone();
            per_layer.push(StepCache {
                x,
                h_in,
                c_prev,
                out,
            });
            x = next_x;
        }
        steps.push(t);
        cache.push(per_layer);
    }
    let h_top = &state[n_layers - 1].0;
    let logits = params.dense_logits(h_top);
    let (loss, dlogits) = loss_and_dlogits(&logits, target);
    let correct = argmax(&logits) == target;

    let mut grads = ModelParams::<F>::zeros(config);
    let u_top = h_top.len();
    let mut dh_next: Vec<Vec<F>> = config
        .lstm_units
        .iter()
        .map(|&u| vec![F::zero(); u])
        .collect();
    let mut dc_next = dh_next.clone();
    for (k, &dz) in dlogits.iter().enumerate() {
        grads.dense_bias[k] = dz;
        let row = &mut grads.dense_kernel[k * u_top..(k + 1) * u_top];
        let w = &params.dense_kernel[k * u_top..(k + 1) * u_top];
        for j in 0..u_top {
            row[j] = dz * h_top[j];
            dh_next[n_layers - 1][j] += dz * w[j];
        }
    }

    let mut input_grads = want_inputs.then(|| vec![vec![F::zero(); config.input_dim]; seq.len()]);
    for (si, per_layer) in cache.iter().enumerate().rev() {
        // gradient arriving from the layer above at this step
        let mut dx_above: Option<Vec<F>> = None;
        for l in (0..n_layers).rev() {
            let layer = &params.layers[l];
            let g = &mut grads.layers[l];
            let sc = &per_layer[l];
            let (d, u) = (layer.input_dim, layer.units);
            let mut dh = std::mem::take(&mut dh_next[l]);
            if let Some(extra) = dx_above.take() {
                for (a, b) in dh.iter_mut().zip(extra) {
                    *a += b;
                }
            }
            let gates = &sc.out.gates;
            let mut da = vec![F::zero(); 4 * u];
            let mut dc_prev = vec![F::zero(); u];
            for j in 0..u {
                let (i, f, gg, o) = (gates[j], gates[u + j], gates[2 * u + j], gates[3 * u + j]);
                let tc = sc.out.c[j].tanh();
                let dc = dc_next[l][j] + dh[j] * o * (F::one() - tc * tc);
                let d_o = dh[j] * tc;
                let d_i = dc * gg;
                let d_g = dc * i;
                let d_f = dc * sc.c_prev[j];
                dc_prev[j] = dc * f;
                da[j] = d_i * i * (F::one() - i);
                da[u + j] = d_f * f * (F::one() - f);
                da[2 * u + j] = d_g * (F::one() - gg * gg);
                da[3 * u + j] = d_o * o * (F::one() - o);
            }
            let need_dx = l > 0 || input_grads.is_some();
            let mut dx = vec![F::zero(); if need_dx { d } else { 0 }];
            let mut dh_in = vec![F::zero(); u];
            for (r, &a) in da.iter().enumerate() {
                g.bias[r] += a;
                if a == F::zero() {
                    continue;
                }
                let w_row = &layer.input_kernel[r * d..(r + 1) * d];
                let gw_row = &mut g.input_kernel[r * d..(r + 1) * d];
                for (gw, xv) in gw_row.iter_mut().zip(&sc.x) {
                    *gw += a * *xv;
                }
                if need_dx {
                    for (dxv, w) in dx.iter_mut().zip(w_row) {
                        *dxv += a * *w;
                    }
                }
                let u_row = &layer.recurrent_kernel[r * u..(r + 1) * u];
                let gu_row = &mut g.recurrent_kernel[r * u..(r + 1) * u];
                for (gu, hv) in gu_row.iter_mut().zip(&sc.h_in) {
                    *gu += a * *hv;
                }
                for (dhv, uw) in dh_in.iter_mut().zip(u_row) {
                    *dhv += a * *uw;
                }
            }
            if let Some(m) = masks {
                for (v, mk) in dh_in.iter_mut().zip(&m[l]) {
                    *v *= *mk;
                }
            }
            dh_next[l] = dh_in;
            dc_next[l] = dc_prev;
            if l > 0 {
                dx_above = Some(dx);
            } else if let Some(ig) = input_grads.as_mut() {
                ig[steps[si]] = dx;
            }
        }
    }

    Ok(SequenceGradients {
        params: grads,
        loss,
        correct,
        inputs: input_grads,
    })
}

/// Mean-loss gradients over a batch, with the accuracy of its predictions.
#[derive(Debug, Clone)]
pub struct BatchGradients<F> {
    pub grads: ModelParams<F>,
    pub loss: f64,
    pub accuracy: f64,
}

/// Gradients of the mean batch loss.
///
/// With `recurrent_dropout > 0` one mask per layer per sequence is drawn
/// from `rng` in batch order before any computation; per-sequence work then
/// runs in parallel and is summed in batch order, so results do not depend
/// on thread scheduling.
pub fn compute_gradients<F: Real>(
    batch: &[FeatureSequence<F>],
    params: &ModelParams<F>,
    config: &ModelConfig,
    recurrent_dropout: f64,
    rng: &mut impl Rng,
) -> Result<BatchGradients<F>> {
    if batch.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let masks: Vec<Option<Vec<Vec<F>>>> = batch
        .iter()
        .map(|_| {
            (recurrent_dropout > 0.0)
                .then(|| sample_recurrent_masks(config, recurrent_dropout, rng))
        })
        .collect();
    let per_seq: Vec<SequenceGradients<F>> = batch
        .par_iter()
        .zip(masks.par_iter())
        .map(|(seq, m)| sequence_gradients(seq, params, config, m.as_deref(), false))
        .collect::<Result<_>>()?;
    let n = batch.len();
    let scale = F::one() / F::from_usize(n).expect("batch size fits");
    let mut grads = ModelParams::<F>::zeros(config);
    let mut loss = 0.0;
    let mut correct = 0usize;
    for s in &per_seq {
        grads.add_scaled(&s.params, F::one());
        loss += s.loss;
        correct += usize::from(s.correct);
    }
    for t in grads.tensors_mut() {
        for v in t {
            *v *= scale;
        }
    }
    Ok(BatchGradients {
        grads,
        loss: loss / n as f64,
        accuracy: correct as f64 / n as f64,
    })
}

/// Mean loss of a batch in inference mode (no dropout).
pub fn batch_loss<F: Real>(
    batch: &[FeatureSequence<F>],
    params: &ModelParams<F>,
    config: &ModelConfig,
) -> Result<f64> {
    let mut total = 0.0;
    for seq in batch {
        let target = seq
            .label
            .ok_or_else(|| Error::Contract("sequence has no label".into()))?
            .index();
        let (_, logits) = crate::model::forward_features(seq, params, config, Mode::Infer)?;
        total += loss_and_dlogits(&logits, target).0;
    }
    Ok(total / batch.len() as f64)
}
