//! Masked stacked LSTM with a dense softmax head.
//!
//! Packed gate order is `[i, f, g, o]` in every kernel and bias. Kernels are
//! row-major: the input kernel of a layer is `4u × d`, the recurrent kernel
//! `4u × u`, the dense kernel `k × u_last`.

mod io;
mod params;

pub use io::{load_model, read_model, save_model, write_model, SavedModel, MODEL_FORMAT_VERSION};
pub use params::{init_params, param_count, LayerParams, ModelParams, TensorInfo};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::landmarks::{
    flatten_frame, ExerciseLabel, PoseSequence, DEFAULT_MAX_SEQ_LEN, DEFAULT_PAD_VALUE,
    FRAME_FEATURES,
};
use crate::real::Real;

pub const GATE_ORDER: &str = "ifgo";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub lstm_units: Vec<usize>,
    pub num_classes: usize,
    pub max_seq_len: usize,
    pub pad_value: f32,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: FRAME_FEATURES,
            lstm_units: vec![64, 64],
            num_classes: 4,
            max_seq_len: DEFAULT_MAX_SEQ_LEN,
            pad_value: DEFAULT_PAD_VALUE,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Config("input_dim must be at least 1".into()));
        }
        if self.lstm_units.is_empty() || self.lstm_units.contains(&0) {
            return Err(Error::Config(
                "lstm_units must be non-empty with every layer at least 1 unit".into(),
            ));
        }
        if self.num_classes < 1 {
            return Err(Error::Config("num_classes must be at least 1".into()));
        }
        if self.max_seq_len == 0 {
            return Err(Error::Config("max_seq_len must be at least 1".into()));
        }
        if !self.pad_value.is_finite() {
            return Err(Error::Config("pad_value must be finite".into()));
        }
        Ok(())
    }

    /// Input width of each LSTM layer.
    pub fn layer_inputs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        std::iter::once(self.input_dim)
            .chain(self.lstm_units.iter().copied())
            .zip(self.lstm_units.iter().copied())
    }

    pub fn top_units(&self) -> usize {
        *self.lstm_units.last().expect("validated config has layers")
    }
}

/// Output distribution with its argmax (ties go to the lowest index).
#[derive(Debug, Clone, PartialEq)]
pub struct ClassProbabilities {
    pub probs: Vec<f64>,
    pub label: ExerciseLabel,
}

impl ClassProbabilities {
    pub fn from_logits<F: Real>(logits: &[F]) -> Result<Self> {
        let z: Vec<f64> = logits.iter().map(|v| v.to_f64_lossy()).collect();
        let probs = softmax(&z)?;
        let label = ExerciseLabel(argmax(&probs));
        Ok(Self { probs, label })
    }
}

/// Index of the largest value, lowest index on ties.
pub fn argmax<F: PartialOrd>(values: &[F]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax.
pub fn softmax<F: Real>(logits: &[F]) -> Result<Vec<F>> {
    if logits.is_empty() {
        return Err(Error::Contract("softmax of an empty vector".into()));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Contract("softmax input must be finite".into()));
    }
    let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let exps: Vec<F> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: F = exps.iter().copied().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

#[inline]
pub(crate) fn sigmoid<F: Real>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

/// Dot product with a fixed 8-way accumulation order, so results are
/// reproducible while still vectorizing.
#[inline]
pub(crate) fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [F::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = F::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail += *x * *y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Gate activations and new state for one time step of one layer.
#[derive(Debug, Clone)]
pub(crate) struct StepOutput<F> {
    /// `[i, f, g, o]` after their nonlinearities, `4u` long.
    pub gates: Vec<F>,
    pub c: Vec<F>,
    pub h: Vec<F>,
}

impl<F: Real> LayerParams<F> {
    /// One LSTM step. `h_in` is the (possibly dropout-masked) recurrent input.
    pub(crate) fn step(&self, x: &[F], h_in: &[F], c: &[F]) -> StepOutput<F> {
        let (d, u) = (self.input_dim, self.units);
        let mut gates = self.bias.clone();
        for (r, g) in gates.iter_mut().enumerate() {
            *g += dot(&self.input_kernel[r * d..(r + 1) * d], x)
                + dot(&self.recurrent_kernel[r * u..(r + 1) * u], h_in);
        }
        for (r, g) in gates.iter_mut().enumerate() {
            *g = if (2 * u..3 * u).contains(&r) {
                g.tanh()
            } else {
                sigmoid(*g)
            };
        }
        let mut c_new = vec![F::zero(); u];
        let mut h_new = vec![F::zero(); u];
        for j in 0..u {
            let (i, f, gg, o) = (gates[j], gates[u + j], gates[2 * u + j], gates[3 * u + j]);
            c_new[j] = f * c[j] + i * gg;
            h_new[j] = o * c_new[j].tanh();
        }
        StepOutput {
            gates,
            c: c_new,
            h: h_new,
        }
    }
}

/// One LSTM cell step: returns `(h', c')`.
///
/// `recurrent_mask`, when given, multiplies `h` before it enters the
/// recurrent kernel (training-time recurrent dropout).
pub fn lstm_cell_step<F: Real>(
    x: &[F],
    h: &[F],
    c: &[F],
    layer: &LayerParams<F>,
    recurrent_mask: Option<&[F]>,
) -> Result<(Vec<F>, Vec<F>)> {
    let u = layer.units;
    if x.len() != layer.input_dim || h.len() != u || c.len() != u {
        return Err(Error::Contract(format!(
            "cell step shapes: x={} h={} c={}, layer expects d={} u={u}",
            x.len(),
            h.len(),
            c.len(),
            layer.input_dim
        )));
    }
    let out = match recurrent_mask {
        Some(m) if m.len() != u => {
            return Err(Error::Contract(format!(
                "recurrent mask has {} entries, expected {u}",
                m.len()
            )))
        }
        Some(m) => {
            let hm: Vec<F> = h.iter().zip(m).map(|(a, b)| *a * *b).collect();
            layer.step(x, &hm, c)
        }
        None => layer.step(x, h, c),
    };
    Ok((out.h, out.c))
}

/// Whether recurrent dropout is active.
#[derive(Debug, Clone, Copy)]
pub enum Mode<'a, F> {
    Infer,
    /// One mask per layer (length = that layer's units), applied to the
    /// recurrent input at every time step.
    Train {
        recurrent_masks: &'a [Vec<F>],
    },
}

/// Time-major network input. `None` marks a masked (padding) step.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence<F> {
    pub steps: Vec<Option<Vec<F>>>,
    pub label: Option<ExerciseLabel>,
}

impl<F: Real> FeatureSequence<F> {
    pub fn from_pose(seq: &PoseSequence, pad_value: f32) -> Self {
        let steps = seq
            .frames()
            .iter()
            .map(|f| {
                (!f.is_padding()).then(|| {
                    flatten_frame(f, pad_value)
                        .iter()
                        .map(|&v| F::from_single(v))
                        .collect()
                })
            })
            .collect();
        Self {
            steps,
            label: seq.label,
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn real_len(&self) -> usize {
        self.steps.iter().filter(|s| s.is_some()).count()
    }
}

pub(crate) fn check_shapes<F>(
    seq: &FeatureSequence<F>,
    params: &ModelParams<F>,
    config: &ModelConfig,
    mode: &Mode<'_, F>,
) -> Result<()> {
    params.check_matches(config)?;
    if seq.steps.len() != config.max_seq_len {
        return Err(Error::Contract(format!(
            "sequence has {} steps, model max_seq_len is {}",
            seq.steps.len(),
            config.max_seq_len
        )));
    }
    if let Some(t) = seq
        .steps
        .iter()
        .position(|s| s.as_ref().is_some_and(|x| x.len() != config.input_dim))
    {
        return Err(Error::Contract(format!(
            "step {t} width does not match input_dim {}",
            config.input_dim
        )));
    }
    if let Mode::Train { recurrent_masks } = mode {
        if recurrent_masks.len() != config.lstm_units.len()
            || recurrent_masks
                .iter()
                .zip(&config.lstm_units)
                .any(|(m, &u)| m.len() != u)
        {
            return Err(Error::Contract(
                "recurrent masks do not match lstm_units".into(),
            ));
        }
    }
    Ok(())
}

/// Runs the network over a padded landmark sequence. See [`forward_features`].
pub fn forward<F: Real>(
    seq: &PoseSequence,
    params: &ModelParams<F>,
    config: &ModelConfig,
    mode: Mode<'_, F>,
) -> Result<(ClassProbabilities, Vec<F>)> {
    forward_features(
        &FeatureSequence::from_pose(seq, config.pad_value),
        params,
        config,
        mode,
    )
}

/// Runs the network. Masked steps are skipped: every layer's `(h, c)` passes
/// through them unchanged. Returns the class distribution and the logits.
pub fn forward_features<F: Real>(
    seq: &FeatureSequence<F>,
    params: &ModelParams<F>,
    config: &ModelConfig,
    mode: Mode<'_, F>,
) -> Result<(ClassProbabilities, Vec<F>)> {
    check_shapes(seq, params, config, &mode)?;
    let mut state: Vec<(Vec<F>, Vec<F>)> = config
        .lstm_units
        .iter()
        .map(|&u| (vec![F::zero(); u], vec![F::zero(); u]))
        .collect();
    for step in seq.steps.iter().flatten() {
        let mut x = step.clone();
        for (l, layer) in params.layers.iter().enumerate() {
            let (h, c) = &state[l];
            let out = match mode {
                Mode::Infer => layer.step(&x, h, c),
                Mode::Train { recurrent_masks } => {
                    let hm: Vec<F> = h
                        .iter()
                        .zip(&recurrent_masks[l])
                        .map(|(a, b)| *a * *b)
                        .collect();
                    layer.step(&x, &hm, c)
                }
            };
            x = out.h.clone();
            state[l] = (out.h, out.c);
        }
    }
    let logits = params.dense_logits(&state.last().expect("at least one layer").0);
    Ok((ClassProbabilities::from_logits(&logits)?, logits))
}
