use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use super::{dot, ModelConfig};
use crate::error::{Error, Result};
use crate::real::Real;

/// Weights of one LSTM layer, gates packed `[i, f, g, o]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<F> {
    pub input_dim: usize,
    pub units: usize,
    /// `4u × d`, row-major.
    pub input_kernel: Vec<F>,
    /// `4u × u`, row-major.
    pub recurrent_kernel: Vec<F>,
    /// `4u`.
    pub bias: Vec<F>,
}

impl<F: Real> LayerParams<F> {
    pub fn zeros(input_dim: usize, units: usize) -> Self {
        Self {
            input_dim,
            units,
            input_kernel: vec![F::zero(); 4 * units * input_dim],
            recurrent_kernel: vec![F::zero(); 4 * units * units],
            bias: vec![F::zero(); 4 * units],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<F> {
    pub layers: Vec<LayerParams<F>>,
    /// `k × u_last`, row-major.
    pub dense_kernel: Vec<F>,
    pub dense_bias: Vec<F>,
}

/// Name and shape of one stored tensor.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Closed-form number of trainable scalars.
pub fn param_count(config: &ModelConfig) -> usize {
    let lstm: usize = config
        .layer_inputs()
        .map(|(d, u)| 4 * (u * (d + u) + u))
        .sum();
    lstm + config.top_units() * config.num_classes + config.num_classes
}

impl<F: Real> ModelParams<F> {
    pub fn zeros(config: &ModelConfig) -> Self {
        Self {
            layers: config
                .layer_inputs()
                .map(|(d, u)| LayerParams::zeros(d, u))
                .collect(),
            dense_kernel: vec![F::zero(); config.num_classes * config.top_units()],
            dense_bias: vec![F::zero(); config.num_classes],
        }
    }

    /// Tensor manifest in storage order.
    pub fn tensor_infos(config: &ModelConfig) -> Vec<TensorInfo> {
        let mut out = Vec::new();
        for (l, (d, u)) in config.layer_inputs().enumerate() {
            out.push(TensorInfo {
                name: format!("lstm{l}.input_kernel"),
                shape: vec![4 * u, d],
            });
            out.push(TensorInfo {
                name: format!("lstm{l}.recurrent_kernel"),
                shape: vec![4 * u, u],
            });
            out.push(TensorInfo {
                name: format!("lstm{l}.bias"),
                shape: vec![4 * u],
            });
        }
        out.push(TensorInfo {
            name: "dense.kernel".into(),
            shape: vec![config.num_classes, config.top_units()],
        });
        out.push(TensorInfo {
            name: "dense.bias".into(),
            shape: vec![config.num_classes],
        });
        out
    }

    /// All tensors in storage order.
    pub fn tensors(&self) -> Vec<&[F]> {
        let mut out: Vec<&[F]> = Vec::with_capacity(3 * self.layers.len() + 2);
        for l in &self.layers {
            out.push(&l.input_kernel);
            out.push(&l.recurrent_kernel);
            out.push(&l.bias);
        }
        out.push(&self.dense_kernel);
        out.push(&self.dense_bias);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [F]> {
        let mut out: Vec<&mut [F]> = Vec::with_capacity(3 * self.layers.len() + 2);
        for l in &mut self.layers {
            out.push(&mut l.input_kernel);
            out.push(&mut l.recurrent_kernel);
            out.push(&mut l.bias);
        }
        out.push(&mut self.dense_kernel);
        out.push(&mut self.dense_bias);
        out
    }

    /// Number of scalars actually allocated.
    pub fn scalar_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<F> {
        self.tensors().concat()
    }

    /// Overwrites every scalar from `flat`, in storage order.
    pub fn set_flat(&mut self, flat: &[F]) {
        assert_eq!(flat.len(), self.scalar_count());
        let mut off = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[off..off + t.len()]);
            off += t.len();
        }
    }

    pub fn cast<G: Real>(&self) -> ModelParams<G> {
        let c = |v: &[F]| {
            v.iter()
                .map(|x| G::from_f64_lossy(x.to_f64_lossy()))
                .collect::<Vec<G>>()
        };
        ModelParams {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    input_dim: l.input_dim,
                    units: l.units,
                    input_kernel: c(&l.input_kernel),
                    recurrent_kernel: c(&l.recurrent_kernel),
                    bias: c(&l.bias),
                })
                .collect(),
            dense_kernel: c(&self.dense_kernel),
            dense_bias: c(&self.dense_bias),
        }
    }

    pub(crate) fn dense_logits(&self, h: &[F]) -> Vec<F> {
        let u = h.len();
        self.dense_bias
            .iter()
            .enumerate()
            .map(|(k, &b)| b + dot(&self.dense_kernel[k * u..(k + 1) * u], h))
            .collect()
    }

    /// Adds `scale * other` to every scalar.
    pub fn add_scaled(&mut self, other: &Self, scale: F) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * *y;
            }
        }
    }
}

impl<F> ModelParams<F> {
    /// Checks every tensor shape against `config`.
    pub fn check_matches(&self, config: &ModelConfig) -> Result<()> {
        if self.layers.len() != config.lstm_units.len() {
            return Err(Error::Contract(format!(
                "params have {} LSTM layers, config has {}",
                self.layers.len(),
                config.lstm_units.len()
            )));
        }
        for (l, (layer, (d, u))) in self.layers.iter().zip(config.layer_inputs()).enumerate() {
            if layer.input_dim != d
                || layer.units != u
                || layer.input_kernel.len() != 4 * u * d
                || layer.recurrent_kernel.len() != 4 * u * u
                || layer.bias.len() != 4 * u
            {
                return Err(Error::Contract(format!(
                    "layer {l} shape does not match config (d={d}, u={u})"
                )));
            }
        }
        if self.dense_kernel.len() != config.num_classes * config.top_units()
            || self.dense_bias.len() != config.num_classes
        {
            return Err(Error::Contract(
                "dense layer shape does not match config".into(),
            ));
        }
        Ok(())
    }
}

/// Glorot-uniform kernels, zero biases except the forget-gate slice at 1.0.
/// Deterministic in `seed`.
pub fn init_params<F: Real>(config: &ModelConfig, seed: u64) -> Result<ModelParams<F>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fill = |buf: &mut [F], fan_in: usize, fan_out: usize| {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite bound");
        for v in buf {
            *v = F::from_f64_lossy(dist.sample(&mut rng));
        }
    };
    let mut params = ModelParams::<F>::zeros(config);
    for layer in &mut params.layers {
        let (d, u) = (layer.input_dim, layer.units);
        fill(&mut layer.input_kernel, d, 4 * u);
        fill(&mut layer.recurrent_kernel, u, 4 * u);
        layer.bias[u..2 * u].iter_mut().for_each(|b| *b = F::one());
    }
    let (u, k) = (config.top_units(), config.num_classes);
    fill(&mut params.dense_kernel, u, k);
    Ok(params)
}
