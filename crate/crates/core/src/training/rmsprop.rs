use crate::model::{ModelConfig, ModelParams};
use crate::real::Real;

/// Plain RMSProp: no momentum, no centering.
///
/// ```text
/// s ← ρ·s + (1 − ρ)·g²
/// θ ← θ − lr·g / (√s + ε)
/// ```
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmsProp {
    pub learning_rate: f64,
    pub rho: f64,
    pub epsilon: f64,
}

/// Squared-gradient moving averages, one per parameter scalar.
#[derive(Debug, Clone)]
pub struct OptimizerState<F> {
    pub accumulators: ModelParams<F>,
    pub step: u64,
}

impl<F: Real> OptimizerState<F> {
    pub fn new(config: &ModelConfig) -> Self {
        Self {
            accumulators: ModelParams::zeros(config),
            step: 0,
        }
    }
}

impl RmsProp {
    /// Updates a single scalar and its accumulator.
    #[inline]
    pub fn update_scalar<F: Real>(&self, theta: &mut F, s: &mut F, g: F) {
        let rho = F::from_f64_lossy(self.rho);
        let lr = F::from_f64_lossy(self.learning_rate);
        let eps = F::from_f64_lossy(self.epsilon);
        *s = rho * *s + (F::one() - rho) * g * g;
        *theta -= lr * g / (s.sqrt() + eps);
    }

    pub fn step<F: Real>(
        &self,
        params: &mut ModelParams<F>,
        grads: &ModelParams<F>,
        state: &mut OptimizerState<F>,
    ) {
        for ((p, g), s) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(state.accumulators.tensors_mut())
        {
            for ((theta, &gv), sv) in p.iter_mut().zip(g).zip(s.iter_mut()) {
                self.update_scalar(theta, sv, gv);
            }
        }
        state.step += 1;
    }
}
