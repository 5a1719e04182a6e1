//! Central finite differences, used to verify the analytic gradients.

use crate::model::{ModelConfig, ModelParams};

/// `(f(θ + h·eᵢ) − f(θ − h·eᵢ)) / 2h` for every coordinate.
pub fn finite_diff_grad(mut f: impl FnMut(&[f64]) -> f64, theta: &[f64], h: f64) -> Vec<f64> {
    let mut probe = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let plus = f(&probe);
            probe[i] = orig - h;
            let minus = f(&probe);
            probe[i] = orig;
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// Finite-difference gradient of a loss over model parameters.
pub fn finite_diff_params(
    loss: impl Fn(&ModelParams<f64>) -> f64,
    params: &ModelParams<f64>,
    config: &ModelConfig,
    h: f64,
) -> ModelParams<f64> {
    let mut scratch = params.clone();
    let flat = finite_diff_grad(
        |theta| {
            scratch.set_flat(theta);
            loss(&scratch)
        },
        &params.to_flat(),
        h,
    );
    let mut out = ModelParams::zeros(config);
    out.set_flat(&flat);
    out
}

/// `|a − b| / max(1, |a|, |b|)`.
pub fn scaled_relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}
