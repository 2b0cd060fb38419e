//! Central finite-difference gradient checker. It only calls the forward
//! closure, so it stays independent of every backward implementation.

use super::Tensor;
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Per input: `‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂)`.
    pub relative_errors: Vec<f64>,
    /// Largest absolute elementwise discrepancy over all inputs.
    pub max_abs_error: f64,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.relative_errors.iter().copied().fold(0.0, f64::max)
    }
}

/// Compare backward gradients of `f` at `inputs` against central differences
/// with step `h`. Every input must be a parameter (requires grad). Existing
/// gradients on the inputs are cleared.
pub fn check_gradients(
    inputs: &[Tensor<f64>],
    f: impl Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
    h: f64,
) -> Result<GradCheckReport> {
    inputs.iter().for_each(Tensor::zero_grad);
    f(inputs)?.backward()?;
    let analytic: Vec<Vec<f64>> = inputs
        .iter()
        .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();
    let mut relative_errors = Vec::with_capacity(inputs.len());
    let mut max_abs_error = 0.0f64;
    for (k, input) in inputs.iter().enumerate() {
        let base = input.to_vec();
        let mut numeric = vec![0.0; base.len()];
        for j in 0..base.len() {
            let mut probe = base.clone();
            probe[j] = base[j] + h;
            let plus = eval_with(inputs, k, probe.clone(), &f)?;
            probe[j] = base[j] - h;
            let minus = eval_with(inputs, k, probe, &f)?;
            numeric[j] = (plus - minus) / (2.0 * h);
        }
        let diff = analytic[k]
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale = norm(&analytic[k]).max(norm(&numeric)).max(1e-12);
        relative_errors.push(diff / scale);
        for (a, n) in analytic[k].iter().zip(&numeric) {
            max_abs_error = max_abs_error.max((a - n).abs());
        }
    }
    inputs.iter().for_each(Tensor::zero_grad);
    Ok(GradCheckReport {
        relative_errors,
        max_abs_error,
    })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn eval_with(
    inputs: &[Tensor<f64>],
    k: usize,
    values: Vec<f64>,
    f: &impl Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
) -> Result<f64> {
    let perturbed: Vec<Tensor<f64>> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if i == k {
                Tensor::from_vec(t.shape(), values.clone())
            } else {
                Ok(t.detach())
            }
        })
        .collect::<Result<_>>()?;
    Ok(super::no_grad(|| f(&perturbed))?.item())
}
