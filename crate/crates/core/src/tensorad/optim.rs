use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First/second moment buffers, one pair per parameter in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamWState {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl AdamWState {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    fn ensure_buffers<T: Scalar>(&mut self, params: &[Tensor<T>]) -> Result<()> {
        if self.m.is_empty() && self.step == 0 {
            self.m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(Error::Shape(format!(
                "optimizer holds {} moment buffers for {} parameters",
                self.m.len(),
                params.len()
            )));
        }
        for (i, p) in params.iter().enumerate() {
            if self.m[i].len() != p.numel() || self.v[i].len() != p.numel() {
                return Err(Error::Shape(format!("moment buffer {i} does not match its parameter")));
            }
        }
        Ok(())
    }
}

/// One bias-corrected Adam update followed by decoupled weight decay
/// `p ← p − lr·wd·p`. Gradients are left untouched.
pub fn adamw_step<T: Scalar>(params: &[Tensor<T>], state: &mut AdamWState) -> Result<()> {
    state.ensure_buffers(params)?;
    let grads: Vec<Vec<T>> = params
        .iter()
        .enumerate()
        .map(|(i, p)| p.grad().ok_or_else(|| Error::MissingGrad(format!("#{i} {:?}", p.shape()))))
        .collect::<Result<_>>()?;
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    for ((p, g), (m, v)) in params.iter().zip(&grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        p.update_values(|data| {
            for j in 0..data.len() {
                let gj = g[j].as_f64();
                let mj = c.beta1 * m[j] as f64 + (1.0 - c.beta1) * gj;
                let vj = c.beta2 * v[j] as f64 + (1.0 - c.beta2) * gj * gj;
                m[j] = mj as f32;
                v[j] = vj as f32;
                let m_hat = mj / bc1;
                let v_hat = vj / bc2;
                let mut pj = data[j].as_f64() - c.lr * m_hat / (v_hat.sqrt() + c.eps);
                pj -= c.lr * c.weight_decay * pj;
                data[j] = T::from_f64(pj);
            }
        });
    }
    Ok(())
}

/// Global L2 norm over all present gradients.
pub fn grad_norm<T: Scalar>(params: &[Tensor<T>]) -> f64 {
    params
        .iter()
        .filter_map(|p| p.grad())
        .map(|g| g.iter().map(|x| x.as_f64() * x.as_f64()).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Rescale gradients so the global norm is at most `max_norm`. Returns the norm
/// before clipping.
pub fn clip_grad_norm<T: Scalar>(params: &[Tensor<T>], max_norm: f64) -> f64 {
    let norm = grad_norm(params);
    if norm > max_norm {
        let k = T::from_f64(max_norm / norm);
        for p in params {
            p.with_grad_mut(|g| g.iter_mut().for_each(|x| *x *= k));
        }
    }
    norm
}

pub fn zero_grads<T: Scalar>(params: &[Tensor<T>]) {
    params.iter().for_each(Tensor::zero_grad);
}
