//! Fixed-step ODE integration of the velocity field from the informed source
//! (`t = 0`) to the target (`t = 1`), and the full synthesis pipeline.

use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{cond_block, mean_rep};
use crate::model::UNet;
use crate::tensorad::{no_grad, Tensor};
use crate::volume::{crop, pad_to_multiple, ModalityId, Volume};
use crate::wavelet::{dwt3, idwt3, WaveletRep};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Euler,
    Heun,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Euler => "euler",
            Method::Heun => "heun",
        }
    }

    /// Model evaluations per step.
    pub fn evals_per_step(self) -> usize {
        match self {
            Method::Euler => 1,
            Method::Heun => 2,
        }
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euler" => Ok(Method::Euler),
            "heun" => Ok(Method::Heun),
            _ => Err(Error::Config(format!("unknown solver method {s:?} (euler|heun)"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveConfig {
    pub method: Method,
    pub steps: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            method: Method::Heun,
            steps: 2,
        }
    }
}

impl SolveConfig {
    pub fn new(method: Method, steps: usize) -> Self {
        Self { method, steps }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("solver steps must be >= 1".into()));
        }
        Ok(())
    }

    /// Uniform grid `t_k = k/n`, `k = 0..=n`.
    pub fn timesteps(&self) -> Vec<f64> {
        let n = self.steps;
        (0..=n).map(|k| k as f64 / n as f64).collect()
    }

    pub fn expected_nfe(&self) -> usize {
        self.steps * self.method.evals_per_step()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SolveTrace {
    /// Number of velocity-field evaluations.
    pub nfe: usize,
    pub step_times: Vec<Duration>,
    pub call_times: Vec<Duration>,
}

impl SolveTrace {
    pub fn total_time(&self) -> Duration {
        self.step_times.iter().sum()
    }

    pub fn mean_call_time(&self) -> Duration {
        if self.call_times.is_empty() {
            Duration::ZERO
        } else {
            self.call_times.iter().sum::<Duration>() / self.call_times.len() as u32
        }
    }
}

/// A velocity field `f(x, t)`; the conditioning and class label of a
/// network field are bound at construction.
pub trait VelocityField {
    fn velocity(&self, x: &WaveletRep, t: f64) -> Result<WaveletRep>;
}

impl<F: Fn(&WaveletRep, f64) -> Result<WaveletRep>> VelocityField for F {
    fn velocity(&self, x: &WaveletRep, t: f64) -> Result<WaveletRep> {
        self(x, t)
    }
}

/// The trained network with the conditioning block held fixed across steps.
pub struct NetworkField<'a> {
    model: &'a UNet<f32>,
    cond: Tensor<f32>,
    y: ModalityId,
}

impl<'a> NetworkField<'a> {
    pub fn new(model: &'a UNet<f32>, sources: [&WaveletRep; 3], y: ModalityId) -> Result<Self> {
        let [d, h, w] = sources[0].half_dims();
        let cond = Tensor::from_vec(&[1, 24, d, h, w], cond_block(sources)?)?;
        Ok(Self { model, cond, y })
    }
}

impl VelocityField for NetworkField<'_> {
    fn velocity(&self, x: &WaveletRep, t: f64) -> Result<WaveletRep> {
        let [d, h, w] = x.half_dims();
        let xt = Tensor::from_vec(&[1, 8, d, h, w], x.coeffs().to_vec())?;
        let out = no_grad(|| self.model.forward(&xt, &self.cond, &[t], &[self.y]))?;
        let mut v = x.clone();
        v.coeffs_mut().copy_from_slice(&out.values());
        Ok(v)
    }
}

struct Counter<'a, F: VelocityField + ?Sized> {
    field: &'a F,
    trace: SolveTrace,
}

impl<F: VelocityField + ?Sized> Counter<'_, F> {
    fn eval(&mut self, x: &WaveletRep, t: f64) -> Result<WaveletRep> {
        let start = Instant::now();
        let v = self.field.velocity(x, t)?;
        self.trace.call_times.push(start.elapsed());
        self.trace.nfe += 1;
        Ok(v)
    }
}

/// `x_{k+1} = x_k + f(x_k, t_k)·Δt`.
pub fn euler<F: VelocityField + ?Sized>(field: &F, x0: &WaveletRep, steps: usize) -> Result<(WaveletRep, SolveTrace)> {
    integrate(field, x0, SolveConfig::new(Method::Euler, steps))
}

/// Predictor-corrector: `x̃ = x_k + v₁Δt`, `x_{k+1} = x_k + (v₁ + v₂)/2·Δt`
/// with `v₂ = f(x̃, t_k + Δt)`.
pub fn heun<F: VelocityField + ?Sized>(field: &F, x0: &WaveletRep, steps: usize) -> Result<(WaveletRep, SolveTrace)> {
    integrate(field, x0, SolveConfig::new(Method::Heun, steps))
}

pub fn integrate<F: VelocityField + ?Sized>(
    field: &F,
    x0: &WaveletRep,
    cfg: SolveConfig,
) -> Result<(WaveletRep, SolveTrace)> {
    cfg.validate()?;
    let ts = cfg.timesteps();
    let mut c = Counter {
        field,
        trace: SolveTrace::default(),
    };
    let mut x = x0.clone();
    for k in 0..cfg.steps {
        let start = Instant::now();
        let (t0, t1) = (ts[k], ts[k + 1]);
        let dt = (t1 - t0) as f32;
        let v1 = c.eval(&x, t0)?;
        x = match cfg.method {
            Method::Euler => x.add_scaled(&v1, dt)?,
            Method::Heun => {
                let pred = x.add_scaled(&v1, dt)?;
                let v2 = c.eval(&pred, t1)?;
                // (Δt/2)·(v₁+v₂) is bitwise Δt·v₁ when the two agree.
                x.add_scaled(&v1.add_scaled(&v2, 1.0)?, 0.5 * dt)?
            }
        };
        if !x.is_finite() {
            return Err(Error::SolverDiverged(k + 1));
        }
        c.trace.step_times.push(start.elapsed());
    }
    Ok((x, c.trace))
}

/// Synthesize modality `y` from its three source volumes (ascending modality
/// order, normalized): pad, transform, integrate from the informed source,
/// invert and crop back to the input dims.
pub fn synthesize(
    model: &UNet<f32>,
    sources: [&Volume; 3],
    y: ModalityId,
    cfg: SolveConfig,
) -> Result<(Volume, SolveTrace)> {
    let dims = sources[0].dims();
    if sources.iter().any(|v| v.dims() != dims) {
        return Err(Error::Shape("source volumes differ in dims".into()));
    }
    let multiple = 2 * model.config().spatial_multiple();
    let mut record = None;
    let mut reps = Vec::with_capacity(3);
    for v in sources {
        let (p, r) = pad_to_multiple(v, multiple)?;
        record = Some(r);
        reps.push(dwt3(&p)?);
    }
    let reps = [&reps[0], &reps[1], &reps[2]];
    let x0 = mean_rep(reps)?;
    let field = NetworkField::new(model, reps, y)?;
    let (x1, trace) = integrate(&field, &x0, cfg)?;
    let out = crop(&idwt3(&x1)?, &record.expect("three sources"))?;
    Ok((out.with_spacing(sources[0].spacing()), trace))
}

/// The informed-prior baseline: zero velocity, i.e. the inverse transform of
/// the mean source coefficients.
pub fn baseline(sources: [&Volume; 3]) -> Result<Volume> {
    let [a, b, c] = sources.map(dwt3);
    let out = idwt3(&mean_rep([&a?, &b?, &c?])?)?;
    Ok(out.with_spacing(sources[0].spacing()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::phantom::Rng;

    fn constant(half: [usize; 3], k: f32) -> WaveletRep {
        let mut w = WaveletRep::zeros(half);
        w.coeffs_mut().iter_mut().for_each(|c| *c = k);
        w
    }

    /// f(x, t) = cos(t)·1, exact x(1) = x0 + sin 1.
    fn cos_field(x: &WaveletRep, t: f64) -> Result<WaveletRep> {
        Ok(constant(x.half_dims(), t.cos() as f32))
    }

    fn error(method: Method, n: usize) -> f64 {
        // f64 reference so the float32 state does not mask the truncation error.
        let x0 = WaveletRep::zeros([1, 1, 1]);
        let (x, _) = integrate(&cos_field, &x0, SolveConfig::new(method, n)).unwrap();
        (x.coeffs()[0] as f64 - 1f64.sin()).abs()
    }

    #[test]
    fn zero_field_returns_source() {
        let mut rng = Rng::new(0);
        let mut x0 = WaveletRep::zeros([2, 3, 2]);
        x0.coeffs_mut().iter_mut().for_each(|c| *c = rng.normal() as f32);
        let zero = |x: &WaveletRep, _t: f64| Ok(constant(x.half_dims(), 0.0));
        for n in [1, 3] {
            let (x, tr) = euler(&zero, &x0, n).unwrap();
            assert_eq!(x, x0);
            assert_eq!(tr.nfe, n);
        }
    }

    #[test]
    fn constant_field_one_step() {
        let x0 = constant([2, 2, 2], 0.25);
        let k = |x: &WaveletRep, _t: f64| Ok(constant(x.half_dims(), 1.5));
        let (x, _) = euler(&k, &x0, 1).unwrap();
        assert!(x.coeffs().iter().all(|&c| c == 1.75));
        for n in [1, 2, 5] {
            let (e, _) = euler(&k, &x0, n).unwrap();
            let (h, _) = heun(&k, &x0, n).unwrap();
            for (a, b) in e.coeffs().iter().zip(h.coeffs()) {
                assert!((a - b).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn linear_in_time_field() {
        let x0 = constant([1, 1, 1], 2.0);
        let f = |x: &WaveletRep, t: f64| Ok(constant(x.half_dims(), t as f32));
        let (h, _) = heun(&f, &x0, 1).unwrap();
        assert!((h.coeffs()[0] - 2.5).abs() < 1e-6);
        let (e, _) = euler(&f, &x0, 1).unwrap();
        assert_eq!(e.coeffs()[0], 2.0);
    }

    #[test]
    fn order_of_accuracy() {
        for n in [2, 4, 8] {
            let r = error(Method::Euler, n) / error(Method::Euler, 2 * n);
            assert!((1.6..=2.4).contains(&r), "euler ratio {r} at n={n}");
        }
        for n in [1, 2, 4] {
            let r = error(Method::Heun, n) / error(Method::Heun, 2 * n);
            assert!((3.2..=4.8).contains(&r), "heun ratio {r} at n={n}");
        }
    }

    #[test]
    fn nfe_accounting() {
        let x0 = WaveletRep::zeros([1, 1, 1]);
        for n in [1, 2, 10, 1000] {
            let (_, e) = euler(&cos_field, &x0, n).unwrap();
            let (_, h) = heun(&cos_field, &x0, n).unwrap();
            assert_eq!(e.nfe, n);
            assert_eq!(h.nfe, 2 * n);
            assert_eq!((e.step_times.len(), h.call_times.len()), (n, 2 * n));
        }
    }

    #[test]
    fn timesteps_uniform() {
        assert_eq!(SolveConfig::new(Method::Heun, 2).timesteps(), vec![0.0, 0.5, 1.0]);
        assert!(SolveConfig::new(Method::Euler, 0).validate().is_err());
        assert_eq!("HEUN".parse::<Method>().unwrap(), Method::Heun);
        assert!("rk4".parse::<Method>().is_err());
    }

    #[test]
    fn divergence_detected() {
        let x0 = constant([1, 1, 1], 1.0);
        let blow = |x: &WaveletRep, _t: f64| Ok(constant(x.half_dims(), f32::INFINITY));
        assert!(matches!(euler(&blow, &x0, 3), Err(Error::SolverDiverged(1))));
    }

    #[test]
    fn zero_model_reproduces_baseline() {
        let model = UNet::<f32>::new(&ModelConfig::desk(), 0).unwrap();
        let mut rng = Rng::new(1);
        // Non-multiple dims exercise pad and crop.
        let dims = [10, 12, 8];
        let vols: Vec<Volume> = (0..3)
            .map(|_| {
                let data = (0..dims.iter().product()).map(|_| rng.normal() as f32).collect();
                Volume::from_data(dims, data).unwrap()
            })
            .collect();
        let src = [&vols[0], &vols[1], &vols[2]];
        let (out, tr) = synthesize(&model, src, ModalityId::FLAIR, SolveConfig::new(Method::Heun, 2)).unwrap();
        assert_eq!(out.dims(), dims);
        assert_eq!(tr.nfe, 4);
        let base = baseline(src).unwrap();
        for (a, b) in out.data().iter().zip(base.data()) {
            assert!((a - b).abs() < 1e-6);
        }
        let (again, _) = synthesize(&model, src, ModalityId::FLAIR, SolveConfig::new(Method::Heun, 2)).unwrap();
        assert_eq!(out, again);
    }
}
