//! Euler is first order and Heun second order: the error of integrating
//! dx/dt = cos(t) over [0, 1] shrinks by ~2× and ~4× per step halving.

use wfm::solver::{integrate, Method, SolveConfig};
use wfm::wavelet::WaveletRep;

fn main() -> wfm::Result<()> {
    let field = |x: &WaveletRep, t: f64| {
        let mut v = x.clone();
        v.coeffs_mut().iter_mut().for_each(|c| *c = t.cos() as f32);
        Ok(v)
    };
    let x0 = WaveletRep::zeros([1, 1, 1]);
    let exact = 1f64.sin();
    for method in [Method::Euler, Method::Heun] {
        println!("{method}:");
        let mut prev = None;
        for n in [1, 2, 4, 8, 16] {
            let (x, trace) = integrate(&field, &x0, SolveConfig::new(method, n))?;
            let err = (x.coeffs()[0] as f64 - exact).abs();
            let ratio = prev.map(|p: f64| format!("{:.2}", p / err)).unwrap_or_default();
            println!("  n={n:<3} nfe={:<3} error {err:.3e}  {ratio}", trace.nfe);
            prev = Some(err);
        }
    }
    Ok(())
}
