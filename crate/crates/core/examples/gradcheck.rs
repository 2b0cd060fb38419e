//! Compare reverse-mode gradients of a small conv → group norm → silu graph
//! with central differences in f64.

use wfm::phantom::Rng;
use wfm::tensorad::{self as ad, check_gradients, ConvSpec, Tensor};

fn param(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::parameter(shape, (0..n).map(|_| rng.normal()).collect()).unwrap()
}

fn main() -> wfm::Result<()> {
    let mut rng = Rng::new(0);
    let inputs = [
        param(&mut rng, &[2, 3, 4, 4, 4]),
        param(&mut rng, &[4, 3, 3, 3, 3]),
        param(&mut rng, &[4]),
        param(&mut rng, &[4]),
        param(&mut rng, &[4]),
    ];
    let report = check_gradients(
        &inputs,
        |t| {
            let y = ad::conv3d(&t[0], &t[1], &t[2], ConvSpec::SAME)?;
            let y = ad::silu(&ad::group_norm(&y, 2, &t[3], &t[4], 1e-5)?);
            Ok(ad::mean(&ad::mul(&y, &y)?))
        },
        1e-4,
    )?;
    for (name, e) in ["x", "w", "b", "gamma", "beta"].iter().zip(&report.relative_errors) {
        println!("{name:>6}: relative error {e:.2e}");
    }
    println!("max relative error {:.2e}", report.max_relative_error());
    Ok(())
}
