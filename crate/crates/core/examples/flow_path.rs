//! The training-time construction for one phantom case: informed source,
//! interpolants along the path, the endpoint-vanishing perturbation and the
//! constant velocity target.

use wfm::flow::{interpolate, perturb, CaseReps, FlowSample};
use wfm::phantom::{generate_case, Rng};
use wfm::ModalityId;

fn rms(c: &[f32]) -> f64 {
    (c.iter().map(|&x| x as f64 * x as f64).sum::<f64>() / c.len() as f64).sqrt()
}

fn main() -> wfm::Result<()> {
    let case = CaseReps::from_case(&generate_case(11)?, 4)?;
    let mut rng = Rng::new(0);
    for y in ModalityId::all() {
        let s = FlowSample::new(&case, y, 0.5, 0.5, &mut rng)?;
        println!(
            "target {:<5} |x_target - x_source| rms {:.4}   |x_target| rms {:.4}",
            y.name(),
            rms(s.v_target.coeffs()),
            rms(s.x_target.coeffs())
        );
    }
    let s = FlowSample::new(&case, ModalityId::T1C, 0.0, 0.5, &mut rng)?;
    println!("\nperturbation rms along the path (sigma = 0.5):");
    for t in [0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0] {
        let xt = interpolate(&s.x_source, &s.x_target, t)?;
        let xp = perturb(&xt, t, 0.5, &mut rng)?;
        let d = xp.sub(&xt)?;
        println!("  t={t:<4}  measured {:.4}  expected {:.4}", rms(d.coeffs()), 0.5 * (t * (1.0 - t)).sqrt());
    }
    Ok(())
}
