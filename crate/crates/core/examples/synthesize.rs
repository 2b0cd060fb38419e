//! Synthesize every modality of a held-out phantom from the other three and
//! compare against the zero-velocity (informed-prior) baseline.
//!
//!     cargo run --release --example synthesize -- [checkpoint.wfmc]
//!
//! Without a checkpoint an untrained model is used, whose output equals the
//! baseline exactly.

use wfm::metrics::evaluate;
use wfm::model::{load_checkpoint, ModelConfig, UNet};
use wfm::phantom::generate_case;
use wfm::solver::{baseline, synthesize, Method, SolveConfig};
use wfm::ModalityId;

fn main() -> wfm::Result<()> {
    let model = match std::env::args().nth(1) {
        Some(p) => load_checkpoint(p)?.model,
        None => UNet::new(&ModelConfig::desk(), 0)?,
    };
    let case = generate_case(1008)?;
    println!("{:<6}{:>10}{:>10}{:>10}{:>10}", "target", "baseline", "euler-1", "heun-1", "heun-2");
    for y in ModalityId::all() {
        let gt = case.volume(y);
        let mut row = vec![evaluate(&baseline(case.sources(y))?, gt, &case.mask)?.psnr_db];
        for cfg in [
            SolveConfig::new(Method::Euler, 1),
            SolveConfig::new(Method::Heun, 1),
            SolveConfig::new(Method::Heun, 2),
        ] {
            let (out, trace) = synthesize(&model, case.sources(y), y, cfg)?;
            assert_eq!(trace.nfe, cfg.expected_nfe());
            row.push(evaluate(&out, gt, &case.mask)?.psnr_db);
        }
        print!("{:<6}", y.name());
        row.iter().for_each(|p| print!("{p:>10.2}"));
        println!();
    }
    Ok(())
}
