//! One network serves all four targets: the class label picks the output
//! contrast. Synthesize each target with every label and show which label
//! scores best against each ground truth.
//!
//!     cargo run --release --example class_conditioning -- checkpoint.wfmc

use wfm::metrics::psnr;
use wfm::model::load_checkpoint;
use wfm::phantom::generate_case;
use wfm::solver::{synthesize, Method, SolveConfig};
use wfm::ModalityId;

fn main() -> wfm::Result<()> {
    let path = std::env::args().nth(1).expect("usage: class_conditioning <checkpoint.wfmc>");
    let model = load_checkpoint(path)?.model;
    let case = generate_case(1009)?;
    let cfg = SolveConfig::new(Method::Euler, 1);
    println!("rows: ground-truth target, columns: label used (PSNR dB)");
    print!("{:<7}", "");
    ModalityId::all().iter().for_each(|m| print!("{:>8}", m.name()));
    println!();
    for y in ModalityId::all() {
        print!("{:<7}", y.name());
        for label in ModalityId::all() {
            let (out, _) = synthesize(&model, case.sources(y), label, cfg)?;
            let mark = if label == y { "*" } else { " " };
            print!("{:>7.2}{mark}", psnr(&out, case.volume(y), &case.mask)?);
        }
        println!();
    }
    Ok(())
}
