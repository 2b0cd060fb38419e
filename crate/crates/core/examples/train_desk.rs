//! Train the desk model on phantoms and save a checkpoint.
//!
//!     cargo run --release --example train_desk -- [iterations] [out.wfmc]
//!
//! Defaults: 2000 iterations, lr 1e-4, 8 training phantoms.

use std::time::Instant;

use wfm::flow::{CaseReps, TrainConfig, Trainer};
use wfm::model::{save_checkpoint, ModelConfig, UNet};
use wfm::phantom::{generate_case, make_split};

fn main() -> wfm::Result<()> {
    let mut args = std::env::args().skip(1);
    let iterations: u64 = args.next().map(|s| s.parse().expect("iterations")).unwrap_or(2000);
    let out = args.next().map(Into::into).unwrap_or_else(|| std::env::temp_dir().join("wfm_desk.wfmc"));

    let model_cfg = ModelConfig::desk();
    let split = make_split(8, 2, 1000)?;
    let cases = split
        .train
        .iter()
        .map(|&s| CaseReps::from_case(&generate_case(s)?, model_cfg.spatial_multiple()))
        .collect::<wfm::Result<Vec<_>>>()?;
    let cfg = TrainConfig {
        lr: 1e-4,
        iterations,
        ..TrainConfig::default()
    };
    let model = UNet::new(&model_cfg, 0)?;
    println!("{} parameters, {} training cases", model.param_count(), cases.len());

    let mut trainer = Trainer::new(model, cases, cfg)?;
    let start = Instant::now();
    let mut window = Vec::new();
    trainer.run(|_, r| {
        window.push(r.loss);
        if window.len() == 100 || r.step == iterations {
            let mean = window.iter().sum::<f64>() / window.len() as f64;
            println!("step {:>5}  loss {mean:.5}  grad_norm {:.4}  {:.0}s", r.step, r.grad_norm, start.elapsed().as_secs_f64());
            window.clear();
        }
        Ok(())
    })?;
    save_checkpoint(&trainer.model, Some(&trainer.opt), &out)?;
    println!("saved {}", out.display());
    Ok(())
}
