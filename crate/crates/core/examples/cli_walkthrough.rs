//! Drive the command-line pipeline from code: generate phantoms, train a
//! few steps from a TOML config, then evaluate. Mirrors
//!
//!     wfm gen-phantom --count 5 --dims 16 --out data
//!     wfm train --config run.toml
//!     wfm evaluate --ckpt run/final.wfmc --data data

use clap::Parser;
use wfm::cli::{self, Cli};

fn main() -> wfm::Result<()> {
    let dir = std::env::temp_dir().join("wfm_cli_walkthrough");
    std::fs::create_dir_all(&dir)?;
    let data = dir.join("data");
    let config = dir.join("run.toml");
    std::fs::write(
        &config,
        "seed = 0\nout_dir = \"run\"\ncheckpoint_every = 0\n\n[data]\ndir = \"data\"\n\n[train]\nlr = 1e-4\niterations = 20\n",
    )?;
    let d = |p: &std::path::Path| p.display().to_string();
    let run = |args: &[&str]| cli::run(Cli::parse_from(std::iter::once("wfm").chain(args.iter().copied())));

    run(&["gen-phantom", "--count", "5", "--dims", "16", "--out", &d(&data)])?;
    run(&["train", "--config", &d(&config)])?;
    run(&["evaluate", "--ckpt", &d(&dir.join("run/final.wfmc")), "--data", &d(&data), "--methods", "euler:1,heun:2"])?;
    println!("outputs in {}", dir.display());
    Ok(())
}
