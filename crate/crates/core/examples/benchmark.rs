//! Forward-pass timing: k repeated calls cost k times one call.
//!
//!     cargo run --release --example benchmark -- [checkpoint.wfmc] [nfe,list]

use wfm::cli::{run_benchmark, BenchConfig};
use wfm::model::{load_checkpoint, ModelConfig, UNet};

fn main() -> wfm::Result<()> {
    let mut args = std::env::args().skip(1);
    let model = match args.next().filter(|a| a != "-") {
        Some(p) => load_checkpoint(p)?.model,
        None => UNet::new(&ModelConfig::desk(), 0)?,
    };
    let nfe_list = args
        .next()
        .map(|s| s.split(',').map(|n| n.parse().expect("nfe")).collect())
        .unwrap_or_else(|| vec![1, 2, 4, 100]);
    let report = run_benchmark(&model, &BenchConfig { nfe_list, ..BenchConfig::default() })?;
    print!("{}", report.to_tsv());
    Ok(())
}
