//! The `wfm` command line: phantom generation, training, synthesis,
//! evaluation tables and the forward-pass benchmark. Each subcommand is also
//! callable as a library function.

mod bench;
mod config;
mod data;
mod eval;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::flow::{CaseReps, StepReport, TrainLog, Trainer};
use crate::model::{load_checkpoint, save_checkpoint, UNet};
use crate::nifti::{read_volume, write_nifti, write_raw};
use crate::solver::{synthesize, Method, SolveConfig, SolveTrace};
use crate::volume::{normalize, Dims, Mask, ModalityId, Volume};

pub use bench::{run_benchmark, BenchConfig, BenchReport, BenchRow};
pub use config::{DataConfig, RunConfig, RESOLVED_CONFIG};
pub use data::{
    case_dir_name, format_manifest, load_case, load_split, modality_file, parse_manifest, read_manifest,
    write_phantoms, LoadedCase, ManifestEntry, SplitName, MANIFEST, MANIFEST_HEADER, MASK_FILE,
};
pub use eval::{evaluate_cases, parse_methods, EvalRow, EvalTable, MeanStd, RowKind};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;
pub const THREADS_ENV: &str = "WFM_THREADS";

pub const TRAIN_LOG: &str = "train_log.tsv";
pub const FINAL_CHECKPOINT: &str = "final.wfmc";

#[derive(Debug, Parser)]
#[command(name = "wfm", version, about = "Informed-prior wavelet flow matching for volumetric modality synthesis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic phantom cases (4 modalities + mask each) and a manifest.
    GenPhantom(GenPhantomArgs),
    /// Train the velocity network from a TOML run config.
    Train(TrainArgs),
    /// Synthesize a missing modality from the other three.
    Synthesize(SynthesizeArgs),
    /// PSNR/SSIM per target modality for each solver setting plus the baseline.
    Evaluate(EvaluateArgs),
    /// Time repeated forward passes.
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Args)]
pub struct GenPhantomArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    /// How many of the cases form the validation split (default: a fifth).
    #[arg(long)]
    pub val: Option<usize>,
    /// `N` for a cube or `DxHxW`.
    #[arg(long, default_value = "32", value_parser = parse_dims)]
    pub dims: Dims,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// The three available modalities, ascending modality order.
    #[arg(long, num_args = 3, required = true)]
    pub inputs: Vec<PathBuf>,
    /// The missing modality: t1, t1c, t2 or flair.
    #[arg(long, value_parser = parse_modality)]
    pub target: ModalityId,
    #[arg(long, default_value = "heun", value_parser = parse_method)]
    pub method: Method,
    #[arg(long, default_value_t = 2)]
    pub steps: usize,
    /// If given, inputs are normalized within this mask first.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// `.nii` or `.wfmv`; a `.report.tsv` sidecar is written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "euler:1,heun:1,heun:2")]
    pub methods: String,
    /// Evaluate the training split instead of validation.
    #[arg(long)]
    pub train_split: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, default_value = "1,2,4,1000", value_delimiter = ',')]
    pub nfe_list: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    pub warmup: usize,
    #[arg(long, default_value_t = 5)]
    pub trials: usize,
    #[arg(long, default_value = "32", value_parser = parse_dims)]
    pub dims: Dims,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn parse_dims(s: &str) -> std::result::Result<Dims, String> {
    let parts: Vec<usize> = s
        .split('x')
        .map(|p| p.trim().parse().map_err(|_| format!("bad dims {s:?}")))
        .collect::<std::result::Result<_, _>>()?;
    match parts[..] {
        [n] => Ok([n; 3]),
        [d, h, w] => Ok([d, h, w]),
        _ => Err(format!("dims {s:?} must be N or DxHxW")),
    }
}

fn parse_modality(s: &str) -> std::result::Result<ModalityId, String> {
    ModalityId::from_name(s).map_err(|e| e.to_string())
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Process exit code for a failure.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::InvalidArgument(_)
        | Error::Shape(_)
        | Error::OddDims(_)
        | Error::CheckpointMismatch(_) => EXIT_CONFIG,
        Error::Diverged(_) | Error::SolverDiverged(_) => EXIT_DIVERGED,
        _ => EXIT_DATA,
    }
}

/// Cap the global worker pool from `WFM_THREADS`, if set.
pub fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| Error::Config(format!("{THREADS_ENV}={v:?} must be a positive integer")))?;
    // Fails only if the pool already exists, in which case it stays as is.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    match cli.command {
        Command::GenPhantom(a) => {
            let val = a.val.unwrap_or((a.count / 5).max(1));
            if val >= a.count {
                return Err(Error::Config(format!("--count {} leaves no training cases after --val {val}", a.count)));
            }
            let entries = write_phantoms(&a.out, a.count - val, val, a.seed, a.dims)?;
            println!("wrote {} cases to {}", entries.len(), a.out.display());
        }
        Command::Train(a) => {
            let cfg = RunConfig::load(&a.config)?;
            let every = (cfg.train.iterations / 20).max(1);
            let out = train(&cfg, |r| {
                if r.step % every == 0 {
                    eprintln!("step {:>6}  loss {:.5}  grad_norm {:.4}", r.step, r.loss, r.grad_norm);
                }
            })?;
            println!("final checkpoint {}", out.final_checkpoint.display());
        }
        Command::Synthesize(a) => {
            let report = synthesize_files(&a)?;
            print!("{report}");
        }
        Command::Evaluate(a) => {
            let model = load_checkpoint(&a.ckpt)?.model;
            let split = if a.train_split { SplitName::Train } else { SplitName::Val };
            let cases = load_split(&a.data, split)?;
            let table = evaluate_cases(&model, &cases, &parse_methods(&a.methods)?)?;
            let tsv = table.to_tsv();
            eprint!("{}", table.to_pretty());
            print!("{tsv}");
            if let Some(p) = a.out {
                std::fs::write(p, tsv)?;
            }
        }
        Command::Benchmark(a) => {
            let model = load_checkpoint(&a.ckpt)?.model;
            let cfg = BenchConfig {
                nfe_list: a.nfe_list,
                warmup: a.warmup,
                trials: a.trials,
                dims: a.dims,
            };
            let tsv = run_benchmark(&model, &cfg)?.to_tsv();
            print!("{tsv}");
            if let Some(p) = a.out {
                std::fs::write(p, tsv)?;
            }
        }
    }
    Ok(())
}

pub struct TrainOutcome {
    pub model: UNet<f32>,
    pub reports: Vec<StepReport>,
    pub final_checkpoint: PathBuf,
    pub seconds: f64,
}

pub fn checkpoint_name(step: u64) -> String {
    format!("step_{step:06}.wfmc")
}

/// Run the full training protocol of `cfg`: persist the resolved config,
/// log every step, checkpoint every `checkpoint_every` steps and at the end.
pub fn train(cfg: &RunConfig, mut progress: impl FnMut(&StepReport)) -> Result<TrainOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    std::fs::write(cfg.out_dir.join(RESOLVED_CONFIG), cfg.to_toml()?)?;
    let multiple = cfg.model.spatial_multiple();
    let cases: Vec<CaseReps> = load_split(&cfg.data.dir, SplitName::Train)?
        .iter()
        .map(|c| CaseReps::new(c.volumes.each_ref(), multiple))
        .collect::<Result<_>>()?;
    let model = UNet::new(&cfg.model, cfg.seed)?;
    let mut trainer = Trainer::new(model, cases, cfg.train.clone())?;
    let mut log = TrainLog::new(BufWriter::new(File::create(cfg.out_dir.join(TRAIN_LOG))?))?;
    let mut reports = Vec::new();
    let start = Instant::now();
    let result = trainer.run(|t, r| {
        log.record(r)?;
        progress(r);
        reports.push(r.clone());
        if cfg.checkpoint_every > 0 && r.step % cfg.checkpoint_every == 0 {
            save_checkpoint(&t.model, Some(&t.opt), cfg.out_dir.join(checkpoint_name(r.step)))?;
        }
        Ok(())
    });
    log.flush()?;
    result?;
    let final_checkpoint = cfg.out_dir.join(FINAL_CHECKPOINT);
    save_checkpoint(&trainer.model, Some(&trainer.opt), &final_checkpoint)?;
    Ok(TrainOutcome {
        model: trainer.model,
        reports,
        final_checkpoint,
        seconds: start.elapsed().as_secs_f64(),
    })
}

pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".report.tsv");
    PathBuf::from(s)
}

pub fn format_solve_report(target: ModalityId, cfg: SolveConfig, trace: &SolveTrace) -> String {
    let ms = |d: std::time::Duration| d.as_secs_f64() * 1e3;
    let mut s = String::from("key\tvalue\n");
    s += &format!("target\t{}\nmethod\t{}\nsteps\t{}\nnfe\t{}\n", target, cfg.method, cfg.steps, trace.nfe);
    s += &format!("mean_call_ms\t{:.3}\ntotal_ms\t{:.3}\n", ms(trace.mean_call_time()), ms(trace.total_time()));
    for (i, d) in trace.call_times.iter().enumerate() {
        s += &format!("call_{}_ms\t{:.3}\n", i + 1, ms(*d));
    }
    s
}

fn write_any(v: &Volume, path: &Path) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("wfmv") => write_raw(v, path),
        _ => write_nifti(v, path),
    }
}

/// The `synthesize` subcommand; returns the sidecar report text.
pub fn synthesize_files(a: &SynthesizeArgs) -> Result<String> {
    let model = load_checkpoint(&a.ckpt)?.model;
    let mut inputs: Vec<Volume> = a.inputs.iter().map(read_volume).collect::<Result<_>>()?;
    if let Some(mp) = &a.mask {
        let mask = Mask::from_threshold(&read_volume(mp)?, 0.5);
        inputs = inputs.iter().map(|v| normalize(v, &mask).map(|r| r.0)).collect::<Result<_>>()?;
    }
    let cfg = SolveConfig::new(a.method, a.steps);
    let (out, trace) = synthesize(&model, [&inputs[0], &inputs[1], &inputs[2]], a.target, cfg)?;
    if let Some(dir) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_any(&out, &a.out)?;
    let report = format_solve_report(a.target, cfg, &trace);
    let mut f = File::create(sidecar_path(&a.out))?;
    f.write_all(report.as_bytes())?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dims_syntax() {
        assert_eq!(parse_dims("32").unwrap(), [32; 3]);
        assert_eq!(parse_dims("16x32x24").unwrap(), [16, 32, 24]);
        assert!(parse_dims("16x32").is_err());
        assert!(parse_dims("a").is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), EXIT_CONFIG);
        assert_eq!(exit_code(&Error::Data("x".into())), EXIT_DATA);
        assert_eq!(exit_code(&Error::Truncated("x".into())), EXIT_DATA);
        assert_eq!(exit_code(&Error::Diverged(3)), EXIT_DIVERGED);
        assert_eq!(exit_code(&Error::SolverDiverged(1)), EXIT_DIVERGED);
    }

    #[test]
    fn clap_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn sidecar_name() {
        assert_eq!(sidecar_path(Path::new("a/out.nii")), PathBuf::from("a/out.nii.report.tsv"));
    }
}
