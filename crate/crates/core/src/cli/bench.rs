//! Wall time of k repeated forward passes, for the linear-cost check.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::flow::CaseReps;
use crate::model::UNet;
use crate::phantom::generate_case_with_dims;
use crate::solver::{NetworkField, VelocityField};
use crate::volume::{Dims, ModalityId};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BenchConfig {
    pub nfe_list: Vec<usize>,
    pub warmup: usize,
    pub trials: usize,
    pub dims: Dims,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            nfe_list: vec![1, 2, 4, 1000],
            warmup: 3,
            trials: 5,
            dims: [32, 32, 32],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub nfe: usize,
    /// Median over trials of the time for `nfe` calls.
    pub total: Duration,
    pub trials: Vec<Duration>,
}

impl BenchRow {
    pub fn per_call(&self) -> Duration {
        self.total / self.nfe as u32
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

fn median(mut v: Vec<Duration>) -> Duration {
    v.sort();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2
    }
}

pub fn run_benchmark(model: &UNet<f32>, cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.nfe_list.is_empty() || cfg.nfe_list.contains(&0) || cfg.trials == 0 {
        return Err(Error::Config("nfe list entries and trials must be >= 1".into()));
    }
    let case = generate_case_with_dims(0, cfg.dims)?;
    let reps = CaseReps::from_case(&case, model.config().spatial_multiple())?;
    let y = ModalityId::T1;
    let field = NetworkField::new(model, reps.sources(y), y)?;
    let x = reps.rep(y).clone();
    for _ in 0..cfg.warmup {
        field.velocity(&x, 0.0)?;
    }
    // Trials run in rounds over the whole list so that every k sees the same
    // background load.
    let mut trials = vec![Vec::with_capacity(cfg.trials); cfg.nfe_list.len()];
    for _ in 0..cfg.trials {
        for (slot, &k) in trials.iter_mut().zip(&cfg.nfe_list) {
            let start = Instant::now();
            for _ in 0..k {
                std::hint::black_box(field.velocity(&x, 0.0)?);
            }
            slot.push(start.elapsed());
        }
    }
    let rows = cfg
        .nfe_list
        .iter()
        .zip(trials)
        .map(|(&nfe, trials)| BenchRow { nfe, total: median(trials.clone()), trials })
        .collect();
    Ok(BenchReport { rows })
}

impl BenchReport {
    pub fn row(&self, nfe: usize) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.nfe == nfe)
    }

    /// `total(hi) / total(lo)`.
    pub fn ratio(&self, hi: usize, lo: usize) -> Option<f64> {
        Some(self.row(hi)?.total.as_secs_f64() / self.row(lo)?.total.as_secs_f64())
    }

    /// Largest relative deviation of any per-call time from that of the
    /// largest k (the best-amortized estimate).
    pub fn per_call_spread(&self) -> f64 {
        let reference = self.rows.iter().max_by_key(|r| r.nfe).expect("non-empty").per_call().as_secs_f64();
        self.rows
            .iter()
            .map(|r| (r.per_call().as_secs_f64() / reference - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("nfe\ttotal_ms\tper_call_ms\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{}\t{:.3}\t{:.3}",
                r.nfe,
                r.total.as_secs_f64() * 1e3,
                r.per_call().as_secs_f64() * 1e3
            );
        }
        let (lo, hi) = (
            self.rows.iter().map(|r| r.nfe).min().unwrap_or(1),
            self.rows.iter().map(|r| r.nfe).max().unwrap_or(1),
        );
        if let Some(r) = self.ratio(hi, lo) {
            let _ = writeln!(s, "# ratio time({hi})/time({lo}) = {r:.1}");
        }
        let _ = writeln!(s, "# per-call spread = {:.1}%", 100.0 * self.per_call_spread());
        s
    }
}
