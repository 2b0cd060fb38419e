//! Per-modality PSNR/SSIM tables over a set of cases.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::metrics;
use crate::model::UNet;
use crate::solver::{baseline, synthesize, Method, SolveConfig};
use crate::volume::ModalityId;

use super::data::LoadedCase;

/// A method/steps pair, or the zero-velocity baseline.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowKind {
    Baseline,
    Solver(SolveConfig),
}

impl RowKind {
    pub fn label(&self) -> (&'static str, usize, usize) {
        match self {
            RowKind::Baseline => ("baseline", 0, 0),
            RowKind::Solver(c) => (c.method.name(), c.steps, c.expected_nfe()),
        }
    }
}

/// Parse `euler:1,heun:2` (a bare method name means one step).
pub fn parse_methods(list: &str) -> Result<Vec<SolveConfig>> {
    list.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|item| {
            let (m, n) = item.trim().split_once(':').unwrap_or((item.trim(), "1"));
            let steps = n
                .parse()
                .map_err(|_| Error::Config(format!("bad step count in {item:?}")))?;
            let cfg = SolveConfig::new(Method::from_str(m)?, steps);
            cfg.validate()?;
            Ok(cfg)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Population standard deviation.
    pub fn of(xs: &[f64]) -> Self {
        if xs.is_empty() {
            return Self::default();
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub kind: RowKind,
    pub psnr: [MeanStd; 4],
    pub ssim: [MeanStd; 4],
    /// `psnr_raw[m][case]`, kept for paired comparisons.
    pub psnr_raw: [Vec<f64>; 4],
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalTable {
    pub rows: Vec<EvalRow>,
    pub cases: usize,
}

pub fn evaluate_cases(model: &UNet<f32>, cases: &[LoadedCase], methods: &[SolveConfig]) -> Result<EvalTable> {
    if cases.is_empty() {
        return Err(Error::Data("no cases to evaluate".into()));
    }
    let kinds = std::iter::once(RowKind::Baseline).chain(methods.iter().map(|&m| RowKind::Solver(m)));
    let mut rows = Vec::new();
    for kind in kinds {
        let mut psnr_raw: [Vec<f64>; 4] = Default::default();
        let mut ssim_raw: [Vec<f64>; 4] = Default::default();
        for y in ModalityId::all() {
            for c in cases {
                let pred = match kind {
                    RowKind::Baseline => baseline(c.sources(y))?,
                    RowKind::Solver(cfg) => synthesize(model, c.sources(y), y, cfg)?.0,
                };
                let r = metrics::evaluate(&pred, c.volume(y), &c.mask)?;
                psnr_raw[y.index()].push(r.psnr_db);
                ssim_raw[y.index()].push(r.ssim);
            }
        }
        rows.push(EvalRow {
            kind,
            psnr: std::array::from_fn(|m| MeanStd::of(&psnr_raw[m])),
            ssim: std::array::from_fn(|m| MeanStd::of(&ssim_raw[m])),
            psnr_raw,
        });
    }
    Ok(EvalTable {
        rows,
        cases: cases.len(),
    })
}

impl EvalTable {
    pub fn row(&self, kind: RowKind) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.kind == kind)
    }

    /// One row per method: `method steps nfe` then, per modality,
    /// `psnr_mean psnr_std ssim_mean ssim_std`.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("method\tsteps\tnfe");
        for m in ModalityId::all() {
            let n = m.name();
            let _ = write!(s, "\t{n}_psnr\t{n}_psnr_std\t{n}_ssim\t{n}_ssim_std");
        }
        s.push('\n');
        for r in &self.rows {
            let (name, steps, nfe) = r.kind.label();
            let _ = write!(s, "{name}\t{steps}\t{nfe}");
            for m in 0..4 {
                let (p, q) = (r.psnr[m], r.ssim[m]);
                let _ = write!(s, "\t{:.4}\t{:.4}\t{:.5}\t{:.5}", p.mean, p.std, q.mean, q.std);
            }
            s.push('\n');
        }
        s
    }

    /// Human-readable `mean ± std` layout.
    pub fn to_pretty(&self) -> String {
        let mut s = format!("{:<10}{:>6}{:>5}", "method", "steps", "nfe");
        for m in ModalityId::all() {
            let _ = write!(s, "  {:>24}", format!("{} PSNR / SSIM", m.name()));
        }
        s.push('\n');
        for r in &self.rows {
            let (name, steps, nfe) = r.kind.label();
            let _ = write!(s, "{name:<10}{steps:>6}{nfe:>5}");
            for m in 0..4 {
                let cell = format!("{:.2}±{:.2} / {:.3}", r.psnr[m].mean, r.psnr[m].std, r.ssim[m].mean);
                let _ = write!(s, "  {cell:>24}");
            }
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn methods_list() {
        let m = parse_methods("euler:1, heun:2,heun").unwrap();
        assert_eq!(
            m,
            vec![
                SolveConfig::new(Method::Euler, 1),
                SolveConfig::new(Method::Heun, 2),
                SolveConfig::new(Method::Heun, 1)
            ]
        );
        assert!(parse_methods("rk4:1").is_err());
        assert!(parse_methods("euler:0").is_err());
        assert!(parse_methods("euler:x").is_err());
    }

    #[test]
    fn mean_std() {
        let m = MeanStd::of(&[1.0, 3.0]);
        assert_eq!((m.mean, m.std), (2.0, 1.0));
    }
}
