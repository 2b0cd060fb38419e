//! Masked PSNR and SSIM. The data range comes from the ground truth inside
//! the mask unless given explicitly.

use crate::error::{Error, Result};
use crate::volume::{Dims, Mask, Volume};

pub const PSNR_CAP_DB: f64 = 100.0;
pub const SSIM_WINDOW: usize = 7;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    pub psnr_db: f64,
    pub ssim: f64,
    /// Mask voxels entering the PSNR.
    pub voxel_count: usize,
    pub data_range: f64,
}

fn check(pred: &Volume, gt: &Volume, mask: &Mask) -> Result<()> {
    if pred.dims() != gt.dims() || mask.dims() != gt.dims() {
        return Err(Error::Shape(format!(
            "metrics: pred {:?}, gt {:?}, mask {:?}",
            pred.dims(),
            gt.dims(),
            mask.dims()
        )));
    }
    if mask.count() == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(())
}

/// `max − min` of `gt` over the mask.
pub fn data_range(gt: &Volume, mask: &Mask) -> Result<f64> {
    let (lo, hi) = gt
        .data()
        .iter()
        .zip(mask.bits())
        .filter(|(_, &b)| b)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (&v, _)| {
            (lo.min(v as f64), hi.max(v as f64))
        });
    if lo > hi {
        return Err(Error::EmptyMask);
    }
    Ok(hi - lo)
}

pub fn psnr(pred: &Volume, gt: &Volume, mask: &Mask) -> Result<f64> {
    check(pred, gt, mask)?;
    psnr_with_range(pred, gt, mask, data_range(gt, mask)?)
}

pub fn psnr_with_range(pred: &Volume, gt: &Volume, mask: &Mask, range: f64) -> Result<f64> {
    check(pred, gt, mask)?;
    if range <= 0.0 {
        return Err(Error::DegenerateRange);
    }
    let (mut se, mut n) = (0.0f64, 0usize);
    for ((&p, &g), &b) in pred.data().iter().zip(gt.data()).zip(mask.bits()) {
        if b {
            se += (p as f64 - g as f64).powi(2);
            n += 1;
        }
    }
    let mse = se / n as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (range * range / mse).log10()).min(PSNR_CAP_DB))
}

pub fn ssim(pred: &Volume, gt: &Volume, mask: &Mask) -> Result<f64> {
    check(pred, gt, mask)?;
    ssim_with_range(pred, gt, mask, data_range(gt, mask)?)
}

/// Mean SSIM over 7³ uniform windows whose centre is masked and which fit
/// entirely inside the volume.
pub fn ssim_with_range(pred: &Volume, gt: &Volume, mask: &Mask, range: f64) -> Result<f64> {
    check(pred, gt, mask)?;
    if range <= 0.0 {
        return Err(Error::DegenerateRange);
    }
    let dims = gt.dims();
    if dims.iter().any(|&d| d < SSIM_WINDOW) {
        return Err(Error::Shape(format!(
            "ssim: volume {dims:?} smaller than the {SSIM_WINDOW}³ window"
        )));
    }
    let (x, y) = (pred.data(), gt.data());
    let sx = SummedVolume::new(dims, |i| x[i] as f64);
    let sy = SummedVolume::new(dims, |i| y[i] as f64);
    let sxx = SummedVolume::new(dims, |i| (x[i] as f64).powi(2));
    let syy = SummedVolume::new(dims, |i| (y[i] as f64).powi(2));
    let sxy = SummedVolume::new(dims, |i| x[i] as f64 * y[i] as f64);
    let c1 = (0.01 * range).powi(2);
    let c2 = (0.03 * range).powi(2);
    let half = SSIM_WINDOW / 2;
    let inv_n = 1.0 / (SSIM_WINDOW.pow(3)) as f64;
    let (mut total, mut count) = (0.0f64, 0usize);
    for z in half..dims[0] - half {
        for yy in half..dims[1] - half {
            for xx in half..dims[2] - half {
                if !mask.bits()[(z * dims[1] + yy) * dims[2] + xx] {
                    continue;
                }
                let lo = [z - half, yy - half, xx - half];
                let mx = sx.window(lo) * inv_n;
                let my = sy.window(lo) * inv_n;
                let vx = sxx.window(lo) * inv_n - mx * mx;
                let vy = syy.window(lo) * inv_n - my * my;
                let cxy = sxy.window(lo) * inv_n - mx * my;
                total += ssim_formula(mx, my, vx, vy, cxy, c1, c2);
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::InvalidArgument(
            "ssim: no masked voxel has a full window inside the volume".into(),
        ));
    }
    Ok(total / count as f64)
}

/// Luminance × contrast-structure term from windowed moments.
pub fn ssim_formula(mx: f64, my: f64, vx: f64, vy: f64, cxy: f64, c1: f64, c2: f64) -> f64 {
    ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
}

pub fn evaluate(pred: &Volume, gt: &Volume, mask: &Mask) -> Result<MetricReport> {
    check(pred, gt, mask)?;
    let range = data_range(gt, mask)?;
    Ok(MetricReport {
        psnr_db: psnr_with_range(pred, gt, mask, range)?,
        ssim: ssim_with_range(pred, gt, mask, range)?,
        voxel_count: mask.count(),
        data_range: range,
    })
}

/// 3D inclusive prefix sums with a zero border, for O(1) box sums.
struct SummedVolume {
    stride: [usize; 2],
    table: Vec<f64>,
}

impl SummedVolume {
    fn new(dims: Dims, value: impl Fn(usize) -> f64) -> Self {
        let [d, h, w] = dims;
        let (sh, sw) = (h + 1, w + 1);
        let mut t = vec![0.0; (d + 1) * sh * sw];
        let at = |z: usize, y: usize, x: usize| (z * sh + y) * sw + x;
        for z in 0..d {
            for y in 0..h {
                for x in 0..w {
                    let v = value((z * h + y) * w + x);
                    t[at(z + 1, y + 1, x + 1)] = v + t[at(z, y + 1, x + 1)] + t[at(z + 1, y, x + 1)]
                        + t[at(z + 1, y + 1, x)]
                        - t[at(z, y, x + 1)]
                        - t[at(z, y + 1, x)]
                        - t[at(z + 1, y, x)]
                        + t[at(z, y, x)];
                }
            }
        }
        Self {
            stride: [sh * sw, sw],
            table: t,
        }
    }

    /// Sum over the `SSIM_WINDOW³` box starting at `lo`.
    fn window(&self, lo: [usize; 3]) -> f64 {
        let k = SSIM_WINDOW;
        let at = |z: usize, y: usize, x: usize| self.table[z * self.stride[0] + y * self.stride[1] + x];
        let [z0, y0, x0] = lo;
        let [z1, y1, x1] = [z0 + k, y0 + k, x0 + k];
        at(z1, y1, x1) - at(z0, y1, x1) - at(z1, y0, x1) - at(z1, y1, x0) + at(z0, y0, x1) + at(z0, y1, x0)
            + at(z1, y0, x0)
            - at(z0, y0, x0)
    }
}
