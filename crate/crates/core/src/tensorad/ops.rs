use rayon::prelude::*;

use super::{numel, Scalar, Tensor};
use crate::error::{Error, Result};

fn same_shape<T: Scalar>(op: &str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{op}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// `[N, C, spatial...]` split into `(N, C, spatial element count)`.
fn channel_layout(op: &str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::Shape(format!("{op}: need [N, C, ...], got {shape:?}")));
    }
    Ok((shape[0], shape[1], numel(&shape[2..])))
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("add", a, b)?;
    let (av, bv) = (a.values(), b.values());
    let out = av.iter().zip(bv.iter()).map(|(&x, &y)| x + y).collect();
    Ok(Tensor::from_op("add", a.shape().to_vec(), out, &[a, b], |g| {
        vec![Some(g.to_vec()), Some(g.to_vec())]
    }))
}

pub fn sub<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("sub", a, b)?;
    let (av, bv) = (a.values(), b.values());
    let out = av.iter().zip(bv.iter()).map(|(&x, &y)| x - y).collect();
    Ok(Tensor::from_op("sub", a.shape().to_vec(), out, &[a, b], |g| {
        vec![Some(g.to_vec()), Some(g.iter().map(|&x| -x).collect())]
    }))
}

pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("mul", a, b)?;
    let (av, bv) = (a.values(), b.values());
    let out = av.iter().zip(bv.iter()).map(|(&x, &y)| x * y).collect();
    Ok(Tensor::from_op("mul", a.shape().to_vec(), out, &[a, b], move |g| {
        let ga = g.iter().zip(bv.iter()).map(|(&g, &y)| g * y).collect();
        let gb = g.iter().zip(av.iter()).map(|(&g, &x)| g * x).collect();
        vec![Some(ga), Some(gb)]
    }))
}

pub fn scale<T: Scalar>(a: &Tensor<T>, k: T) -> Tensor<T> {
    let out = a.values().iter().map(|&x| x * k).collect();
    Tensor::from_op("scale", a.shape().to_vec(), out, &[a], move |g| {
        vec![Some(g.iter().map(|&x| x * k).collect())]
    })
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// `x · sigmoid(x)`.
pub fn silu<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    let av = a.values();
    let out = av.iter().map(|&x| x * sigmoid(x)).collect();
    Tensor::from_op("silu", a.shape().to_vec(), out, &[a], move |g| {
        let grad = g
            .iter()
            .zip(av.iter())
            .map(|(&g, &x)| {
                let s = sigmoid(x);
                g * (s + x * s * (T::one() - s))
            })
            .collect();
        vec![Some(grad)]
    })
}

/// Mean over all elements, as a scalar-shaped tensor.
pub fn mean<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    let n = a.numel();
    let total: f64 = a.values().iter().map(|x| x.as_f64()).sum();
    let m = T::from_f64(total / n as f64);
    Tensor::from_op("mean", Vec::new(), vec![m], &[a], move |g| {
        let v = g[0] / T::from_f64(n as f64);
        vec![Some(vec![v; n])]
    })
}

/// Mean squared error over all elements.
pub fn mse<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("mse", a, b)?;
    let n = a.numel();
    let diff: Vec<T> = a.values().iter().zip(b.values().iter()).map(|(&x, &y)| x - y).collect();
    let total: f64 = diff.iter().map(|d| d.as_f64() * d.as_f64()).sum();
    let out = T::from_f64(total / n as f64);
    Ok(Tensor::from_op("mse", Vec::new(), vec![out], &[a, b], move |g| {
        let k = g[0] * T::from_f64(2.0 / n as f64);
        let ga: Vec<T> = diff.iter().map(|&d| d * k).collect();
        let gb = ga.iter().map(|&x| -x).collect();
        vec![Some(ga), Some(gb)]
    }))
}

/// `x [N, I] · wᵀ [I, O] + b [O]`.
pub fn linear<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (xs, ws) = (x.shape(), w.shape());
    if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] || b.shape() != [ws[0]] {
        return Err(Error::Shape(format!(
            "linear: x {xs:?}, w {ws:?}, b {:?}",
            b.shape()
        )));
    }
    let (n, i, o) = (xs[0], xs[1], ws[0]);
    let (xv, wv, bv) = (x.values(), w.values(), b.values());
    let mut out = Vec::with_capacity(n * o);
    for _ in 0..n {
        out.extend_from_slice(&bv);
    }
    let (ii, oi) = (i as isize, o as isize);
    T::gemm(n, i, o, T::one(), &xv, ii, 1, &wv, 1, ii, T::one(), &mut out, oi, 1);
    Ok(Tensor::from_op("linear", vec![n, o], out, &[x, w, b], move |g| {
        let mut gx = vec![T::zero(); n * i];
        T::gemm(n, o, i, T::one(), g, oi, 1, &wv, ii, 1, T::zero(), &mut gx, ii, 1);
        let mut gw = vec![T::zero(); o * i];
        T::gemm(o, n, i, T::one(), g, 1, oi, &xv, ii, 1, T::zero(), &mut gw, ii, 1);
        let mut gb = vec![T::zero(); o];
        for row in g.chunks(o) {
            gb.iter_mut().zip(row).for_each(|(a, &b)| *a += b);
        }
        vec![Some(gx), Some(gw), Some(gb)]
    }))
}

/// Columns `[start, start + len)` of a 2-D tensor.
pub fn narrow<T: Scalar>(x: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.len() != 2 || start + len > s[1] {
        return Err(Error::Shape(format!("narrow {start}+{len} of {s:?}")));
    }
    let (n, f) = (s[0], s[1]);
    let xv = x.values();
    let mut out = Vec::with_capacity(n * len);
    for row in xv.chunks(f) {
        out.extend_from_slice(&row[start..start + len]);
    }
    Ok(Tensor::from_op("narrow", vec![n, len], out, &[x], move |g| {
        let mut gx = vec![T::zero(); n * f];
        for (dst, src) in gx.chunks_mut(f).zip(g.chunks(len)) {
            dst[start..start + len].copy_from_slice(src);
        }
        vec![Some(gx)]
    }))
}

/// Rows of `table [R, E]` selected by `ids`, giving `[ids.len(), E]`.
pub fn embedding<T: Scalar>(table: &Tensor<T>, ids: &[usize]) -> Result<Tensor<T>> {
    let s = table.shape();
    if s.len() != 2 {
        return Err(Error::Shape(format!("embedding table shape {s:?}")));
    }
    let (rows, e) = (s[0], s[1]);
    if let Some(&bad) = ids.iter().find(|&&r| r >= rows) {
        return Err(Error::InvalidArgument(format!(
            "embedding index {bad} out of range for {rows} rows"
        )));
    }
    let tv = table.values();
    let mut out = Vec::with_capacity(ids.len() * e);
    for &r in ids {
        out.extend_from_slice(&tv[r * e..(r + 1) * e]);
    }
    let ids = ids.to_vec();
    Ok(Tensor::from_op("embedding", vec![ids.len(), e], out, &[table], move |g| {
        let mut gt = vec![T::zero(); rows * e];
        for (k, &r) in ids.iter().enumerate() {
            gt[r * e..(r + 1) * e]
                .iter_mut()
                .zip(&g[k * e..(k + 1) * e])
                .for_each(|(a, &b)| *a += b);
        }
        vec![Some(gt)]
    }))
}

/// `x · (1 + s) + b` with `s, b : [N, C]` broadcast over the spatial axes of
/// `x : [N, C, ...]`.
pub fn scale_shift<T: Scalar>(x: &Tensor<T>, s: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, sp) = channel_layout("scale_shift", x.shape())?;
    if s.shape() != [n, c] || b.shape() != [n, c] {
        return Err(Error::Shape(format!(
            "scale_shift: x {:?}, s {:?}, b {:?}",
            x.shape(),
            s.shape(),
            b.shape()
        )));
    }
    let (xv, sv, bv) = (x.values(), s.values(), b.values());
    let mut out = vec![T::zero(); xv.len()];
    for (nc, (dst, src)) in out.chunks_mut(sp).zip(xv.chunks(sp)).enumerate() {
        let (k, off) = (T::one() + sv[nc], bv[nc]);
        dst.iter_mut().zip(src).for_each(|(d, &x)| *d = x * k + off);
    }
    Ok(Tensor::from_op("scale_shift", x.shape().to_vec(), out, &[x, s, b], move |g| {
        let mut gx = vec![T::zero(); g.len()];
        let mut gs = vec![T::zero(); n * c];
        let mut gb = vec![T::zero(); n * c];
        for nc in 0..n * c {
            let (gr, xr) = (&g[nc * sp..(nc + 1) * sp], &xv[nc * sp..(nc + 1) * sp]);
            let k = T::one() + sv[nc];
            let (mut acc_s, mut acc_b) = (0.0f64, 0.0f64);
            for ((d, &gv), &xv) in gx[nc * sp..(nc + 1) * sp].iter_mut().zip(gr).zip(xr) {
                *d = gv * k;
                acc_s += (gv * xv).as_f64();
                acc_b += gv.as_f64();
            }
            gs[nc] = T::from_f64(acc_s);
            gb[nc] = T::from_f64(acc_b);
        }
        vec![Some(gx), Some(gs), Some(gb)]
    }))
}

/// Group normalization over `[N, C, ...]` with per-channel affine
/// `gamma, beta : [C]`. Variance is the population variance plus `eps`.
pub fn group_norm<T: Scalar>(
    x: &Tensor<T>,
    groups: usize,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<Tensor<T>> {
    let (_, c, sp) = channel_layout("group_norm", x.shape())?;
    if groups == 0 || c % groups != 0 {
        return Err(Error::InvalidArgument(format!(
            "group_norm: {groups} groups do not divide {c} channels"
        )));
    }
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::Shape(format!(
            "group_norm: gamma {:?}, beta {:?} for {c} channels",
            gamma.shape(),
            beta.shape()
        )));
    }
    let cpg = c / groups;
    let glen = cpg * sp;
    let (xv, gv, bv) = (x.values(), gamma.values(), beta.values());
    // Normalized activations and reciprocal std per (sample, group).
    let stats: Vec<(Vec<T>, f64)> = xv
        .par_chunks(glen)
        .map(|grp| {
            let m = grp.iter().map(|v| v.as_f64()).sum::<f64>() / glen as f64;
            let var = grp.iter().map(|v| (v.as_f64() - m).powi(2)).sum::<f64>() / glen as f64;
            let rstd = 1.0 / (var + eps).sqrt();
            (grp.iter().map(|v| T::from_f64((v.as_f64() - m) * rstd)).collect(), rstd)
        })
        .collect();
    let mut out = vec![T::zero(); xv.len()];
    for (gi, (xhat, _)) in stats.iter().enumerate() {
        for ci in 0..cpg {
            let ch = (gi % groups) * cpg + ci;
            let (k, off) = (gv[ch], bv[ch]);
            let base = gi * glen + ci * sp;
            out[base..base + sp]
                .iter_mut()
                .zip(&xhat[ci * sp..(ci + 1) * sp])
                .for_each(|(o, &h)| *o = h * k + off);
        }
    }
    Ok(Tensor::from_op("group_norm", x.shape().to_vec(), out, &[x, gamma, beta], move |g| {
        let mut gx = vec![T::zero(); g.len()];
        let mut dgamma = vec![0.0f64; c];
        let mut dbeta = vec![0.0f64; c];
        gx.par_chunks_mut(glen)
            .zip(g.par_chunks(glen))
            .zip(stats.par_iter())
            .enumerate()
            .map(|(gi, ((dx, dy), (xhat, rstd)))| {
                let mut dg = vec![0.0f64; cpg];
                let mut db = vec![0.0f64; cpg];
                let (mut sum_dh, mut sum_dh_h) = (0.0f64, 0.0f64);
                for ci in 0..cpg {
                    let k = gv[(gi % groups) * cpg + ci].as_f64();
                    for j in ci * sp..(ci + 1) * sp {
                        let (d, h) = (dy[j].as_f64(), xhat[j].as_f64());
                        dg[ci] += d * h;
                        db[ci] += d;
                        sum_dh += d * k;
                        sum_dh_h += d * k * h;
                    }
                }
                let (mean_dh, mean_dh_h) = (sum_dh / glen as f64, sum_dh_h / glen as f64);
                for ci in 0..cpg {
                    let k = gv[(gi % groups) * cpg + ci].as_f64();
                    for j in ci * sp..(ci + 1) * sp {
                        let dh = dy[j].as_f64() * k;
                        let h = xhat[j].as_f64();
                        dx[j] = T::from_f64(rstd * (dh - mean_dh - h * mean_dh_h));
                    }
                }
                (dg, db)
            })
            .collect::<Vec<_>>()
            .into_iter()
            .enumerate()
            .for_each(|(gi, (dg, db))| {
                let first = (gi % groups) * cpg;
                for ci in 0..cpg {
                    dgamma[first + ci] += dg[ci];
                    dbeta[first + ci] += db[ci];
                }
            });
        vec![
            Some(gx),
            Some(dgamma.into_iter().map(T::from_f64).collect()),
            Some(dbeta.into_iter().map(T::from_f64).collect()),
        ]
    }))
}

/// Concatenate `[N, C1, ...]` and `[N, C2, ...]` along channels.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, ca, sp) = channel_layout("concat", a.shape())?;
    let (nb, cb, spb) = channel_layout("concat", b.shape())?;
    if n != nb || sp != spb || a.shape()[2..] != b.shape()[2..] {
        return Err(Error::Shape(format!(
            "concat: {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (av, bv) = (a.values(), b.values());
    let (la, lb) = (ca * sp, cb * sp);
    let mut out = Vec::with_capacity(n * (la + lb));
    for k in 0..n {
        out.extend_from_slice(&av[k * la..(k + 1) * la]);
        out.extend_from_slice(&bv[k * lb..(k + 1) * lb]);
    }
    let mut shape = a.shape().to_vec();
    shape[1] = ca + cb;
    Ok(Tensor::from_op("concat", shape, out, &[a, b], move |g| {
        let mut ga = Vec::with_capacity(n * la);
        let mut gb = Vec::with_capacity(n * lb);
        for row in g.chunks(la + lb) {
            ga.extend_from_slice(&row[..la]);
            gb.extend_from_slice(&row[la..]);
        }
        vec![Some(ga), Some(gb)]
    }))
}

/// Nearest-neighbour ×2 upsampling of `[N, C, D, H, W]`.
pub fn upsample_nearest2x<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.len() != 5 {
        return Err(Error::Shape(format!("upsample: need [N, C, D, H, W], got {s:?}")));
    }
    let (nc, d, h, w) = (s[0] * s[1], s[2], s[3], s[4]);
    let (od, oh, ow) = (2 * d, 2 * h, 2 * w);
    let xv = x.values();
    let mut out = vec![T::zero(); nc * od * oh * ow];
    out.par_chunks_mut(od * oh * ow)
        .zip(xv.par_chunks(d * h * w))
        .for_each(|(dst, src)| {
            for z in 0..od {
                for y in 0..oh {
                    let srow = &src[((z / 2) * h + y / 2) * w..][..w];
                    let drow = &mut dst[(z * oh + y) * ow..][..ow];
                    for (xo, v) in drow.iter_mut().enumerate() {
                        *v = srow[xo / 2];
                    }
                }
            }
        });
    let shape = vec![s[0], s[1], od, oh, ow];
    Ok(Tensor::from_op("upsample", shape, out, &[x], move |g| {
        let mut gx = vec![T::zero(); nc * d * h * w];
        gx.par_chunks_mut(d * h * w)
            .zip(g.par_chunks(od * oh * ow))
            .for_each(|(dst, src)| {
                for z in 0..od {
                    for y in 0..oh {
                        let srow = &src[(z * oh + y) * ow..][..ow];
                        let drow = &mut dst[((z / 2) * h + y / 2) * w..][..w];
                        for (xo, &v) in srow.iter().enumerate() {
                            drow[xo / 2] += v;
                        }
                    }
                }
            });
        vec![Some(gx)]
    }))
}

pub use super::conv::conv3d;
