//! 3D convolution, one sample per rayon task: stride-1 kernels correlate in a
//! padded layout (see `taps`), strided ones use im2col + GEMM, 1×1 a plain GEMM.

use rayon::prelude::*;

use super::{taps, Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    pub const SAME: ConvSpec = ConvSpec {
        stride: 1,
        padding: 1,
    };
    pub const POINTWISE: ConvSpec = ConvSpec {
        stride: 1,
        padding: 0,
    };
    pub const DOWN: ConvSpec = ConvSpec {
        stride: 2,
        padding: 1,
    };
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    cin: usize,
    input: [usize; 3],
    kernel: [usize; 3],
    output: [usize; 3],
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn in_len(&self) -> usize {
        self.cin * self.input.iter().product::<usize>()
    }
    fn k_len(&self) -> usize {
        self.cin * self.kernel.iter().product::<usize>()
    }
    fn p_len(&self) -> usize {
        self.output.iter().product()
    }
    fn is_pointwise(&self) -> bool {
        self.kernel == [1, 1, 1] && self.stride == 1 && self.pad == 0
    }

    /// Stride-1 kernels larger than 1×1×1 use the shifted-window path.
    fn shifted(&self) -> bool {
        self.stride == 1 && !self.is_pointwise()
    }

    fn padded(&self) -> [usize; 3] {
        self.input.map(|n| n + 2 * self.pad)
    }
    fn vp(&self) -> usize {
        self.padded().iter().product()
    }

    /// Length of the padded-layout window covering every valid output.
    fn window(&self) -> usize {
        let [_, hp, wp] = self.padded();
        let [od, oh, ow] = self.output;
        (od - 1) * hp * wp + (oh - 1) * wp + ow
    }

    /// `(row index in the kernel, flat offset in the padded volume)` per tap.
    fn taps(&self) -> Vec<(usize, usize)> {
        let [_, hp, wp] = self.padded();
        let [kd, kh, kw] = self.kernel;
        let mut v = Vec::with_capacity(kd * kh * kw);
        for kz in 0..kd {
            for ky in 0..kh {
                for kx in 0..kw {
                    v.push((v.len(), (kz * hp + ky) * wp + kx));
                }
            }
        }
        v
    }

    /// Copy one sample into a zero-padded `[C, Dp, Hp, Wp]` buffer.
    fn pad<T: Scalar>(&self, x: &[T], cin: usize) -> Vec<T> {
        let [d, h, w] = self.input;
        let [_, hp, wp] = self.padded();
        let (vp, p) = (self.vp(), self.pad);
        let mut out = vec![T::zero(); cin * vp];
        for c in 0..cin {
            for z in 0..d {
                for y in 0..h {
                    let src = (c * d + z) * h * w + y * w;
                    let dst = c * vp + ((z + p) * hp + y + p) * wp + p;
                    out[dst..dst + w].copy_from_slice(&x[src..src + w]);
                }
            }
        }
        out
    }

    /// Visit `(dense index, padded-layout index)` row starts of the output grid.
    fn output_rows(&self, mut f: impl FnMut(usize, usize, usize)) {
        let [od, oh, ow] = self.output;
        let [_, hp, wp] = self.padded();
        for z in 0..od {
            for y in 0..oh {
                f((z * oh + y) * ow, z * hp * wp + y * wp, ow);
            }
        }
    }

    /// Valid output range `[lo, hi)` along one axis for kernel offset `k`.
    fn valid(&self, axis: usize, k: usize) -> (usize, usize) {
        let (n_in, n_out, s, p) = (self.input[axis], self.output[axis], self.stride, self.pad);
        // in = out*s + k - p must lie in [0, n_in)
        let lo = if k >= p { 0 } else { (p - k).div_ceil(s) };
        let hi = if n_in + p > k {
            ((n_in + p - k - 1) / s + 1).min(n_out)
        } else {
            0
        };
        (lo, hi.max(lo))
    }

    /// Rows of `cols` are (c, kz, ky, kx), columns are output voxels.
    fn im2col<T: Scalar>(&self, x: &[T], cols: &mut [T]) {
        let [d, h, w] = self.input;
        let [kd, kh, kw] = self.kernel;
        let [_, oh, ow] = self.output;
        let (s, p) = (self.stride, self.pad);
        let plen = self.p_len();
        cols.iter_mut().for_each(|v| *v = T::zero());
        let mut row = 0;
        for c in 0..self.cin {
            let xc = &x[c * d * h * w..(c + 1) * d * h * w];
            for kz in 0..kd {
                let (z0, z1) = self.valid(0, kz);
                for ky in 0..kh {
                    let (y0, y1) = self.valid(1, ky);
                    for kx in 0..kw {
                        let (x0, x1) = self.valid(2, kx);
                        let dst = &mut cols[row * plen..(row + 1) * plen];
                        for oz in z0..z1 {
                            let iz = oz * s + kz - p;
                            for oy in y0..y1 {
                                let iy = oy * s + ky - p;
                                let src = &xc[(iz * h + iy) * w..(iz * h + iy + 1) * w];
                                let drow = &mut dst[(oz * oh + oy) * ow..(oz * oh + oy + 1) * ow];
                                if s == 1 {
                                    let ix0 = x0 + kx - p;
                                    drow[x0..x1].copy_from_slice(&src[ix0..ix0 + (x1 - x0)]);
                                } else {
                                    for ox in x0..x1 {
                                        drow[ox] = src[ox * s + kx - p];
                                    }
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }

    /// Scatter-add columns back into an input-shaped buffer.
    fn col2im<T: Scalar>(&self, cols: &[T], gx: &mut [T]) {
        let [d, h, w] = self.input;
        let [kd, kh, kw] = self.kernel;
        let [_, oh, ow] = self.output;
        let (s, p) = (self.stride, self.pad);
        let plen = self.p_len();
        let mut row = 0;
        for c in 0..self.cin {
            let gc = &mut gx[c * d * h * w..(c + 1) * d * h * w];
            for kz in 0..kd {
                let (z0, z1) = self.valid(0, kz);
                for ky in 0..kh {
                    let (y0, y1) = self.valid(1, ky);
                    for kx in 0..kw {
                        let (x0, x1) = self.valid(2, kx);
                        let src = &cols[row * plen..(row + 1) * plen];
                        for oz in z0..z1 {
                            let iz = oz * s + kz - p;
                            for oy in y0..y1 {
                                let iy = oy * s + ky - p;
                                let drow = &mut gc[(iz * h + iy) * w..(iz * h + iy + 1) * w];
                                let srow = &src[(oz * oh + oy) * ow..(oz * oh + oy + 1) * ow];
                                for ox in x0..x1 {
                                    drow[ox * s + kx - p] += srow[ox];
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }
}

/// Stride-1 convolution without im2col: in the padded layout every kernel tap
/// is a constant shift, so the output over a contiguous window is a
/// correlation of the padded input with per-tap weights. Window positions
/// that straddle a padded row boundary are computed and discarded. `dst`
/// arrives holding the bias.
fn shifted_forward<T: Scalar>(geo: &Geometry, o: usize, x: &[T], w: &[T], dst: &mut [T]) {
    let cin = geo.cin;
    let (vp, len) = (geo.vp(), geo.window());
    let xp = geo.pad(x, cin);
    let offs: Vec<usize> = geo.taps().into_iter().map(|(_, off)| off).collect();
    let mut acc = vec![T::zero(); o * len];
    taps::correlate(w, o, cin, &offs, &xp, vp, 0, len, &mut acc, len);
    let plen = geo.p_len();
    for oc in 0..o {
        let (a, d) = (&acc[oc * len..], &mut dst[oc * plen..(oc + 1) * plen]);
        geo.output_rows(|di, pi, n| {
            d[di..di + n].iter_mut().zip(&a[pi..pi + n]).for_each(|(v, &s)| *v += s);
        });
    }
}

/// Returns `(∂x, ∂w)` for one sample of the shifted-window path.
fn shifted_backward<T: Scalar>(geo: &Geometry, o: usize, x: &[T], w: &[T], g: &[T]) -> (Vec<T>, Vec<T>) {
    let (cin, k3) = (geo.cin, geo.kernel.iter().product::<usize>());
    let (vp, len, plen) = (geo.vp(), geo.window(), geo.p_len());
    let xp = geo.pad(x, cin);
    let offs: Vec<usize> = geo.taps().into_iter().map(|(_, off)| off).collect();
    let margin = offs.iter().copied().max().unwrap_or(0);
    // Output gradient in the padded layout behind a zero margin, so the
    // input gradient is a correlation with mirrored offsets. Junk stays 0.
    let stride = margin + vp;
    let mut gp = vec![T::zero(); o * stride];
    for oc in 0..o {
        let (d, s) = (&mut gp[oc * stride + margin..], &g[oc * plen..(oc + 1) * plen]);
        geo.output_rows(|di, pi, n| d[pi..pi + n].copy_from_slice(&s[di..di + n]));
    }
    let mut gw = vec![T::zero(); o * cin * k3];
    taps::tap_dots(&gp[margin..], stride, o, &xp, vp, cin, &offs, len, &mut gw);

    let mut wt = vec![T::zero(); w.len()];
    for oc in 0..o {
        for c in 0..cin {
            let (from, to) = ((oc * cin + c) * k3, (c * o + oc) * k3);
            wt[to..to + k3].copy_from_slice(&w[from..from + k3]);
        }
    }
    let mirrored: Vec<usize> = offs.iter().map(|&off| margin - off).collect();
    let [d, h, wd] = geo.input;
    let [_, hp, wp] = geo.padded();
    let p = geo.pad;
    let interior = |z: usize, y: usize| ((z + p) * hp + y + p) * wp + p;
    let (q_lo, q_hi) = (interior(0, 0), interior(d - 1, h - 1) + wd);
    let mut gxp = vec![T::zero(); cin * vp];
    taps::correlate(&wt, cin, o, &mirrored, &gp, stride, q_lo, q_hi, &mut gxp, vp);
    let mut gx = vec![T::zero(); geo.in_len()];
    for c in 0..cin {
        for z in 0..d {
            for y in 0..h {
                let dst = (c * d + z) * h * wd + y * wd;
                let src = c * vp + interior(z, y);
                gx[dst..dst + wd].copy_from_slice(&gxp[src..src + wd]);
            }
        }
    }
    (gx, gw)
}

/// `x [N, C, D, H, W]` ⊛ `w [O, C, kd, kh, kw]` + `b [O]`.
pub fn conv3d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    spec: ConvSpec,
) -> Result<Tensor<T>> {
    let (xs, ws) = (x.shape().to_vec(), w.shape().to_vec());
    if xs.len() != 5 || ws.len() != 5 || xs[1] != ws[1] || b.shape() != [ws[0]] {
        return Err(Error::Shape(format!(
            "conv3d: x {xs:?}, w {ws:?}, b {:?}",
            b.shape()
        )));
    }
    if spec.stride == 0 {
        return Err(Error::InvalidArgument("conv3d: stride must be >= 1".into()));
    }
    let mut output = [0usize; 3];
    for a in 0..3 {
        let padded = xs[2 + a] + 2 * spec.padding;
        if padded < ws[2 + a] {
            return Err(Error::Shape(format!(
                "conv3d: kernel {ws:?} larger than padded input {xs:?}"
            )));
        }
        output[a] = (padded - ws[2 + a]) / spec.stride + 1;
    }
    let geo = Geometry {
        cin: xs[1],
        input: [xs[2], xs[3], xs[4]],
        kernel: [ws[2], ws[3], ws[4]],
        output,
        stride: spec.stride,
        pad: spec.padding,
    };
    let (n, o) = (xs[0], ws[0]);
    let (klen, plen, in_len) = (geo.k_len(), geo.p_len(), geo.in_len());
    let (xv, wv, bv) = (x.values(), w.values(), b.values());
    let mut out = vec![T::zero(); n * o * plen];
    out.par_chunks_mut(o * plen)
        .zip(xv.par_chunks(in_len))
        .for_each(|(dst, src)| {
            for (oc, row) in dst.chunks_mut(plen).enumerate() {
                row.iter_mut().for_each(|v| *v = bv[oc]);
            }
            if geo.shifted() {
                shifted_forward(&geo, o, src, &wv, dst);
                return;
            }
            let owned;
            let cols: &[T] = if geo.is_pointwise() {
                src
            } else {
                let mut c = vec![T::zero(); klen * plen];
                geo.im2col(src, &mut c);
                owned = c;
                &owned
            };
            let (kl, pl) = (klen as isize, plen as isize);
            T::gemm(o, klen, plen, T::one(), &wv, kl, 1, cols, pl, 1, T::one(), dst, pl, 1);
        });
    let out_shape = vec![n, o, output[0], output[1], output[2]];
    Ok(Tensor::from_op("conv3d", out_shape, out, &[x, w, b], move |g| {
        let (kl, pl) = (klen as isize, plen as isize);
        // Per-sample partials, summed in sample order for determinism.
        let parts: Vec<(Vec<T>, Vec<T>, Vec<T>)> = g
            .par_chunks(o * plen)
            .zip(xv.par_chunks(in_len))
            .map(|(gs, src)| {
                let gb = gs
                    .chunks(plen)
                    .map(|r| T::from_f64(r.iter().map(|v| v.as_f64()).sum()))
                    .collect();
                if geo.shifted() {
                    let (gx, gw) = shifted_backward(&geo, o, src, &wv, gs);
                    return (gx, gw, gb);
                }
                let owned;
                let cols: &[T] = if geo.is_pointwise() {
                    src
                } else {
                    let mut c = vec![T::zero(); klen * plen];
                    geo.im2col(src, &mut c);
                    owned = c;
                    &owned
                };
                let mut gw = vec![T::zero(); o * klen];
                T::gemm(o, plen, klen, T::one(), gs, pl, 1, cols, 1, pl, T::zero(), &mut gw, kl, 1);
                let mut gcols = vec![T::zero(); klen * plen];
                T::gemm(klen, o, plen, T::one(), &wv, 1, kl, gs, pl, 1, T::zero(), &mut gcols, pl, 1);
                let gx = if geo.is_pointwise() {
                    gcols
                } else {
                    let mut gx = vec![T::zero(); in_len];
                    geo.col2im(&gcols, &mut gx);
                    gx
                };
                (gx, gw, gb)
            })
            .collect();
        let mut gx = Vec::with_capacity(n * in_len);
        let mut gw = vec![T::zero(); o * klen];
        let mut gb = vec![T::zero(); o];
        for (px, pw, pb) in parts {
            gx.extend_from_slice(&px);
            gw.iter_mut().zip(&pw).for_each(|(a, &b)| *a += b);
            gb.iter_mut().zip(&pb).for_each(|(a, &b)| *a += b);
        }
        vec![Some(gx), Some(gw), Some(gb)]
    }))
}
