//! Register-blocked kernels for stride-1 convolution in a padded layout,
//! where each kernel tap is a constant offset into a flattened channel.
//! Operands are read in place (no packing): the convolution matrices are
//! short and wide (8–64 rows), which is where a general GEMM spends most of
//! its time repacking.
//!
//! Accumulation order is fixed, so results are bitwise reproducible on a
//! given machine. The AVX2+FMA path fuses multiply-adds and therefore rounds
//! differently from the portable path.

use super::Scalar;

const ROWS: usize = 4;
const LANES: usize = 16;
const DOT_LANES: usize = 8;
const DOT_TAPS: usize = 3;

/// `dst[r·ds + q] += Σ_c Σ_t a[(r·chans + c)·nt + t] · src[c·cs + offs[t] + q]`
/// for `r < rows`, `q ∈ q_lo..q_hi`.
#[allow(clippy::too_many_arguments)]
pub(super) fn correlate<T: Scalar>(
    a: &[T],
    rows: usize,
    chans: usize,
    offs: &[usize],
    src: &[T],
    cs: usize,
    q_lo: usize,
    q_hi: usize,
    dst: &mut [T],
    ds: usize,
) {
    #[cfg(target_arch = "x86_64")]
    if std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma") {
        // SAFETY: the required CPU features were detected just above.
        unsafe { correlate_fma(a, rows, chans, offs, src, cs, q_lo, q_hi, dst, ds) };
        return;
    }
    correlate_impl::<T, false>(a, rows, chans, offs, src, cs, q_lo, q_hi, dst, ds);
}

/// `out[(r·chans + c)·nt + t] = Σ_{p<len} g[r·gs + p] · x[c·xs + offs[t] + p]`.
#[allow(clippy::too_many_arguments)]
pub(super) fn tap_dots<T: Scalar>(
    g: &[T],
    gs: usize,
    rows: usize,
    x: &[T],
    xs: usize,
    chans: usize,
    offs: &[usize],
    len: usize,
    out: &mut [T],
) {
    #[cfg(target_arch = "x86_64")]
    if std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma") {
        // SAFETY: as above.
        unsafe { tap_dots_fma(g, gs, rows, x, xs, chans, offs, len, out) };
        return;
    }
    tap_dots_impl::<T, false>(g, gs, rows, x, xs, chans, offs, len, out);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
#[allow(clippy::too_many_arguments)]
unsafe fn correlate_fma<T: Scalar>(
    a: &[T],
    rows: usize,
    chans: usize,
    offs: &[usize],
    src: &[T],
    cs: usize,
    q_lo: usize,
    q_hi: usize,
    dst: &mut [T],
    ds: usize,
) {
    correlate_impl::<T, true>(a, rows, chans, offs, src, cs, q_lo, q_hi, dst, ds);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
#[allow(clippy::too_many_arguments)]
unsafe fn tap_dots_fma<T: Scalar>(
    g: &[T],
    gs: usize,
    rows: usize,
    x: &[T],
    xs: usize,
    chans: usize,
    offs: &[usize],
    len: usize,
    out: &mut [T],
) {
    tap_dots_impl::<T, true>(g, gs, rows, x, xs, chans, offs, len, out);
}

#[inline(always)]
fn madd<T: Scalar, const FUSED: bool>(a: T, b: T, c: T) -> T {
    if FUSED {
        a.mul_add(b, c)
    } else {
        a * b + c
    }
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn correlate_impl<T: Scalar, const FUSED: bool>(
    a: &[T],
    rows: usize,
    chans: usize,
    offs: &[usize],
    src: &[T],
    cs: usize,
    q_lo: usize,
    q_hi: usize,
    dst: &mut [T],
    ds: usize,
) {
    if q_hi <= q_lo {
        return;
    }
    let mut r0 = 0;
    while r0 < rows {
        let rb = (rows - r0).min(ROWS);
        let args = (a, r0, chans, offs, src, cs, q_lo, q_hi);
        match rb {
            4 => correlate_rows::<T, 4, FUSED>(args, dst, ds),
            3 => correlate_rows::<T, 3, FUSED>(args, dst, ds),
            2 => correlate_rows::<T, 2, FUSED>(args, dst, ds),
            _ => correlate_rows::<T, 1, FUSED>(args, dst, ds),
        }
        r0 += rb;
    }
}

type CorrelateArgs<'a, T> = (&'a [T], usize, usize, &'a [usize], &'a [T], usize, usize, usize);

#[inline(always)]
fn correlate_rows<T: Scalar, const R: usize, const FUSED: bool>(
    (a, r0, chans, offs, src, cs, q_lo, q_hi): CorrelateArgs<'_, T>,
    dst: &mut [T],
    ds: usize,
) {
    let nt = offs.len();
    let weight = |r: usize, c: usize, t: usize| a[((r0 + r) * chans + c) * nt + t];
    let mut q = q_lo;
    while q < q_hi {
        let n = (q_hi - q).min(LANES);
        let mut acc = [[T::zero(); LANES]; R];
        for c in 0..chans {
            for (t, &off) in offs.iter().enumerate() {
                let base = c * cs + off + q;
                let w: [T; R] = std::array::from_fn(|r| weight(r, c, t));
                if n == LANES {
                    let b: &[T; LANES] = src[base..base + LANES].try_into().unwrap();
                    for r in 0..R {
                        for i in 0..LANES {
                            acc[r][i] = madd::<T, FUSED>(b[i], w[r], acc[r][i]);
                        }
                    }
                } else {
                    let b = &src[base..base + n];
                    for r in 0..R {
                        for i in 0..n {
                            acc[r][i] = madd::<T, FUSED>(b[i], w[r], acc[r][i]);
                        }
                    }
                }
            }
        }
        for (r, row) in acc.iter().enumerate() {
            let d = &mut dst[(r0 + r) * ds + q..(r0 + r) * ds + q + n];
            d.iter_mut().zip(row).for_each(|(d, &s)| *d += s);
        }
        q += n;
    }
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn tap_dots_impl<T: Scalar, const FUSED: bool>(
    g: &[T],
    gs: usize,
    rows: usize,
    x: &[T],
    xs: usize,
    chans: usize,
    offs: &[usize],
    len: usize,
    out: &mut [T],
) {
    let nt = offs.len();
    let mut r0 = 0;
    while r0 < rows {
        let rb = (rows - r0).min(ROWS);
        for c in 0..chans {
            let mut t0 = 0;
            while t0 < nt {
                let tb = (nt - t0).min(DOT_TAPS);
                let args = (g, gs, r0, x, c * xs, &offs[t0..t0 + tb], len);
                let sums: [[T; DOT_TAPS]; ROWS] = match (rb, tb) {
                    (4, 3) => dots::<T, 4, 3, FUSED>(args),
                    (4, 2) => dots::<T, 4, 2, FUSED>(args),
                    (4, _) => dots::<T, 4, 1, FUSED>(args),
                    (3, _) => dots_dyn::<T, 3, FUSED>(args),
                    (2, _) => dots_dyn::<T, 2, FUSED>(args),
                    _ => dots_dyn::<T, 1, FUSED>(args),
                };
                for r in 0..rb {
                    for t in 0..tb {
                        out[((r0 + r) * chans + c) * nt + t0 + t] = sums[r][t];
                    }
                }
                t0 += tb;
            }
        }
        r0 += rb;
    }
}

type DotArgs<'a, T> = (&'a [T], usize, usize, &'a [T], usize, &'a [usize], usize);

/// Remainder rows: one tap at a time.
#[inline(always)]
fn dots_dyn<T: Scalar, const R: usize, const FUSED: bool>(
    (g, gs, r0, x, xc, offs, len): DotArgs<'_, T>,
) -> [[T; DOT_TAPS]; ROWS] {
    let mut out = [[T::zero(); DOT_TAPS]; ROWS];
    for (t, &off) in offs.iter().enumerate() {
        let one = dots::<T, R, 1, FUSED>((g, gs, r0, x, xc, &[off], len));
        for r in 0..R {
            out[r][t] = one[r][0];
        }
    }
    out
}

#[inline(always)]
fn dots<T: Scalar, const R: usize, const TB: usize, const FUSED: bool>(
    (g, gs, r0, x, xc, offs, len): DotArgs<'_, T>,
) -> [[T; DOT_TAPS]; ROWS] {
    let mut acc = [[[T::zero(); DOT_LANES]; TB]; R];
    let full = len - len % DOT_LANES;
    let mut p = 0;
    while p < full {
        let gr: [&[T; DOT_LANES]; R] =
            std::array::from_fn(|r| g[(r0 + r) * gs + p..(r0 + r) * gs + p + DOT_LANES].try_into().unwrap());
        for t in 0..TB {
            let base = xc + offs[t] + p;
            let b: &[T; DOT_LANES] = x[base..base + DOT_LANES].try_into().unwrap();
            for r in 0..R {
                for i in 0..DOT_LANES {
                    acc[r][t][i] = madd::<T, FUSED>(gr[r][i], b[i], acc[r][t][i]);
                }
            }
        }
        p += DOT_LANES;
    }
    let mut out = [[T::zero(); DOT_TAPS]; ROWS];
    for r in 0..R {
        for t in 0..TB {
            let mut s = acc[r][t].iter().fold(T::zero(), |s, &v| s + v);
            for q in full..len {
                s = madd::<T, FUSED>(g[(r0 + r) * gs + q], x[xc + offs[t] + q], s);
            }
            out[r][t] = s;
        }
    }
    out
}
