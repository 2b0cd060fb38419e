//! Single-level orthonormal 3D Haar transform.
//!
//! Each 2×2×2 cell maps to one coefficient in each of eight subbands. The
//! subband index packs the filter per axis as bits `(depth, height, width)`,
//! high-pass = 1, so index 0 is LLL and index 7 is HHH. Per axis
//! `low = (a + b)/√2` and `high = (a − b)/√2`; the three `1/√2` factors are
//! applied once as `2^{-3/2}` after the add/subtract butterflies.

use num_traits::Float;

use crate::error::{Error, Result};
use crate::volume::{voxel_count, Dims, Volume};

pub const SUBBANDS: usize = 8;
pub const SUBBAND_NAMES: [&str; SUBBANDS] = ["LLL", "LLH", "LHL", "LHH", "HLL", "HLH", "HHL", "HHH"];

/// Half-resolution grid for an even-dimensioned volume.
pub fn half_dims(dims: Dims) -> Result<Dims> {
    if dims.iter().any(|&d| d % 2 != 0 || d == 0) {
        return Err(Error::OddDims(dims));
    }
    Ok(dims.map(|d| d / 2))
}

fn orthonormal_gain<T: Float>() -> T {
    // 2^{-3/2}
    T::from(0.353_553_390_593_273_8_f64).unwrap()
}

#[inline]
fn butterflies<T: Float>(v: &mut [T; 8]) {
    for stride in [1usize, 2, 4] {
        for base in 0..8 {
            if base & stride == 0 {
                let (a, b) = (v[base], v[base + stride]);
                v[base] = a + b;
                v[base + stride] = a - b;
            }
        }
    }
}

/// Forward transform on a raw row-major buffer. Output is channel-major:
/// `8 × (D/2) × (H/2) × (W/2)`.
pub fn analyze<T: Float>(data: &[T], dims: Dims) -> Result<Vec<T>> {
    let half = half_dims(dims)?;
    if data.len() != voxel_count(dims) {
        return Err(Error::Shape(format!("buffer of {} for dims {dims:?}", data.len())));
    }
    let [_, h, w] = dims;
    let n = voxel_count(half);
    let gain = orthonormal_gain::<T>();
    let mut out = vec![T::zero(); SUBBANDS * n];
    let mut cell = [T::zero(); 8];
    for k in 0..half[0] {
        for j in 0..half[1] {
            for i in 0..half[2] {
                for (slot, c) in cell.iter_mut().enumerate() {
                    let (dz, dy, dx) = (slot >> 2, (slot >> 1) & 1, slot & 1);
                    *c = data[((2 * k + dz) * h + 2 * j + dy) * w + 2 * i + dx];
                }
                butterflies(&mut cell);
                let at = (k * half[1] + j) * half[2] + i;
                for (band, &c) in cell.iter().enumerate() {
                    out[band * n + at] = c * gain;
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`analyze`]. `half` is the per-channel grid.
pub fn synthesize<T: Float>(coeffs: &[T], half: Dims) -> Result<Vec<T>> {
    let n = voxel_count(half);
    if coeffs.len() != SUBBANDS * n {
        return Err(Error::Shape(format!(
            "coefficient buffer of {} for half dims {half:?}",
            coeffs.len()
        )));
    }
    let dims = half.map(|d| 2 * d);
    let [_, h, w] = dims;
    let gain = orthonormal_gain::<T>();
    let mut out = vec![T::zero(); voxel_count(dims)];
    let mut cell = [T::zero(); 8];
    for k in 0..half[0] {
        for j in 0..half[1] {
            for i in 0..half[2] {
                let at = (k * half[1] + j) * half[2] + i;
                for (band, c) in cell.iter_mut().enumerate() {
                    *c = coeffs[band * n + at];
                }
                butterflies(&mut cell);
                for (slot, &c) in cell.iter().enumerate() {
                    let (dz, dy, dx) = (slot >> 2, (slot >> 1) & 1, slot & 1);
                    out[((2 * k + dz) * h + 2 * j + dy) * w + 2 * i + dx] = c * gain;
                }
            }
        }
    }
    Ok(out)
}

/// Eight half-resolution subbands of one volume.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveletRep {
    half: Dims,
    spacing: [f32; 3],
    coeffs: Vec<f32>,
}

impl WaveletRep {
    pub fn new(half: Dims, coeffs: Vec<f32>) -> Result<Self> {
        if half.contains(&0) {
            return Err(Error::Shape(format!("half dims {half:?} must be >= 1")));
        }
        if coeffs.len() != SUBBANDS * voxel_count(half) {
            return Err(Error::Shape(format!(
                "{} coefficients for half dims {half:?}",
                coeffs.len()
            )));
        }
        Ok(Self {
            half,
            spacing: [1.0; 3],
            coeffs,
        })
    }

    pub fn zeros(half: Dims) -> Self {
        Self {
            half,
            spacing: [1.0; 3],
            coeffs: vec![0.0; SUBBANDS * voxel_count(half)],
        }
    }

    /// Per-channel grid `(D/2, H/2, W/2)`.
    pub fn half_dims(&self) -> Dims {
        self.half
    }

    /// Dims of the volume this represents.
    pub fn source_dims(&self) -> Dims {
        self.half.map(|d| 2 * d)
    }

    pub fn coeffs(&self) -> &[f32] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f32] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f32> {
        self.coeffs
    }

    pub fn channel(&self, band: usize) -> &[f32] {
        let n = voxel_count(self.half);
        &self.coeffs[band * n..(band + 1) * n]
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn norm_sq(&self) -> f64 {
        self.coeffs.iter().map(|&c| c as f64 * c as f64).sum()
    }

    pub(crate) fn check_same(&self, other: &WaveletRep) -> Result<()> {
        if self.half != other.half {
            return Err(Error::Shape(format!(
                "wavelet grids differ: {:?} vs {:?}",
                self.half, other.half
            )));
        }
        Ok(())
    }

    /// `self + k·other`.
    pub fn add_scaled(&self, other: &WaveletRep, k: f32) -> Result<WaveletRep> {
        self.check_same(other)?;
        Ok(self.zip_map(other, |a, b| a + k * b))
    }

    pub fn sub(&self, other: &WaveletRep) -> Result<WaveletRep> {
        self.check_same(other)?;
        Ok(self.zip_map(other, |a, b| a - b))
    }

    pub(crate) fn zip_map(&self, other: &WaveletRep, f: impl Fn(f32, f32) -> f32) -> WaveletRep {
        WaveletRep {
            half: self.half,
            spacing: self.spacing,
            coeffs: self.coeffs.iter().zip(&other.coeffs).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }
}

pub fn dwt3(v: &Volume) -> Result<WaveletRep> {
    let half = half_dims(v.dims())?;
    let coeffs = analyze(v.data(), v.dims())?;
    Ok(WaveletRep {
        half,
        spacing: v.spacing(),
        coeffs,
    })
}

pub fn idwt3(w: &WaveletRep) -> Result<Volume> {
    let data = synthesize(&w.coeffs, w.half)?;
    Volume::new(w.source_dims(), w.spacing, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::Rng;
    use proptest::prelude::*;

    /// Oracle: the orthonormal 1-D Haar step applied along each axis in turn,
    /// written without the packed butterfly.
    fn separable_oracle(data: &[f64], dims: Dims) -> Vec<f64> {
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let [d, h, w] = dims;
        let (hd, hh, hw) = (d / 2, h / 2, w / 2);
        let n = hd * hh * hw;
        let mut out = vec![0.0; 8 * n];
        for band in 0..8 {
            let filt = [(band >> 2) & 1, (band >> 1) & 1, band & 1];
            for k in 0..hd {
                for j in 0..hh {
                    for i in 0..hw {
                        let mut acc = 0.0;
                        for dz in 0..2 {
                            for dy in 0..2 {
                                for dx in 0..2 {
                                    let tap = |f: usize, o: usize| if f == 1 && o == 1 { -r } else { r };
                                    let x = data[((2 * k + dz) * h + 2 * j + dy) * w + 2 * i + dx];
                                    acc += tap(filt[0], dz) * tap(filt[1], dy) * tap(filt[2], dx) * x;
                                }
                            }
                        }
                        out[band * n + (k * hh + j) * hw + i] = acc;
                    }
                }
            }
        }
        out
    }

    fn random(dims: Dims, seed: u64) -> Vec<f64> {
        let mut rng = Rng::new(seed);
        (0..voxel_count(dims)).map(|_| rng.normal()).collect()
    }

    #[test]
    fn constant_cell() {
        let w = dwt3(&Volume::filled([2, 2, 2], 1.0)).unwrap();
        assert!((w.coeffs()[0] - 2.828_427).abs() < 1e-5);
        assert!(w.coeffs()[1..].iter().all(|&c| c.abs() < 1e-7));
    }

    #[test]
    fn zeros_map_to_zeros() {
        let w = dwt3(&Volume::zeros([4, 6, 2])).unwrap();
        assert_eq!(w.half_dims(), [2, 3, 1]);
        assert!(w.coeffs().iter().all(|&c| c == 0.0));
        assert!(idwt3(&w).unwrap().data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn impulse_matches_oracle() {
        let mut data = vec![0.0; 8];
        data[0] = 1.0;
        let oracle = separable_oracle(&data, [2, 2, 2]);
        let mine = analyze(&data, [2, 2, 2]).unwrap();
        for (a, b) in mine.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12);
            assert!((a - 0.353_553_390_593_273_8).abs() < 1e-12);
        }
        // Impulse in the far corner: sign flips with the number of high-pass axes.
        let mut data = vec![0.0; 8];
        data[7] = 1.0;
        let coeffs = analyze(&data, [2, 2, 2]).unwrap();
        for (band, c) in coeffs.iter().enumerate() {
            let sign = if band.count_ones() % 2 == 0 { 1.0 } else { -1.0 };
            assert!((c - sign * 0.353_553_390_593_273_8).abs() < 1e-12);
        }
    }

    #[test]
    fn random_matches_separable_oracle() {
        let dims = [4, 6, 8];
        let data = random(dims, 5);
        let oracle = separable_oracle(&data, dims);
        let mine = analyze(&data, dims).unwrap();
        for (a, b) in mine.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn inverse_of_constant() {
        let mut coeffs = vec![0.0f32; 8];
        coeffs[0] = 2.0f32.powf(1.5);
        let v = idwt3(&WaveletRep::new([1, 1, 1], coeffs).unwrap()).unwrap();
        assert!(v.data().iter().all(|&x| (x - 1.0).abs() < 1e-6));
    }

    #[test]
    fn odd_dims_rejected() {
        assert!(matches!(dwt3(&Volume::zeros([3, 2, 2])), Err(Error::OddDims(_))));
    }

    #[test]
    fn round_trip_32_cubed() {
        let mut rng = Rng::new(9);
        let data: Vec<f32> = (0..32 * 32 * 32).map(|_| rng.normal() as f32).collect();
        let v = Volume::from_data([32, 32, 32], data).unwrap();
        let back = idwt3(&dwt3(&v).unwrap()).unwrap();
        let err = back.data().iter().zip(v.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn round_trip_f64() {
        let dims = [8, 8, 8];
        let data = random(dims, 2);
        let back = synthesize(&analyze(&data, dims).unwrap(), [4, 4, 4]).unwrap();
        let err = back.iter().zip(&data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn parseval_and_reconstruction(d in 1usize..5, h in 1usize..5, w in 1usize..5, seed in any::<u64>()) {
            let dims = [2 * d, 2 * h, 2 * w];
            let data: Vec<f32> = random(dims, seed).into_iter().map(|x| x as f32).collect();
            let v = Volume::from_data(dims, data).unwrap();
            let rep = dwt3(&v).unwrap();
            let e_in: f64 = v.data().iter().map(|&x| x as f64 * x as f64).sum();
            prop_assert!((rep.norm_sq() - e_in).abs() / e_in < 1e-4);
            let back = idwt3(&rep).unwrap();
            for (a, b) in back.data().iter().zip(v.data()) {
                prop_assert!((a - b).abs() < 1e-4);
            }
        }

        #[test]
        fn linearity(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let dims = [4, 4, 6];
            let u = random(dims, seed);
            let v = random(dims, seed ^ 0xABCD);
            let mix: Vec<f64> = u.iter().zip(&v).map(|(x, y)| a * x + b * y).collect();
            let lhs = analyze(&mix, dims).unwrap();
            let (du, dv) = (analyze(&u, dims).unwrap(), analyze(&v, dims).unwrap());
            for i in 0..lhs.len() {
                prop_assert!((lhs[i] - (a * du[i] + b * dv[i])).abs() < 1e-10);
            }
        }
    }
}
