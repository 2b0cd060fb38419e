//! Dense 3D volumes, brain masks, intensity normalization, padding and
//! slice export.
//!
//! Data is stored row-major with width fastest: voxel `(z, y, x)` lives at
//! `(z * height + y) * width + x`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Voxel counts as `[depth, height, width]`.
pub type Dims = [usize; 3];

pub fn voxel_count(dims: Dims) -> usize {
    dims[0] * dims[1] * dims[2]
}

#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    dims: Dims,
    spacing: [f32; 3],
    data: Vec<f32>,
}

impl Volume {
    pub fn new(dims: Dims, spacing: [f32; 3], data: Vec<f32>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::Shape(format!("dims {dims:?} must all be >= 1")));
        }
        if data.len() != voxel_count(dims) {
            return Err(Error::Shape(format!(
                "data length {} does not match dims {dims:?}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite voxel at index {i}")));
        }
        Ok(Self {
            dims,
            spacing,
            data,
        })
    }

    /// Unit spacing.
    pub fn from_data(dims: Dims, data: Vec<f32>) -> Result<Self> {
        Self::new(dims, [1.0; 3], data)
    }

    pub fn zeros(dims: Dims) -> Self {
        Self::filled(dims, 0.0)
    }

    pub fn filled(dims: Dims, value: f32) -> Self {
        assert!(dims.iter().all(|&d| d > 0), "dims must be >= 1");
        Self {
            dims,
            spacing: [1.0; 3],
            data: vec![value; voxel_count(dims)],
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn with_spacing(mut self, spacing: [f32; 3]) -> Self {
        self.spacing = spacing;
        self
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[2] + x
    }

    #[inline]
    pub fn get(&self, z: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(z, y, x)]
    }

    /// Apply `f` voxel-wise. The result must stay finite.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Volume {
        Volume {
            dims: self.dims,
            spacing: self.spacing,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    dims: Dims,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(dims: Dims, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != voxel_count(dims) {
            return Err(Error::Shape(format!(
                "mask length {} does not match dims {dims:?}",
                bits.len()
            )));
        }
        Ok(Self { dims, bits })
    }

    pub fn full(dims: Dims) -> Self {
        Self {
            dims,
            bits: vec![true; voxel_count(dims)],
        }
    }

    /// Voxels strictly above `threshold`.
    pub fn from_threshold(v: &Volume, threshold: f32) -> Self {
        Self {
            dims: v.dims,
            bits: v.data.iter().map(|&x| x > threshold).collect(),
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn fraction(&self) -> f64 {
        self.count() as f64 / self.bits.len() as f64
    }

    pub fn to_volume(&self) -> Volume {
        Volume {
            dims: self.dims,
            spacing: [1.0; 3],
            data: self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub(crate) fn check_pair(&self, v: &Volume) -> Result<()> {
        if self.dims != v.dims {
            return Err(Error::Shape(format!(
                "mask dims {:?} do not match volume dims {:?}",
                self.dims, v.dims
            )));
        }
        Ok(())
    }
}

/// Target modality label: 0 = T1, 1 = T1c, 2 = T2, 3 = FLAIR.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ModalityId(u8);

impl ModalityId {
    pub const COUNT: usize = 4;
    pub const T1: ModalityId = ModalityId(0);
    pub const T1C: ModalityId = ModalityId(1);
    pub const T2: ModalityId = ModalityId(2);
    pub const FLAIR: ModalityId = ModalityId(3);

    pub fn new(value: usize) -> Result<Self> {
        if value >= Self::COUNT {
            return Err(Error::InvalidArgument(format!(
                "modality id {value} out of range (must be < 4)"
            )));
        }
        Ok(Self(value as u8))
    }

    pub fn all() -> [ModalityId; 4] {
        [Self::T1, Self::T1C, Self::T2, Self::FLAIR]
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn name(self) -> &'static str {
        ["t1", "t1c", "t2", "flair"][self.index()]
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "t1" | "0" => Ok(Self::T1),
            "t1c" | "1" => Ok(Self::T1C),
            "t2" | "2" => Ok(Self::T2),
            "flair" | "3" => Ok(Self::FLAIR),
            other => Err(Error::InvalidArgument(format!("unknown modality {other:?}"))),
        }
    }

    /// The three other modalities in ascending order.
    pub fn sources(self) -> [ModalityId; 3] {
        let mut out = [Self::T1; 3];
        let mut k = 0;
        for m in Self::all() {
            if m != self {
                out[k] = m;
                k += 1;
            }
        }
        out
    }
}

impl std::fmt::Display for ModalityId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
    /// Set when the masked std fell below the guard and 1 was used instead.
    pub degenerate_contrast: bool,
}

impl NormStats {
    /// Map normalized intensities back to the original scale.
    pub fn denormalize(&self, v: &Volume) -> Volume {
        let (mean, std) = (self.mean, self.std);
        v.map(|x| (x as f64 * std + mean) as f32)
    }
}

const STD_GUARD: f64 = 1e-6;

/// Zero mean, unit population variance over the masked voxels. Voxels outside
/// the mask become 0.
pub fn normalize(v: &Volume, m: &Mask) -> Result<(Volume, NormStats)> {
    m.check_pair(v)?;
    let n = m.count();
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    let masked = || v.data.iter().zip(&m.bits).filter(|(_, &b)| b).map(|(&x, _)| x as f64);
    let mean = masked().sum::<f64>() / n as f64;
    let var = masked().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    let mut std = var.sqrt();
    let degenerate_contrast = std < STD_GUARD;
    if degenerate_contrast {
        std = 1.0;
    }
    let data = v
        .data
        .iter()
        .zip(&m.bits)
        .map(|(&x, &b)| if b { ((x as f64 - mean) / std) as f32 } else { 0.0 })
        .collect();
    Ok((
        Volume {
            dims: v.dims,
            spacing: v.spacing,
            data,
        },
        NormStats {
            mean,
            std,
            degenerate_contrast,
        },
    ))
}

/// Original dims recorded by [`pad_to_multiple`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropRecord {
    pub original: Dims,
}

impl CropRecord {
    pub fn is_identity(&self, padded: Dims) -> bool {
        self.original == padded
    }
}

fn round_up(n: usize, multiple: usize) -> usize {
    n.div_ceil(multiple) * multiple
}

/// Zero-pad at the high end of each axis up to the next multiple.
pub fn pad_to_multiple(v: &Volume, multiple: usize) -> Result<(Volume, CropRecord)> {
    if multiple < 2 || !multiple.is_power_of_two() {
        return Err(Error::InvalidArgument(format!(
            "pad multiple {multiple} must be a power of two >= 2"
        )));
    }
    let record = CropRecord { original: v.dims };
    let new_dims = v.dims.map(|d| round_up(d, multiple));
    if new_dims == v.dims {
        return Ok((v.clone(), record));
    }
    let mut data = vec![0.0f32; voxel_count(new_dims)];
    let [d, h, w] = v.dims;
    for z in 0..d {
        for y in 0..h {
            let src = v.index(z, y, 0);
            let dst = (z * new_dims[1] + y) * new_dims[2];
            data[dst..dst + w].copy_from_slice(&v.data[src..src + w]);
        }
    }
    Ok((
        Volume {
            dims: new_dims,
            spacing: v.spacing,
            data,
        },
        record,
    ))
}

/// Undo [`pad_to_multiple`].
pub fn crop(v: &Volume, record: &CropRecord) -> Result<Volume> {
    let [d, h, w] = record.original;
    if d > v.dims[0] || h > v.dims[1] || w > v.dims[2] {
        return Err(Error::Shape(format!(
            "crop target {:?} larger than volume {:?}",
            record.original, v.dims
        )));
    }
    let mut data = Vec::with_capacity(d * h * w);
    for z in 0..d {
        for y in 0..h {
            let src = v.index(z, y, 0);
            data.extend_from_slice(&v.data[src..src + w]);
        }
    }
    Ok(Volume {
        dims: record.original,
        spacing: v.spacing,
        data,
    })
}

/// Crop a mask the same way as a volume.
pub fn crop_mask(m: &Mask, record: &CropRecord) -> Result<Mask> {
    let cropped = crop(&m.to_volume(), record)?;
    Ok(Mask::from_threshold(&cropped, 0.5))
}

pub fn pad_mask(m: &Mask, multiple: usize) -> Result<Mask> {
    let (padded, _) = pad_to_multiple(&m.to_volume(), multiple)?;
    Ok(Mask::from_threshold(&padded, 0.5))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Fixed depth index; image is height × width.
    Axial,
    /// Fixed width index; image is depth × height.
    Sagittal,
    /// Fixed height index; image is depth × width.
    Coronal,
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "axial" => Ok(Axis::Axial),
            "sagittal" => Ok(Axis::Sagittal),
            "coronal" => Ok(Axis::Coronal),
            other => Err(Error::InvalidArgument(format!("unknown axis {other:?}"))),
        }
    }
}

/// An 8-bit grayscale image of one slice, min-max scaled over the slice.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SliceImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl SliceImage {
    /// Binary PGM: `P5`, ASCII dims, maxval 255, raw bytes.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }
}

pub fn slice_image(v: &Volume, axis: Axis, index: usize) -> Result<SliceImage> {
    let [d, h, w] = v.dims;
    let (limit, rows, cols) = match axis {
        Axis::Axial => (d, h, w),
        Axis::Sagittal => (w, d, h),
        Axis::Coronal => (h, d, w),
    };
    if index >= limit {
        return Err(Error::IndexOutOfRange(format!(
            "{axis:?} slice {index} outside 0..{limit}"
        )));
    }
    let mut values = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            values.push(match axis {
                Axis::Axial => v.get(index, r, c),
                Axis::Sagittal => v.get(r, c, index),
                Axis::Coronal => v.get(r, index, c),
            });
        }
    }
    let lo = values.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = values.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let range = hi - lo;
    let pixels = values
        .iter()
        .map(|&x| {
            if range > 0.0 {
                ((x - lo) / range * 255.0).round().clamp(0.0, 255.0) as u8
            } else {
                0
            }
        })
        .collect();
    Ok(SliceImage {
        width: cols,
        height: rows,
        pixels,
    })
}

pub fn export_slice(v: &Volume, axis: Axis, index: usize, path: impl AsRef<Path>) -> Result<()> {
    let img = slice_image(v, axis, index)?;
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(&img.to_pgm())?;
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::Rng;
    use proptest::prelude::*;

    fn random_volume(dims: Dims, seed: u64) -> Volume {
        let mut rng = Rng::new(seed);
        let data = (0..voxel_count(dims)).map(|_| rng.normal() as f32 * 3.0 + 2.0).collect();
        Volume::from_data(dims, data).unwrap()
    }

    fn masked_moments(v: &Volume, m: &Mask) -> (f64, f64) {
        let xs: Vec<f64> = v
            .data()
            .iter()
            .zip(m.bits())
            .filter(|(_, &b)| b)
            .map(|(&x, _)| x as f64)
            .collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    }

    #[test]
    fn constructor_rejects_bad_input() {
        assert!(Volume::from_data([0, 1, 1], vec![]).is_err());
        assert!(Volume::from_data([2, 1, 1], vec![1.0]).is_err());
        assert!(Volume::from_data([1, 1, 1], vec![f32::NAN]).is_err());
    }

    #[test]
    fn normalize_constant_is_degenerate() {
        let v = Volume::filled([4, 4, 4], 5.0);
        let (out, stats) = normalize(&v, &Mask::full(v.dims())).unwrap();
        assert!(out.data().iter().all(|&x| x == 0.0));
        assert_eq!(stats.mean, 5.0);
        assert_eq!(stats.std, 1.0);
        assert!(stats.degenerate_contrast);
    }

    #[test]
    fn normalize_two_point() {
        let v = Volume::from_data([1, 2, 2], vec![0.0, 2.0, 0.0, 2.0]).unwrap();
        let (out, stats) = normalize(&v, &Mask::full(v.dims())).unwrap();
        assert_eq!(out.data(), &[-1.0, 1.0, -1.0, 1.0]);
        assert_eq!((stats.mean, stats.std), (1.0, 1.0));
        assert!(!stats.degenerate_contrast);
    }

    #[test]
    fn normalize_random_moments() {
        let v = random_volume([16, 16, 16], 3);
        let m = Mask::full(v.dims());
        let (out, _) = normalize(&v, &m).unwrap();
        let (mean, std) = masked_moments(&out, &m);
        assert!(mean.abs() < 1e-5, "{mean}");
        assert!((std - 1.0).abs() < 1e-5, "{std}");
    }

    #[test]
    fn normalize_zeroes_background_and_rejects_empty_mask() {
        let v = random_volume([4, 4, 4], 5);
        let bits: Vec<bool> = (0..64).map(|i| i % 3 == 0).collect();
        let m = Mask::new(v.dims(), bits.clone()).unwrap();
        let (out, _) = normalize(&v, &m).unwrap();
        for (x, b) in out.data().iter().zip(&bits) {
            if !b {
                assert_eq!(*x, 0.0);
            }
        }
        let empty = Mask::new(v.dims(), vec![false; 64]).unwrap();
        assert!(matches!(normalize(&v, &empty), Err(Error::EmptyMask)));
    }

    #[test]
    fn denormalize_inverts_inside_mask() {
        let v = random_volume([4, 4, 4], 8);
        let m = Mask::full(v.dims());
        let (out, stats) = normalize(&v, &m).unwrap();
        let back = stats.denormalize(&out);
        for (a, b) in back.data().iter().zip(v.data()) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn pad_brats_dims() {
        let v = Volume::zeros([240, 240, 155]);
        let (p, rec) = pad_to_multiple(&v, 32).unwrap();
        assert_eq!(p.dims(), [256, 256, 160]);
        assert_eq!(rec.original, [240, 240, 155]);
        assert_eq!(crop(&p, &rec).unwrap().dims(), [240, 240, 155]);
    }

    #[test]
    fn pad_aligned_is_unchanged() {
        let v = random_volume([32, 32, 32], 1);
        let (p, rec) = pad_to_multiple(&v, 32).unwrap();
        assert_eq!(p, v);
        assert!(rec.is_identity(p.dims()));
    }

    #[test]
    fn pad_rejects_bad_multiple() {
        let v = Volume::zeros([3, 3, 3]);
        assert!(pad_to_multiple(&v, 3).is_err());
        assert!(pad_to_multiple(&v, 1).is_err());
    }

    #[test]
    fn slice_export_scaling() {
        let v = Volume::from_data([1, 2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let img = slice_image(&v, Axis::Axial, 0).unwrap();
        assert_eq!(img.pixels, vec![0, 85, 170, 255]);
        let c = Volume::filled([2, 3, 3], 4.0);
        assert!(slice_image(&c, Axis::Coronal, 1).unwrap().pixels.iter().all(|&p| p == 0));
        assert!(matches!(
            slice_image(&c, Axis::Axial, 2),
            Err(Error::IndexOutOfRange(_))
        ));
        assert!(slice_image(&c, Axis::Sagittal, 3).is_err());
    }

    #[test]
    fn pgm_layout() {
        let v = Volume::from_data([1, 2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let bytes = slice_image(&v, Axis::Axial, 0).unwrap().to_pgm();
        assert_eq!(&bytes[..11], b"P5\n2 2\n255\n");
        assert_eq!(&bytes[11..], &[0, 85, 170, 255]);
    }

    #[test]
    fn export_writes_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.pgm");
        let v = random_volume([3, 4, 5], 2);
        export_slice(&v, Axis::Sagittal, 4, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P5\n4 3\n255\n"));
        assert_eq!(bytes.len(), 11 + 12);
    }

    #[test]
    fn modality_sources_ascending() {
        assert_eq!(
            ModalityId::T2.sources(),
            [ModalityId::T1, ModalityId::T1C, ModalityId::FLAIR]
        );
        assert!(ModalityId::new(4).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn pad_crop_round_trip(d in 1usize..20, h in 1usize..20, w in 1usize..20,
                               log in 1u32..7, seed in any::<u64>()) {
            let v = random_volume([d, h, w], seed);
            let (p, rec) = pad_to_multiple(&v, 1 << log).unwrap();
            prop_assert!(p.dims().iter().all(|&x| x % (1 << log) == 0));
            prop_assert_eq!(crop(&p, &rec).unwrap(), v);
        }

        #[test]
        fn normalize_idempotent(seed in any::<u64>()) {
            let v = random_volume([6, 5, 4], seed);
            let bits: Vec<bool> = (0..120).map(|i| !(i * 7 + seed as usize).is_multiple_of(5)).collect();
            let m = Mask::new(v.dims(), bits).unwrap();
            let (once, _) = normalize(&v, &m).unwrap();
            let (twice, _) = normalize(&once, &m).unwrap();
            for (a, b) in once.data().iter().zip(twice.data()) {
                prop_assert!((a - b).abs() < 1e-5);
            }
        }

        #[test]
        fn normalize_affine_invariant(seed in any::<u64>(), a in 0.1f32..10.0, b in -5.0f32..5.0) {
            let v = random_volume([5, 5, 5], seed);
            let m = Mask::full(v.dims());
            let (n1, _) = normalize(&v, &m).unwrap();
            let (n2, _) = normalize(&v.map(|x| a * x + b), &m).unwrap();
            for (x, y) in n1.data().iter().zip(n2.data()) {
                prop_assert!((x - y).abs() < 1e-5, "{} vs {}", x, y);
            }
        }
    }
}
