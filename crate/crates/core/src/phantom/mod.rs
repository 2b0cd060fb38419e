//! Synthetic multi-modality phantoms: one smooth anatomy field rendered
//! through four different intensity mappings, plus a lesion that each
//! modality weights differently.

mod rng;

pub use rng::{splitmix64, Rng};

use crate::error::{Error, Result};
use crate::volume::{normalize, voxel_count, Dims, Mask, ModalityId, NormStats, Volume};

/// Per-modality weights of the anatomy field `A`, its saturation `tanh(3A)`
/// and the lesion field `L`.
pub const CONTRAST_A: [f32; 4] = [1.0, 1.0, -0.6, -0.4];
pub const CONTRAST_B: [f32; 4] = [0.3, 0.5, 1.2, 1.0];
pub const CONTRAST_C: [f32; 4] = [0.1, 0.9, 0.6, 0.8];
pub const NOISE_STD: f32 = 0.02;
pub const MASK_THRESHOLD: f32 = 0.15;
pub const MASK_FRACTION: (f64, f64) = (0.10, 0.60);
/// Lesions are seeded where the anatomy is at least this bright.
const LESION_SITE: f32 = 0.6;
const MAX_ATTEMPTS: u64 = 10;

pub const DEFAULT_DIMS: Dims = [32, 32, 32];

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomCase {
    pub seed: u64,
    /// Normalized volumes indexed by `ModalityId::index`.
    pub volumes: [Volume; 4],
    pub mask: Mask,
    /// Lesion field in `[0, 1]`, zero outside the mask.
    pub lesion: Volume,
    /// Mean/std that mapped each native intensity volume to `volumes`.
    pub stats: [NormStats; 4],
}

impl PhantomCase {
    pub fn volume(&self, m: ModalityId) -> &Volume {
        &self.volumes[m.index()]
    }

    /// The three conditioning volumes for target `y`, in ascending id order.
    pub fn sources(&self, y: ModalityId) -> [&Volume; 3] {
        y.sources().map(|m| self.volume(m))
    }

    pub fn dims(&self) -> Dims {
        self.mask.dims()
    }
}

/// Disjoint train/validation seed lists.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<u64>,
    pub val: Vec<u64>,
}

/// Train seeds are `base, base+1, …`; validation seeds follow directly after.
pub fn make_split(n_train: usize, n_val: usize, base_seed: u64) -> Result<Split> {
    if n_train == 0 || n_val == 0 {
        return Err(Error::InvalidArgument(format!(
            "split needs at least one case on each side, got {n_train}/{n_val}"
        )));
    }
    let seed = |i: usize| base_seed.wrapping_add(i as u64);
    Ok(Split {
        train: (0..n_train).map(seed).collect(),
        val: (n_train..n_train + n_val).map(seed).collect(),
    })
}

pub fn generate_case(seed: u64) -> Result<PhantomCase> {
    generate_case_with_dims(seed, DEFAULT_DIMS)
}

pub fn generate_case_with_dims(seed: u64, dims: Dims) -> Result<PhantomCase> {
    if dims.iter().any(|&d| d < 16 || d % 2 != 0) {
        return Err(Error::InvalidArgument(format!(
            "phantom dims {dims:?} must be even and at least 16"
        )));
    }
    let mut last_fraction = 0.0;
    for attempt in 0..MAX_ATTEMPTS {
        let mut sub = seed ^ attempt.wrapping_mul(0xA076_1D64_78BD_642F);
        let mut rng = Rng::new(if attempt == 0 { seed } else { splitmix64(&mut sub) });
        let anatomy = anatomy_field(&mut rng, dims);
        let mask = Mask::from_threshold(&anatomy, MASK_THRESHOLD);
        last_fraction = mask.fraction();
        if !(MASK_FRACTION.0..=MASK_FRACTION.1).contains(&last_fraction) {
            continue;
        }
        let lesion = lesion_field(&mut rng, &anatomy, &mask);
        let (volumes, stats) = render(&mut rng, &anatomy, &lesion, &mask)?;
        return Ok(PhantomCase {
            seed,
            volumes,
            mask,
            lesion,
            stats,
        });
    }
    Err(Error::Phantom(format!(
        "seed {seed}: mask fraction {last_fraction:.3} outside [0.10, 0.60] after {MAX_ATTEMPTS} attempts"
    )))
}

/// Squared ellipsoidal radius of `p`.
fn radius_sq(p: [f64; 3], center: [f64; 3], radii: [f64; 3]) -> f64 {
    (0..3).map(|a| ((p[a] - center[a]) / radii[a]).powi(2)).sum()
}

fn for_each_voxel(dims: Dims, mut f: impl FnMut(usize, [f64; 3])) {
    let mut i = 0;
    for z in 0..dims[0] {
        for y in 0..dims[1] {
            for x in 0..dims[2] {
                f(i, [z as f64, y as f64, x as f64]);
                i += 1;
            }
        }
    }
}

fn anatomy_field(rng: &mut Rng, dims: Dims) -> Volume {
    let n_bumps = 5 + rng.below(5) as usize;
    let mut field = vec![0f64; voxel_count(dims)];
    for _ in 0..n_bumps {
        // Flat-topped ellipsoids: after smoothing, edges carry the gradient
        // and interiors are plateaus, so structure is shared across mappings.
        let center: [f64; 3] = std::array::from_fn(|a| rng.uniform(0.15, 0.85) * dims[a] as f64);
        let radii: [f64; 3] = std::array::from_fn(|a| rng.uniform(0.20, 0.40) * dims[a] as f64);
        let amp = rng.uniform(0.2, 1.0);
        for_each_voxel(dims, |i, p| {
            if radius_sq(p, center, radii) < 1.0 {
                field[i] += amp;
            }
        });
    }
    for _ in 0..3 {
        for axis in 0..3 {
            smooth_121(&mut field, dims, axis);
        }
    }
    let (lo, hi) = field
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    let data = field.iter().map(|&v| ((v - lo) / span) as f32).collect();
    Volume::from_data(dims, data).expect("dims checked")
}

/// One pass of the `[1, 2, 1] / 4` filter along `axis`, edges replicated.
fn smooth_121(field: &mut [f64], dims: Dims, axis: usize) {
    let stride = match axis {
        0 => dims[1] * dims[2],
        1 => dims[2],
        _ => 1,
    };
    let len = dims[axis];
    let src = field.to_vec();
    for (i, out) in field.iter_mut().enumerate() {
        let k = (i / stride) % len;
        let prev = if k == 0 { i } else { i - stride };
        let next = if k + 1 == len { i } else { i + stride };
        *out = 0.25 * src[prev] + 0.5 * src[i] + 0.25 * src[next];
    }
}

/// A small `max(0, 1 − r²)` ellipsoid centered on a random bright anatomy
/// voxel, clipped to the mask.
fn lesion_field(rng: &mut Rng, anatomy: &Volume, mask: &Mask) -> Volume {
    let dims = mask.dims();
    let inside: Vec<usize> = (0..anatomy.len())
        .filter(|&i| mask.bits()[i] && anatomy.data()[i] >= LESION_SITE)
        .collect();
    let c = inside[rng.below(inside.len() as u64) as usize];
    let center = [
        (c / (dims[1] * dims[2])) as f64,
        ((c / dims[2]) % dims[1]) as f64,
        (c % dims[2]) as f64,
    ];
    let radii: [f64; 3] = std::array::from_fn(|a| rng.uniform(0.04, 0.08) * dims[a] as f64);
    let mut data = vec![0f32; voxel_count(dims)];
    for_each_voxel(dims, |i, p| {
        if mask.bits()[i] {
            data[i] = (1.0 - radius_sq(p, center, radii)).max(0.0) as f32;
        }
    });
    Volume::from_data(dims, data).expect("dims checked")
}

fn render(
    rng: &mut Rng,
    anatomy: &Volume,
    lesion: &Volume,
    mask: &Mask,
) -> Result<([Volume; 4], [NormStats; 4])> {
    let mut out = Vec::with_capacity(4);
    let mut stats = Vec::with_capacity(4);
    for m in 0..4 {
        let (a, b, c) = (CONTRAST_A[m], CONTRAST_B[m], CONTRAST_C[m]);
        let data: Vec<f32> = anatomy
            .data()
            .iter()
            .zip(lesion.data())
            .map(|(&av, &lv)| a * av + b * (3.0 * av).tanh() + c * lv + NOISE_STD * rng.normal() as f32)
            .collect();
        let raw = Volume::from_data(anatomy.dims(), data)?;
        let (v, st) = normalize(&raw, mask)?;
        out.push(v);
        stats.push(st);
    }
    let four = "four modalities";
    Ok((out.try_into().expect(four), stats.try_into().expect(four)))
}
