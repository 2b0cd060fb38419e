//! The velocity network `f_θ(x̃_t, c, t, y)`: a class- and time-conditioned
//! 3D U-Net over the 8 wavelet subbands, concatenated with the 24 channels of
//! the three conditioning modalities.

mod checkpoint;
mod unet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint};
pub use unet::{NamedParam, UNet};

/// Input channels: 8 subbands of `x̃_t` plus 3 × 8 conditioning subbands.
pub const IN_CHANNELS: usize = 32;
pub const OUT_CHANNELS: usize = 8;
pub const GROUP_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub base_channels: usize,
    pub channel_mult: Vec<usize>,
    pub res_blocks: usize,
    /// Upper bound on GroupNorm groups; the actual count is the largest
    /// divisor of the channel count not exceeding it.
    pub max_groups: usize,
    /// Width of `e = TimeEmbed(t) + ClassEmbed(y)`.
    pub embed_dim: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// Small configuration that trains in minutes on a CPU.
    pub fn desk() -> Self {
        Self {
            base_channels: 8,
            channel_mult: vec![1, 2, 2],
            res_blocks: 1,
            max_groups: 32,
            embed_dim: 32,
            in_channels: IN_CHANNELS,
            out_channels: OUT_CHANNELS,
        }
    }

    /// The full-size layout (base 64, multipliers 1-2-2-4-4, 2 blocks).
    pub fn paper() -> Self {
        Self {
            base_channels: 64,
            channel_mult: vec![1, 2, 2, 4, 4],
            res_blocks: 2,
            max_groups: 32,
            embed_dim: 256,
            in_channels: IN_CHANNELS,
            out_channels: OUT_CHANNELS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.in_channels != IN_CHANNELS || self.out_channels != OUT_CHANNELS {
            return fail(format!(
                "channels must be {IN_CHANNELS} in / {OUT_CHANNELS} out, got {}/{}",
                self.in_channels, self.out_channels
            ));
        }
        if self.base_channels == 0 || !self.base_channels.is_multiple_of(2) {
            return fail(format!("base_channels {} must be even and positive", self.base_channels));
        }
        if self.channel_mult.len() < 2 || self.channel_mult.contains(&0) {
            return fail(format!("channel_mult {:?} needs >= 2 positive entries", self.channel_mult));
        }
        if self.channel_mult.windows(2).any(|w| w[1] < w[0]) {
            return fail(format!("channel_mult {:?} must be non-decreasing", self.channel_mult));
        }
        if self.res_blocks == 0 || self.max_groups == 0 || self.embed_dim == 0 {
            return fail("res_blocks, max_groups and embed_dim must be positive".into());
        }
        Ok(())
    }

    pub fn levels(&self) -> usize {
        self.channel_mult.len()
    }

    /// Spatial extents of the wavelet grid must be divisible by this.
    pub fn spatial_multiple(&self) -> usize {
        1 << (self.levels() - 1)
    }

    pub fn groups_for(&self, channels: usize) -> usize {
        (1..=self.max_groups.min(channels))
            .rev()
            .find(|g| channels.is_multiple_of(*g))
            .unwrap_or(1)
    }
}

/// Sinusoidal features of `1000·t`: `half = dim/2` frequencies spaced
/// geometrically from 1 down to 1e-4 (wavelengths 1 … 10⁴), sines first.
pub fn time_features(t: f64, dim: usize) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!("time {t} outside [0, 1]")));
    }
    let half = dim / 2;
    let arg = 1000.0 * t;
    let freq = |k: usize| {
        if half <= 1 {
            1.0
        } else {
            10f64.powf(-4.0 * k as f64 / (half - 1) as f64)
        }
    };
    let mut out = Vec::with_capacity(2 * half);
    out.extend((0..half).map(|k| (arg * freq(k)).sin()));
    out.extend((0..half).map(|k| (arg * freq(k)).cos()));
    Ok(out)
}
