//! Informed-prior wavelet flow matching for multi-modality volumetric image
//! synthesis.
//!
//! A missing modality is synthesized by integrating a learned,
//! class-conditioned velocity field in Haar wavelet space, starting from the
//! mean of the three available modalities' coefficients instead of noise.
//! The crate is self-contained: volumes and NIfTI I/O, the wavelet
//! transform, a reverse-mode tensor engine, the 3D U-Net, training, ODE
//! solvers, quality metrics and a synthetic phantom generator.
//!
//! See `examples/` for one runnable program per capability.

pub mod cli;
pub mod error;
pub mod flow;
pub mod metrics;
pub mod model;
pub mod nifti;
pub mod phantom;
pub mod solver;
pub mod tensorad;
pub mod volume;
pub mod wavelet;

pub use error::{Error, Result};
pub use volume::{Mask, ModalityId, Volume};
pub use wavelet::{dwt3, idwt3, WaveletRep};
