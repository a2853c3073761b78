//! Reconstruction of subsampled multi-coil MRI k-space by classical GRAPPA
//! and by a Bayesian variant that estimates the unacquired frequencies,
//! interpolation weights and measurement variance jointly as a MAP estimate.
//!
//! The crate also carries the simulation harness (phantom, coil sensitivities,
//! k-space noise, block-design task activation) and the fMRI statistics used
//! to score reconstructions (GLM t-maps, FDR, MSE, entropy, SNR/CNR).

// `!(x > 0.0)` is used on purpose to reject NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analyze;
pub mod bgrappa;
pub mod error;
pub mod grappa;
pub mod io;
mod linalg;
mod rng;
pub mod simulate;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::iso::{IsoMatrix, IsoVector};
pub use tensor::{
    coil_average, ft2, ift2, subsample, CoilKSpaceSeries, ComplexImage, ImageSeries,
    SamplingMask,
};

pub use num_complex::Complex64;
