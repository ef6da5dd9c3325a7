//! Spatially varying diffusion codec.
//!
//! An image codec in the diffusion-dequantization family with per-pixel rate
//! control: a spatial timestep map sets each pixel's quantization strength
//! through universal quantization, doubles as the context of the entropy
//! model, and drives a spatially varying denoising sampler in which every
//! pixel finishes in the same number of iterations.
//!
//! Modules follow the pipeline: [`schedule`] (noise schedules, DDIM grids,
//! timestep resampling) -> [`roi`] (timestep maps) -> [`quantizer`]
//! (universal quantization) -> [`entropy`] (range coding and conditional
//! Gaussian models) -> [`diffusion`] (denoisers and samplers) -> [`codec`]
//! (container and orchestration).

// Per-pixel kernels index several parallel arrays at once; plain index
// loops read better there than zipped enumerations.
#![allow(clippy::needless_range_loop)]

pub mod codec;
pub mod corpus;
pub mod diffusion;
pub mod entropy;
pub mod error;
pub mod image;
pub mod math;
pub mod plane;
pub mod quantizer;
pub mod roi;
pub mod schedule;

pub use error::{Error, Result};
