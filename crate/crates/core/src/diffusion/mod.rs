//! Denoisers and the spatially varying samplers.

mod denoiser;
mod sampler;
mod tiny;

pub use denoiser::{
    mmse_denoise_gaussian, truncated_normal_mean, CountingDenoiser, Denoiser, GaussianPrior,
    MmseGaussianDenoiser,
};
pub use sampler::{repaint_sample, sample, step, SamplerKind};
pub use tiny::{
    make_training_batch, make_training_batch_seeded, train_tiny_denoiser, TinyDenoiser,
    TrainConfig, TrainReport, TrainingBatch,
};

use crate::error::{Error, Result};
use crate::plane::{Plane, Volume};

fn check_state_shapes(
    a: &Volume,
    b: &Volume,
    alpha: &Plane<f64>,
    sigma: &Plane<f64>,
) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::Shape("volumes differ in shape".into()));
    }
    if a.width() != alpha.width() || a.height() != alpha.height() || !alpha.same_shape(sigma) {
        return Err(Error::Shape(
            "schedule maps do not match volume shape".into(),
        ));
    }
    Ok(())
}

/// Predicted clean signal from a v prediction: x0 = alpha*y - sigma*v.
pub fn x0_from_v(y: &Volume, v: &Volume, alpha: &Plane<f64>, sigma: &Plane<f64>) -> Result<Volume> {
    check_state_shapes(y, v, alpha, sigma)?;
    let mut out = Volume::zeros(y.channels(), y.width(), y.height());
    let pixels = y.pixels();
    for c in 0..y.channels() {
        for p in 0..pixels {
            let i = c * pixels + p;
            out.data_mut()[i] = alpha.at(p) * y.data()[i] - sigma.at(p) * v.data()[i];
        }
    }
    Ok(out)
}

/// v target for a known clean signal: v = (alpha*y - x0) / sigma.
/// Requires sigma > 0 everywhere.
pub fn v_from_x0(
    x0: &Volume,
    y: &Volume,
    alpha: &Plane<f64>,
    sigma: &Plane<f64>,
) -> Result<Volume> {
    check_state_shapes(y, x0, alpha, sigma)?;
    if sigma.data().iter().any(|&s| s <= 0.0) {
        return Err(Error::Numeric(
            "v_from_x0 is singular where sigma = 0".into(),
        ));
    }
    let mut out = Volume::zeros(y.channels(), y.width(), y.height());
    let pixels = y.pixels();
    for c in 0..y.channels() {
        for p in 0..pixels {
            let i = c * pixels + p;
            out.data_mut()[i] = (alpha.at(p) * y.data()[i] - x0.data()[i]) / sigma.at(p);
        }
    }
    Ok(out)
}
