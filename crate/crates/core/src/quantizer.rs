//! Per-pixel universal quantization.
//!
//! Quantization with a shared pseudo-random dither makes the reconstruction
//! error exactly uniform on (-delta/2, delta/2], which realizes the uniform
//! forward diffusion process: with delta = sqrt(12 sigma^2) the residual of
//! the quantized state against alpha * y0 is uniform on [-sigma*sqrt(3),
//! sigma*sqrt(3)], the unit-variance uniform noise law. Encoder and decoder
//! derive the identical dither from a seed carried in the bitstream header.

use crate::error::{Error, Result};
use crate::plane::{Plane, Volume};
use crate::roi::TimestepMap;

const SPLITMIX_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const SPLITMIX_MUL1: u64 = 0xBF58_476D_1CE4_E5B9;
const SPLITMIX_MUL2: u64 = 0x94D0_49BB_1331_11EB;

#[inline]
fn splitmix_mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(SPLITMIX_MUL1);
    z = (z ^ (z >> 27)).wrapping_mul(SPLITMIX_MUL2);
    z ^ (z >> 31)
}

/// Counter-based dither generator: a pure function of (seed, symbol index)
/// with values uniform on [-1/2, 1/2). Order-independent, so encoder and
/// decoder can evaluate it for any pixel in any order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DitherSource {
    seed: u64,
}

impl DitherSource {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derive an independent stream for auxiliary noise (decoder-side
    /// renoising); keeps the quantizer dither untouched.
    pub fn derived_stream(&self, tag: u64) -> Self {
        Self {
            seed: splitmix_mix(self.seed ^ tag.wrapping_mul(SPLITMIX_GAMMA)),
        }
    }

    /// SplitMix64 step at counter `index`: the state seed + index*gamma is
    /// advanced by one gamma and mixed; the top 53 bits select a double in
    /// [0, 1), shifted to [-1/2, 1/2).
    #[inline]
    pub fn at(&self, index: u64) -> f64 {
        let state = self
            .seed
            .wrapping_add(index.wrapping_mul(SPLITMIX_GAMMA))
            .wrapping_add(SPLITMIX_GAMMA);
        let z = splitmix_mix(state);
        (z >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0) - 0.5
    }
}

/// Quantized latent: integer indices plus the per-pixel bin geometry needed
/// to reconstruct and to drive the entropy model.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLatent {
    indices: Vec<i32>,
    channels: usize,
    delta_map: Plane<f64>,
    alpha_map: Plane<f64>,
    tmap: TimestepMap,
    seed: u64,
}

impl QuantizedLatent {
    pub fn indices(&self) -> &[i32] {
        &self.indices
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn width(&self) -> usize {
        self.delta_map.width()
    }

    pub fn height(&self) -> usize {
        self.delta_map.height()
    }

    pub fn pixels(&self) -> usize {
        self.delta_map.len()
    }

    /// Per-pixel bin width delta = sqrt(12 sigma^2).
    pub fn delta_map(&self) -> &Plane<f64> {
        &self.delta_map
    }

    pub fn alpha_map(&self) -> &Plane<f64> {
        &self.alpha_map
    }

    pub fn tmap(&self) -> &TimestepMap {
        &self.tmap
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn from_parts(
        indices: Vec<i32>,
        channels: usize,
        delta_map: Plane<f64>,
        alpha_map: Plane<f64>,
        tmap: TimestepMap,
        seed: u64,
    ) -> Result<Self> {
        if indices.len() != channels * delta_map.len() {
            return Err(Error::Shape(
                "index count does not match channels x pixels".into(),
            ));
        }
        if !delta_map.same_shape(&alpha_map) {
            return Err(Error::Shape("delta and alpha maps differ in shape".into()));
        }
        Ok(Self {
            indices,
            channels,
            delta_map,
            alpha_map,
            tmap,
            seed,
        })
    }
}

/// Universal quantization of `y0` at the per-pixel noise level in the start
/// maps: k = round((alpha*y0 - u)/delta), u = delta * dither(seed, index),
/// delta = sqrt(12 sigma^2). Symbol indices run channel-major, row-major.
pub fn quantize(
    y0: &Volume,
    alpha_start: &Plane<f64>,
    sigma_start: &Plane<f64>,
    tmap: &TimestepMap,
    dither: DitherSource,
) -> Result<QuantizedLatent> {
    if y0.width() != alpha_start.width() || y0.height() != alpha_start.height() {
        return Err(Error::Shape("latent and start maps differ in shape".into()));
    }
    if !alpha_start.same_shape(sigma_start) {
        return Err(Error::Shape("alpha and sigma maps differ in shape".into()));
    }
    let pixels = y0.pixels();
    let mut delta_map = Plane::filled(y0.width(), y0.height(), 0f64);
    for p in 0..pixels {
        let sigma = sigma_start.at(p);
        if sigma <= 0.0 {
            return Err(Error::Numeric(format!(
                "zero bin width at pixel {p} (sigma = 0)"
            )));
        }
        delta_map.data_mut()[p] = (12.0 * sigma * sigma).sqrt();
    }

    let mut indices = vec![0i32; y0.len()];
    for c in 0..y0.channels() {
        for p in 0..pixels {
            let i = y0.index_of(c, p);
            let delta = delta_map.at(p);
            let u = delta * dither.at(i as u64);
            let centered = alpha_start.at(p) * y0.get(c, p) - u;
            if !centered.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite latent at channel {c} pixel {p}"
                )));
            }
            indices[i] = (centered / delta).round() as i32;
        }
    }

    QuantizedLatent::from_parts(
        indices,
        y0.channels(),
        delta_map,
        alpha_start.clone(),
        tmap.clone(),
        dither.seed(),
    )
}

/// Dequantization: y_hat = k * delta + u. Bitwise deterministic; with the
/// encoder's seed this reproduces the encoder-side state exactly.
pub fn reconstruct(q: &QuantizedLatent, dither: DitherSource) -> Volume {
    let mut out = Volume::zeros(q.channels(), q.width(), q.height());
    let pixels = q.pixels();
    for c in 0..q.channels() {
        for p in 0..pixels {
            let i = c * pixels + p;
            let delta = q.delta_map().at(p);
            let u = delta * dither.at(i as u64);
            out.data_mut()[i] = q.indices()[i] as f64 * delta + u;
        }
    }
    out
}

/// Diagnostic residual y_hat - alpha * y0, the realized forward-process
/// noise. Bounded by sigma*sqrt(3) pixelwise.
pub fn effective_timestep_noise(
    y_hat: &Volume,
    y0: &Volume,
    alpha_map: &Plane<f64>,
) -> Result<Volume> {
    if !y_hat.same_shape(y0) {
        return Err(Error::Shape(
            "state and reference volumes differ in shape".into(),
        ));
    }
    if y_hat.width() != alpha_map.width() || y_hat.height() != alpha_map.height() {
        return Err(Error::Shape("alpha map does not match volume shape".into()));
    }
    let mut out = Volume::zeros(y_hat.channels(), y_hat.width(), y_hat.height());
    let pixels = y_hat.pixels();
    for c in 0..y_hat.channels() {
        for p in 0..pixels {
            let i = c * pixels + p;
            out.data_mut()[i] = y_hat.data()[i] - alpha_map.at(p) * y0.data()[i];
        }
    }
    Ok(out)
}
