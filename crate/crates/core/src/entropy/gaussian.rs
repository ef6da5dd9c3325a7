//! Timestep-conditioned Gaussian symbol models.
//!
//! The timestep map fixes each pixel's quantization bin width, so it carries
//! prior information about the quantized latent. The coding target at pixel
//! p is alpha_p * y0 with y0 drawn from a known per-channel prior
//! N(mu0, s0^2); the conditional symbol distribution is therefore the
//! pushforward N(alpha_p * mu0, (alpha_p * s0)^2), discretized over the bins
//! of the universal quantizer. The unconditioned variant ignores alpha and
//! codes every pixel under N(mu0, s0^2) — the ablation arm.

use crate::error::{Error, Result};
use crate::math::normal_interval_coding;
use crate::plane::Plane;
use crate::quantizer::DitherSource;

use super::range::{RangeDecoder, RangeEncoder};

/// Lower bound on predictor scales.
pub const SCALE_FLOOR: f64 = 1e-6;
/// Total integer frequency of every latent table.
pub const TABLE_TOTAL: u32 = 1 << 16;
/// Standard-normal quantile covering a per-side tail below 2^-21, so the
/// two-sided out-of-window mass stays below 2^-20.
const WINDOW_Z: f64 = 5.2;
/// Hard cap on the symbol window half-width.
const WINDOW_CAP: i64 = 8192;
/// Escaped symbols are coded as a raw two's-complement integer this wide.
pub const ESCAPE_RAW_BITS: u32 = 32;

/// Whether the entropy model conditions on the timestep map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Conditioning {
    TimestepConditioned,
    Unconditioned,
}

impl Conditioning {
    pub fn code(self) -> u8 {
        match self {
            Conditioning::TimestepConditioned => 0,
            Conditioning::Unconditioned => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Conditioning::TimestepConditioned),
            1 => Ok(Conditioning::Unconditioned),
            _ => Err(Error::Stream(format!("unknown conditioning code {code}"))),
        }
    }
}

/// Per-channel source prior plus the conditioning switch.
#[derive(Debug, Clone)]
pub struct PredictorConfig {
    pub prior_mean: Vec<f64>,
    pub prior_std: Vec<f64>,
    pub conditioning: Conditioning,
}

impl PredictorConfig {
    pub fn standard(channels: usize, conditioning: Conditioning) -> Self {
        Self {
            prior_mean: vec![0.0; channels],
            prior_std: vec![1.0; channels],
            conditioning,
        }
    }
}

/// Discretized-Gaussian bin probability: the mass of N(mu, scale^2) over the
/// bin centered at c = (k + dither_unit) * delta.
pub fn gaussian_bin_pmf(mu: f64, scale: f64, delta: f64, dither_unit: f64, k: i64) -> Result<f64> {
    if scale.is_nan() || scale <= 0.0 {
        return Err(Error::Numeric(format!("non-positive scale {scale}")));
    }
    if delta.is_nan() || delta <= 0.0 {
        return Err(Error::Numeric(format!("non-positive bin width {delta}")));
    }
    let c = (k as f64) * delta + dither_unit * delta;
    let lo = (c - 0.5 * delta - mu) / scale;
    let hi = (c + 0.5 * delta - mu) / scale;
    Ok(normal_interval_coding(lo, hi))
}

/// Resolved per-symbol model parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelParams {
    pub mu: f64,
    pub scale: f64,
    pub delta: f64,
    pub dither_unit: f64,
}

impl PixelParams {
    pub fn pmf(&self, k: i64) -> Result<f64> {
        gaussian_bin_pmf(self.mu, self.scale, self.delta, self.dither_unit, k)
    }
}

/// Symbol model for one latent: per-channel priors pushed through the
/// per-pixel start alphas, with the quantizer's bin widths and dither.
#[derive(Debug, Clone)]
pub struct SymbolModel {
    prior_mean: Vec<f64>,
    prior_std: Vec<f64>,
    conditioning: Conditioning,
    alpha: Plane<f64>,
    delta: Plane<f64>,
    dither: DitherSource,
}

impl SymbolModel {
    pub fn channels(&self) -> usize {
        self.prior_mean.len()
    }

    pub fn pixels(&self) -> usize {
        self.alpha.len()
    }

    pub fn conditioning(&self) -> Conditioning {
        self.conditioning
    }

    pub fn params(&self, channel: usize, pixel: usize) -> PixelParams {
        let gain = match self.conditioning {
            Conditioning::TimestepConditioned => self.alpha.at(pixel),
            Conditioning::Unconditioned => 1.0,
        };
        let index = (channel * self.pixels() + pixel) as u64;
        PixelParams {
            mu: gain * self.prior_mean[channel],
            scale: (gain * self.prior_std[channel]).max(SCALE_FLOOR),
            delta: self.delta.at(pixel),
            dither_unit: self.dither.at(index),
        }
    }
}

/// Build the symbol model from the plan-start maps.
pub fn predict_params(
    alpha_start: &Plane<f64>,
    sigma_start: &Plane<f64>,
    dither: DitherSource,
    cfg: &PredictorConfig,
) -> Result<SymbolModel> {
    if cfg.prior_mean.len() != cfg.prior_std.len() || cfg.prior_mean.is_empty() {
        return Err(Error::Parameter(
            "predictor priors must cover >= 1 channel".into(),
        ));
    }
    if cfg.prior_std.iter().any(|&s| s.is_nan() || s <= 0.0) {
        return Err(Error::Parameter("prior std must be positive".into()));
    }
    if !alpha_start.same_shape(sigma_start) {
        return Err(Error::Shape(
            "alpha and sigma start maps differ in shape".into(),
        ));
    }
    let delta = sigma_start.map(|s| (12.0 * s * s).sqrt());
    if delta.data().iter().any(|&d| d.is_nan() || d <= 0.0) {
        return Err(Error::Numeric("zero bin width in start maps".into()));
    }
    Ok(SymbolModel {
        prior_mean: cfg.prior_mean.clone(),
        prior_std: cfg.prior_std.clone(),
        conditioning: cfg.conditioning,
        alpha: alpha_start.clone(),
        delta,
        dither,
    })
}

/// Integer frequency table over the window [-k_max, k_max] plus an escape
/// slot, total exactly 2^16, every slot >= 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrequencyTable {
    k_max: i64,
    cum: Vec<u32>,
}

impl FrequencyTable {
    pub fn window(&self) -> i64 {
        self.k_max
    }

    pub fn slot_count(&self) -> usize {
        self.cum.len() - 1
    }

    pub fn escape_slot(&self) -> usize {
        self.slot_count() - 1
    }

    /// Slot of an in-window symbol.
    pub fn slot_of(&self, k: i64) -> Option<usize> {
        if k >= -self.k_max && k <= self.k_max {
            Some((k + self.k_max) as usize)
        } else {
            None
        }
    }

    pub fn symbol_of_slot(&self, slot: usize) -> i64 {
        debug_assert!(slot < self.escape_slot());
        slot as i64 - self.k_max
    }

    pub fn bounds(&self, slot: usize) -> (u32, u32) {
        (self.cum[slot], self.cum[slot + 1])
    }

    pub fn freq(&self, slot: usize) -> u32 {
        self.cum[slot + 1] - self.cum[slot]
    }

    /// Slot whose cumulative slice contains `value`.
    pub fn find(&self, value: u32) -> usize {
        debug_assert!(value < TABLE_TOTAL);
        // binary search over the strictly increasing cumulative array
        let mut lo = 0usize;
        let mut hi = self.slot_count();
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.cum[mid] <= value {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }
}

/// Discretize a pixel's Gaussian model into a coder-ready table.
///
/// The window is sized so the out-of-window tail mass is below 2^-20; the
/// real masses are scaled to a total of 2^16 with one unit reserved per slot
/// and the rest distributed by largest remainder (ties to the lower slot).
pub fn quantize_pmf(params: &PixelParams) -> Result<FrequencyTable> {
    let center_offset = (params.mu - params.dither_unit * params.delta) / params.delta;
    let span = WINDOW_Z * params.scale / params.delta + center_offset.abs();
    let k_max = (span.ceil() as i64 + 1).clamp(1, WINDOW_CAP);

    let slots = (2 * k_max + 2) as usize;
    if slots as u32 >= TABLE_TOTAL {
        return Err(Error::Numeric(
            "symbol window too wide for 16-bit totals".into(),
        ));
    }

    let mut masses = Vec::with_capacity(slots);
    let mut window_sum = 0.0;
    for k in -k_max..=k_max {
        let m = params.pmf(k)?;
        window_sum += m;
        masses.push(m);
    }
    // escape: whatever the window missed, floored so it stays codable
    masses.push((1.0 - window_sum).max(1e-12));
    let mass_sum: f64 = masses.iter().sum();

    let budget = TABLE_TOTAL - slots as u32;
    let mut freqs = vec![1u32; slots];
    let mut assigned = 0u32;
    let mut remainders: Vec<(usize, f64)> = Vec::with_capacity(slots);
    for (i, &m) in masses.iter().enumerate() {
        let ideal = m / mass_sum * budget as f64;
        let base = ideal.floor() as u32;
        freqs[i] += base;
        assigned += base;
        remainders.push((i, ideal - base as f64));
    }
    let leftover = budget - assigned;
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for &(slot, _) in remainders.iter().take(leftover as usize) {
        freqs[slot] += 1;
    }

    let mut cum = Vec::with_capacity(slots + 1);
    let mut acc = 0u32;
    cum.push(0);
    for &f in &freqs {
        acc += f;
        cum.push(acc);
    }
    if acc != TABLE_TOTAL {
        return Err(Error::Numeric(format!(
            "frequency table total {acc} != {TABLE_TOTAL}"
        )));
    }
    Ok(FrequencyTable { k_max, cum })
}

/// Range-encode quantizer indices, one frequency table per symbol.
/// Out-of-window indices cost the escape slot plus a raw 32-bit integer.
pub fn range_encode_with<F>(symbols: &[i32], mut table_for: F) -> Result<Vec<u8>>
where
    F: FnMut(usize) -> Result<FrequencyTable>,
{
    let mut enc = RangeEncoder::new();
    for (i, &k) in symbols.iter().enumerate() {
        let table = table_for(i)?;
        match table.slot_of(k as i64) {
            Some(slot) => {
                let (lo, hi) = table.bounds(slot);
                enc.encode(lo, hi, TABLE_TOTAL);
            }
            None => {
                let (lo, hi) = table.bounds(table.escape_slot());
                enc.encode(lo, hi, TABLE_TOTAL);
                enc.encode_raw(k as u32, ESCAPE_RAW_BITS);
            }
        }
    }
    Ok(enc.finish())
}

/// Inverse of [`range_encode_with`].
pub fn range_decode_with<F>(bytes: &[u8], count: usize, mut table_for: F) -> Result<Vec<i32>>
where
    F: FnMut(usize) -> Result<FrequencyTable>,
{
    let mut dec = RangeDecoder::new(bytes)?;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let table = table_for(i)?;
        let v = dec.decode_freq(TABLE_TOTAL);
        let slot = table.find(v);
        let (lo, hi) = table.bounds(slot);
        dec.decode_update(lo, hi, TABLE_TOTAL)?;
        if slot == table.escape_slot() {
            out.push(dec.decode_raw(ESCAPE_RAW_BITS)? as i32);
        } else {
            out.push(table.symbol_of_slot(slot) as i32);
        }
    }
    Ok(out)
}

/// Convenience wrappers over explicit table slices.
pub fn range_encode(symbols: &[i32], tables: &[FrequencyTable]) -> Result<Vec<u8>> {
    if symbols.len() != tables.len() {
        return Err(Error::Shape("one table per symbol required".into()));
    }
    range_encode_with(symbols, |i| Ok(tables[i].clone()))
}

pub fn range_decode(bytes: &[u8], tables: &[FrequencyTable]) -> Result<Vec<i32>> {
    range_decode_with(bytes, tables.len(), |i| Ok(tables[i].clone()))
}

/// Analytic code length: sum of -log2 pmf over all symbols, the rate
/// objective of the entropy model. Returns +inf if any symbol has zero
/// probability, which signals a misconfigured predictor or window.
pub fn rate_estimate(symbols: &[i32], model: &SymbolModel) -> Result<f64> {
    let pixels = model.pixels();
    if symbols.len() != model.channels() * pixels {
        return Err(Error::Shape(format!(
            "symbol count {} does not match {} channels x {} pixels",
            symbols.len(),
            model.channels(),
            pixels
        )));
    }
    let mut bits = 0.0;
    for (i, &k) in symbols.iter().enumerate() {
        let params = model.params(i / pixels, i % pixels);
        let p = params.pmf(k as i64)?;
        if p <= 0.0 {
            return Ok(f64::INFINITY);
        }
        bits -= p.log2();
    }
    Ok(bits)
}

/// Expected bits per symbol of a table against the real PMF it quantized.
pub fn expected_table_bits(params: &PixelParams, table: &FrequencyTable) -> Result<f64> {
    let mut bits = 0.0;
    for k in -table.window()..=table.window() {
        let p = params.pmf(k)?;
        if p > 0.0 {
            let slot = table.slot_of(k).unwrap();
            let q = table.freq(slot) as f64 / TABLE_TOTAL as f64;
            bits += p * -q.log2();
        }
    }
    Ok(bits)
}
