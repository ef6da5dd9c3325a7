//! Denoiser abstraction and the analytic MMSE denoiser for Gaussian sources
//! under uniform noise.

use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{Error, Result};
use crate::math::{normal_cdf, normal_pdf, normal_sf};
use crate::plane::{Plane, Volume};
use crate::schedule::NoiseSchedule;

const SQRT_3: f64 = 1.732_050_807_568_877_2;
/// Interval posterior mass below which the truncated mean falls back to the
/// prior mean.
const MASS_FLOOR: f64 = 1e-12;

/// A pure v-prediction evaluator. `index_map` holds each pixel's dense-grid
/// index; output shape equals input shape.
pub trait Denoiser {
    fn predict_v(
        &self,
        y: &Volume,
        index_map: &Plane<u16>,
        schedule: &NoiseSchedule,
    ) -> Result<Volume>;
}

/// Per-channel i.i.d. Gaussian source prior.
#[derive(Debug, Clone)]
pub struct GaussianPrior {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl GaussianPrior {
    pub fn standard(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    fn validate(&self, channels: usize) -> Result<()> {
        if self.mean.len() != channels || self.std.len() != channels {
            return Err(Error::Shape(format!(
                "prior covers {} channels, volume has {channels}",
                self.mean.len()
            )));
        }
        if self.std.iter().any(|&s| s.is_nan() || s <= 0.0) {
            return Err(Error::Parameter("prior std must be positive".into()));
        }
        Ok(())
    }
}

/// Mean of N(mu, s^2) truncated to [lo, hi]:
/// mu + s * (phi(a) - phi(b)) / (Phi(b) - Phi(a)). The interval mass is
/// evaluated through survival functions so far-tail intervals keep relative
/// accuracy; mass below 1e-12 falls back to the prior mean.
pub fn truncated_normal_mean(mu: f64, s: f64, lo: f64, hi: f64) -> f64 {
    debug_assert!(s > 0.0 && lo <= hi);
    let a = (lo - mu) / s;
    let b = (hi - mu) / s;
    let mass = if a >= 0.0 {
        normal_sf(a) - normal_sf(b)
    } else if b <= 0.0 {
        normal_sf(-b) - normal_sf(-a)
    } else {
        1.0 - normal_sf(b) - normal_cdf(a)
    };
    if mass < MASS_FLOOR {
        return mu;
    }
    mu + s * (normal_pdf(a) - normal_pdf(b)) / mass
}

/// Posterior mean E[y0 | y = alpha*y0 + sigma*u] for the Gaussian prior and
/// unit-variance uniform noise u: the prior truncated to the interval
/// |y - alpha*y0| <= sigma*sqrt(3).
pub fn mmse_denoise_gaussian(
    y: &Volume,
    alpha_map: &Plane<f64>,
    sigma_map: &Plane<f64>,
    prior: &GaussianPrior,
) -> Result<Volume> {
    prior.validate(y.channels())?;
    if y.width() != alpha_map.width() || y.height() != alpha_map.height() {
        return Err(Error::Shape("alpha map does not match volume".into()));
    }
    if !alpha_map.same_shape(sigma_map) {
        return Err(Error::Shape("alpha and sigma maps differ in shape".into()));
    }
    if sigma_map.data().iter().any(|&s| s <= 0.0) {
        return Err(Error::Numeric("mmse denoiser requires sigma > 0".into()));
    }
    let pixels = y.pixels();
    let mut out = Volume::zeros(y.channels(), y.width(), y.height());
    for c in 0..y.channels() {
        let (mu0, s0) = (prior.mean[c], prior.std[c]);
        for p in 0..pixels {
            let alpha = alpha_map.at(p);
            let half = SQRT_3 * sigma_map.at(p);
            let value = y.get(c, p);
            let lo = (value - half) / alpha;
            let hi = (value + half) / alpha;
            out.set(c, p, truncated_normal_mean(mu0, s0, lo, hi));
        }
    }
    Ok(out)
}

/// Denoiser wrapping [`mmse_denoise_gaussian`], converting the posterior
/// mean to a v prediction.
#[derive(Debug, Clone)]
pub struct MmseGaussianDenoiser {
    pub prior: GaussianPrior,
}

impl MmseGaussianDenoiser {
    pub fn new(prior: GaussianPrior) -> Self {
        Self { prior }
    }

    pub fn standard(channels: usize) -> Self {
        Self {
            prior: GaussianPrior::standard(channels),
        }
    }
}

impl Denoiser for MmseGaussianDenoiser {
    fn predict_v(
        &self,
        y: &Volume,
        index_map: &Plane<u16>,
        schedule: &NoiseSchedule,
    ) -> Result<Volume> {
        if y.width() != index_map.width() || y.height() != index_map.height() {
            return Err(Error::Shape("index map does not match volume".into()));
        }
        let alpha = index_map.map(|d| schedule.alpha(d));
        let sigma = index_map.map(|d| schedule.sigma(d));
        let x0 = mmse_denoise_gaussian(y, &alpha, &sigma, &self.prior)?;
        // v = (alpha*y - x0) / sigma; indices are >= 1 so sigma > 0
        let mut v = Volume::zeros(y.channels(), y.width(), y.height());
        let pixels = y.pixels();
        for c in 0..y.channels() {
            for p in 0..pixels {
                let i = c * pixels + p;
                v.data_mut()[i] = (alpha.at(p) * y.data()[i] - x0.data()[i]) / sigma.at(p);
            }
        }
        Ok(v)
    }
}

/// Wraps a denoiser and counts evaluations; used to verify the
/// iterations-equals-max-level law and to report costs.
pub struct CountingDenoiser<'a> {
    inner: &'a dyn Denoiser,
    count: AtomicUsize,
}

impl<'a> CountingDenoiser<'a> {
    pub fn new(inner: &'a dyn Denoiser) -> Self {
        Self {
            inner,
            count: AtomicUsize::new(0),
        }
    }

    pub fn evaluations(&self) -> usize {
        self.count.load(Ordering::Relaxed)
    }
}

impl Denoiser for CountingDenoiser<'_> {
    fn predict_v(
        &self,
        y: &Volume,
        index_map: &Plane<u16>,
        schedule: &NoiseSchedule,
    ) -> Result<Volume> {
        self.count.fetch_add(1, Ordering::Relaxed);
        self.inner.predict_v(y, index_map, schedule)
    }
}
