//! Spatially varying samplers.
//!
//! `sample` runs the resampled-trajectory sampler: every pixel follows its
//! own rescaled trajectory so the whole image reaches the clean state after
//! exactly tau = max(map) denoiser evaluations.
//!
//! `repaint_sample` is the ablation baseline: a spatially uniform walk down
//! the deepest level's trajectory where less-noisy regions are renoised to
//! the current global level before each evaluation and restored from their
//! quantized context afterwards, until the global level reaches their own.

use crate::error::{Error, Result};
use crate::plane::{Plane, Volume};
use crate::quantizer::DitherSource;
use crate::roi::TimestepMap;
use crate::schedule::{resample_trajectory, DdimGrid, NoiseSchedule, SamplingPlan};

use super::denoiser::Denoiser;

const SQRT_3: f64 = 1.732_050_807_568_877_2;

/// Which sampler the decoder runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerKind {
    ResampledDdim,
    Repaint,
}

impl SamplerKind {
    pub fn code(self) -> u8 {
        match self {
            SamplerKind::ResampledDdim => 0,
            SamplerKind::Repaint => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(SamplerKind::ResampledDdim),
            1 => Ok(SamplerKind::Repaint),
            _ => Err(Error::Stream(format!("unknown sampler code {code}"))),
        }
    }
}

/// One VP denoising update. With sigma_next = 0 this lands exactly on the
/// predicted clean signal. u_hat is formed as sigma*y + alpha*v, which is 0
/// at already-clean pixels without any division.
#[inline]
fn vp_update(y: f64, v: f64, a: f64, s: f64, a_next: f64, s_next: f64) -> f64 {
    let x0 = a * y - s * v;
    let u_hat = s * y + a * v;
    a_next * x0 + s_next * u_hat
}

fn step_with_maps(
    y: &Volume,
    v: &Volume,
    alpha: &Plane<f64>,
    sigma: &Plane<f64>,
    alpha_next: &Plane<f64>,
    sigma_next: &Plane<f64>,
) -> Volume {
    let mut out = Volume::zeros(y.channels(), y.width(), y.height());
    let pixels = y.pixels();
    for c in 0..y.channels() {
        for p in 0..pixels {
            let i = c * pixels + p;
            out.data_mut()[i] = vp_update(
                y.data()[i],
                v.data()[i],
                alpha.at(p),
                sigma.at(p),
                alpha_next.at(p),
                sigma_next.at(p),
            );
        }
    }
    out
}

/// Advance one plan iteration: evaluate the denoiser at iteration k's index
/// map and move every pixel to its iteration k+1 noise level (the terminal
/// iteration moves to the clean state alpha=1, sigma=0).
pub fn step(
    y: &Volume,
    plan: &SamplingPlan,
    k: usize,
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
) -> Result<Volume> {
    let tau = plan.tau() as usize;
    if k >= tau {
        return Err(Error::Parameter(format!(
            "plan exhausted: iteration {k} of {tau}"
        )));
    }
    if y.width() != plan.levels().width() || y.height() != plan.levels().height() {
        return Err(Error::Shape("state does not match plan dimensions".into()));
    }
    let v = denoiser.predict_v(y, plan.index_map(k), schedule)?;
    if !v.same_shape(y) {
        return Err(Error::Shape("denoiser output shape mismatch".into()));
    }
    let clean_alpha;
    let clean_sigma;
    let (alpha_next, sigma_next) = if k + 1 < tau {
        (plan.alpha_map(k + 1), plan.sigma_map(k + 1))
    } else {
        clean_alpha = Plane::filled(y.width(), y.height(), 1.0);
        clean_sigma = Plane::filled(y.width(), y.height(), 0.0);
        (&clean_alpha, &clean_sigma)
    };
    Ok(step_with_maps(
        y,
        &v,
        plan.alpha_map(k),
        plan.sigma_map(k),
        alpha_next,
        sigma_next,
    ))
}

/// Run the full resampled sampler: exactly tau denoiser evaluations.
pub fn sample(
    y_hat: &Volume,
    plan: &SamplingPlan,
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
) -> Result<Volume> {
    let mut y = y_hat.clone();
    for k in 0..plan.tau() as usize {
        y = step(&y, plan, k, denoiser, schedule)?;
    }
    Ok(y)
}

/// RePaint-style multi-region sampler with parameters n=1, j=1, so the
/// evaluation count equals max(map) exactly as for [`sample`].
///
/// `context` holds each region's known (quantized) state at its own level —
/// for decoding this is the dequantized latent itself. `noise` drives the
/// forward renoising of waiting regions and must come from the stream header
/// for deterministic decodes.
pub fn repaint_sample(
    y_hat: &Volume,
    tmap: &TimestepMap,
    grid: &DdimGrid,
    schedule: &NoiseSchedule,
    denoiser: &dyn Denoiser,
    context: &Volume,
    noise: DitherSource,
) -> Result<Volume> {
    if !y_hat.same_shape(context) {
        return Err(Error::Shape("context does not match state shape".into()));
    }
    if y_hat.width() != tmap.width() || y_hat.height() != tmap.height() {
        return Err(Error::Shape(
            "timestep map does not match state shape".into(),
        ));
    }
    let n = grid.step_count();
    let tau = tmap.max_value();
    if tau == 0 || tau > n {
        return Err(Error::Parameter(format!(
            "map max level {tau} outside [1, {n}]"
        )));
    }

    let levels = tmap.values();
    let pixels = y_hat.pixels();
    let channels = y_hat.channels();
    let (w, h) = (y_hat.width(), y_hat.height());
    let global = resample_trajectory(grid.start_index(tau)?, tau)?;

    let mut y = y_hat.clone();
    for (j, &g) in global.iter().enumerate() {
        let lambda = tau - j as u16;

        // Renoise regions still waiting below the current global level:
        // y_g = (a_g/a_s) * context + sqrt(s_g^2 - (a_g/a_s)^2 s_s^2) * u.
        for (p, &lv) in levels.iter().enumerate() {
            if lv < lambda {
                let s_idx = grid.start_index(lv)?;
                let ratio = schedule.alpha(g) / schedule.alpha(s_idx);
                let var = schedule.sigma(g) * schedule.sigma(g)
                    - ratio * ratio * schedule.sigma(s_idx) * schedule.sigma(s_idx);
                let spread = var.max(0.0).sqrt();
                for c in 0..channels {
                    let i = c * pixels + p;
                    let draw = ((j * channels + c) * pixels + p) as u64;
                    let u = 2.0 * SQRT_3 * noise.at(draw);
                    y.data_mut()[i] = ratio * context.data()[i] + spread * u;
                }
            }
        }

        // One spatially uniform denoising step from g to the next global index.
        let idx_map = Plane::filled(w, h, g);
        let v = denoiser.predict_v(&y, &idx_map, schedule)?;
        let alpha = Plane::filled(w, h, schedule.alpha(g));
        let sigma = Plane::filled(w, h, schedule.sigma(g));
        let (alpha_next, sigma_next) = if j + 1 < global.len() {
            let gn = global[j + 1];
            (
                Plane::filled(w, h, schedule.alpha(gn)),
                Plane::filled(w, h, schedule.sigma(gn)),
            )
        } else {
            (Plane::filled(w, h, 1.0), Plane::filled(w, h, 0.0))
        };
        y = step_with_maps(&y, &v, &alpha, &sigma, &alpha_next, &sigma_next);

        // Regions at or below the new global level return to their own
        // context; a region whose level equals the new global level joins
        // the walk from its quantized state at the next iteration.
        let lambda_next = lambda - 1;
        for (p, &lv) in levels.iter().enumerate() {
            if lv <= lambda_next {
                for c in 0..channels {
                    let i = c * pixels + p;
                    y.data_mut()[i] = context.data()[i];
                }
            }
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::denoiser::{CountingDenoiser, MmseGaussianDenoiser};
    use crate::plane::Plane;
    use crate::schedule::{build_ddim_grid, build_plan, build_schedule, ScheduleKind};

    struct ExactVDenoiser {
        x0: Volume,
    }

    impl Denoiser for ExactVDenoiser {
        fn predict_v(
            &self,
            y: &Volume,
            index_map: &Plane<u16>,
            schedule: &NoiseSchedule,
        ) -> Result<Volume> {
            // v consistent with the known clean signal at the current state
            let mut v = Volume::zeros(y.channels(), y.width(), y.height());
            let pixels = y.pixels();
            for c in 0..y.channels() {
                for p in 0..pixels {
                    let a = schedule.alpha(index_map.at(p));
                    let s = schedule.sigma(index_map.at(p));
                    let i = c * pixels + p;
                    v.data_mut()[i] = (a * y.data()[i] - self.x0.data()[i]) / s;
                }
            }
            Ok(v)
        }
    }

    fn setup() -> (NoiseSchedule, DdimGrid) {
        let s = build_schedule(ScheduleKind::Cosine, 1000).unwrap();
        let g = build_ddim_grid(50, &s).unwrap();
        (s, g)
    }

    #[test]
    fn terminal_step_returns_x0_exactly() {
        let (s, g) = setup();
        let map = TimestepMap::constant(2, 2, 50, 1).unwrap();
        let plan = build_plan(&map, &g, &s).unwrap();
        let x0 = Volume::from_vec(1, 2, 2, vec![0.3, -0.2, 0.9, -1.5]).unwrap();
        let denoiser = ExactVDenoiser { x0: x0.clone() };
        // state at level 1 consistent with x0 and zero noise component
        let a1 = s.alpha(1);
        let mut y = x0.clone();
        for v in y.data_mut() {
            *v *= a1;
        }
        let out = step(&y, &plan, 0, &denoiser, &s).unwrap();
        for (o, x) in out.data().iter().zip(x0.data()) {
            assert!((o - x).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_denoiser_reproduces_forward_states() {
        // With v computed from the true (y0, u) pair, each step lands exactly
        // on the forward state at the next index.
        let (s, g) = setup();
        let map = TimestepMap::constant(1, 1, 50, 5).unwrap();
        let plan = build_plan(&map, &g, &s).unwrap();
        let y0 = 0.73;
        let u = -0.41; // fixed unit-variance noise realization
        let x0 = Volume::from_vec(1, 1, 1, vec![y0]).unwrap();
        let denoiser = ExactVDenoiser { x0 };
        let start = plan.index_map(0).at(0);
        let mut y =
            Volume::from_vec(1, 1, 1, vec![s.alpha(start) * y0 + s.sigma(start) * u]).unwrap();
        for k in 0..plan.tau() as usize {
            y = step(&y, &plan, k, &denoiser, &s).unwrap();
            if k + 1 < plan.tau() as usize {
                let d = plan.index_map(k + 1).at(0);
                let expect = s.alpha(d) * y0 + s.sigma(d) * u;
                assert!((y.get(0, 0) - expect).abs() < 1e-12, "k={k}");
            }
        }
        assert!((y.get(0, 0) - y0).abs() < 1e-12);
    }

    #[test]
    fn plan_exhaustion_is_an_error() {
        let (s, g) = setup();
        let map = TimestepMap::constant(1, 1, 50, 2).unwrap();
        let plan = build_plan(&map, &g, &s).unwrap();
        let y = Volume::zeros(1, 1, 1);
        let denoiser = MmseGaussianDenoiser::standard(1);
        assert!(step(&y, &plan, 2, &denoiser, &s).is_err());
    }

    #[test]
    fn evaluation_count_equals_max_level_for_both_samplers() {
        let (s, g) = setup();
        let mut values = vec![3u16; 12];
        values[5] = 9;
        let map = TimestepMap::new(4, 3, 50, values).unwrap();
        let plan = build_plan(&map, &g, &s).unwrap();
        let y = Volume::zeros(1, 4, 3);
        let inner = MmseGaussianDenoiser::standard(1);

        let counter = CountingDenoiser::new(&inner);
        sample(&y, &plan, &counter, &s).unwrap();
        assert_eq!(counter.evaluations(), 9);

        let counter = CountingDenoiser::new(&inner);
        repaint_sample(&y, &map, &g, &s, &counter, &y, DitherSource::new(1)).unwrap();
        assert_eq!(counter.evaluations(), 9);
    }

    #[test]
    fn repaint_on_constant_map_matches_sample_bitwise() {
        let (s, g) = setup();
        let map = TimestepMap::constant(3, 3, 50, 6).unwrap();
        let plan = build_plan(&map, &g, &s).unwrap();
        let data: Vec<f64> = (0..9).map(|i| (i as f64 * 0.77).sin()).collect();
        let y = Volume::from_vec(1, 3, 3, data).unwrap();
        let denoiser = MmseGaussianDenoiser::standard(1);
        let a = sample(&y, &plan, &denoiser, &s).unwrap();
        let b = repaint_sample(&y, &map, &g, &s, &denoiser, &y, DitherSource::new(0)).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn deeper_regions_reconstruct_worse_on_average() {
        // Two-level map, Gaussian source, MMSE denoiser: the heavily
        // quantized region carries more error, averaged over seeds.
        use crate::quantizer::{quantize, reconstruct, DitherSource};
        use rand::Rng;
        use rand::SeedableRng;
        let (s, g) = setup();
        let (w, h) = (8, 8);
        let values: Vec<u16> = (0..w * h)
            .map(|i| if i % w < w / 2 { 4 } else { 28 })
            .collect();
        let map = TimestepMap::new(w, h, 50, values.clone()).unwrap();
        let plan = build_plan(&map, &g, &s).unwrap();
        let denoiser = MmseGaussianDenoiser::standard(1);
        let (alpha0, sigma0) = (
            plan.start_alpha_map().clone(),
            plan.start_sigma_map().clone(),
        );

        let mut mse_lo = 0.0f64;
        let mut mse_hi = 0.0f64;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(400);
        let seeds = 100;
        for _ in 0..seeds {
            let y0 = Volume::from_vec(
                1,
                w,
                h,
                (0..w * h)
                    .map(|_| rng.sample(rand_distr::StandardNormal))
                    .collect(),
            )
            .unwrap();
            let dither = DitherSource::new(rng.random());
            let q = quantize(&y0, &alpha0, &sigma0, &map, dither).unwrap();
            let y_hat = reconstruct(&q, dither);
            let out = sample(&y_hat, &plan, &denoiser, &s).unwrap();
            for (p, &lv) in values.iter().enumerate() {
                let d = out.get(0, p) - y0.get(0, p);
                if lv == 4 {
                    mse_lo += d * d;
                } else {
                    mse_hi += d * d;
                }
            }
        }
        assert!(
            mse_hi > mse_lo,
            "hi-level MSE {mse_hi} vs lo-level {mse_lo}"
        );
    }

    #[test]
    fn repaint_is_deterministic_in_the_noise_seed() {
        // A patch-based denoiser couples neighbors, so the renoising draws
        // of waiting regions reach the final image; a per-pixel denoiser
        // would hide them behind the context restore.
        use crate::diffusion::tiny::TinyDenoiser;
        let (s, g) = setup();
        let mut values = vec![2u16; 9];
        values[0] = 7;
        let map = TimestepMap::new(3, 3, 50, values).unwrap();
        let data: Vec<f64> = (0..9).map(|i| (i as f64 * 0.31).cos()).collect();
        let y = Volume::from_vec(1, 3, 3, data).unwrap();
        let denoiser = TinyDenoiser::new(3, &[4], 2).unwrap();
        let a = repaint_sample(&y, &map, &g, &s, &denoiser, &y, DitherSource::new(9)).unwrap();
        let b = repaint_sample(&y, &map, &g, &s, &denoiser, &y, DitherSource::new(9)).unwrap();
        let c = repaint_sample(&y, &map, &g, &s, &denoiser, &y, DitherSource::new(10)).unwrap();
        assert_eq!(a.data(), b.data());
        assert_ne!(a.data(), c.data());
    }
}
