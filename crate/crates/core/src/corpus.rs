//! Synthetic evaluation corpora with known statistics, so rate-distortion
//! sweeps and the self-test need no external data.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::plane::Volume;

/// Marginally standard-normal synthetic sources.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusKind {
    /// i.i.d. N(0, 1) pixels.
    GaussianIid,
    /// Separable first-order Gauss-Markov field, correlation 0.9 along rows
    /// and columns, unit marginal variance.
    GaussMarkov,
}

pub const GAUSS_MARKOV_RHO: f64 = 0.9;

/// One synthetic image; deterministic in (kind, channels, dims, seed).
pub fn synth_image(
    kind: CorpusKind,
    channels: usize,
    width: usize,
    height: usize,
    seed: u64,
) -> Volume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut volume = Volume::zeros(channels, width, height);
    for c in 0..channels {
        let plane = volume.channel_mut(c);
        for v in plane.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        if kind == CorpusKind::GaussMarkov {
            let rho = GAUSS_MARKOV_RHO;
            let fresh = (1.0 - rho * rho).sqrt();
            // AR(1) along rows, then along columns; unit variance preserved.
            for y in 0..height {
                for x in 1..width {
                    let prev = plane[y * width + x - 1];
                    plane[y * width + x] = rho * prev + fresh * plane[y * width + x];
                }
            }
            for x in 0..width {
                for y in 1..height {
                    let prev = plane[(y - 1) * width + x];
                    plane[y * width + x] = rho * prev + fresh * plane[y * width + x];
                }
            }
        }
    }
    volume
}

/// Squash a standard-normal image into the [-1, 1] signal range.
pub fn squash_to_signal(volume: &mut Volume) {
    for v in volume.data_mut() {
        *v = (*v / 3.0).clamp(-1.0, 1.0);
    }
}

/// A corpus of `count` images with per-image seeds derived from `seed`.
pub fn synth_corpus(
    kind: CorpusKind,
    count: usize,
    channels: usize,
    width: usize,
    height: usize,
    seed: u64,
) -> Vec<Volume> {
    (0..count)
        .map(|i| synth_image(kind, channels, width, height, seed.wrapping_add(i as u64)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn images_are_deterministic() {
        let a = synth_image(CorpusKind::GaussMarkov, 1, 16, 16, 5);
        let b = synth_image(CorpusKind::GaussMarkov, 1, 16, 16, 5);
        assert_eq!(a.data(), b.data());
        let c = synth_image(CorpusKind::GaussMarkov, 1, 16, 16, 6);
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn iid_moments_are_standard() {
        let img = synth_image(CorpusKind::GaussianIid, 1, 128, 128, 0);
        let n = img.len() as f64;
        let mean: f64 = img.data().iter().sum::<f64>() / n;
        let var: f64 = img
            .data()
            .iter()
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / n;
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn gauss_markov_neighbors_correlate() {
        let img = synth_image(CorpusKind::GaussMarkov, 1, 128, 128, 1);
        let w = 128;
        let mut num = 0.0;
        let mut den = 0.0;
        for y in 0..128 {
            for x in 1..w {
                let a = img.get(0, y * w + x - 1);
                let b = img.get(0, y * w + x);
                num += a * b;
                den += a * a;
            }
        }
        let rho = num / den;
        assert!((rho - GAUSS_MARKOV_RHO).abs() < 0.05, "rho {rho}");
    }
}
