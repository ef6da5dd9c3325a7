//! A small trainable v-prediction network.
//!
//! Per-pixel MLP over a local patch: the inputs are the noisy state patch
//! and the matching per-pixel alpha patch, so the timestep enters as a
//! feature channel rather than a learned embedding. One forward pass per
//! pixel with shared weights; tanh hidden layers, linear output, explicit
//! backpropagation, plain SGD with global-norm gradient clipping.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::plane::{Plane, Volume};
use crate::roi::{generate_training_map, MapGenConfig};
use crate::schedule::{level_start_maps, DdimGrid, NoiseSchedule};

use super::denoiser::Denoiser;
use super::v_from_x0;

const SQRT_3: f64 = 1.732_050_807_568_877_2;
const MAGIC: &[u8; 4] = b"SVTD";
const VERSION: u8 = 1;

#[derive(Debug, Clone)]
pub struct TinyDenoiser {
    patch_size: usize,
    dims: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl TinyDenoiser {
    /// `hidden` lists the hidden-layer widths; the input layer is the
    /// flattened (state, alpha) patch pair and the output is the center
    /// pixel's v prediction.
    pub fn new(patch_size: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        if patch_size == 0 || patch_size.is_multiple_of(2) {
            return Err(Error::Parameter(
                "patch size must be odd and positive".into(),
            ));
        }
        if hidden.contains(&0) {
            return Err(Error::Parameter("hidden widths must be positive".into()));
        }
        let mut dims = vec![2 * patch_size * patch_size];
        dims.extend_from_slice(hidden);
        dims.push(1);

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..dims.len() - 1 {
            let bound = 1.0 / (dims[l] as f64).sqrt();
            weights.push(
                (0..dims[l] * dims[l + 1])
                    .map(|_| rng.random_range(-bound..bound))
                    .collect(),
            );
            biases.push(vec![0.0; dims[l + 1]]);
        }
        Ok(Self {
            patch_size,
            dims,
            weights,
            biases,
        })
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn param_count(&self) -> usize {
        (0..self.dims.len() - 1)
            .map(|l| self.dims[l] * self.dims[l + 1] + self.dims[l + 1])
            .sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in 0..self.weights.len() {
            out.extend_from_slice(&self.weights[l]);
            out.extend_from_slice(&self.biases[l]);
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let mut at = 0;
        for l in 0..self.weights.len() {
            let wn = self.weights[l].len();
            self.weights[l].copy_from_slice(&flat[at..at + wn]);
            at += wn;
            let bn = self.biases[l].len();
            self.biases[l].copy_from_slice(&flat[at..at + bn]);
            at += bn;
        }
        Ok(())
    }

    /// Gather the (state, alpha) feature vector for one pixel with
    /// replicate padding at the borders.
    fn gather_features(
        &self,
        channel: &[f64],
        alpha: &Plane<f64>,
        x: usize,
        y: usize,
        out: &mut Vec<f64>,
    ) {
        let half = (self.patch_size / 2) as isize;
        let (w, h) = (alpha.width() as isize, alpha.height() as isize);
        out.clear();
        for dy in -half..=half {
            for dx in -half..=half {
                let px = (x as isize + dx).clamp(0, w - 1) as usize;
                let py = (y as isize + dy).clamp(0, h - 1) as usize;
                out.push(channel[py * alpha.width() + px]);
            }
        }
        for dy in -half..=half {
            for dx in -half..=half {
                let px = (x as isize + dx).clamp(0, w - 1) as usize;
                let py = (y as isize + dy).clamp(0, h - 1) as usize;
                out.push(alpha.get(px, py));
            }
        }
    }

    /// Forward pass over one feature vector; returns per-layer activations
    /// (activations[0] is the input).
    fn forward(&self, features: &[f64]) -> Vec<Vec<f64>> {
        let layers = self.weights.len();
        let mut activations = Vec::with_capacity(layers + 1);
        activations.push(features.to_vec());
        for l in 0..layers {
            let (nin, nout) = (self.dims[l], self.dims[l + 1]);
            let mut z = self.biases[l].clone();
            let input = &activations[l];
            for o in 0..nout {
                let row = &self.weights[l][o * nin..(o + 1) * nin];
                let mut acc = z[o];
                for (wi, xi) in row.iter().zip(input) {
                    acc += wi * xi;
                }
                z[o] = acc;
            }
            if l + 1 < layers {
                for v in &mut z {
                    *v = v.tanh();
                }
            }
            activations.push(z);
        }
        activations
    }

    fn predict_scalar(&self, features: &[f64]) -> f64 {
        *self.forward(features).last().unwrap().first().unwrap()
    }

    /// Mean-squared v-prediction loss over a batch.
    pub fn loss(&self, batch: &TrainingBatch) -> f64 {
        self.loss_and_gradient_impl(batch, false).0
    }

    /// Loss plus the gradient with respect to the flattened parameters.
    pub fn loss_and_gradient(&self, batch: &TrainingBatch) -> (f64, Vec<f64>) {
        self.loss_and_gradient_impl(batch, true)
    }

    fn loss_and_gradient_impl(&self, batch: &TrainingBatch, want_grad: bool) -> (f64, Vec<f64>) {
        let layers = self.weights.len();
        let mut grad_w: Vec<Vec<f64>> = self
            .weights
            .iter()
            .map(|w| vec![0.0; if want_grad { w.len() } else { 0 }])
            .collect();
        let mut grad_b: Vec<Vec<f64>> = self
            .biases
            .iter()
            .map(|b| vec![0.0; if want_grad { b.len() } else { 0 }])
            .collect();

        let (w, h) = (batch.alpha.width(), batch.alpha.height());
        let samples = (batch.y_t.channels() * w * h) as f64;
        let mut loss = 0.0;
        let mut features = Vec::with_capacity(self.dims[0]);

        for c in 0..batch.y_t.channels() {
            let channel = batch.y_t.channel(c);
            for py in 0..h {
                for px in 0..w {
                    self.gather_features(channel, &batch.alpha, px, py, &mut features);
                    let activations = self.forward(&features);
                    let out = activations[layers][0];
                    let target = batch.target_v.get(c, py * w + px);
                    let err = out - target;
                    loss += err * err / samples;
                    if !want_grad {
                        continue;
                    }
                    // output layer is linear
                    let mut delta = vec![2.0 * err / samples];
                    for l in (0..layers).rev() {
                        let (nin, nout) = (self.dims[l], self.dims[l + 1]);
                        let input = &activations[l];
                        for o in 0..nout {
                            grad_b[l][o] += delta[o];
                            let row = &mut grad_w[l][o * nin..(o + 1) * nin];
                            for (g, xi) in row.iter_mut().zip(input) {
                                *g += delta[o] * xi;
                            }
                        }
                        if l > 0 {
                            let mut prev = vec![0.0; nin];
                            for o in 0..nout {
                                let row = &self.weights[l][o * nin..(o + 1) * nin];
                                for (pi, wi) in prev.iter_mut().zip(row) {
                                    *pi += delta[o] * wi;
                                }
                            }
                            // tanh'(z) = 1 - a^2 on the activated values
                            for (pi, ai) in prev.iter_mut().zip(&activations[l]) {
                                *pi *= 1.0 - ai * ai;
                            }
                            delta = prev;
                        }
                    }
                }
            }
        }

        let mut flat = Vec::new();
        if want_grad {
            flat.reserve(self.param_count());
            for l in 0..layers {
                flat.extend_from_slice(&grad_w[l]);
                flat.extend_from_slice(&grad_b[l]);
            }
        }
        (loss, flat)
    }

    /// SGD update with global-norm clipping.
    pub fn apply_gradients(
        &mut self,
        grad: &[f64],
        learning_rate: f64,
        clip_norm: f64,
    ) -> Result<()> {
        if grad.len() != self.param_count() {
            return Err(Error::Shape("gradient length mismatch".into()));
        }
        let norm: f64 = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        let scale = if norm > clip_norm && norm > 0.0 {
            clip_norm / norm
        } else {
            1.0
        };
        let mut params = self.params();
        for (p, g) in params.iter_mut().zip(grad) {
            *p -= learning_rate * scale * g;
        }
        self.set_params(&params)
    }

    // --- serialization -------------------------------------------------

    /// Flat little-endian container: magic, version, patch size, layer dims,
    /// then all weights and biases as f64.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(self.patch_size as u8);
        out.push(self.weights.len() as u8);
        for l in 0..self.weights.len() {
            out.extend_from_slice(&(self.dims[l] as u32).to_le_bytes());
            out.extend_from_slice(&(self.dims[l + 1] as u32).to_le_bytes());
        }
        for l in 0..self.weights.len() {
            for &v in self.weights[l].iter().chain(self.biases[l].iter()) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fail = |msg: &str| Error::Stream(format!("denoiser weights: {msg}"));
        if bytes.len() < 7 || &bytes[..4] != MAGIC {
            return Err(fail("bad magic"));
        }
        if bytes[4] != VERSION {
            return Err(fail("unsupported version"));
        }
        let patch_size = bytes[5] as usize;
        let layers = bytes[6] as usize;
        if patch_size == 0 || patch_size.is_multiple_of(2) || layers == 0 {
            return Err(fail("bad geometry"));
        }
        let mut at = 7;
        let mut dims = Vec::with_capacity(layers + 1);
        for l in 0..layers {
            if at + 8 > bytes.len() {
                return Err(fail("truncated dims"));
            }
            let nin = u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
            let nout = u32::from_le_bytes(bytes[at + 4..at + 8].try_into().unwrap()) as usize;
            at += 8;
            if l == 0 {
                if nin != 2 * patch_size * patch_size {
                    return Err(fail("input dim does not match patch size"));
                }
                dims.push(nin);
            } else if dims[l] != nin {
                return Err(fail("inconsistent layer dims"));
            }
            dims.push(nout);
        }
        if *dims.last().unwrap() != 1 {
            return Err(fail("output dim must be 1"));
        }
        let mut weights = Vec::with_capacity(layers);
        let mut biases = Vec::with_capacity(layers);
        for l in 0..layers {
            let wn = dims[l] * dims[l + 1];
            let bn = dims[l + 1];
            let need = (wn + bn) * 8;
            if at + need > bytes.len() {
                return Err(fail("truncated weights"));
            }
            let read = |n: usize, at: &mut usize| {
                let mut v = Vec::with_capacity(n);
                for _ in 0..n {
                    v.push(f64::from_le_bytes(bytes[*at..*at + 8].try_into().unwrap()));
                    *at += 8;
                }
                v
            };
            weights.push(read(wn, &mut at));
            biases.push(read(bn, &mut at));
        }
        if at != bytes.len() {
            return Err(fail("trailing bytes"));
        }
        let net = Self {
            patch_size,
            dims,
            weights,
            biases,
        };
        if net.params().iter().any(|p| !p.is_finite()) {
            return Err(fail("non-finite weights"));
        }
        Ok(net)
    }
}

impl Denoiser for TinyDenoiser {
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
        let (w, h) = (y.width(), y.height());
        let mut out = Volume::zeros(y.channels(), w, h);
        let mut features = Vec::with_capacity(self.dims[0]);
        for c in 0..y.channels() {
            let channel = y.channel(c);
            for py in 0..h {
                for px in 0..w {
                    self.gather_features(channel, &alpha, px, py, &mut features);
                    out.set(c, py * w + px, self.predict_scalar(&features));
                }
            }
        }
        Ok(out)
    }
}

/// One fixed training batch: a noisy state, its alpha map, and the exact v
/// target.
#[derive(Debug, Clone)]
pub struct TrainingBatch {
    pub y_t: Volume,
    pub alpha: Plane<f64>,
    pub target_v: Volume,
}

/// Build a batch from a clean latent: sample a spatial map, push the latent
/// through the uniform forward process at each pixel's start level, and
/// derive the v target.
pub fn make_training_batch(
    y0: &Volume,
    gen_cfg: &MapGenConfig,
    grid: &DdimGrid,
    schedule: &NoiseSchedule,
    rng: &mut ChaCha8Rng,
) -> Result<TrainingBatch> {
    let map_cfg = MapGenConfig {
        seed: rng.random(),
        ..gen_cfg.clone()
    };
    let map = generate_training_map(&map_cfg, y0.width(), y0.height())?;
    let (alpha, sigma) = level_start_maps(&map, grid, schedule)?;
    let mut y_t = Volume::zeros(y0.channels(), y0.width(), y0.height());
    let pixels = y0.pixels();
    for c in 0..y0.channels() {
        for p in 0..pixels {
            let u = SQRT_3 * (2.0 * rng.random::<f64>() - 1.0);
            let i = c * pixels + p;
            y_t.data_mut()[i] = alpha.at(p) * y0.data()[i] + sigma.at(p) * u;
        }
    }
    let target_v = v_from_x0(y0, &y_t, &alpha, &sigma)?;
    Ok(TrainingBatch {
        y_t,
        alpha,
        target_v,
    })
}

/// [`make_training_batch`] with an internally seeded generator.
pub fn make_training_batch_seeded(
    y0: &Volume,
    gen_cfg: &MapGenConfig,
    grid: &DdimGrid,
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<TrainingBatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    make_training_batch(y0, gen_cfg, grid, schedule, &mut rng)
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub seed: u64,
    /// Reuse the first sampled batch for every step (overfit mode). The
    /// default draws a fresh map and noise realization per step.
    pub freeze_draws: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            learning_rate: 0.05,
            clip_norm: 1.0,
            seed: 0,
            freeze_draws: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub steps_run: usize,
    pub final_loss: f64,
    /// (step, loss) samples, at most ~200 entries.
    pub loss_trace: Vec<(usize, f64)>,
}

/// Train in place on clean latents with the v-prediction squared loss under
/// uniform forward noise and sampled spatial maps.
pub fn train_tiny_denoiser(
    dataset: &[Volume],
    gen_cfg: &MapGenConfig,
    grid: &DdimGrid,
    schedule: &NoiseSchedule,
    net: &mut TinyDenoiser,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    if dataset.is_empty() {
        return Err(Error::Parameter("training dataset is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let trace_every = (cfg.steps / 200).max(1);
    let mut trace = Vec::new();
    let mut frozen: Option<TrainingBatch> = None;
    let mut last_loss = f64::NAN;

    for step_i in 0..cfg.steps {
        let batch = if cfg.freeze_draws {
            if frozen.is_none() {
                let y0 = &dataset[rng.random_range(0..dataset.len())];
                frozen = Some(make_training_batch(y0, gen_cfg, grid, schedule, &mut rng)?);
            }
            frozen.clone().unwrap()
        } else {
            let y0 = &dataset[rng.random_range(0..dataset.len())];
            make_training_batch(y0, gen_cfg, grid, schedule, &mut rng)?
        };
        let (loss, grad) = net.loss_and_gradient(&batch);
        if !loss.is_finite() {
            return Err(Error::Numeric(format!(
                "training diverged at step {step_i}: loss = {loss}, last finite loss = {last_loss}"
            )));
        }
        net.apply_gradients(&grad, cfg.learning_rate, cfg.clip_norm)?;
        last_loss = loss;
        if step_i % trace_every == 0 {
            trace.push((step_i, loss));
        }
    }
    Ok(TrainReport {
        steps_run: cfg.steps,
        final_loss: last_loss,
        loss_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::{build_ddim_grid, build_schedule, ScheduleKind};

    fn tiny_net() -> TinyDenoiser {
        TinyDenoiser::new(3, &[3], 7).unwrap()
    }

    fn small_batch() -> TrainingBatch {
        let schedule = build_schedule(ScheduleKind::Cosine, 1000).unwrap();
        let grid = build_ddim_grid(50, &schedule).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y0 = Volume::from_vec(
            1,
            4,
            4,
            (0..16)
                .map(|i| ((i * 37 % 16) as f64 / 8.0) - 1.0)
                .collect(),
        )
        .unwrap();
        let cfg = MapGenConfig {
            level_range: (2, 12),
            ..MapGenConfig::default()
        };
        make_training_batch(&y0, &cfg, &grid, &schedule, &mut rng).unwrap()
    }

    #[test]
    fn gradient_matches_central_differences() {
        let net = tiny_net();
        assert!(
            net.param_count() <= 64,
            "instance has {} params",
            net.param_count()
        );
        let batch = small_batch();
        let (_, grad) = net.loss_and_gradient(&batch);
        let params = net.params();
        let h = 1e-5;
        let mut worst = 0.0f64;
        for i in 0..params.len() {
            let mut plus = net.clone();
            let mut minus = net.clone();
            let mut pp = params.clone();
            pp[i] += h;
            plus.set_params(&pp).unwrap();
            pp[i] -= 2.0 * h;
            minus.set_params(&pp).unwrap();
            let fd = (plus.loss(&batch) - minus.loss(&batch)) / (2.0 * h);
            let denom = grad[i].abs().max(fd.abs()).max(1e-8);
            worst = worst.max((grad[i] - fd).abs() / denom);
        }
        assert!(worst < 1e-4, "max relative gradient error {worst}");
    }

    #[test]
    fn forward_is_deterministic() {
        let net = tiny_net();
        let batch = small_batch();
        assert_eq!(net.loss(&batch).to_bits(), net.loss(&batch).to_bits());
    }

    #[test]
    fn weights_round_trip_through_bytes() {
        let net = TinyDenoiser::new(5, &[8, 4], 11).unwrap();
        let bytes = net.to_bytes();
        let back = TinyDenoiser::from_bytes(&bytes).unwrap();
        assert_eq!(back.params(), net.params());
        assert_eq!(back.patch_size(), net.patch_size());
        assert_eq!(back.layer_dims(), net.layer_dims());
    }

    #[test]
    fn malformed_weight_files_are_rejected() {
        let net = tiny_net();
        let bytes = net.to_bytes();
        assert!(TinyDenoiser::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(TinyDenoiser::from_bytes(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(TinyDenoiser::from_bytes(&extra).is_err());
    }

    #[test]
    fn fixed_batch_training_descends() {
        let mut net = TinyDenoiser::new(3, &[8], 5).unwrap();
        let batch = small_batch();
        let start = net.loss(&batch);
        for _ in 0..300 {
            let (_, grad) = net.loss_and_gradient(&batch);
            net.apply_gradients(&grad, 0.05, 1.0).unwrap();
        }
        let end = net.loss(&batch);
        assert!(end < start * 0.5, "loss {start} -> {end}");
    }

    #[test]
    fn trained_net_beats_zero_predictor_on_held_out_data() {
        // The zero predictor's loss is E[v^2] = alpha^2 + sigma^2 = 1 for a
        // unit-variance source; spatially correlated patches must let the
        // net do strictly better.
        use crate::corpus::{synth_corpus, CorpusKind};
        let schedule = build_schedule(ScheduleKind::Cosine, 1000).unwrap();
        let grid = build_ddim_grid(50, &schedule).unwrap();
        let dataset = synth_corpus(CorpusKind::GaussMarkov, 8, 1, 8, 8, 0x6A);
        let gen_cfg = MapGenConfig {
            level_range: (3, 30),
            ..MapGenConfig::default()
        };
        let mut net = TinyDenoiser::new(5, &[16], 2).unwrap();
        let cfg = TrainConfig {
            steps: 1200,
            learning_rate: 0.05,
            clip_norm: 1.0,
            seed: 3,
            freeze_draws: false,
        };
        train_tiny_denoiser(&dataset, &gen_cfg, &grid, &schedule, &mut net, &cfg).unwrap();

        // held-out images and fresh draws
        let held_out = synth_corpus(CorpusKind::GaussMarkov, 8, 1, 8, 8, 0x1_0000);
        let mut rng = ChaCha8Rng::seed_from_u64(999);
        let mut model_loss = 0.0;
        let mut baseline = 0.0;
        let mut batches = 0usize;
        for y0 in &held_out {
            let batch = make_training_batch(y0, &gen_cfg, &grid, &schedule, &mut rng).unwrap();
            model_loss += net.loss(&batch);
            baseline += batch.target_v.data().iter().map(|v| v * v).sum::<f64>()
                / batch.target_v.len() as f64;
            batches += 1;
        }
        model_loss /= batches as f64;
        baseline /= batches as f64;
        assert!(
            model_loss < baseline,
            "held-out loss {model_loss} not below zero-predictor {baseline}"
        );
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let schedule = build_schedule(ScheduleKind::Cosine, 1000).unwrap();
        let grid = build_ddim_grid(50, &schedule).unwrap();
        let mut net = tiny_net();
        let err = train_tiny_denoiser(
            &[],
            &MapGenConfig::default(),
            &grid,
            &schedule,
            &mut net,
            &TrainConfig::default(),
        );
        assert!(err.is_err());
    }
}
