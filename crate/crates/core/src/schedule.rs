//! Variance-preserving noise schedules, DDIM subsampling, and the
//! timestep-resampling planner.
//!
//! The schedule stores amplitude pairs (alpha_k, sigma_k) with
//! alpha_k^2 + sigma_k^2 = 1 on a dense grid k = 0..=T. Inference runs on a
//! strictly decreasing DDIM subset of that grid. A spatial timestep map
//! assigns each pixel a level into the DDIM subset; the planner rescales
//! every pixel's trajectory so the whole image reaches the clean state in
//! the same number of iterations.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::plane::Plane;
use crate::roi::TimestepMap;

/// Offset of the cosine schedule, as in the squared-cosine schedule family.
const COSINE_S: f64 = 0.008;
/// Scaled-linear beta range (per-step variances on the dense grid).
const BETA_START: f64 = 0.000_85;
const BETA_END: f64 = 0.012;
/// Amplitude floor; keeps sigma strictly below 1 in double precision.
const ALPHA_FLOOR: f64 = 1e-6;

/// Schedule family. `Cosine` is the default.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    Cosine,
    ScaledLinear,
}

impl ScheduleKind {
    pub fn code(self) -> u8 {
        match self {
            ScheduleKind::Cosine => 0,
            ScheduleKind::ScaledLinear => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(ScheduleKind::Cosine),
            1 => Ok(ScheduleKind::ScaledLinear),
            _ => Err(Error::Stream(format!("unknown schedule kind code {code}"))),
        }
    }
}

/// Discrete variance-preserving schedule over the dense grid 0..=T.
#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    grid_size: u16,
    alphas: Vec<f64>,
    sigmas: Vec<f64>,
}

impl NoiseSchedule {
    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    /// Dense grid size T.
    pub fn grid_size(&self) -> u16 {
        self.grid_size
    }

    #[inline]
    pub fn alpha(&self, index: u16) -> f64 {
        self.alphas[index as usize]
    }

    #[inline]
    pub fn sigma(&self, index: u16) -> f64 {
        self.sigmas[index as usize]
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    fn validate(&self) -> Result<()> {
        let t = self.grid_size as usize;
        if self.alphas.len() != t + 1 || self.sigmas.len() != t + 1 {
            return Err(Error::Shape("schedule arrays must have length T+1".into()));
        }
        if self.alphas[0] != 1.0 || self.sigmas[0] != 0.0 {
            return Err(Error::Numeric(
                "schedule must start at alpha=1, sigma=0".into(),
            ));
        }
        for k in 0..=t {
            let a = self.alphas[k];
            let s = self.sigmas[k];
            if !(a > 0.0 && a <= 1.0) || !(0.0..1.0).contains(&s) {
                return Err(Error::Numeric(format!("schedule out of range at k={k}")));
            }
            if (a * a + s * s - 1.0).abs() > 1e-12 {
                return Err(Error::Numeric(format!(
                    "schedule not variance preserving at k={k}"
                )));
            }
            if k > 0 && (a >= self.alphas[k - 1] || s <= self.sigmas[k - 1]) {
                return Err(Error::Numeric(format!(
                    "schedule not strictly monotone at k={k}"
                )));
            }
        }
        Ok(())
    }
}

/// Build a variance-preserving schedule on the dense grid.
pub fn build_schedule(kind: ScheduleKind, grid_size: u16) -> Result<NoiseSchedule> {
    if grid_size < 2 {
        return Err(Error::Parameter(format!(
            "grid size T must be >= 2, got {grid_size}"
        )));
    }
    let t = grid_size as usize;
    let mut alphas = Vec::with_capacity(t + 1);
    let mut sigmas = Vec::with_capacity(t + 1);
    alphas.push(1.0);
    sigmas.push(0.0);

    match kind {
        ScheduleKind::Cosine => {
            // alpha_k = cos(pi/2 * (k/T + s)/(1 + s)) / cos(pi/2 * s/(1 + s))
            let norm = (std::f64::consts::FRAC_PI_2 * COSINE_S / (1.0 + COSINE_S)).cos();
            for k in 1..=t {
                let frac = k as f64 / t as f64;
                let raw =
                    (std::f64::consts::FRAC_PI_2 * (frac + COSINE_S) / (1.0 + COSINE_S)).cos();
                let a = (raw / norm).max(ALPHA_FLOOR);
                alphas.push(a);
                sigmas.push((1.0 - a * a).sqrt());
            }
        }
        ScheduleKind::ScaledLinear => {
            // Per-step variances interpolated linearly in sqrt space, then
            // accumulated into the amplitude product.
            let sb_start = BETA_START.sqrt();
            let sb_end = BETA_END.sqrt();
            let mut alpha_bar = 1.0f64;
            for k in 1..=t {
                let frac = (k - 1) as f64 / (t - 1) as f64;
                let beta = (sb_start + frac * (sb_end - sb_start)).powi(2);
                alpha_bar *= 1.0 - beta;
                let a = alpha_bar.sqrt().max(ALPHA_FLOOR);
                alphas.push(a);
                sigmas.push((1.0 - a * a).sqrt());
            }
        }
    }

    let schedule = NoiseSchedule {
        kind,
        grid_size,
        alphas,
        sigmas,
    };
    schedule.validate()?;
    Ok(schedule)
}

/// Strictly decreasing DDIM subset of the dense grid, ending at index 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DdimGrid {
    indices: Vec<u16>,
}

impl DdimGrid {
    /// Number of inference levels N.
    pub fn step_count(&self) -> u16 {
        self.indices.len() as u16
    }

    /// Indices in decreasing order; `indices()[N-1] == 1`.
    pub fn indices(&self) -> &[u16] {
        &self.indices
    }

    /// Dense-grid start index for a map level (the level-th smallest index).
    pub fn start_index(&self, level: u16) -> Result<u16> {
        let n = self.indices.len();
        if level == 0 || level as usize > n {
            return Err(Error::Parameter(format!("level {level} outside [1, {n}]")));
        }
        Ok(self.indices[n - level as usize])
    }
}

/// Build the uniform DDIM grid of `step_count` indices over `schedule`.
pub fn build_ddim_grid(step_count: u16, schedule: &NoiseSchedule) -> Result<DdimGrid> {
    let t = schedule.grid_size();
    if step_count == 0 || step_count > t {
        return Err(Error::Parameter(format!(
            "DDIM step count {step_count} outside [1, {t}]"
        )));
    }
    let n = step_count as usize;
    let spacing = t as f64 / n as f64;
    let mut indices = Vec::with_capacity(n);
    for j in 0..n {
        let ideal = (n - 1 - j) as f64 * spacing;
        indices.push(1 + ideal.round() as u16);
    }
    debug_assert_eq!(*indices.last().unwrap(), 1);
    debug_assert!(indices.windows(2).all(|w| w[0] > w[1]));
    debug_assert!(*indices.first().unwrap() <= t);
    Ok(DdimGrid { indices })
}

/// Rescale a denoising trajectory: `tau` dense-grid indices from
/// `start_index` down to 1, uniformly spaced with round-half-away-from-zero
/// rounding (so streams are reproducible across platforms).
///
/// When `start_index < tau` the rounded indices contain repeats; a repeated
/// index is an identity step for the affected pixels.
pub fn resample_trajectory(start_index: u16, tau: u16) -> Result<Vec<u16>> {
    if start_index == 0 {
        return Err(Error::Parameter("start index must be >= 1".into()));
    }
    if tau == 0 {
        return Err(Error::Parameter("trajectory length must be >= 1".into()));
    }
    if tau == 1 {
        return Ok(vec![start_index]);
    }
    let span = (start_index - 1) as f64;
    let denom = (tau - 1) as f64;
    let mut out = Vec::with_capacity(tau as usize);
    for k in 0..tau {
        // k * span / denom is exact at k = tau-1, so the trajectory ends at 1.
        let d = start_index as f64 - (k as f64 * span) / denom;
        out.push(d.round() as u16);
    }
    debug_assert_eq!(out[0], start_index);
    debug_assert_eq!(*out.last().unwrap(), 1);
    Ok(out)
}

/// Per-iteration denoising plan for one timestep map.
#[derive(Debug, Clone)]
pub struct SamplingPlan {
    tau: u16,
    levels: Plane<u16>,
    per_level_trajectories: BTreeMap<u16, Vec<u16>>,
    iteration_index_maps: Vec<Plane<u16>>,
    iteration_alpha_maps: Vec<Plane<f64>>,
    iteration_sigma_maps: Vec<Plane<f64>>,
}

impl SamplingPlan {
    /// Iteration count (= max level in the map).
    pub fn tau(&self) -> u16 {
        self.tau
    }

    pub fn levels(&self) -> &Plane<u16> {
        &self.levels
    }

    /// Resampled trajectory (length tau) for each level present in the map.
    pub fn per_level_trajectories(&self) -> &BTreeMap<u16, Vec<u16>> {
        &self.per_level_trajectories
    }

    pub fn index_map(&self, iteration: usize) -> &Plane<u16> {
        &self.iteration_index_maps[iteration]
    }

    pub fn alpha_map(&self, iteration: usize) -> &Plane<f64> {
        &self.iteration_alpha_maps[iteration]
    }

    pub fn sigma_map(&self, iteration: usize) -> &Plane<f64> {
        &self.iteration_sigma_maps[iteration]
    }

    /// Alpha/sigma maps at iteration 0: the noise level each pixel was
    /// quantized to. These drive the quantizer and the entropy predictor.
    pub fn start_alpha_map(&self) -> &Plane<f64> {
        &self.iteration_alpha_maps[0]
    }

    pub fn start_sigma_map(&self) -> &Plane<f64> {
        &self.iteration_sigma_maps[0]
    }
}

/// Assemble the per-iteration plan for a timestep map.
pub fn build_plan(
    tmap: &TimestepMap,
    grid: &DdimGrid,
    schedule: &NoiseSchedule,
) -> Result<SamplingPlan> {
    let n = grid.step_count();
    let mut tau = 0u16;
    for &v in tmap.values() {
        if v == 0 || v > n {
            return Err(Error::Parameter(format!(
                "timestep map value {v} outside [1, {n}]"
            )));
        }
        tau = tau.max(v);
    }
    if tau == 0 {
        return Err(Error::Parameter("timestep map is empty".into()));
    }

    let mut per_level_trajectories = BTreeMap::new();
    for &v in tmap.values() {
        if let std::collections::btree_map::Entry::Vacant(e) = per_level_trajectories.entry(v) {
            let start = grid.start_index(v)?;
            e.insert(resample_trajectory(start, tau)?);
        }
    }

    let (w, h) = (tmap.width(), tmap.height());
    let levels = Plane::from_vec(w, h, tmap.values().to_vec())?;
    let mut index_maps = Vec::with_capacity(tau as usize);
    let mut alpha_maps = Vec::with_capacity(tau as usize);
    let mut sigma_maps = Vec::with_capacity(tau as usize);
    for k in 0..tau as usize {
        let mut idx = Plane::filled(w, h, 0u16);
        let mut alpha = Plane::filled(w, h, 0f64);
        let mut sigma = Plane::filled(w, h, 0f64);
        for p in 0..levels.len() {
            let d = per_level_trajectories[&levels.at(p)][k];
            idx.data_mut()[p] = d;
            alpha.data_mut()[p] = schedule.alpha(d);
            sigma.data_mut()[p] = schedule.sigma(d);
        }
        index_maps.push(idx);
        alpha_maps.push(alpha);
        sigma_maps.push(sigma);
    }

    debug_assert!(index_maps[tau as usize - 1].data().iter().all(|&d| d == 1));

    Ok(SamplingPlan {
        tau,
        levels,
        per_level_trajectories,
        iteration_index_maps: index_maps,
        iteration_alpha_maps: alpha_maps,
        iteration_sigma_maps: sigma_maps,
    })
}

/// Alpha/sigma planes at each pixel's own start index, without building the
/// full plan. The encoder only needs these.
pub fn level_start_maps(
    tmap: &TimestepMap,
    grid: &DdimGrid,
    schedule: &NoiseSchedule,
) -> Result<(Plane<f64>, Plane<f64>)> {
    let n = grid.step_count();
    let (w, h) = (tmap.width(), tmap.height());
    let mut alpha = Plane::filled(w, h, 0f64);
    let mut sigma = Plane::filled(w, h, 0f64);
    for (p, &v) in tmap.values().iter().enumerate() {
        if v == 0 || v > n {
            return Err(Error::Parameter(format!(
                "timestep map value {v} outside [1, {n}]"
            )));
        }
        let d = grid.start_index(v)?;
        alpha.data_mut()[p] = schedule.alpha(d);
        sigma.data_mut()[p] = schedule.sigma(d);
    }
    Ok((alpha, sigma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::roi::TimestepMap;

    #[test]
    fn cosine_schedule_boundaries_and_vp_identity() {
        let s = build_schedule(ScheduleKind::Cosine, 1000).unwrap();
        assert_eq!(s.alpha(0), 1.0);
        assert_eq!(s.sigma(0), 0.0);
        for k in 0..=1000 {
            let a = s.alpha(k);
            let sg = s.sigma(k);
            assert!((a * a + sg * sg - 1.0).abs() <= 1e-12, "k={k}");
        }
    }

    #[test]
    fn cosine_midpoint_matches_closed_form() {
        // cos(pi/2 * (0.5 + s)/(1 + s)) / cos(pi/2 * s/(1 + s)), s = 0.008,
        // evaluated independently and pinned.
        let s = build_schedule(ScheduleKind::Cosine, 1000).unwrap();
        assert!((s.alpha(500) - 0.7027400589411691).abs() < 1e-12);
    }

    #[test]
    fn schedules_are_strictly_monotone() {
        for kind in [ScheduleKind::Cosine, ScheduleKind::ScaledLinear] {
            let s = build_schedule(kind, 1000).unwrap();
            for k in 1..=1000u16 {
                assert!(s.alpha(k) < s.alpha(k - 1), "{kind:?} alpha k={k}");
                assert!(s.sigma(k) > s.sigma(k - 1), "{kind:?} sigma k={k}");
            }
        }
    }

    #[test]
    fn tiny_grid_size_is_rejected() {
        assert!(build_schedule(ScheduleKind::Cosine, 1).is_err());
        assert!(build_schedule(ScheduleKind::Cosine, 2).is_ok());
    }

    #[test]
    fn ddim_grid_matches_reference_subset() {
        let s = build_schedule(ScheduleKind::Cosine, 1000).unwrap();
        let g = build_ddim_grid(50, &s).unwrap();
        assert_eq!(g.indices()[0], 981);
        assert_eq!(g.indices()[1], 961);
        assert_eq!(g.indices()[48], 21);
        assert_eq!(g.indices()[49], 1);
        let expect: Vec<u16> = (0..50).rev().map(|i| 1 + 20 * i).collect();
        assert_eq!(g.indices(), &expect[..]);
    }

    #[test]
    fn ddim_grid_degenerate_cases() {
        let s = build_schedule(ScheduleKind::Cosine, 100).unwrap();
        let full = build_ddim_grid(100, &s).unwrap();
        let expect: Vec<u16> = (1..=100).rev().collect();
        assert_eq!(full.indices(), &expect[..]);
        let single = build_ddim_grid(1, &s).unwrap();
        assert_eq!(single.indices(), &[1]);
        assert!(build_ddim_grid(101, &s).is_err());
        assert!(build_ddim_grid(0, &s).is_err());
    }

    #[test]
    fn ddim_grid_spacing_is_uniform_within_one() {
        let s = build_schedule(ScheduleKind::Cosine, 1000).unwrap();
        for n in [3u16, 7, 13, 50, 317] {
            let g = build_ddim_grid(n, &s).unwrap();
            let ideal = 1000.0 / n as f64;
            for w in g.indices().windows(2) {
                let gap = (w[0] - w[1]) as f64;
                assert!((gap - ideal).abs() <= 1.0, "n={n} gap={gap}");
            }
        }
    }

    #[test]
    fn resample_matches_worked_examples() {
        assert_eq!(
            resample_trajectory(61, 7).unwrap(),
            vec![61, 51, 41, 31, 21, 11, 1]
        );
        assert_eq!(resample_trajectory(61, 4).unwrap(), vec![61, 41, 21, 1]);
        assert_eq!(
            resample_trajectory(121, 7).unwrap(),
            vec![121, 101, 81, 61, 41, 21, 1]
        );
        assert_eq!(resample_trajectory(33, 1).unwrap(), vec![33]);
    }

    #[test]
    fn resample_is_monotone_and_anchored() {
        for start in [1u16, 2, 17, 61, 121, 981] {
            for tau in [1u16, 2, 3, 7, 19, 60] {
                let tr = resample_trajectory(start, tau).unwrap();
                assert_eq!(tr.len(), tau as usize);
                assert_eq!(tr[0], start);
                if tau > 1 {
                    assert_eq!(*tr.last().unwrap(), 1);
                }
                assert!(tr.windows(2).all(|w| w[0] >= w[1]));
                if start >= tau && tau > 1 {
                    assert!(
                        tr.windows(2).all(|w| w[0] > w[1]),
                        "start={start} tau={tau}"
                    );
                }
            }
        }
    }

    fn two_level_map() -> TimestepMap {
        let mut values = vec![4u16; 16];
        for v in values.iter_mut().take(8) {
            *v = 7;
        }
        TimestepMap::new(4, 4, 50, values).unwrap()
    }

    #[test]
    fn plan_follows_worked_two_level_example() {
        let s = build_schedule(ScheduleKind::Cosine, 1000).unwrap();
        let g = build_ddim_grid(50, &s).unwrap();
        let plan = build_plan(&two_level_map(), &g, &s).unwrap();
        assert_eq!(plan.tau(), 7);
        assert_eq!(
            plan.per_level_trajectories()[&4],
            vec![61, 51, 41, 31, 21, 11, 1]
        );
        assert_eq!(
            plan.per_level_trajectories()[&7],
            vec![121, 101, 81, 61, 41, 21, 1]
        );
        // pixel 0 is level 7, pixel 15 is level 4
        assert_eq!(plan.index_map(0).at(0), 121);
        assert_eq!(plan.index_map(0).at(15), 61);
        // terminal iteration: everything at dense index 1
        assert!(plan.index_map(6).data().iter().all(|&d| d == 1));
        assert!(plan.alpha_map(6).data().iter().all(|&a| a == s.alpha(1)));
    }

    #[test]
    fn constant_map_plan_reduces_to_plain_ddim() {
        let s = build_schedule(ScheduleKind::Cosine, 1000).unwrap();
        let g = build_ddim_grid(50, &s).unwrap();
        let map = TimestepMap::new(3, 3, 50, vec![5; 9]).unwrap();
        let plan = build_plan(&map, &g, &s).unwrap();
        assert_eq!(plan.tau(), 5);
        // the plain DDIM subset for level 5: the five smallest grid indices
        let expect: Vec<u16> = vec![81, 61, 41, 21, 1];
        assert_eq!(plan.per_level_trajectories()[&5], expect);
        for k in 0..5 {
            let m = plan.index_map(k);
            assert!(m.data().iter().all(|&d| d == expect[k]));
        }
    }

    #[test]
    fn plan_alpha_sequences_are_monotone_denoising() {
        let s = build_schedule(ScheduleKind::Cosine, 1000).unwrap();
        let g = build_ddim_grid(50, &s).unwrap();
        let plan = build_plan(&two_level_map(), &g, &s).unwrap();
        for p in 0..16 {
            for k in 1..plan.tau() as usize {
                assert!(plan.alpha_map(k).at(p) > plan.alpha_map(k - 1).at(p));
            }
        }
    }

    #[test]
    fn plan_rejects_out_of_range_levels() {
        let s = build_schedule(ScheduleKind::Cosine, 1000).unwrap();
        let g = build_ddim_grid(50, &s).unwrap();
        let map = TimestepMap::new(2, 1, 60, vec![10, 55]).unwrap();
        assert!(build_plan(&map, &g, &s).is_err());
    }

    #[test]
    fn plan_construction_is_deterministic() {
        let s = build_schedule(ScheduleKind::Cosine, 1000).unwrap();
        let g = build_ddim_grid(50, &s).unwrap();
        let a = build_plan(&two_level_map(), &g, &s).unwrap();
        let b = build_plan(&two_level_map(), &g, &s).unwrap();
        for k in 0..a.tau() as usize {
            assert_eq!(a.index_map(k), b.index_map(k));
            assert_eq!(a.alpha_map(k).data(), b.alpha_map(k).data());
        }
    }

    #[test]
    fn start_maps_agree_with_plan() {
        let s = build_schedule(ScheduleKind::Cosine, 1000).unwrap();
        let g = build_ddim_grid(50, &s).unwrap();
        let map = two_level_map();
        let plan = build_plan(&map, &g, &s).unwrap();
        let (a, sg) = level_start_maps(&map, &g, &s).unwrap();
        assert_eq!(a.data(), plan.start_alpha_map().data());
        assert_eq!(sg.data(), plan.start_sigma_map().data());
    }
}
