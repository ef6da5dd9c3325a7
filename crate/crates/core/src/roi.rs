//! Spatial timestep maps: the per-pixel ROI input that drives quantization
//! strength, entropy-coding context, and the sampling plan.
//!
//! Maps are stored as binary PGM so they can be inspected with any image
//! viewer; the PGM maxval records the DDIM step count the map was built for.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::schedule::DdimGrid;

/// Per-pixel integer timestep map. Values are levels into the DDIM grid,
/// in `[1, max_level]`, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimestepMap {
    width: usize,
    height: usize,
    max_level: u16,
    values: Vec<u16>,
}

impl TimestepMap {
    pub fn new(width: usize, height: usize, max_level: u16, values: Vec<u16>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Parameter(
                "timestep map dimensions must be positive".into(),
            ));
        }
        if values.len() != width * height {
            return Err(Error::Shape(format!(
                "timestep map has {} values for {}x{}",
                values.len(),
                width,
                height
            )));
        }
        if max_level == 0 {
            return Err(Error::Parameter("max level must be >= 1".into()));
        }
        for &v in &values {
            if v == 0 || v > max_level {
                return Err(Error::Parameter(format!(
                    "timestep map value {v} outside [1, {max_level}]"
                )));
            }
        }
        Ok(Self {
            width,
            height,
            max_level,
            values,
        })
    }

    /// Constructs without range validation. Only useful for building
    /// deliberately broken maps to feed [`validate_map`].
    pub fn from_raw_values(width: usize, height: usize, max_level: u16, values: Vec<u16>) -> Self {
        Self {
            width,
            height,
            max_level,
            values,
        }
    }

    pub fn constant(width: usize, height: usize, max_level: u16, level: u16) -> Result<Self> {
        Self::new(width, height, max_level, vec![level; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Declared DDIM step count this map indexes into (the PGM maxval).
    pub fn max_level(&self) -> u16 {
        self.max_level
    }

    pub fn values(&self) -> &[u16] {
        &self.values
    }

    /// Largest level present; the iteration count tau of the sampling plan.
    pub fn max_value(&self) -> u16 {
        self.values.iter().copied().max().unwrap_or(0)
    }

    pub fn is_constant(&self) -> bool {
        self.values.windows(2).all(|w| w[0] == w[1])
    }
}

/// Region shapes for the synthetic training-map sampler.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionKind {
    Rectangle,
    Circle,
    Grid,
    Voronoi,
}

/// Configuration of the training-map sampler.
#[derive(Debug, Clone)]
pub struct MapGenConfig {
    /// Probability of emitting a spatially constant map.
    pub constant_probability: f64,
    /// Region shapes to draw from; one shape is chosen per map.
    pub region_kinds: Vec<RegionKind>,
    /// Inclusive level interval regions draw from.
    pub level_range: (u16, u16),
    /// Inclusive bounds on the number of regions (or voronoi sites).
    pub min_regions: u16,
    pub max_regions: u16,
    /// Declared DDIM step count of generated maps.
    pub max_level: u16,
    pub seed: u64,
}

impl Default for MapGenConfig {
    fn default() -> Self {
        Self {
            constant_probability: 0.15,
            region_kinds: vec![
                RegionKind::Rectangle,
                RegionKind::Circle,
                RegionKind::Grid,
                RegionKind::Voronoi,
            ],
            level_range: (1, 50),
            min_regions: 1,
            max_regions: 4,
            max_level: 50,
            seed: 0,
        }
    }
}

fn draw_level(rng: &mut ChaCha8Rng, range: (u16, u16)) -> u16 {
    rng.random_range(range.0..=range.1)
}

/// Sample a random training map: with probability `constant_probability` a
/// constant map, otherwise 1..=max_regions regions of one randomly chosen
/// shape over a constant canvas. Deterministic in (cfg, width, height).
pub fn generate_training_map(
    cfg: &MapGenConfig,
    width: usize,
    height: usize,
) -> Result<TimestepMap> {
    if width == 0 || height == 0 {
        return Err(Error::Parameter("map dimensions must be positive".into()));
    }
    if cfg.region_kinds.is_empty() {
        return Err(Error::Parameter("region_kinds must not be empty".into()));
    }
    if cfg.level_range.0 == 0 || cfg.level_range.0 > cfg.level_range.1 {
        return Err(Error::Parameter(
            "level range must satisfy 1 <= lo <= hi".into(),
        ));
    }
    if cfg.level_range.1 > cfg.max_level {
        return Err(Error::Parameter(format!(
            "level range upper bound {} exceeds max level {}",
            cfg.level_range.1, cfg.max_level
        )));
    }
    if cfg.min_regions == 0 || cfg.min_regions > cfg.max_regions {
        return Err(Error::Parameter(
            "regions bounds must satisfy 1 <= min <= max".into(),
        ));
    }
    if !(0.0..=1.0).contains(&cfg.constant_probability) {
        return Err(Error::Parameter(
            "constant_probability outside [0, 1]".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    if rng.random::<f64>() < cfg.constant_probability {
        let level = draw_level(&mut rng, cfg.level_range);
        return TimestepMap::new(width, height, cfg.max_level, vec![level; width * height]);
    }

    let canvas = draw_level(&mut rng, cfg.level_range);
    let kind = cfg.region_kinds[rng.random_range(0..cfg.region_kinds.len())];
    let regions = rng.random_range(cfg.min_regions..=cfg.max_regions) as usize;
    let mut values = vec![canvas; width * height];

    match kind {
        RegionKind::Rectangle => {
            for _ in 0..regions {
                let level = draw_level(&mut rng, cfg.level_range);
                let rw = rng.random_range(1..=(width / 2).max(1));
                let rh = rng.random_range(1..=(height / 2).max(1));
                let x0 = rng.random_range(0..width);
                let y0 = rng.random_range(0..height);
                for y in y0..(y0 + rh).min(height) {
                    for x in x0..(x0 + rw).min(width) {
                        values[y * width + x] = level;
                    }
                }
            }
        }
        RegionKind::Circle => {
            for _ in 0..regions {
                let level = draw_level(&mut rng, cfg.level_range);
                let radius = rng.random_range(1..=(width.min(height) / 2).max(1)) as i64;
                let cx = rng.random_range(0..width) as i64;
                let cy = rng.random_range(0..height) as i64;
                for y in 0..height as i64 {
                    for x in 0..width as i64 {
                        let (dx, dy) = (x - cx, y - cy);
                        if dx * dx + dy * dy <= radius * radius {
                            values[(y * width as i64 + x) as usize] = level;
                        }
                    }
                }
            }
        }
        RegionKind::Grid => {
            // Uniform tiling with an independent level per tile.
            let tx = rng.random_range(1..=(width / 2).max(1));
            let ty = rng.random_range(1..=(height / 2).max(1));
            let tiles_x = width.div_ceil(tx);
            let tiles_y = height.div_ceil(ty);
            let mut tile_levels = Vec::with_capacity(tiles_x * tiles_y);
            for _ in 0..tiles_x * tiles_y {
                tile_levels.push(draw_level(&mut rng, cfg.level_range));
            }
            for y in 0..height {
                for x in 0..width {
                    values[y * width + x] = tile_levels[(y / ty) * tiles_x + x / tx];
                }
            }
        }
        RegionKind::Voronoi => {
            // Distinct seeded sites; nearest-site labeling, Euclidean metric,
            // ties broken toward the lowest site index. A single site would
            // reproduce the constant branch, so at least two are placed
            // whenever max_regions allows.
            let sites = regions
                .max((cfg.max_regions as usize).min(2))
                .min(width * height);
            let mut positions: Vec<(i64, i64)> = Vec::with_capacity(sites);
            let mut levels = Vec::with_capacity(sites);
            while positions.len() < sites {
                let p = (
                    rng.random_range(0..width) as i64,
                    rng.random_range(0..height) as i64,
                );
                if !positions.contains(&p) {
                    positions.push(p);
                    levels.push(draw_level(&mut rng, cfg.level_range));
                }
            }
            for y in 0..height as i64 {
                for x in 0..width as i64 {
                    let mut best = 0usize;
                    let mut best_d = i64::MAX;
                    for (i, &(sx, sy)) in positions.iter().enumerate() {
                        let d = (x - sx) * (x - sx) + (y - sy) * (y - sy);
                        if d < best_d {
                            best_d = d;
                            best = i;
                        }
                    }
                    values[(y * width as i64 + x) as usize] = levels[best];
                }
            }
        }
    }

    TimestepMap::new(width, height, cfg.max_level, values)
}

/// One problem found by [`validate_map`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MapViolation {
    BelowMinimumLevel {
        pixel: usize,
        value: u16,
    },
    ExceedsStepCount {
        pixel: usize,
        value: u16,
        step_count: u16,
    },
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    MaxLevelMismatch {
        declared: u16,
        step_count: u16,
    },
}

impl std::fmt::Display for MapViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MapViolation::BelowMinimumLevel { pixel, value } => {
                write!(f, "pixel {pixel}: value {value} below minimum level 1")
            }
            MapViolation::ExceedsStepCount {
                pixel,
                value,
                step_count,
            } => {
                write!(
                    f,
                    "pixel {pixel}: value {value} exceeds DDIM step count {step_count}"
                )
            }
            MapViolation::DimensionMismatch { expected, actual } => {
                write!(
                    f,
                    "dimension mismatch: expected {}x{}, got {}x{}",
                    expected.0, expected.1, actual.0, actual.1
                )
            }
            MapViolation::MaxLevelMismatch {
                declared,
                step_count,
            } => {
                write!(
                    f,
                    "declared max level {declared} differs from DDIM step count {step_count}"
                )
            }
        }
    }
}

/// Check a map against a DDIM grid and expected latent dimensions.
/// Returns an empty list when the map is usable.
pub fn validate_map(
    map: &TimestepMap,
    grid: &DdimGrid,
    expected_width: usize,
    expected_height: usize,
) -> Vec<MapViolation> {
    let mut out = Vec::new();
    if (map.width(), map.height()) != (expected_width, expected_height) {
        out.push(MapViolation::DimensionMismatch {
            expected: (expected_width, expected_height),
            actual: (map.width(), map.height()),
        });
    }
    if map.max_level() != grid.step_count() {
        out.push(MapViolation::MaxLevelMismatch {
            declared: map.max_level(),
            step_count: grid.step_count(),
        });
    }
    for (pixel, &value) in map.values().iter().enumerate() {
        if value == 0 {
            out.push(MapViolation::BelowMinimumLevel { pixel, value });
        } else if value > grid.step_count() {
            out.push(MapViolation::ExceedsStepCount {
                pixel,
                value,
                step_count: grid.step_count(),
            });
        }
    }
    out
}

// --- PGM (P5) serialization -------------------------------------------------

/// Serialize a map as binary PGM with maxval = max_level. Samples are one
/// byte for maxval < 256, two bytes big-endian otherwise (Netpbm rules).
pub fn store_map(map: &TimestepMap) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(
        format!(
            "P5\n# N={}\n{} {}\n{}\n",
            map.max_level(),
            map.width(),
            map.height(),
            map.max_level()
        )
        .as_bytes(),
    );
    if map.max_level() < 256 {
        out.extend(map.values().iter().map(|&v| v as u8));
    } else {
        for &v in map.values() {
            out.extend_from_slice(&v.to_be_bytes());
        }
    }
    out
}

struct PnmHeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> PnmHeaderReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    /// Next whitespace-delimited token, skipping `#` comment lines.
    fn token(&mut self) -> Result<&'a [u8]> {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos] == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            break;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Stream("truncated PNM header".into()));
        }
        Ok(&self.bytes[start..self.pos])
    }

    fn number(&mut self) -> Result<usize> {
        let tok = self.token()?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Stream("malformed number in PNM header".into()))
    }

    /// Consume the single whitespace byte that terminates the header.
    fn finish_header(&mut self) -> Result<usize> {
        if self.pos >= self.bytes.len() || !self.bytes[self.pos].is_ascii_whitespace() {
            return Err(Error::Stream("missing whitespace after PNM maxval".into()));
        }
        Ok(self.pos + 1)
    }
}

/// Parse a binary PGM map produced by [`store_map`].
pub fn load_map(bytes: &[u8]) -> Result<TimestepMap> {
    let mut rd = PnmHeaderReader::new(bytes);
    if rd.token()? != b"P5" {
        return Err(Error::Stream("timestep map must be binary PGM (P5)".into()));
    }
    let width = rd.number()?;
    let height = rd.number()?;
    let maxval = rd.number()?;
    let raster = rd.finish_header()?;
    if width == 0 || height == 0 {
        return Err(Error::Stream("map dimensions must be positive".into()));
    }
    if maxval == 0 || maxval > u16::MAX as usize {
        return Err(Error::Stream(format!("unsupported PGM maxval {maxval}")));
    }
    let count = width * height;
    let wide = maxval >= 256;
    let expected = count * if wide { 2 } else { 1 };
    let data = &bytes[raster.min(bytes.len())..];
    if data.len() != expected {
        return Err(Error::Stream(format!(
            "PGM raster has {} bytes, expected {expected}",
            data.len()
        )));
    }
    let mut values = Vec::with_capacity(count);
    if wide {
        for pair in data.chunks_exact(2) {
            values.push(u16::from_be_bytes([pair[0], pair[1]]));
        }
    } else {
        values.extend(data.iter().map(|&b| b as u16));
    }
    for &v in &values {
        if v == 0 || v as usize > maxval {
            return Err(Error::Stream(format!(
                "map sample {v} outside [1, {maxval}]"
            )));
        }
    }
    TimestepMap::new(width, height, maxval as u16, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::{build_ddim_grid, build_schedule, ScheduleKind};

    #[test]
    fn map_rejects_out_of_range_values() {
        assert!(TimestepMap::new(2, 2, 10, vec![1, 2, 3, 11]).is_err());
        assert!(TimestepMap::new(2, 2, 10, vec![1, 2, 3, 0]).is_err());
        assert!(TimestepMap::new(2, 2, 10, vec![1, 2, 3, 10]).is_ok());
    }

    #[test]
    fn generator_is_deterministic() {
        let cfg = MapGenConfig {
            region_kinds: vec![RegionKind::Rectangle],
            seed: 42,
            ..MapGenConfig::default()
        };
        let a = generate_training_map(&cfg, 64, 64).unwrap();
        let b = generate_training_map(&cfg, 64, 64).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn generator_respects_level_range() {
        for seed in 0..200 {
            let cfg = MapGenConfig {
                level_range: (3, 9),
                seed,
                ..MapGenConfig::default()
            };
            let map = generate_training_map(&cfg, 16, 16).unwrap();
            assert!(map.values().iter().all(|&v| (3..=9).contains(&v)));
        }
    }

    #[test]
    fn generator_rejects_empty_kind_set() {
        let cfg = MapGenConfig {
            region_kinds: vec![],
            ..MapGenConfig::default()
        };
        assert!(generate_training_map(&cfg, 8, 8).is_err());
    }

    #[test]
    fn voronoi_cell_count_matches_sites() {
        // With a wide level range, distinct sites almost surely get distinct
        // levels; count labels via flood of nearest-site identity instead:
        // regenerate with one level per site and count distinct values.
        let cfg = MapGenConfig {
            region_kinds: vec![RegionKind::Voronoi],
            level_range: (1, 50),
            max_regions: 4,
            seed: 7,
            ..MapGenConfig::default()
        };
        for seed in 0..50u64 {
            let map = generate_training_map(
                &MapGenConfig {
                    seed,
                    ..cfg.clone()
                },
                32,
                32,
            )
            .unwrap();
            let mut distinct: Vec<u16> = map.values().to_vec();
            distinct.sort_unstable();
            distinct.dedup();
            assert!(distinct.len() <= cfg.max_regions as usize);
        }
    }

    #[test]
    fn constant_fraction_matches_config() {
        let mut constant = 0usize;
        let draws = 10_000;
        for seed in 0..draws {
            let cfg = MapGenConfig {
                seed: seed as u64,
                ..MapGenConfig::default()
            };
            let map = generate_training_map(&cfg, 16, 16).unwrap();
            if map.is_constant() {
                constant += 1;
            }
        }
        let frac = constant as f64 / draws as f64;
        assert!((frac - 0.15).abs() < 0.01, "constant fraction {frac}");
    }

    #[test]
    fn every_generated_map_validates_and_round_trips() {
        let schedule = build_schedule(ScheduleKind::Cosine, 1000).unwrap();
        let grid = build_ddim_grid(50, &schedule).unwrap();
        for seed in 0..100 {
            let cfg = MapGenConfig {
                seed,
                ..MapGenConfig::default()
            };
            let map = generate_training_map(&cfg, 12, 9).unwrap();
            assert!(validate_map(&map, &grid, 12, 9).is_empty());
            assert_eq!(load_map(&store_map(&map)).unwrap(), map, "seed {seed}");
        }
    }

    #[test]
    fn pgm_round_trip_small_and_wide() {
        let map = TimestepMap::new(3, 2, 50, vec![1, 2, 3, 48, 49, 50]).unwrap();
        assert_eq!(load_map(&store_map(&map)).unwrap(), map);
        // 16-bit samples once maxval >= 256
        let wide = TimestepMap::new(2, 2, 300, vec![1, 255, 256, 300]).unwrap();
        assert_eq!(load_map(&store_map(&wide)).unwrap(), wide);
    }

    #[test]
    fn pgm_minimal_one_pixel_file() {
        let map = TimestepMap::new(1, 1, 1, vec![1]).unwrap();
        let bytes = store_map(&map);
        assert!(bytes.len() < 32);
        assert_eq!(load_map(&bytes).unwrap(), map);
    }

    #[test]
    fn pgm_rejects_malformed_input() {
        let map = TimestepMap::new(2, 2, 9, vec![1, 2, 3, 4]).unwrap();
        let good = store_map(&map);
        // wrong magic
        let mut bad = good.clone();
        bad[1] = b'6';
        assert!(load_map(&bad).is_err());
        // truncated raster
        assert!(load_map(&good[..good.len() - 1]).is_err());
        // sample above maxval
        let mut over = good.clone();
        *over.last_mut().unwrap() = 10;
        assert!(load_map(&over).is_err());
        // level-0 sample violates the map invariant
        let mut zero = good;
        *zero.last_mut().unwrap() = 0;
        assert!(load_map(&zero).is_err());
    }

    #[test]
    fn validate_reports_named_violations() {
        let schedule = build_schedule(ScheduleKind::Cosine, 1000).unwrap();
        let grid = build_ddim_grid(50, &schedule).unwrap();
        let map = TimestepMap::from_raw_values(2, 2, 50, vec![0, 10, 51, 1]);
        let violations = validate_map(&map, &grid, 2, 2);
        let rendered: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        assert!(rendered.iter().any(|s| s.contains("below minimum level")));
        assert!(rendered
            .iter()
            .any(|s| s.contains("exceeds DDIM step count")));

        let ok = TimestepMap::new(2, 2, 50, vec![1, 2, 3, 4]).unwrap();
        assert!(validate_map(&ok, &grid, 2, 2).is_empty());
        assert_eq!(
            validate_map(&ok, &grid, 3, 2),
            vec![MapViolation::DimensionMismatch {
                expected: (3, 2),
                actual: (2, 2)
            }]
        );
    }
}
