//! svdc: encode/decode, map generation, rate-distortion sweeps, bit-cost
//! heatmaps, denoiser training, and a self-test suite.
//!
//! Machine-readable results go to stdout as one JSON object per line; sweep
//! outputs are CSV; heatmaps and maps are PGM.

mod evalrd;
mod metrics;
mod selftest;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use svdc_core::codec::{
    bit_allocation, decode_with_sampler, encode, peek_header, CodecConfig, SeedPolicy,
};
use svdc_core::corpus::{synth_image, CorpusKind};
use svdc_core::diffusion::{
    train_tiny_denoiser, Denoiser, MmseGaussianDenoiser, SamplerKind, TinyDenoiser, TrainConfig,
};
use svdc_core::entropy::Conditioning;
use svdc_core::image::{volume_from_pnm, volume_to_pnm};
use svdc_core::plane::Volume;
use svdc_core::roi::{
    generate_training_map, load_map, store_map, MapGenConfig, RegionKind, TimestepMap,
};
use svdc_core::schedule::ScheduleKind;

/// Error with a process exit code: 2 for input/usage problems, 1 otherwise.
pub struct CliError {
    code: i32,
    source: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(value: E) -> Self {
        Self {
            code: 1,
            source: value.into(),
        }
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

/// Mark an error as caused by bad input (exit code 2).
pub trait InputContext<T> {
    fn input_err(self, what: impl FnOnce() -> String) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> InputContext<T> for Result<T, E> {
    fn input_err(self, what: impl FnOnce() -> String) -> CliResult<T> {
        self.map_err(|e| CliError {
            code: 2,
            source: e.into().context(what()),
        })
    }
}

fn read_file(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).input_err(|| format!("reading {}", path.display()))
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, bytes).input_err(|| format!("writing {}", path.display()))
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScheduleArg {
    Cosine,
    ScaledLinear,
}

impl From<ScheduleArg> for ScheduleKind {
    fn from(value: ScheduleArg) -> Self {
        match value {
            ScheduleArg::Cosine => ScheduleKind::Cosine,
            ScheduleArg::ScaledLinear => ScheduleKind::ScaledLinear,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PredictorArg {
    Cond,
    Uncond,
}

impl From<PredictorArg> for Conditioning {
    fn from(value: PredictorArg) -> Self {
        match value {
            PredictorArg::Cond => Conditioning::TimestepConditioned,
            PredictorArg::Uncond => Conditioning::Unconditioned,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SamplerArg {
    Resampled,
    Repaint,
}

impl From<SamplerArg> for SamplerKind {
    fn from(value: SamplerArg) -> Self {
        match value {
            SamplerArg::Resampled => SamplerKind::ResampledDdim,
            SamplerArg::Repaint => SamplerKind::Repaint,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MapKindArg {
    Rectangle,
    Circle,
    Grid,
    Voronoi,
}

impl From<MapKindArg> for RegionKind {
    fn from(value: MapKindArg) -> Self {
        match value {
            MapKindArg::Rectangle => RegionKind::Rectangle,
            MapKindArg::Circle => RegionKind::Circle,
            MapKindArg::Grid => RegionKind::Grid,
            MapKindArg::Voronoi => RegionKind::Voronoi,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CorpusArg {
    Gaussian,
    GaussMarkov,
}

impl From<CorpusArg> for CorpusKind {
    fn from(value: CorpusArg) -> Self {
        match value {
            CorpusArg::Gaussian => CorpusKind::GaussianIid,
            CorpusArg::GaussMarkov => CorpusKind::GaussMarkov,
        }
    }
}

#[derive(Parser)]
#[command(name = "svdc", version, about = "spatially varying diffusion codec")]
struct Cli {
    /// Seed for every stochastic choice (dither, map draws, corpora).
    #[arg(long, global = true, default_value_t = 0x5356_4443)]
    seed: u64,
    #[arg(long, global = true, value_enum, default_value_t = ScheduleArg::Cosine)]
    schedule: ScheduleArg,
    /// DDIM step count N (the number of map levels).
    #[arg(long = "ddim-steps", global = true, default_value_t = 50)]
    ddim_steps: u16,
    #[arg(long, global = true, value_enum, default_value_t = PredictorArg::Cond)]
    predictor: PredictorArg,
    #[arg(long, global = true, value_enum, default_value_t = SamplerArg::Resampled)]
    sampler: SamplerArg,
    /// Shrink the statistical self-tests (1e4 samples, tolerance 0.05).
    #[arg(long, global = true)]
    quick: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encode a PGM/PPM image under a timestep map into a .svdc stream.
    Encode {
        input: PathBuf,
        /// Timestep map (PGM, maxval = DDIM step count).
        #[arg(long)]
        map: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Dense schedule grid size T.
        #[arg(long, default_value_t = 1000)]
        grid_size: u16,
    },
    /// Decode a .svdc stream to a PGM/PPM reconstruction.
    Decode {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Tiny-denoiser weights; the analytic MMSE denoiser is the default.
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Override the sampler recorded in the stream header.
        #[arg(long, value_enum)]
        sampler_override: Option<SamplerArg>,
    },
    /// Generate a timestep map.
    Genmap {
        #[arg(long)]
        width: usize,
        #[arg(long)]
        height: usize,
        #[arg(short, long)]
        output: PathBuf,
        /// Constant map at this level.
        #[arg(long, conflicts_with_all = ["kind", "training_draw"])]
        constant: Option<u16>,
        /// Single-shape random map.
        #[arg(long, value_enum)]
        kind: Option<MapKindArg>,
        /// Draw from the full training-map sampler (all shapes, constant
        /// maps with probability 0.15).
        #[arg(long, conflicts_with = "kind")]
        training_draw: bool,
        /// Region count for --kind (also the voronoi site count).
        #[arg(long, default_value_t = 4)]
        regions: u16,
        /// Inclusive level interval, e.g. 5:40.
        #[arg(long, default_value = "1:50")]
        levels: String,
    },
    /// Write a synthetic evaluation corpus (PGM/PPM files).
    Gencorpus {
        #[arg(long, value_enum, default_value_t = CorpusArg::GaussMarkov)]
        kind: CorpusArg,
        #[arg(long, default_value_t = 50)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 1)]
        channels: usize,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Rate-distortion sweep over constant levels and optional ROI maps.
    EvalRd {
        /// Directory of PGM/PPM corpus images.
        #[arg(long)]
        corpus: PathBuf,
        /// Comma-separated constant levels, e.g. 5,10,20,40.
        #[arg(long, default_value = "5,10,20,40")]
        levels: String,
        /// Directory of ROI maps (PGM) to sweep in addition.
        #[arg(long)]
        maps: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Dense schedule grid size T.
        #[arg(long, default_value_t = 1000)]
        grid_size: u16,
    },
    /// Per-pixel bit-cost heatmap and per-level totals for a stream.
    Bitmap {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Per-level totals CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Train the tiny denoiser on a corpus directory.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value_t = 2000)]
        steps: usize,
        #[arg(long, default_value_t = 0.05)]
        learning_rate: f64,
        #[arg(long, default_value_t = 5)]
        patch: usize,
        /// Comma-separated hidden widths.
        #[arg(long, default_value = "16")]
        hidden: String,
        /// Dense schedule grid size T.
        #[arg(long, default_value_t = 1000)]
        grid_size: u16,
    },
    /// Run the built-in verification checks.
    Selftest {
        /// Compare against this golden stream instead of the built-in copy.
        #[arg(long)]
        golden: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {:#}", err.source);
        std::process::exit(err.code);
    }
}

fn codec_config(cli: &Cli, grid_size: u16) -> CodecConfig {
    CodecConfig {
        schedule_kind: cli.schedule.into(),
        grid_size,
        ddim_steps: cli.ddim_steps,
        conditioning: cli.predictor.into(),
        sampler: cli.sampler.into(),
        seed: SeedPolicy::Fixed(cli.seed),
    }
}

fn load_denoiser(weights: Option<&Path>, channels: usize) -> CliResult<Box<dyn Denoiser>> {
    match weights {
        Some(path) => {
            let bytes = read_file(path)?;
            let net = TinyDenoiser::from_bytes(&bytes)
                .input_err(|| format!("loading denoiser weights {}", path.display()))?;
            Ok(Box::new(net))
        }
        None => Ok(Box::new(MmseGaussianDenoiser::standard(channels))),
    }
}

fn parse_levels_range(spec: &str) -> CliResult<(u16, u16)> {
    let parts: Vec<&str> = spec.split(':').collect();
    let err = || anyhow::anyhow!("level range must be lo:hi, got {spec:?}");
    if parts.len() != 2 {
        return Err(err()).input_err(|| "parsing --levels".into());
    }
    let lo: u16 = parts[0]
        .trim()
        .parse()
        .map_err(|_| err())
        .input_err(|| "parsing --levels".into())?;
    let hi: u16 = parts[1]
        .trim()
        .parse()
        .map_err(|_| err())
        .input_err(|| "parsing --levels".into())?;
    Ok((lo, hi))
}

fn json_line(fields: &[(&str, String)]) -> String {
    let mut obj = serde_json::Map::new();
    for (k, v) in fields {
        // numbers stay numbers, everything else becomes a string
        let value = v
            .parse::<i64>()
            .map(serde_json::Value::from)
            .or_else(|_| v.parse::<f64>().map(serde_json::Value::from))
            .unwrap_or_else(|_| serde_json::Value::from(v.clone()));
        obj.insert((*k).to_string(), value);
    }
    serde_json::Value::Object(obj).to_string()
}

fn run(cli: Cli) -> CliResult {
    match &cli.command {
        Command::Encode {
            input,
            map,
            output,
            grid_size,
        } => {
            let started = Instant::now();
            let image_bytes = read_file(input)?;
            let image = volume_from_pnm(&image_bytes)
                .input_err(|| format!("parsing image {}", input.display()))?;
            let map_bytes = read_file(map)?;
            let tmap =
                load_map(&map_bytes).input_err(|| format!("parsing map {}", map.display()))?;
            let cfg = codec_config(&cli, *grid_size);
            let stream = encode(&image, &tmap, &cfg).input_err(|| "encoding".to_string())?;
            write_file(output, &stream)?;
            let pixels = (image.width() * image.height()) as f64;
            let header = peek_header(&stream)?;
            println!(
                "{}",
                json_line(&[
                    ("command", "encode".into()),
                    ("input", input.display().to_string()),
                    ("output", output.display().to_string()),
                    ("bytes", stream.len().to_string()),
                    ("bpp", format!("{:.6}", stream.len() as f64 * 8.0 / pixels)),
                    (
                        "tmap_bpp",
                        format!("{:.6}", header.tmap_len as f64 * 8.0 / pixels)
                    ),
                    (
                        "latent_bpp",
                        format!("{:.6}", header.latent_len as f64 * 8.0 / pixels)
                    ),
                    ("seconds", format!("{:.3}", started.elapsed().as_secs_f64())),
                ])
            );
            Ok(())
        }
        Command::Decode {
            input,
            output,
            weights,
            sampler_override,
        } => {
            let started = Instant::now();
            let stream = read_file(input)?;
            let header =
                peek_header(&stream).input_err(|| format!("parsing {}", input.display()))?;
            let denoiser = load_denoiser(weights.as_deref(), header.channels as usize)?;
            let decoded =
                decode_with_sampler(&stream, denoiser.as_ref(), sampler_override.map(Into::into))
                    .input_err(|| format!("decoding {}", input.display()))?;
            let pnm = volume_to_pnm(&decoded.image)?;
            write_file(output, &pnm)?;
            println!(
                "{}",
                json_line(&[
                    ("command", "decode".into()),
                    ("input", input.display().to_string()),
                    ("output", output.display().to_string()),
                    ("width", header.width.to_string()),
                    ("height", header.height.to_string()),
                    ("channels", header.channels.to_string()),
                    ("denoiser_evals", decoded.denoiser_evaluations.to_string()),
                    ("seconds", format!("{:.3}", started.elapsed().as_secs_f64())),
                ])
            );
            Ok(())
        }
        Command::Genmap {
            width,
            height,
            output,
            constant,
            kind,
            training_draw,
            regions,
            levels,
        } => {
            let (lo, hi) = parse_levels_range(levels)?;
            let max_level = cli.ddim_steps;
            let tmap = if let Some(level) = constant {
                TimestepMap::constant(*width, *height, max_level, *level)
                    .input_err(|| "building constant map".into())?
            } else {
                let kinds = match (kind, training_draw) {
                    (Some(k), _) => vec![(*k).into()],
                    (None, true) => MapGenConfig::default().region_kinds,
                    (None, false) => {
                        return Err(anyhow::anyhow!(
                            "choose one of --constant, --kind, --training-draw"
                        ))
                        .input_err(|| "genmap".into())
                    }
                };
                // an explicit --kind honors the exact region count; the
                // training sampler draws 1..=regions
                let regions = (*regions).max(1);
                let cfg = MapGenConfig {
                    constant_probability: if *training_draw { 0.15 } else { 0.0 },
                    region_kinds: kinds,
                    level_range: (lo, hi.min(max_level)),
                    min_regions: if *training_draw { 1 } else { regions },
                    max_regions: regions,
                    max_level,
                    seed: cli.seed,
                };
                generate_training_map(&cfg, *width, *height)
                    .input_err(|| "generating map".into())?
            };
            write_file(output, &store_map(&tmap))?;
            // level histogram
            let mut hist = std::collections::BTreeMap::new();
            for &v in tmap.values() {
                *hist.entry(v).or_insert(0usize) += 1;
            }
            let mut hist_str = String::new();
            for (level, count) in &hist {
                let _ = write!(hist_str, "{level}:{count};");
            }
            println!(
                "{}",
                json_line(&[
                    ("command", "genmap".into()),
                    ("output", output.display().to_string()),
                    ("width", width.to_string()),
                    ("height", height.to_string()),
                    ("max_level", max_level.to_string()),
                    ("distinct_levels", hist.len().to_string()),
                    ("histogram", hist_str),
                ])
            );
            Ok(())
        }
        Command::Gencorpus {
            kind,
            count,
            width,
            height,
            channels,
            output,
        } => {
            if *channels != 1 && *channels != 3 {
                return Err(anyhow::anyhow!("corpus channels must be 1 or 3"))
                    .input_err(|| "gencorpus".into());
            }
            std::fs::create_dir_all(output)?;
            let ext = if *channels == 1 { "pgm" } else { "ppm" };
            for i in 0..*count {
                let mut image = synth_image(
                    (*kind).into(),
                    *channels,
                    *width,
                    *height,
                    cli.seed.wrapping_add(i as u64),
                );
                svdc_core::corpus::squash_to_signal(&mut image);
                let path = output.join(format!("{i:04}.{ext}"));
                write_file(&path, &volume_to_pnm(&image)?)?;
            }
            println!(
                "{}",
                json_line(&[
                    ("command", "gencorpus".into()),
                    ("output", output.display().to_string()),
                    ("count", count.to_string()),
                ])
            );
            Ok(())
        }
        Command::EvalRd {
            corpus,
            levels,
            maps,
            output,
            weights,
            grid_size,
        } => evalrd::run(
            &cli,
            corpus,
            levels,
            maps.as_deref(),
            output,
            weights.as_deref(),
            *grid_size,
        ),
        Command::Bitmap { input, output, csv } => {
            let stream = read_file(input)?;
            let alloc =
                bit_allocation(&stream).input_err(|| format!("parsing {}", input.display()))?;
            let plane = &alloc.per_pixel_bits;
            let (min, max) = plane
                .data()
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                });
            let spread = (max - min).max(1e-12);
            let mut volume = Volume::zeros(1, plane.width(), plane.height());
            for (i, &bits) in plane.data().iter().enumerate() {
                volume.data_mut()[i] = 2.0 * (bits - min) / spread - 1.0;
            }
            write_file(output, &volume_to_pnm(&volume)?)?;
            if let Some(csv_path) = csv {
                let mut text = String::from("level,pixels,bits,bits_per_pixel\n");
                for (level, (pixels, bits)) in &alloc.per_level {
                    let _ = writeln!(
                        text,
                        "{level},{pixels},{bits:.3},{:.6}",
                        bits / *pixels as f64
                    );
                }
                write_file(csv_path, text.as_bytes())?;
            }
            println!(
                "{}",
                json_line(&[
                    ("command", "bitmap".into()),
                    ("input", input.display().to_string()),
                    ("output", output.display().to_string()),
                    ("total_bits", format!("{:.1}", alloc.total_bits)),
                    (
                        "latent_bits_estimate",
                        format!("{:.1}", alloc.latent_bits_estimate)
                    ),
                    ("overhead_bits", format!("{:.1}", alloc.overhead_bits)),
                ])
            );
            Ok(())
        }
        Command::Train {
            corpus,
            output,
            steps,
            learning_rate,
            patch,
            hidden,
            grid_size,
        } => {
            let started = Instant::now();
            let images = evalrd::load_corpus_dir(corpus)?;
            if images.is_empty() {
                return Err(anyhow::anyhow!("no PGM/PPM images in {}", corpus.display()))
                    .input_err(|| "train".into());
            }
            // train on normalized latents, matching what the decoder feeds
            // the denoiser
            let latents: Vec<Volume> = images
                .into_iter()
                .map(|(_, img)| {
                    let mut v = img;
                    for c in 0..v.channels() {
                        let data = v.channel_mut(c);
                        let n = data.len() as f64;
                        let mean = data.iter().sum::<f64>() / n;
                        let var = data.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
                        let std = var.sqrt().max(1e-9);
                        for x in data.iter_mut() {
                            *x = (*x - mean) / std;
                        }
                    }
                    v
                })
                .collect();
            let hidden_dims: Vec<usize> = hidden
                .split(',')
                .map(|t| t.trim().parse::<usize>())
                .collect::<Result<_, _>>()
                .input_err(|| format!("parsing --hidden {hidden:?}"))?;
            let schedule = svdc_core::schedule::build_schedule(cli.schedule.into(), *grid_size)
                .input_err(|| "building schedule".into())?;
            let grid = svdc_core::schedule::build_ddim_grid(cli.ddim_steps, &schedule)
                .input_err(|| "building DDIM grid".into())?;
            let gen_cfg = MapGenConfig {
                level_range: (1, cli.ddim_steps),
                max_level: cli.ddim_steps,
                seed: cli.seed,
                ..MapGenConfig::default()
            };
            let mut net = TinyDenoiser::new(*patch, &hidden_dims, cli.seed)
                .input_err(|| "building denoiser".into())?;
            let train_cfg = TrainConfig {
                steps: *steps,
                learning_rate: *learning_rate,
                clip_norm: 1.0,
                seed: cli.seed,
                freeze_draws: false,
            };
            let report =
                train_tiny_denoiser(&latents, &gen_cfg, &grid, &schedule, &mut net, &train_cfg)?;
            write_file(output, &net.to_bytes())?;
            println!(
                "{}",
                json_line(&[
                    ("command", "train".into()),
                    ("output", output.display().to_string()),
                    ("steps", report.steps_run.to_string()),
                    ("final_loss", format!("{:.6}", report.final_loss)),
                    ("params", net.param_count().to_string()),
                    ("seconds", format!("{:.3}", started.elapsed().as_secs_f64())),
                ])
            );
            Ok(())
        }
        Command::Selftest { golden } => selftest::run(&cli, golden.as_deref()),
    }
}

pub(crate) use metrics::{mse_255, per_level_mse, psnr_255};
