//! Rate-distortion sweep: constant-level maps plus optional ROI maps, both
//! predictor modes, both samplers. One CSV row per (image, map, mode); a
//! failing row is recorded and the run continues.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use svdc_core::codec::{
    bit_allocation, decode_with_sampler, encode, peek_header, CodecConfig, SeedPolicy,
};
use svdc_core::diffusion::{Denoiser, MmseGaussianDenoiser, SamplerKind, TinyDenoiser};
use svdc_core::entropy::Conditioning;
use svdc_core::image::volume_from_pnm;
use svdc_core::plane::Volume;
use svdc_core::roi::{load_map, TimestepMap};

use crate::{json_line, read_file, write_file, CliResult, InputContext};

pub const CSV_SCHEMA_VERSION: u32 = 1;

pub fn csv_header() -> String {
    "schema_version,image,map,predictor,sampler,width,height,total_bpp,tmap_bpp,latent_bpp,\
     psnr_db,mse,denoiser_evals,wall_ms,per_level_bpp,per_level_mse,status,note\n"
        .to_string()
}

/// Load all PGM/PPM files of a directory, sorted by file name.
pub fn load_corpus_dir(dir: &Path) -> CliResult<Vec<(String, Volume)>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .input_err(|| format!("reading corpus directory {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("pgm") | Some("ppm")
            )
        })
        .collect();
    paths.sort();
    let mut out = Vec::with_capacity(paths.len());
    for path in paths {
        let bytes = read_file(&path)?;
        let image = volume_from_pnm(&bytes).input_err(|| format!("parsing {}", path.display()))?;
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        out.push((name, image));
    }
    Ok(out)
}

fn load_maps_dir(dir: &Path) -> CliResult<Vec<(String, TimestepMap)>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .input_err(|| format!("reading maps directory {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("pgm"))
        .collect();
    paths.sort();
    let mut out = Vec::with_capacity(paths.len());
    for path in paths {
        let bytes = read_file(&path)?;
        let map = load_map(&bytes).input_err(|| format!("parsing map {}", path.display()))?;
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        out.push((name, map));
    }
    Ok(out)
}

struct Row {
    image: String,
    map: String,
    predictor: &'static str,
    sampler: &'static str,
    width: usize,
    height: usize,
    fields: Result<RowFields, String>,
}

struct RowFields {
    total_bpp: f64,
    tmap_bpp: f64,
    latent_bpp: f64,
    psnr_db: Option<f64>,
    mse: f64,
    denoiser_evals: usize,
    wall_ms: f64,
    per_level_bpp: String,
    per_level_mse: String,
}

fn run_one(
    image: &Volume,
    tmap: &TimestepMap,
    cfg: &CodecConfig,
    sampler: SamplerKind,
    denoiser: &dyn Denoiser,
) -> Result<RowFields, String> {
    let started = Instant::now();
    let stream = encode(image, tmap, cfg).map_err(|e| e.to_string())?;
    let header = peek_header(&stream).map_err(|e| e.to_string())?;
    let decoded =
        decode_with_sampler(&stream, denoiser, Some(sampler)).map_err(|e| e.to_string())?;
    let alloc = bit_allocation(&stream).map_err(|e| e.to_string())?;

    let pixels = (image.width() * image.height()) as f64;
    let mse = crate::mse_255(image, &decoded.image);
    let level_mse = crate::per_level_mse(image, &decoded.image, tmap);

    let mut per_level_bpp = String::new();
    for (level, (count, bits)) in &alloc.per_level {
        let _ = write!(per_level_bpp, "{level}:{:.4};", bits / *count as f64);
    }
    let mut per_level_mse = String::new();
    for (level, m) in &level_mse {
        let _ = write!(per_level_mse, "{level}:{m:.4};");
    }

    Ok(RowFields {
        total_bpp: stream.len() as f64 * 8.0 / pixels,
        tmap_bpp: header.tmap_len as f64 * 8.0 / pixels,
        latent_bpp: header.latent_len as f64 * 8.0 / pixels,
        psnr_db: crate::psnr_255(mse),
        mse,
        denoiser_evals: decoded.denoiser_evaluations,
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
        per_level_bpp,
        per_level_mse,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn run(
    cli: &crate::Cli,
    corpus: &Path,
    levels: &str,
    maps: Option<&Path>,
    output: &Path,
    weights: Option<&Path>,
    grid_size: u16,
) -> CliResult {
    let images = load_corpus_dir(corpus)?;
    if images.is_empty() {
        return Err(anyhow::anyhow!("no PGM/PPM images in {}", corpus.display()))
            .input_err(|| "eval-rd".into());
    }
    let levels: Vec<u16> = levels
        .split(',')
        .map(|t| t.trim().parse::<u16>())
        .collect::<Result<_, _>>()
        .input_err(|| format!("parsing --levels {levels:?}"))?;
    let roi_maps = match maps {
        Some(dir) => load_maps_dir(dir)?,
        None => Vec::new(),
    };
    let tiny: Option<TinyDenoiser> = match weights {
        Some(path) => {
            let bytes = read_file(path)?;
            Some(
                TinyDenoiser::from_bytes(&bytes)
                    .input_err(|| format!("loading weights {}", path.display()))?,
            )
        }
        None => None,
    };

    let predictors = [
        ("cond", Conditioning::TimestepConditioned),
        ("uncond", Conditioning::Unconditioned),
    ];
    let samplers = [
        ("resampled", SamplerKind::ResampledDdim),
        ("repaint", SamplerKind::Repaint),
    ];

    let mut rows: Vec<Row> = Vec::new();
    for (image_name, image) in &images {
        // tiny-denoiser weights are channel-agnostic; the analytic denoiser
        // must match the image's channel count
        let image_denoiser: Box<dyn Denoiser> = match &tiny {
            Some(net) => Box::new(net.clone()),
            None => Box::new(MmseGaussianDenoiser::standard(image.channels())),
        };

        let mut map_set: Vec<(String, TimestepMap)> = Vec::new();
        for &level in &levels {
            match TimestepMap::constant(image.width(), image.height(), cli.ddim_steps, level) {
                Ok(map) => map_set.push((format!("const{level}"), map)),
                Err(e) => rows.push(Row {
                    image: image_name.clone(),
                    map: format!("const{level}"),
                    predictor: "-",
                    sampler: "-",
                    width: image.width(),
                    height: image.height(),
                    fields: Err(e.to_string()),
                }),
            }
        }
        for (name, map) in &roi_maps {
            map_set.push((name.clone(), map.clone()));
        }

        for (map_name, map) in &map_set {
            for (pname, conditioning) in predictors {
                for (sname, sampler) in samplers {
                    let cfg = CodecConfig {
                        schedule_kind: cli.schedule.into(),
                        grid_size,
                        ddim_steps: cli.ddim_steps,
                        conditioning,
                        sampler,
                        seed: SeedPolicy::Fixed(cli.seed),
                    };
                    let fields = run_one(image, map, &cfg, sampler, image_denoiser.as_ref());
                    rows.push(Row {
                        image: image_name.clone(),
                        map: map_name.clone(),
                        predictor: pname,
                        sampler: sname,
                        width: image.width(),
                        height: image.height(),
                        fields,
                    });
                }
            }
        }
    }

    let mut csv = csv_header();
    let mut failures = 0usize;
    for row in &rows {
        match &row.fields {
            Ok(f) => {
                let psnr = f
                    .psnr_db
                    .map(|v| format!("{v:.4}"))
                    .unwrap_or_else(|| "inf".into());
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{},{},{},{:.6},{:.6},{:.6},{},{:.6},{},{:.1},{},{},ok,",
                    CSV_SCHEMA_VERSION,
                    row.image,
                    row.map,
                    row.predictor,
                    row.sampler,
                    row.width,
                    row.height,
                    f.total_bpp,
                    f.tmap_bpp,
                    f.latent_bpp,
                    psnr,
                    f.mse,
                    f.denoiser_evals,
                    f.wall_ms,
                    f.per_level_bpp,
                    f.per_level_mse,
                );
            }
            Err(msg) => {
                failures += 1;
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{},{},{},,,,,,,,,,error,{}",
                    CSV_SCHEMA_VERSION,
                    row.image,
                    row.map,
                    row.predictor,
                    row.sampler,
                    row.width,
                    row.height,
                    msg.replace(',', ";"),
                );
            }
        }
    }
    write_file(output, csv.as_bytes())?;
    println!(
        "{}",
        json_line(&[
            ("command", "eval-rd".into()),
            ("output", output.display().to_string()),
            ("rows", rows.len().to_string()),
            ("failures", failures.to_string()),
        ])
    );
    Ok(())
}
