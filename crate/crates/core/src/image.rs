//! 8-bit PGM/PPM image I/O mapped to the signal range [-1, 1].
//!
//! Grayscale P5 maps to one channel, color P6 to three planar channels.
//! Writing rounds half away from zero and clamps to [0, 255].

use crate::error::{Error, Result};
use crate::plane::Volume;

/// Parse an 8-bit binary PGM (P5) or PPM (P6) into a volume in [-1, 1].
pub fn volume_from_pnm(bytes: &[u8]) -> Result<Volume> {
    let mut pos = 0usize;
    let mut token = || -> Result<&[u8]> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Stream("truncated PNM header".into()));
        }
        Ok(&bytes[start..pos])
    };

    let magic = token()?;
    let channels = match magic {
        b"P5" => 1usize,
        b"P6" => 3usize,
        _ => return Err(Error::Stream("expected binary PGM (P5) or PPM (P6)".into())),
    };
    let parse = |t: &[u8]| -> Result<usize> {
        std::str::from_utf8(t)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Stream("malformed number in PNM header".into()))
    };
    let width = parse(token()?)?;
    let height = parse(token()?)?;
    let maxval = parse(token()?)?;
    if width == 0 || height == 0 {
        return Err(Error::Stream("image dimensions must be positive".into()));
    }
    if maxval != 255 {
        return Err(Error::Stream(format!(
            "only 8-bit images supported, maxval {maxval}"
        )));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::Stream("missing whitespace after PNM maxval".into()));
    }
    let raster = &bytes[pos + 1..];
    let expected = width * height * channels;
    if raster.len() != expected {
        return Err(Error::Stream(format!(
            "PNM raster has {} bytes, expected {expected}",
            raster.len()
        )));
    }

    let mut volume = Volume::zeros(channels, width, height);
    // interleaved file order -> planar channels
    for p in 0..width * height {
        for c in 0..channels {
            let v = raster[p * channels + c] as f64;
            volume.set(c, p, v / 127.5 - 1.0);
        }
    }
    Ok(volume)
}

/// Serialize a 1-channel volume as P5 or a 3-channel volume as P6.
pub fn volume_to_pnm(volume: &Volume) -> Result<Vec<u8>> {
    let magic = match volume.channels() {
        1 => "P5",
        3 => "P6",
        c => {
            return Err(Error::Parameter(format!(
                "PNM output supports 1 or 3 channels, volume has {c}"
            )))
        }
    };
    let mut out = Vec::new();
    out.extend_from_slice(
        format!("{magic}\n{} {}\n255\n", volume.width(), volume.height()).as_bytes(),
    );
    for p in 0..volume.pixels() {
        for c in 0..volume.channels() {
            out.push(to_u8(volume.get(c, p)));
        }
    }
    Ok(out)
}

/// [-1, 1] sample to an 8-bit value: round half away from zero, clamp.
#[inline]
pub fn to_u8(x: f64) -> u8 {
    (((x + 1.0) * 127.5).round()).clamp(0.0, 255.0) as u8
}
