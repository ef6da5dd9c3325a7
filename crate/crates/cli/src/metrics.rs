//! Distortion metrics for the evaluation harness.

use std::collections::BTreeMap;

use svdc_core::plane::Volume;
use svdc_core::roi::TimestepMap;

/// Mean squared error in 8-bit units (samples scaled by 127.5).
pub fn mse_255(a: &Volume, b: &Volume) -> f64 {
    debug_assert!(a.same_shape(b));
    let n = a.len() as f64;
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = (x - y) * 127.5;
            d * d
        })
        .sum::<f64>()
        / n
}

/// PSNR at peak 255; `None` for an exact match.
pub fn psnr_255(mse: f64) -> Option<f64> {
    if mse <= 0.0 {
        None
    } else {
        Some(10.0 * (255.0f64 * 255.0 / mse).log10())
    }
}

/// Per-map-level MSE in 8-bit units.
pub fn per_level_mse(a: &Volume, b: &Volume, map: &TimestepMap) -> BTreeMap<u16, f64> {
    let pixels = a.pixels();
    let mut acc: BTreeMap<u16, (usize, f64)> = BTreeMap::new();
    for (p, &level) in map.values().iter().enumerate() {
        let entry = acc.entry(level).or_insert((0, 0.0));
        for c in 0..a.channels() {
            let d = (a.get(c, p) - b.get(c, p)) * 127.5;
            entry.1 += d * d;
            entry.0 += 1;
        }
        let _ = pixels;
    }
    acc.into_iter()
        .map(|(k, (n, s))| (k, s / n as f64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_error_has_no_psnr() {
        let v = Volume::zeros(1, 2, 2);
        assert_eq!(mse_255(&v, &v), 0.0);
        assert!(psnr_255(0.0).is_none());
    }

    #[test]
    fn uniform_error_psnr() {
        let a = Volume::zeros(1, 4, 4);
        let mut b = Volume::zeros(1, 4, 4);
        for v in b.data_mut() {
            *v = 1.0 / 127.5; // one 8-bit step everywhere
        }
        let mse = mse_255(&a, &b);
        assert!((mse - 1.0).abs() < 1e-12);
        let psnr = psnr_255(mse).unwrap();
        assert!((psnr - 48.130803608679074).abs() < 1e-9);
    }
}
