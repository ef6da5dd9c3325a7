//! Lossless timestep-map coding with an adaptive order-0 model.
//!
//! Frequencies start at one per level, grow by a fixed increment after each
//! coded symbol, and are halved once the total reaches 2^15. The large
//! increment makes the model converge within a few symbols on the constant
//! and few-level maps that dominate in practice.

use crate::error::{Error, Result};
use crate::roi::TimestepMap;

use super::range::{RangeDecoder, RangeEncoder};

const INCREMENT: u32 = 32;
const RESCALE_LIMIT: u32 = 1 << 15;

struct AdaptiveModel {
    freq: Vec<u32>,
    total: u32,
}

impl AdaptiveModel {
    fn new(alphabet: usize) -> Self {
        Self {
            freq: vec![1; alphabet],
            total: alphabet as u32,
        }
    }

    fn bounds(&self, symbol: usize) -> (u32, u32) {
        let lo: u32 = self.freq[..symbol].iter().sum();
        (lo, lo + self.freq[symbol])
    }

    fn find(&self, value: u32) -> (usize, u32, u32) {
        let mut lo = 0u32;
        for (symbol, &f) in self.freq.iter().enumerate() {
            if value < lo + f {
                return (symbol, lo, lo + f);
            }
            lo += f;
        }
        unreachable!("cumulative search value below total")
    }

    fn update(&mut self, symbol: usize) {
        self.freq[symbol] += INCREMENT;
        self.total += INCREMENT;
        if self.total >= RESCALE_LIMIT {
            self.total = 0;
            for f in &mut self.freq {
                *f = (*f + 1) >> 1;
                self.total += *f;
            }
        }
    }
}

/// Losslessly encode a timestep map (levels only; dimensions and the level
/// bound travel in the container header).
pub fn encode_tmap(map: &TimestepMap) -> Vec<u8> {
    let mut model = AdaptiveModel::new(map.max_level() as usize);
    let mut enc = RangeEncoder::new();
    for &v in map.values() {
        let symbol = (v - 1) as usize;
        let (lo, hi) = model.bounds(symbol);
        enc.encode(lo, hi, model.total);
        model.update(symbol);
    }
    enc.finish()
}

/// Inverse of [`encode_tmap`].
pub fn decode_tmap(
    bytes: &[u8],
    width: usize,
    height: usize,
    max_level: u16,
) -> Result<TimestepMap> {
    if max_level == 0 {
        return Err(Error::Stream("map level bound must be >= 1".into()));
    }
    let mut model = AdaptiveModel::new(max_level as usize);
    let mut dec = RangeDecoder::new(bytes)?;
    let mut values = Vec::with_capacity(width * height);
    for _ in 0..width * height {
        let v = dec.decode_freq(model.total);
        let (symbol, lo, hi) = model.find(v);
        dec.decode_update(lo, hi, model.total)?;
        model.update(symbol);
        values.push(symbol as u16 + 1);
    }
    TimestepMap::new(width, height, max_level, values)
}
