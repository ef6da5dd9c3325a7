//! Entropy coding: a deterministic range coder, timestep-conditioned
//! discretized-Gaussian symbol models, and the lossless map codec.
//!
//! Table construction is pure per pixel; each coded stream is strictly
//! sequential, but independent streams (one per image) may run concurrently.

mod adaptive;
mod gaussian;
mod range;

pub use adaptive::{decode_tmap, encode_tmap};
pub use gaussian::{
    expected_table_bits, gaussian_bin_pmf, predict_params, quantize_pmf, range_decode,
    range_decode_with, range_encode, range_encode_with, rate_estimate, Conditioning,
    FrequencyTable, PixelParams, PredictorConfig, SymbolModel, ESCAPE_RAW_BITS, SCALE_FLOOR,
    TABLE_TOTAL,
};
pub use range::{RangeDecoder, RangeEncoder};
