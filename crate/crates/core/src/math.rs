//! Normal-distribution primitives.
//!
//! Two CDF implementations exist on purpose:
//!
//! * [`normal_cdf_coding`] uses the Abramowitz & Stegun 26.2.17 rational
//!   approximation with the coefficients written out below. Every symbol
//!   probability that reaches the range coder is derived from this function,
//!   so a decoder in any language can rebuild bit-exact frequency tables from
//!   the same five constants. Absolute error is below 1e-7.
//! * [`normal_cdf`] / [`normal_sf`] are erfc-backed and accurate to double
//!   precision. They feed the MMSE denoiser, where tail ratios matter and the
//!   result never has to match another implementation bit for bit.

use std::f64::consts::PI;

pub const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Standard normal density. Uses libm's exp so the value is bit-identical
/// across platforms; frequency tables derived from it must not drift.
#[inline]
pub fn normal_pdf(x: f64) -> f64 {
    libm::exp(-0.5 * x * x) / (2.0 * PI).sqrt()
}

/// Standard normal CDF, double precision (erfc-backed).
#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// Standard normal survival function 1 - CDF, keeping relative accuracy in
/// the upper tail.
#[inline]
pub fn normal_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x / SQRT_2)
}

// Abramowitz & Stegun 26.2.17 coefficients (|error| < 7.5e-8).
const AS_P: f64 = 0.2316419;
const AS_B1: f64 = 0.319381530;
const AS_B2: f64 = -0.356563782;
const AS_B3: f64 = 1.781477937;
const AS_B4: f64 = -1.821255978;
const AS_B5: f64 = 1.330274429;

/// Upper-tail probability Q(x) = 1 - Phi(x) for x >= 0, A&S 26.2.17.
#[inline]
fn coding_upper_tail(x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    let t = 1.0 / (1.0 + AS_P * x);
    let poly = t * (AS_B1 + t * (AS_B2 + t * (AS_B3 + t * (AS_B4 + t * AS_B5))));
    normal_pdf(x) * poly
}

/// Portable standard normal CDF used for entropy coding.
#[inline]
pub fn normal_cdf_coding(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 - coding_upper_tail(x)
    } else {
        coding_upper_tail(-x)
    }
}

/// Phi(b) - Phi(a) under the coding approximation, arranged so that the
/// mirrored interval (-b, -a) produces the bit-identical value.
#[inline]
pub fn normal_interval_coding(a: f64, b: f64) -> f64 {
    debug_assert!(a <= b);
    let p = if a >= 0.0 {
        coding_upper_tail(a) - coding_upper_tail(b)
    } else if b <= 0.0 {
        coding_upper_tail(-b) - coding_upper_tail(-a)
    } else {
        // grouped so the mirrored interval evaluates bit-identically
        1.0 - (coding_upper_tail(b) + coding_upper_tail(-a))
    };
    p.max(0.0)
}
