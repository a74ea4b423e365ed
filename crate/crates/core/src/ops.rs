//! Scalar and vector compression operators.

use rand::Rng;

use crate::dither::{self, LevelLadder};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::spec::CompressorSpec;
use crate::vector::DenseVector;

const MANTISSA_BITS: u32 = 23;
const MANTISSA_MASK: u32 = (1 << MANTISSA_BITS) - 1;
const EXP_MASK: u32 = 0xff;

/// Exact law of a two-point random rounding: `low` with probability `p_low`,
/// `high` otherwise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TwoPoint {
    pub low: f64,
    pub high: f64,
    pub p_low: f64,
}

impl TwoPoint {
    fn point(v: f64) -> Self {
        Self {
            low: v,
            high: v,
            p_low: 1.0,
        }
    }

    pub fn mean(&self) -> f64 {
        self.p_low * self.low + (1.0 - self.p_low) * self.high
    }

    pub fn second_moment(&self) -> f64 {
        self.p_low * self.low * self.low + (1.0 - self.p_low) * self.high * self.high
    }
}

fn check_finite(t: f32) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("non-finite scalar {t}")))
    }
}

/// Law of `C_nat(t)` read straight off the binary32 fields: the low endpoint
/// keeps sign and exponent and drops the mantissa; it is chosen with
/// probability `1 − m`.
pub fn nat_two_point(t: f32) -> Result<TwoPoint> {
    check_finite(t)?;
    let bits = t.to_bits();
    let exp = (bits >> MANTISSA_BITS) & EXP_MASK;
    let mant = bits & MANTISSA_MASK;
    if exp == 0 {
        return Ok(TwoPoint::point(0.0));
    }
    let low = f32::from_bits(bits & !MANTISSA_MASK) as f64;
    if mant == 0 {
        return Ok(TwoPoint::point(low));
    }
    let m = mant as f64 / (1u64 << MANTISSA_BITS) as f64;
    Ok(TwoPoint {
        low,
        high: 2.0 * low,
        p_low: 1.0 - m,
    })
}

/// Law of natural compression for an arbitrary binary64 scalar, used by the
/// exact second-moment scans.
pub fn nat_two_point_f64(t: f64) -> TwoPoint {
    if t == 0.0 || !t.is_normal() {
        return TwoPoint::point(0.0);
    }
    let bits = t.to_bits();
    let low = f64::from_bits(bits & !((1u64 << 52) - 1));
    if low == t {
        return TwoPoint::point(t);
    }
    let high = 2.0 * low;
    TwoPoint {
        low,
        high,
        p_low: (high.abs() - t.abs()) / low.abs(),
    }
}

/// Law of unbiased rounding to the neighbouring integers.
pub fn int_two_point(t: f64) -> TwoPoint {
    let lo = t.floor();
    let hi = t.ceil();
    if lo == hi {
        return TwoPoint::point(t);
    }
    TwoPoint {
        low: lo,
        high: hi,
        p_low: hi - t,
    }
}

/// Bit-level natural compression: subnormals flush to `+0`; a result of
/// infinity means the input was non-finite or rounded up to `2^128`. The top
/// 23 bits `r` of the draw pick the low endpoint iff `r < 2^23 − mantissa`,
/// i.e. with probability exactly `1 − m`.
#[inline(always)]
fn nat_bits(bits: u32, draw: u64) -> u32 {
    let exp = (bits >> MANTISSA_BITS) & EXP_MASK;
    if exp == 0 {
        return 0;
    }
    if exp == EXP_MASK {
        return EXP_MASK << MANTISSA_BITS;
    }
    let mant = bits & MANTISSA_MASK;
    let r = (draw >> (64 - MANTISSA_BITS)) as u32;
    let up = (r >= (1 << MANTISSA_BITS) - mant) as u32;
    (bits & !MANTISSA_MASK) + (up << MANTISSA_BITS)
}

/// Natural compression of one scalar driven by 64 raw random bits.
#[inline]
pub(crate) fn nat_with_bits(t: f32, draw: u64) -> Result<f32> {
    let out = f32::from_bits(nat_bits(t.to_bits(), draw));
    if out.is_finite() {
        Ok(out)
    } else if !t.is_finite() {
        Err(Error::InvalidInput(format!("non-finite scalar {t}")))
    } else {
        Err(Error::InvalidInput(format!(
            "{t} rounds up to 2^128, outside binary32"
        )))
    }
}

/// `C_nat(t)` using draw 0 of `rng`.
pub fn c_nat_scalar(t: f32, rng: &RngStream) -> Result<f32> {
    check_finite(t)?;
    nat_with_bits(t, rng.bits_at(0))
}

#[inline]
fn int_with_uniform(t: f32, u: f64) -> f32 {
    let law = int_two_point(t as f64);
    if u < law.p_low {
        law.low as f32
    } else {
        law.high as f32
    }
}

/// Unbiased integer rounding using draw 0 of `rng`.
pub fn c_int_scalar(t: f32, rng: &RngStream) -> Result<f32> {
    check_finite(t)?;
    Ok(int_with_uniform(t, rng.uniform_at(0)))
}

/// `S^q(x) = (d/q) · ξ ∘ x` with ξ uniform over q-subsets (partial Fisher–Yates).
pub fn sparsify(x: &DenseVector, q: usize, rng: &RngStream) -> Result<DenseVector> {
    let d = x.len();
    if q == 0 || q > d {
        return Err(Error::Config(format!(
            "sparsify q={q} must satisfy 1 <= q <= d={d}"
        )));
    }
    if q == d {
        return Ok(x.clone());
    }
    let mut cursor = rng.cursor();
    let mut idx: Vec<usize> = (0..d).collect();
    for j in 0..q {
        let k = cursor.random_range(j..d);
        idx.swap(j, k);
    }
    let scale = d as f64 / q as f64;
    let src = x.as_slice();
    let mut out = vec![0.0f32; d];
    for &i in &idx[..q] {
        out[i] = (src[i] as f64 * scale) as f32;
    }
    Ok(DenseVector::from_trusted(out))
}

/// Applies `spec` to `x`; the decompressed, real-valued result.
pub fn compress(x: &DenseVector, spec: &CompressorSpec, rng: &RngStream) -> Result<DenseVector> {
    spec.validate(x.len())?;
    apply(x, spec, rng)
}

fn apply(x: &DenseVector, spec: &CompressorSpec, rng: &RngStream) -> Result<DenseVector> {
    match spec {
        CompressorSpec::Identity => Ok(x.clone()),
        CompressorSpec::Nat => {
            let src = x.as_slice();
            let out: Vec<f32> = src
                .iter()
                .enumerate()
                .map(|(i, &t)| {
                    // zeros cost no draw, which keeps sparse inputs cheap
                    if t == 0.0 {
                        0.0
                    } else {
                        f32::from_bits(nat_bits(t.to_bits(), rng.bits_at(i as u64)))
                    }
                })
                .collect();
            if let Some(i) = out.iter().position(|v| !v.is_finite()) {
                nat_with_bits(src[i], rng.bits_at(i as u64))?;
            }
            Ok(DenseVector::from_trusted(out))
        }
        CompressorSpec::IntRound => {
            let out = x
                .as_slice()
                .iter()
                .enumerate()
                .map(|(i, &t)| int_with_uniform(t, rng.uniform_at(i as u64)))
                .collect();
            Ok(DenseVector::from_trusted(out))
        }
        CompressorSpec::StdDither { p, s } => {
            let ladder = LevelLadder::linear(*s)?;
            dither::dither_values(x, &ladder, *p, crate::spec::NormMode::Exact, rng)
        }
        CompressorSpec::NatDither { p, s, norm } => {
            let ladder = LevelLadder::geometric(*s)?;
            dither::dither_values(x, &ladder, *p, *norm, rng)
        }
        CompressorSpec::Sparsify { q } => sparsify(x, *q, rng),
        CompressorSpec::Compose(chain) => {
            let mut y = x.clone();
            for (stage, c) in chain.iter().enumerate().rev() {
                y = apply(&y, c, &rng.substream(stage as u64))?;
            }
            Ok(y)
        }
    }
}

/// Anything that maps a vector to a random vector given a stream.
pub trait Compressor: Sync {
    fn compress(&self, x: &DenseVector, rng: &RngStream) -> Result<DenseVector>;
}

impl Compressor for CompressorSpec {
    fn compress(&self, x: &DenseVector, rng: &RngStream) -> Result<DenseVector> {
        compress(x, self, rng)
    }
}
