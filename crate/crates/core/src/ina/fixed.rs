//! Integer-only aggregation arithmetic.
//!
//! A value `±2^k` with `k` in `-50..=10` is held as the signed integer
//! `±2^(k+50)`. Sums saturate at `±2^62`. Nothing in this file may use
//! floating point; a test scans the source to keep it that way.

/// Zero code of the 8-bit clipped format.
pub const ZERO_CODE: u8 = 0x80;
const ZERO_FLAG: u8 = 0x80;
const SIGN_BIT: u8 = 0x40;
const OFFSET_MASK: u8 = 0x3f;
/// Largest valid exponent offset (`k = 10`).
pub const MAX_OFFSET: u32 = 60;
/// Accumulator magnitude cap.
pub const SATURATION: i64 = 1 << 62;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CodeError {
    /// Zero flag set together with other bits.
    StrayZeroBits(u8),
    /// Exponent offset above 60.
    OffsetOutOfRange(u8),
}

/// Fixed-point value of one 8-bit code.
#[inline]
pub fn decode_fixed(code: u8) -> Result<i64, CodeError> {
    if code & ZERO_FLAG != 0 {
        return if code == ZERO_CODE {
            Ok(0)
        } else {
            Err(CodeError::StrayZeroBits(code))
        };
    }
    let offset = code & OFFSET_MASK;
    if offset as u32 > MAX_OFFSET {
        return Err(CodeError::OffsetOutOfRange(code));
    }
    let mag = 1i64 << offset;
    Ok(if code & SIGN_BIT != 0 { -mag } else { mag })
}

/// Adds one worker's codes into `acc`; returns how many elements saturated.
pub fn accumulate(acc: &mut [i64], codes: &[u8]) -> Result<u64, CodeError> {
    debug_assert_eq!(acc.len(), codes.len());
    let mut saturated = 0u64;
    for (a, &c) in acc.iter_mut().zip(codes) {
        let v = decode_fixed(c)?;
        let s = a.saturating_add(v);
        if s > SATURATION {
            *a = SATURATION;
            saturated += 1;
        } else if s < -SATURATION {
            *a = -SATURATION;
            saturated += 1;
        } else {
            *a = s;
        }
    }
    Ok(saturated)
}

/// Exponent offsets `(a, a + 1)` bracketing `|sum|` and the threshold such
/// that the upper one is chosen iff `draw mod 2^a < threshold`.
#[inline]
pub fn bracket(sum: i64) -> (u32, u32, u64) {
    let mag = sum.unsigned_abs();
    debug_assert!(mag != 0);
    let a = 63 - mag.leading_zeros();
    let rem = mag - (1u64 << a);
    (a, a + 1, rem)
}

/// Stochastically rounds `sum` to a bracketing power of two using the low
/// `a` bits of `draw`, and re-encodes it. The flag reports exponent clipping.
#[inline]
pub fn recompress(sum: i64, draw: u64) -> (u8, bool) {
    if sum == 0 {
        return (ZERO_CODE, false);
    }
    let (a, _, rem) = bracket(sum);
    let r = if a == 0 { 0 } else { draw & ((1u64 << a) - 1) };
    let e = if r < rem { a + 1 } else { a };
    let (offset, clipped) = if e > MAX_OFFSET { (MAX_OFFSET, true) } else { (e, false) };
    let sign = if sum < 0 { SIGN_BIT } else { 0 };
    (sign | offset as u8, clipped)
}
