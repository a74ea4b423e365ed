//! Bit-exact wire formats.
//!
//! Every block starts with a 14-byte header: magic `NCMP`, version `0x01`,
//! a codec id and the dimension `d` as little-endian `u64`. Payloads are
//! bit-packed most-significant-bit first and zero-padded to a whole byte.
//!
//! | codec  | id   | per scalar                                          |
//! |--------|------|-----------------------------------------------------|
//! | NAT9   | 0x01 | `[sign][8-bit biased exponent]`, exponent 0 = zero  |
//! | NAT8C  | 0x02 | `[zero flag][sign][6-bit offset k + 50]`, k clipped to −50..=10 |
//! | DITHER | 0x03 | `[sign][L-bit level index]`, `L = ceil(log2(s + 1))` |
//!
//! DITHER blocks carry extra parameters after the header: norm code (1, 2,
//! 255 = ∞), `s`, a flags byte (bit 0 = nat-compressed norm, bit 1 = geometric
//! ladder), then the norm as binary32 (4 bytes) or as `{sign, biased
//! exponent}` (2 bytes) when nat-compressed.

use std::collections::BTreeMap;

use crate::dither::{self, DitherResult, LadderKind, LevelLadder};
use crate::error::{Error, Result};
use crate::spec::{CompressorSpec, NormKind, NormMode};
use crate::vector::DenseVector;

pub const MAGIC: [u8; 4] = *b"NCMP";
pub const VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 14;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum CodecId {
    Nat9 = 0x01,
    Nat8c = 0x02,
    Dither = 0x03,
}

impl CodecId {
    fn from_byte(b: u8) -> Result<Self> {
        match b {
            0x01 => Ok(CodecId::Nat9),
            0x02 => Ok(CodecId::Nat8c),
            0x03 => Ok(CodecId::Dither),
            other => Err(Error::Format(format!("unknown codec id {other:#04x}"))),
        }
    }
}

/// Sign, biased exponent and 23-bit mantissa of a binary32 value.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Binary32Fields {
    pub sign: u8,
    pub exponent: u8,
    pub mantissa: u32,
}

impl Binary32Fields {
    /// Mantissa as the fraction `m = Σ m_j 2^{-j}`.
    pub fn fraction(&self) -> f64 {
        self.mantissa as f64 / (1u32 << 23) as f64
    }

    /// Bit `m_j`, `j` in `1..=23`, most significant first.
    pub fn mantissa_bit(&self, j: u32) -> u8 {
        assert!((1..=23).contains(&j));
        ((self.mantissa >> (23 - j)) & 1) as u8
    }

    pub fn to_f32(&self) -> f32 {
        f32::from_bits(((self.sign as u32) << 31) | ((self.exponent as u32) << 23) | self.mantissa)
    }

    /// `(−1)^s · 2^{e−127} · (1 + m)`; meaningful for normal values.
    pub fn reconstruct(&self) -> f64 {
        let sign = if self.sign == 1 { -1.0 } else { 1.0 };
        sign * (self.exponent as f64 - 127.0).exp2() * (1.0 + self.fraction())
    }
}

pub fn split_binary32(t: f32) -> Result<Binary32Fields> {
    if !t.is_finite() {
        return Err(Error::InvalidInput(format!("cannot split non-finite {t}")));
    }
    let b = t.to_bits();
    Ok(Binary32Fields {
        sign: (b >> 31) as u8,
        exponent: ((b >> 23) & 0xff) as u8,
        mantissa: b & 0x7f_ffff,
    })
}

/// Serialized compressed vector, header included.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedBlock {
    bytes: Vec<u8>,
}

impl EncodedBlock {
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        Self { bytes }
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }

    pub fn payload(&self) -> &[u8] {
        &self.bytes[HEADER_LEN.min(self.bytes.len())..]
    }
}

struct BitWriter {
    out: Vec<u8>,
    acc: u64,
    nbits: u32,
}

impl BitWriter {
    fn new(out: Vec<u8>) -> Self {
        Self { out, acc: 0, nbits: 0 }
    }

    fn put(&mut self, value: u32, width: u32) {
        debug_assert!(width <= 32 && (width == 32 || value >> width == 0));
        self.acc = (self.acc << width) | value as u64;
        self.nbits += width;
        while self.nbits >= 8 {
            self.nbits -= 8;
            self.out.push((self.acc >> self.nbits) as u8);
        }
        self.acc &= (1u64 << self.nbits) - 1;
    }

    fn finish(mut self) -> Vec<u8> {
        if self.nbits > 0 {
            self.out.push((self.acc << (8 - self.nbits)) as u8);
        }
        self.out
    }
}

struct BitReader<'a> {
    data: &'a [u8],
    bit: usize,
}

impl<'a> BitReader<'a> {
    fn new(data: &'a [u8]) -> Self {
        Self { data, bit: 0 }
    }

    fn get(&mut self, width: u32) -> u32 {
        let mut v = 0u32;
        for _ in 0..width {
            let byte = self.data[self.bit / 8];
            let b = (byte >> (7 - self.bit % 8)) & 1;
            v = (v << 1) | b as u32;
            self.bit += 1;
        }
        v
    }
}

fn header(codec: CodecId, d: usize) -> Vec<u8> {
    let mut h = Vec::with_capacity(HEADER_LEN);
    h.extend_from_slice(&MAGIC);
    h.push(VERSION);
    h.push(codec as u8);
    h.extend_from_slice(&(d as u64).to_le_bytes());
    h
}

fn payload_len(bits_per_scalar: u64, d: u64) -> Result<usize> {
    bits_per_scalar
        .checked_mul(d)
        .map(|b| b.div_ceil(8))
        .and_then(|b| usize::try_from(b).ok())
        .ok_or_else(|| Error::Format(format!("dimension {d} too large")))
}

/// Biased exponent of a power of two or zero; `None` otherwise.
fn power_of_two_field(v: f32) -> Option<(u8, u8)> {
    if v == 0.0 {
        return Some((0, 0));
    }
    let f = split_binary32(v).ok()?;
    (f.mantissa == 0 && f.exponent != 0 && f.exponent != 255).then_some((f.sign, f.exponent))
}

pub fn encode_nat9(x: &DenseVector) -> Result<EncodedBlock> {
    let mut w = BitWriter::new(header(CodecId::Nat9, x.len()));
    for (i, &v) in x.as_slice().iter().enumerate() {
        let (sign, e) = power_of_two_field(v).ok_or_else(|| {
            Error::Encode(format!("coordinate {i} = {v} is not zero or a normal power of two"))
        })?;
        w.put(((sign as u32) << 8) | e as u32, 9);
    }
    Ok(EncodedBlock::from_bytes(w.finish()))
}

/// Scalar layer of the 8-bit clipped format, shared with the aggregation service.
pub mod nat8c {
    use super::*;

    pub const ZERO_FLAG: u8 = 0x80;
    pub const SIGN_BIT: u8 = 0x40;
    pub const OFFSET_MASK: u8 = 0x3f;
    pub const MIN_EXP: i32 = -50;
    pub const MAX_EXP: i32 = 10;
    /// Offset of `k`: `k − MIN_EXP`, in `0..=60`.
    pub const MAX_OFFSET: u8 = (MAX_EXP - MIN_EXP) as u8;
    pub const ZERO_CODE: u8 = ZERO_FLAG;

    /// Code for a power of two or zero, and whether its exponent was clipped.
    pub fn encode_scalar(v: f32) -> Result<(u8, bool)> {
        let (sign, e) = power_of_two_field(v)
            .ok_or_else(|| Error::Encode(format!("{v} is not zero or a normal power of two")))?;
        if e == 0 {
            return Ok((ZERO_CODE, false));
        }
        let k = e as i32 - 127;
        let clipped = k.clamp(MIN_EXP, MAX_EXP);
        let code = ((sign << 6) & SIGN_BIT) | (clipped - MIN_EXP) as u8;
        Ok((code, clipped != k))
    }

    pub fn decode_scalar(code: u8) -> Result<f32> {
        if code & ZERO_FLAG != 0 {
            if code != ZERO_CODE {
                return Err(Error::Format(format!("zero code {code:#04x} has stray bits")));
            }
            return Ok(0.0);
        }
        let offset = code & OFFSET_MASK;
        if offset > MAX_OFFSET {
            return Err(Error::Format(format!("exponent offset {offset} outside 0..=60")));
        }
        let mag = ((offset as i32) + MIN_EXP) as f32;
        let v = mag.exp2();
        Ok(if code & SIGN_BIT != 0 { -v } else { v })
    }
}

/// 8-bit clipped encoding; also returns how many coordinates were clipped.
pub fn encode_nat8c(x: &DenseVector) -> Result<(EncodedBlock, usize)> {
    let mut bytes = header(CodecId::Nat8c, x.len());
    let mut clipped = 0;
    for &v in x.as_slice() {
        let (code, c) = nat8c::encode_scalar(v)?;
        clipped += c as usize;
        bytes.push(code);
    }
    Ok((EncodedBlock::from_bytes(bytes), clipped))
}

/// Level-index width for a ladder with `s + 1` codes.
pub fn level_bits(s: u32) -> u32 {
    assert!(s >= 1);
    32 - s.leading_zeros()
}

/// Wire-level content of a dithered vector.
#[derive(Clone, Debug, PartialEq)]
pub struct DitherPayload {
    pub p: NormKind,
    pub s: u32,
    pub kind: LadderKind,
    pub norm_mode: NormMode,
    pub norm: f32,
    pub signs: Vec<i8>,
    pub level_indices: Vec<u32>,
}

impl DitherPayload {
    pub fn ladder(&self) -> Result<LevelLadder> {
        LevelLadder::new(self.kind, self.s)
    }

    pub fn to_vector(&self) -> Result<DenseVector> {
        Ok(dither::reconstruct(self.norm, &self.signs, &self.level_indices, &self.ladder()?))
    }
}

impl From<&DitherResult> for DitherPayload {
    fn from(r: &DitherResult) -> Self {
        Self {
            p: r.p,
            s: r.ladder.s(),
            kind: r.ladder.kind(),
            norm_mode: r.norm_mode,
            norm: r.norm_value,
            signs: r.signs.clone(),
            level_indices: r.level_indices.clone(),
        }
    }
}

pub fn encode_dither(payload: &DitherPayload) -> Result<EncodedBlock> {
    let d = payload.signs.len();
    if payload.level_indices.len() != d {
        return Err(Error::Encode("signs and level indices differ in length".into()));
    }
    let s = payload.s;
    if !(1..=255).contains(&s) {
        return Err(Error::Encode(format!("s={s} outside 1..=255")));
    }
    let mut bytes = header(CodecId::Dither, d);
    bytes.push(payload.p.code());
    bytes.push(s as u8);
    let mut flags = 0u8;
    if payload.norm_mode == NormMode::NatCompressed {
        flags |= 1;
    }
    if payload.kind == LadderKind::Geometric {
        flags |= 2;
    }
    bytes.push(flags);
    if !(payload.norm.is_finite() && payload.norm >= 0.0) {
        return Err(Error::Encode(format!("norm {} must be finite and nonnegative", payload.norm)));
    }
    match payload.norm_mode {
        NormMode::Exact => bytes.extend_from_slice(&payload.norm.to_le_bytes()),
        NormMode::NatCompressed => {
            let (sign, e) = power_of_two_field(payload.norm)
                .ok_or_else(|| Error::Encode(format!("norm {} is not a power of two", payload.norm)))?;
            bytes.push(sign);
            bytes.push(e);
        }
    }
    let width = level_bits(s);
    let mut w = BitWriter::new(bytes);
    for (i, (&sg, &u)) in payload.signs.iter().zip(&payload.level_indices).enumerate() {
        if u > s {
            return Err(Error::Encode(format!("level index {u} at {i} exceeds s={s}")));
        }
        if sg != 1 && sg != -1 {
            return Err(Error::Encode(format!("sign {sg} at {i} is not ±1")));
        }
        w.put((sg < 0) as u32, 1);
        w.put(u, width);
    }
    Ok(EncodedBlock::from_bytes(w.finish()))
}

/// Result of [`decode`].
#[derive(Clone, Debug, PartialEq)]
pub enum Decoded {
    Nat9(DenseVector),
    Nat8c(DenseVector),
    Dither(DitherPayload),
}

impl Decoded {
    pub fn to_vector(&self) -> Result<DenseVector> {
        match self {
            Decoded::Nat9(v) | Decoded::Nat8c(v) => Ok(v.clone()),
            Decoded::Dither(p) => p.to_vector(),
        }
    }
}

fn expect_len(data: &[u8], want: usize) -> Result<()> {
    match data.len().cmp(&want) {
        std::cmp::Ordering::Equal => Ok(()),
        std::cmp::Ordering::Less => Err(Error::Format(format!(
            "truncated payload: {} of {want} bytes",
            data.len()
        ))),
        std::cmp::Ordering::Greater => Err(Error::Format(format!(
            "{} trailing bytes after payload",
            data.len() - want
        ))),
    }
}

pub fn decode(bytes: &[u8]) -> Result<Decoded> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format("block shorter than header".into()));
    }
    if bytes[..4] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    if bytes[4] != VERSION {
        return Err(Error::Format(format!("unsupported version {}", bytes[4])));
    }
    let codec = CodecId::from_byte(bytes[5])?;
    let d64 = u64::from_le_bytes(bytes[6..14].try_into().expect("8 bytes"));
    let rest = &bytes[HEADER_LEN..];
    match codec {
        CodecId::Nat9 => {
            expect_len(rest, payload_len(9, d64)?)?;
            let d = d64 as usize;
            let mut r = BitReader::new(rest);
            let mut out = Vec::with_capacity(d);
            for i in 0..d {
                let sign = r.get(1);
                let e = r.get(8);
                let v = match (sign, e) {
                    (0, 0) => 0.0,
                    (1, 0) => return Err(Error::Format(format!("negative zero code at {i}"))),
                    (_, 255) => return Err(Error::Format(format!("reserved exponent 255 at {i}"))),
                    (s, e) => f32::from_bits((s << 31) | (e << 23)),
                };
                out.push(v);
            }
            Ok(Decoded::Nat9(DenseVector::from_trusted(out)))
        }
        CodecId::Nat8c => {
            expect_len(rest, payload_len(8, d64)?)?;
            let out = rest
                .iter()
                .map(|&c| nat8c::decode_scalar(c))
                .collect::<Result<Vec<_>>>()?;
            Ok(Decoded::Nat8c(DenseVector::from_trusted(out)))
        }
        CodecId::Dither => {
            if rest.len() < 3 {
                return Err(Error::Format("truncated dither parameters".into()));
            }
            let p = NormKind::from_code(rest[0]).map_err(|e| Error::Format(e.to_string()))?;
            let s = rest[1] as u32;
            if s == 0 {
                return Err(Error::Format("dither block with s = 0".into()));
            }
            let flags = rest[2];
            if flags & !3 != 0 {
                return Err(Error::Format(format!("unknown dither flags {flags:#04x}")));
            }
            let norm_mode = if flags & 1 != 0 {
                NormMode::NatCompressed
            } else {
                NormMode::Exact
            };
            let kind = if flags & 2 != 0 {
                LadderKind::Geometric
            } else {
                LadderKind::Linear
            };
            let (norm, rest) = match norm_mode {
                NormMode::Exact => {
                    if rest.len() < 7 {
                        return Err(Error::Format("truncated norm".into()));
                    }
                    let n = f32::from_le_bytes(rest[3..7].try_into().expect("4 bytes"));
                    if !(n.is_finite() && n >= 0.0) {
                        return Err(Error::Format(format!("invalid norm {n}")));
                    }
                    (n, &rest[7..])
                }
                NormMode::NatCompressed => {
                    if rest.len() < 5 {
                        return Err(Error::Format("truncated norm".into()));
                    }
                    let (sign, e) = (rest[3], rest[4]);
                    let n = match (sign, e) {
                        (0, 0) => 0.0,
                        (_, 255) => return Err(Error::Format("reserved norm exponent".into())),
                        (0, e) => f32::from_bits((e as u32) << 23),
                        _ => return Err(Error::Format("negative norm".into())),
                    };
                    (n, &rest[5..])
                }
            };
            let width = level_bits(s);
            expect_len(rest, payload_len(1 + width as u64, d64)?)?;
            let d = d64 as usize;
            let mut r = BitReader::new(rest);
            let mut signs = Vec::with_capacity(d);
            let mut level_indices = Vec::with_capacity(d);
            for i in 0..d {
                signs.push(if r.get(1) == 1 { -1 } else { 1 });
                let u = r.get(width);
                if u > s {
                    return Err(Error::Format(format!("level index {u} at {i} exceeds s={s}")));
                }
                level_indices.push(u);
            }
            Ok(Decoded::Dither(DitherPayload {
                p,
                s,
                kind,
                norm_mode,
                norm,
                signs,
                level_indices,
            }))
        }
    }
}

/// Counts of `floor(log2 |x_i|)` over nonzero coordinates.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ExponentHistogram {
    pub counts: BTreeMap<i32, u64>,
    pub zeros: u64,
}

impl ExponentHistogram {
    pub fn min_exponent(&self) -> Option<i32> {
        self.counts.keys().next().copied()
    }

    pub fn max_exponent(&self) -> Option<i32> {
        self.counts.keys().next_back().copied()
    }
}

pub fn exponent_histogram(x: &DenseVector) -> ExponentHistogram {
    let mut h = ExponentHistogram::default();
    for &v in x.as_slice() {
        if v == 0.0 {
            h.zeros += 1;
            continue;
        }
        // binary64 keeps binary32 subnormals normal, so its exponent field is exact.
        let e = (((v as f64).to_bits() >> 52) & 0x7ff) as i32 - 1023;
        *h.counts.entry(e).or_default() += 1;
    }
    h
}

fn ceil_log2(d: usize) -> u64 {
    if d <= 1 {
        0
    } else {
        (usize::BITS - (d - 1).leading_zeros()) as u64
    }
}

fn dense_bits(spec: &CompressorSpec, d: usize) -> u64 {
    let d64 = d as u64;
    match spec {
        CompressorSpec::Nat => 9 * d64,
        CompressorSpec::StdDither { s, .. } => 32 + d64 * (1 + level_bits(*s) as u64),
        CompressorSpec::NatDither { s, norm, .. } => {
            let norm_bits = if *norm == NormMode::Exact { 32 } else { 16 };
            norm_bits + d64 * (1 + level_bits(*s) as u64)
        }
        CompressorSpec::Compose(chain) => dense_bits(&chain[0], d),
        _ => 32 * d64,
    }
}

fn min_kept(spec: &CompressorSpec) -> Option<usize> {
    match spec {
        CompressorSpec::Sparsify { q } => Some(*q),
        CompressorSpec::Compose(chain) => chain.iter().filter_map(min_kept).min(),
        _ => None,
    }
}

/// Payload bits (header excluded) needed to ship one output of `spec`.
///
/// Dense outputs follow the codec size laws: 32 bits raw, 9 for NAT9, norm
/// plus `1 + L` per coordinate for DITHER. Outputs of a chain containing a
/// sparsifier are shipped as `q` (index, value) pairs with `ceil(log2 d)`
/// index bits and the outermost operator's value width.
pub fn payload_bits(spec: &CompressorSpec, d: usize) -> u64 {
    match min_kept(spec) {
        Some(q) => {
            let outer = match spec {
                CompressorSpec::Compose(chain) => &chain[0],
                other => other,
            };
            let values = match outer {
                CompressorSpec::Sparsify { .. } => 32 * q as u64,
                other => dense_bits(other, q),
            };
            values + q as u64 * ceil_log2(d)
        }
        None => dense_bits(spec, d),
    }
}
