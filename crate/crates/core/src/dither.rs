//! General dithering: normalise by a p-norm, randomly round each normalised
//! magnitude between two adjacent levels of a ladder, and ship
//! `norm · sign · level`.
//!
//! Two ladders are provided. The linear ladder `l_u = (s − u)/s` gives standard
//! dithering; the geometric ladder `1, 1/2, …, 2^{1−s}, 0` gives natural
//! dithering, whose brackets are found from the binary exponent of `y`.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::ops::nat_with_bits;
use crate::rng::RngStream;
use crate::spec::{NormKind, NormMode};
use crate::vector::DenseVector;

const NORM_TAG: u64 = u64::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LadderKind {
    Linear,
    Geometric,
}

/// Descending levels `l_0 = 1 > l_1 > … > l_{s−1} > l_s = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LevelLadder {
    kind: LadderKind,
    s: u32,
}

/// The two ladder indices around a normalised magnitude.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bracket {
    /// Index of the level `>= y`.
    pub upper: u32,
    /// Index of the level `<= y`; equal to `upper` when `y` sits on a level.
    pub lower: u32,
    /// Probability of rounding to `upper`.
    pub p_upper: f64,
}

impl LevelLadder {
    pub fn new(kind: LadderKind, s: u32) -> Result<Self> {
        if s == 0 {
            return Err(Error::Config("a ladder needs s >= 1".into()));
        }
        if kind == LadderKind::Geometric && s > 1070 {
            return Err(Error::Config(format!("geometric ladder s={s} underflows binary64")));
        }
        Ok(Self { kind, s })
    }

    pub fn linear(s: u32) -> Result<Self> {
        Self::new(LadderKind::Linear, s)
    }

    pub fn geometric(s: u32) -> Result<Self> {
        Self::new(LadderKind::Geometric, s)
    }

    pub fn kind(&self) -> LadderKind {
        self.kind
    }

    pub fn s(&self) -> u32 {
        self.s
    }

    /// Level value `l_u`; index `s` is zero.
    pub fn level(&self, u: u32) -> f64 {
        debug_assert!(u <= self.s);
        if u >= self.s {
            return 0.0;
        }
        match self.kind {
            LadderKind::Linear => (self.s - u) as f64 / self.s as f64,
            // 2^{-u} straight from its exponent field while it is normal
            LadderKind::Geometric if u <= 1022 => f64::from_bits((1023 - u as u64) << 52),
            LadderKind::Geometric => (-(u as f64)).exp2(),
        }
    }

    pub fn levels(&self) -> Vec<f64> {
        (0..=self.s).map(|u| self.level(u)).collect()
    }

    /// Locates `y ∈ [0, 1]` between two adjacent levels.
    pub fn bracket(&self, y: f64) -> Bracket {
        debug_assert!((0.0..=1.0).contains(&y), "y = {y}");
        let s = self.s;
        if y <= 0.0 {
            return self.exact(s);
        }
        if y >= 1.0 {
            return self.exact(0);
        }
        let (upper, lower, p_upper) = match self.kind {
            LadderKind::Linear => {
                let z = y * s as f64;
                // z >= 0, so truncation is floor
                let k = (z as u32).min(s);
                if k as f64 == z {
                    return self.exact(s - k);
                }
                // levels k/s and (k+1)/s
                (s - k - 1, s - k, z - k as f64)
            }
            LadderKind::Geometric => {
                // y normal and < 1: its binary exponent is floor(log2 y) exactly.
                let e = ((y.to_bits() >> 52) & 0x7ff) as i64 - 1023;
                let k = (-e) as u64;
                let on_level = y.to_bits() & ((1u64 << 52) - 1) == 0;
                if k >= s as u64 {
                    // levels 0 and 2^{1−s}
                    (s - 1, s, y * pow2(s as i64 - 1))
                } else if on_level {
                    return self.exact(k as u32);
                } else {
                    // levels 2^{−k} and 2^{1−k}; y·2^k − 1 is exact
                    (k as u32 - 1, k as u32, y * pow2(k as i64) - 1.0)
                }
            }
        };
        Bracket {
            upper,
            lower,
            p_upper: p_upper.clamp(0.0, 1.0),
        }
    }

    fn exact(&self, u: u32) -> Bracket {
        Bracket {
            upper: u,
            lower: u,
            p_upper: 1.0,
        }
    }
}

/// `2^e` for `e` in the normal binary64 range.
#[inline]
fn pow2(e: i64) -> f64 {
    if (-1022..=1023).contains(&e) {
        f64::from_bits(((1023 + e) as u64) << 52)
    } else {
        (e as f64).exp2()
    }
}

/// Output of one dithering draw, in wire-ready form plus its reconstruction.
#[derive(Clone, Debug, PartialEq)]
pub struct DitherResult {
    pub ladder: LevelLadder,
    pub p: NormKind,
    pub norm_mode: NormMode,
    /// The norm actually transmitted (binary32, or a power of two when nat-compressed).
    pub norm_value: f32,
    pub signs: Vec<i8>,
    pub level_indices: Vec<u32>,
    pub reconstructed: DenseVector,
}

/// Rebuilds `norm · sign_i · l_{u_i}` in binary64 and rounds once to binary32.
pub fn reconstruct(norm_value: f32, signs: &[i8], level_indices: &[u32], ladder: &LevelLadder) -> DenseVector {
    let levels = ladder.levels();
    let out = signs
        .iter()
        .zip(level_indices)
        .map(|(&sg, &u)| (norm_value as f64 * sg as f64 * levels[u as usize]) as f32)
        .collect();
    DenseVector::from_trusted(out)
}

/// Binary64 norm rounded up to binary32 so every `|x_i| / norm <= 1`.
fn wire_norm(norm: f64) -> Result<f32> {
    let mut n = norm as f32;
    if (n as f64) < norm {
        n = n.next_up();
    }
    if !n.is_finite() {
        return Err(Error::InvalidInput(format!("norm {norm} overflows binary32")));
    }
    Ok(n)
}

/// The binary32 norm used for normalising, and the one transmitted.
fn wire_norms(norm64: f64, norm_mode: NormMode, rng: &RngStream) -> Result<(f64, f32)> {
    let norm = wire_norm(norm64)?;
    let norm_value = match norm_mode {
        NormMode::Exact => norm,
        NormMode::NatCompressed => nat_with_bits(norm, rng.substream(NORM_TAG).bits_at(0))?,
    };
    Ok((norm as f64, norm_value))
}

/// Linear-ladder level for `y` under draw `u`. `z >= 0`, so truncation is
/// floor; on a level `z − k = 0` and `u < 0` never holds.
#[inline(always)]
fn linear_level(s: u32, y: f64, u: f64) -> u32 {
    let z = y * s as f64;
    let k = (z as u32).min(s);
    s - k - (u < z - k as f64) as u32
}

/// Geometric-ladder level for `y` under draw `u`; needs `s <= 1022`.
#[inline(always)]
fn geometric_level(s: u32, y: f64, u: f64) -> u32 {
    if y <= 0.0 {
        return s;
    }
    let k = 1023 - ((y.to_bits() >> 52) & 0x7ff) as i64;
    if k >= s as i64 {
        s - (u < y * pow2(s as i64 - 1)) as u32
    } else {
        k as u32 - (u < y * pow2(k) - 1.0) as u32
    }
}

/// Level index chosen for `y = |x_i| / norm` under uniform draw `u`: the
/// upper level iff `u < p_upper` of [`LevelLadder::bracket`].
#[inline]
fn choose_level(ladder: &LevelLadder, y: f64, u: f64) -> u32 {
    match ladder.kind {
        LadderKind::Linear => linear_level(ladder.s, y, u),
        LadderKind::Geometric if ladder.s <= 1022 => geometric_level(ladder.s, y, u),
        LadderKind::Geometric => {
            let b = ladder.bracket(y);
            if u < b.p_upper {
                b.upper
            } else {
                b.lower
            }
        }
    }
}

#[inline]
fn level_index(ladder: &LevelLadder, xi: f32, norm: f64, rng: &RngStream, i: usize) -> u32 {
    choose_level(ladder, (xi as f64).abs() / norm, rng.uniform_at(i as u64))
}

#[inline(always)]
fn fill_values(x: &[f32], norm: f64, norm_value: f64, levels: &[f64], rng: &RngStream, pick: impl Fn(f64, f64) -> u32) -> Vec<f32> {
    x.iter()
        .enumerate()
        .map(|(i, &xi)| {
            let sg = if xi < 0.0 { -1.0 } else { 1.0 };
            let u = pick((xi as f64).abs() / norm, rng.uniform_at(i as u64));
            (norm_value * sg * levels[u as usize]) as f32
        })
        .collect()
}

/// `dither(..).reconstructed` without materialising the wire form.
pub fn dither_values(
    x: &DenseVector,
    ladder: &LevelLadder,
    p: NormKind,
    norm_mode: NormMode,
    rng: &RngStream,
) -> Result<DenseVector> {
    let norm64 = x.norm(p);
    if norm64 == 0.0 {
        return Ok(DenseVector::zeros(x.len()));
    }
    let (norm, norm_value) = wire_norms(norm64, norm_mode, rng)?;
    let levels = ladder.levels();
    let nv = norm_value as f64;
    let xs = x.as_slice();
    let s = ladder.s;
    let out = match ladder.kind {
        LadderKind::Linear => fill_values(xs, norm, nv, &levels, rng, |y, u| linear_level(s, y, u)),
        LadderKind::Geometric if s <= 1022 => fill_values(xs, norm, nv, &levels, rng, |y, u| geometric_level(s, y, u)),
        LadderKind::Geometric => fill_values(xs, norm, nv, &levels, rng, |y, u| choose_level(ladder, y, u)),
    };
    Ok(DenseVector::from_trusted(out))
}

/// One draw of the general dithering operator. Coordinate `i` uses draw `i` of
/// `rng`; the norm compression uses a dedicated substream.
pub fn dither(
    x: &DenseVector,
    ladder: &LevelLadder,
    p: NormKind,
    norm_mode: NormMode,
    rng: &RngStream,
) -> Result<DitherResult> {
    let d = x.len();
    let s = ladder.s();
    let norm64 = x.norm(p);
    if norm64 == 0.0 {
        return Ok(DitherResult {
            ladder: *ladder,
            p,
            norm_mode,
            norm_value: 0.0,
            signs: vec![1; d],
            level_indices: vec![s; d],
            reconstructed: DenseVector::zeros(d),
        });
    }
    let (norm, norm_value) = wire_norms(norm64, norm_mode, rng)?;
    let mut signs = Vec::with_capacity(d);
    let mut level_indices = Vec::with_capacity(d);
    for (i, &xi) in x.as_slice().iter().enumerate() {
        signs.push(if xi < 0.0 { -1 } else { 1 });
        level_indices.push(level_index(ladder, xi, norm, rng, i));
    }
    let reconstructed = reconstruct(norm_value, &signs, &level_indices, ladder);
    Ok(DitherResult {
        ladder: *ladder,
        p,
        norm_mode,
        norm_value,
        signs,
        level_indices,
        reconstructed,
    })
}

/// `d^{1/r} · step · min(1, d^{1/r} · step)`: the level-rounding excess shared by
/// both ladders, with `step` the width of the bottom bracket.
fn rounding_excess(d: usize, p: NormKind, step: f64) -> f64 {
    let a = (d as f64).powf(1.0 / p.r()) * step;
    a * a.min(1.0)
}

/// Second-moment parameter of natural dithering.
///
/// With an exact norm this is `1/8 + d^{1/r} 2^{1−s} min(1, d^{1/r} 2^{1−s})`;
/// a nat-compressed norm multiplies `ω + 1` by a further `9/8`.
pub fn omega_nat_dither(d: usize, p: NormKind, s: u32, norm_mode: NormMode) -> f64 {
    let k = rounding_excess(d, p, (1.0 - s as f64).exp2());
    match norm_mode {
        NormMode::Exact => 0.125 + k,
        NormMode::NatCompressed => 1.125 * (1.125 + k) - 1.0,
    }
}

/// Second-moment parameter of standard dithering with `s` linear levels.
pub fn omega_std_dither(d: usize, p: NormKind, s: u32) -> f64 {
    rounding_excess(d, p, 1.0 / s as f64)
}

/// Frequencies compared for one coordinate and one output level.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelFrequency {
    pub coordinate: usize,
    pub level: f64,
    pub natural: f64,
    pub standard_then_nat: f64,
    pub z: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EquivalenceReport {
    pub s: u32,
    pub standard_levels: u32,
    pub draws: u64,
    pub cells: Vec<LevelFrequency>,
    pub max_z: f64,
    pub pass: bool,
}

/// Monte-Carlo check that natural dithering with `s` levels has the same
/// per-coordinate law as `C_nat` applied to standard dithering with
/// `2^{s−1}` levels (both with exact norms).
pub fn std_vs_nat_equivalence_check(
    x: &DenseVector,
    s: u32,
    p: NormKind,
    draws: u64,
    rng: &RngStream,
) -> Result<EquivalenceReport> {
    if !(1..=31).contains(&s) {
        return Err(Error::Config(format!("equivalence check supports 1 <= s <= 31, got {s}")));
    }
    if draws == 0 {
        return Err(Error::Config("need at least one draw".into()));
    }
    let u = 1u32 << (s - 1);
    let nat = LevelLadder::geometric(s)?;
    let std = LevelLadder::linear(u)?;
    let d = x.len();
    let mut tally: Vec<HashMap<u64, [u64; 2]>> = vec![HashMap::new(); d];
    for j in 0..draws {
        let a = dither(x, &nat, p, NormMode::Exact, &rng.substream(3 * j))?;
        let b = dither(x, &std, p, NormMode::Exact, &rng.substream(3 * j + 1))?;
        let renat = rng.substream(3 * j + 2);
        for i in 0..d {
            let la = nat.level(a.level_indices[i]);
            let lb = std.level(b.level_indices[i]) as f32;
            let lb = nat_with_bits(lb, renat.bits_at(i as u64))? as f64;
            tally[i].entry(la.to_bits()).or_default()[0] += 1;
            tally[i].entry(lb.to_bits()).or_default()[1] += 1;
        }
    }
    let n = draws as f64;
    let mut cells = Vec::new();
    for (i, t) in tally.into_iter().enumerate() {
        let mut keys: Vec<_> = t.into_iter().collect();
        keys.sort_by(|a, b| f64::from_bits(b.0).total_cmp(&f64::from_bits(a.0)));
        for (bits, [ca, cb]) in keys {
            let fa = ca as f64 / n;
            let fb = cb as f64 / n;
            let pooled = (fa + fb) / 2.0;
            let var = pooled * (1.0 - pooled) * 2.0 / n;
            let z = if var > 0.0 {
                (fa - fb).abs() / var.sqrt()
            } else if fa == fb {
                0.0
            } else {
                f64::INFINITY
            };
            cells.push(LevelFrequency {
                coordinate: i,
                level: f64::from_bits(bits),
                natural: fa,
                standard_then_nat: fb,
                z,
            });
        }
    }
    let max_z = cells.iter().map(|c| c.z).fold(0.0, f64::max);
    Ok(EquivalenceReport {
        s,
        standard_levels: u,
        draws,
        cells,
        max_z,
        pass: max_z <= 4.0,
    })
}
