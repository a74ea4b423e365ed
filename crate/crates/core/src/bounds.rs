//! Closed-form variance parameters, convergence constants, bit counts and
//! speedup factors.

use std::fmt;
use std::str::FromStr;

use statrs::function::gamma::ln_gamma;

use crate::dither::{omega_nat_dither, omega_std_dither};
use crate::error::{Error, Result};
use crate::spec::{CompressorSpec, NormKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OmegaSource {
    Identity,
    NaturalCompression,
    Sparsification,
    StandardDithering,
    NaturalDithering,
    Composition,
}

/// `ω` such that `E‖C(x)‖² <= (ω + 1)‖x‖²`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OmegaBound {
    pub value: f64,
    pub source: OmegaSource,
}

impl OmegaBound {
    pub const ZERO: Self = Self {
        value: 0.0,
        source: OmegaSource::Identity,
    };
}

/// `(ω1 + 1)(ω2 + 1) − 1`.
pub fn compose_omega(a: f64, b: f64) -> f64 {
    a * b + a + b
}

pub fn omega_of(spec: &CompressorSpec, d: usize) -> Result<OmegaBound> {
    spec.validate(d)?;
    let bound = match spec {
        CompressorSpec::Identity => OmegaBound::ZERO,
        CompressorSpec::Nat => OmegaBound {
            value: 0.125,
            source: OmegaSource::NaturalCompression,
        },
        CompressorSpec::IntRound => {
            return Err(Error::Unbounded(
                "stochastic integer rounding has no finite second-moment bound".into(),
            ))
        }
        CompressorSpec::Sparsify { q } => OmegaBound {
            value: d as f64 / *q as f64 - 1.0,
            source: OmegaSource::Sparsification,
        },
        CompressorSpec::StdDither { p, s } => OmegaBound {
            value: omega_std_dither(d, *p, *s),
            source: OmegaSource::StandardDithering,
        },
        CompressorSpec::NatDither { p, s, norm } => OmegaBound {
            value: omega_nat_dither(d, *p, *s, *norm),
            source: OmegaSource::NaturalDithering,
        },
        CompressorSpec::Compose(chain) => {
            let mut w = 0.0;
            for c in chain {
                w = compose_omega(w, omega_of(c, d)?.value);
            }
            OmegaBound {
                value: w,
                source: OmegaSource::Composition,
            }
        }
    };
    Ok(bound)
}

/// Constants of a smooth finite-sum problem.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProblemSpec {
    pub n: usize,
    /// Mean per-worker gradient noise variance.
    pub sigma2: f64,
    /// Bound on gradient dissimilarity between workers.
    pub zeta2: f64,
    pub l: f64,
    pub f0_minus_fstar: f64,
}

impl ProblemSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.n >= 1
            && self.sigma2 >= 0.0
            && self.zeta2 >= 0.0
            && self.l > 0.0
            && self.f0_minus_fstar >= 0.0
            && [self.sigma2, self.zeta2, self.l, self.f0_minus_fstar]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid problem constants {self:?}")))
        }
    }
}

/// `α = (ω_M+1)(ω_W+1)σ²/n + (ω_M+1)ω_W ζ²/n`, `β = 1 + ω_M + (ω_M+1)ω_W/n`.
pub fn alpha_beta(problem: &ProblemSpec, omega_w: f64, omega_m: f64) -> Result<(f64, f64)> {
    problem.validate()?;
    if !(omega_w >= 0.0 && omega_m >= 0.0) {
        return Err(Error::Config("ω must be nonnegative".into()));
    }
    let n = problem.n as f64;
    let m1 = omega_m + 1.0;
    let alpha = m1 * (omega_w + 1.0) * problem.sigma2 / n + m1 * omega_w * problem.zeta2 / n;
    let beta = 1.0 + omega_m + m1 * omega_w / n;
    Ok((alpha, beta))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationBound {
    pub eta: f64,
    /// Real-valued iteration requirement.
    pub t: f64,
    /// Smallest integer iteration count meeting it.
    pub t_min: u64,
}

/// Step size `ε / (L(α + εβ))` and `T >= 2L(f⁰ − f*)(α + εβ)/ε²`.
pub fn iteration_bound(problem: &ProblemSpec, alpha: f64, beta: f64, epsilon: f64) -> Result<IterationBound> {
    problem.validate()?;
    if !(epsilon > 0.0) {
        return Err(Error::Config("ε must be positive".into()));
    }
    let s = alpha + epsilon * beta;
    let eta = epsilon / (problem.l * s);
    let t = 2.0 * problem.l * problem.f0_minus_fstar * s / (epsilon * epsilon);
    Ok(IterationBound {
        eta,
        t,
        t_min: t.ceil().max(1.0) as u64,
    })
}

/// Horizon-dependent rule `η = sqrt(2(f⁰ − f*)/(L T α))`, valid once
/// `T >= Lβ²(f⁰ − f*)/α`; the returned `t_min` is that threshold.
pub fn iteration_bound_fixed_horizon(problem: &ProblemSpec, alpha: f64, beta: f64, t: u64) -> Result<IterationBound> {
    problem.validate()?;
    if alpha <= 0.0 {
        return Err(Error::Config("horizon step rule divides by α, which is zero".into()));
    }
    if t == 0 {
        return Err(Error::Config("horizon must be positive".into()));
    }
    let eta = (2.0 * problem.f0_minus_fstar / (problem.l * t as f64 * alpha)).sqrt();
    let need = problem.l * beta * beta * problem.f0_minus_fstar / alpha;
    Ok(IterationBound {
        eta,
        t: need,
        t_min: need.ceil().max(1.0) as u64,
    })
}

/// Right-hand side of the expected squared-gradient-norm guarantee for the
/// uniformly sampled iterate: `2(f⁰−f*)/(η(2−βLη)T) + αLη/(2−βLη)`.
pub fn gradient_norm_bound(problem: &ProblemSpec, alpha: f64, beta: f64, eta: f64, t: u64) -> Result<f64> {
    problem.validate()?;
    let l = problem.l;
    if !(eta > 0.0 && eta < 2.0 / (beta * l)) {
        return Err(Error::Config(format!("η = {eta} outside (0, 2/(βL))")));
    }
    if t == 0 {
        return Err(Error::Config("horizon must be positive".into()));
    }
    let den = 2.0 - beta * l * eta;
    Ok(2.0 * problem.f0_minus_fstar / (eta * den * t as f64) + alpha * l * eta / den)
}

/// `T(ω_M, ω_W) / T(0, 0)` for identical data (`ζ = 0`).
pub fn relative_slowdown(n: usize, sigma2: f64, epsilon: f64, omega_w: f64, omega_m: f64) -> f64 {
    let n = n as f64;
    let m1 = omega_m + 1.0;
    let compressed = m1 * (omega_w + 1.0) * sigma2 / n + epsilon * m1 * (1.0 + omega_w / n);
    compressed / (sigma2 / n + epsilon)
}

/// Communication regimes for the speedup model.
///
/// Every model scores a configuration by iterations × bits, with relative
/// iterations `(ω_M + 1)(ω_W + 1)^θ`. The low speedup is at `θ = 1`, the high
/// at `θ = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CostModel {
    /// Same compressor both ways, both directions billed, identity baseline.
    M1,
    /// Workers compress, master broadcasts uncompressed, uplink billed.
    M2,
    /// Same compressor both ways, both directions billed, `C_nat` baseline.
    M3,
    /// Master recompresses with `C_nat`, uplink billed, `C_nat` baseline.
    M4,
}

impl CostModel {
    pub const ALL: [CostModel; 4] = [CostModel::M1, CostModel::M2, CostModel::M3, CostModel::M4];

    pub fn number(self) -> u8 {
        match self {
            CostModel::M1 => 1,
            CostModel::M2 => 2,
            CostModel::M3 => 3,
            CostModel::M4 => 4,
        }
    }

    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(CostModel::M1),
            2 => Ok(CostModel::M2),
            3 => Ok(CostModel::M3),
            4 => Ok(CostModel::M4),
            _ => Err(Error::Config(format!("unknown cost model {n}; expected 1..=4"))),
        }
    }

    fn two_way(self) -> bool {
        matches!(self, CostModel::M1 | CostModel::M3)
    }

    pub fn baseline(self) -> Family {
        match self {
            CostModel::M1 | CostModel::M2 => Family::Identity,
            CostModel::M3 | CostModel::M4 => Family::Nat,
        }
    }

    /// Compressor families tabulated for this model.
    pub fn families(self) -> &'static [Family] {
        match self {
            CostModel::M1 | CostModel::M2 => &[
                Family::Nat,
                Family::Sparsify,
                Family::NatSparsify,
                Family::StdDither,
                Family::NatDither,
            ],
            CostModel::M3 | CostModel::M4 => &[Family::NatSparsify, Family::NatDither],
        }
    }
}

/// Compressor families of the cost model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Family {
    Identity,
    Nat,
    Sparsify,
    NatSparsify,
    /// Standard dithering with `2^{s−1}` levels.
    StdDither,
    /// Natural dithering with `s` levels and a nat-compressed norm.
    NatDither,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::Identity,
        Family::Nat,
        Family::Sparsify,
        Family::NatSparsify,
        Family::StdDither,
        Family::NatDither,
    ];

    pub fn is_dither(self) -> bool {
        matches!(self, Family::StdDither | Family::NatDither)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Identity => "identity",
            Family::Nat => "nat",
            Family::Sparsify => "sparsify",
            Family::NatSparsify => "nat-sparsify",
            Family::StdDither => "stddither",
            Family::NatDither => "natdither",
        })
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown family {s:?}")))
    }
}

/// How the positions of `q` kept coordinates are billed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SparseIndexCost {
    /// `q(log2 d + 1)`: an explicit position list.
    PositionList,
    /// `log2 C(d, q)`: an optimal subset code.
    Binomial,
}

/// Factor `κ` multiplying the level-rounding term of the dithering bounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kappa {
    /// `κ = 1`, the bound's linear branch.
    One,
    /// `κ = min(1, sqrt(d) 2^{1−s})`.
    Min,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostModelInput {
    pub d: usize,
    pub q: usize,
    pub p: NormKind,
    pub model: CostModel,
    pub index_cost: SparseIndexCost,
    /// Bits per value of a naturally compressed sparse vector (9 or 10).
    pub nat_sparse_width: u32,
    pub kappa: Kappa,
    /// Largest dithering level count searched.
    pub s_max: u32,
}

impl CostModelInput {
    pub fn new(model: CostModel, d: usize, q: usize) -> Self {
        Self {
            d,
            q,
            p: NormKind::L2,
            model,
            index_cost: SparseIndexCost::PositionList,
            nat_sparse_width: 9,
            kappa: Kappa::One,
            s_max: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.q == 0 || self.q > self.d {
            return Err(Error::Config(format!("need 1 <= q <= d, got q={} d={}", self.q, self.d)));
        }
        if self.s_max == 0 {
            return Err(Error::Config("s_max must be positive".into()));
        }
        Ok(())
    }
}

/// `log2 C(d, q)` through the log-gamma function.
pub fn log2_binomial(d: usize, q: usize) -> f64 {
    assert!(q <= d);
    let (d, q) = (d as f64, q as f64);
    (ln_gamma(d + 1.0) - ln_gamma(q + 1.0) - ln_gamma(d - q + 1.0)) / std::f64::consts::LN_2
}

fn index_bits(input: &CostModelInput) -> f64 {
    match input.index_cost {
        SparseIndexCost::PositionList => input.q as f64 * ((input.d as f64).log2() + 1.0),
        SparseIndexCost::Binomial => log2_binomial(input.d, input.q),
    }
}

/// One-direction bits per iteration; `s` is ignored by non-dithering families.
pub fn bits_per_iteration(family: Family, input: &CostModelInput, s: u32) -> f64 {
    let d = input.d as f64;
    let q = input.q as f64;
    let s = s as f64;
    match family {
        Family::Identity => 32.0 * d,
        Family::Nat => 9.0 * d,
        Family::Sparsify => 32.0 * q + index_bits(input),
        Family::NatSparsify => input.nat_sparse_width as f64 * q + index_bits(input),
        Family::StdDither => match input.model {
            CostModel::M1 | CostModel::M3 => 32.0 + d * (s + 2.0),
            CostModel::M2 | CostModel::M4 => 31.0 + d * (2.0 + s),
        },
        Family::NatDither => match input.model {
            CostModel::M2 => 31.0 + d * (2.0 + s.log2()),
            _ => 8.0 + d * (2.0 + s.log2()),
        },
    }
}

/// `ω` used by the cost model; `s` is ignored by non-dithering families.
pub fn family_omega(family: Family, input: &CostModelInput, s: u32) -> f64 {
    let d = input.d as f64;
    let q = input.q as f64;
    let step = (1.0 - s as f64).exp2();
    let kappa = match input.kappa {
        Kappa::One => 1.0,
        Kappa::Min => (d.sqrt() * step).min(1.0),
    };
    let level_term = kappa * d.powf(1.0 / input.p.r()) * step;
    match family {
        Family::Identity => 0.0,
        Family::Nat => 0.125,
        Family::Sparsify => d / q - 1.0,
        Family::NatSparsify => 9.0 * d / (8.0 * q) - 1.0,
        Family::StdDither => level_term,
        Family::NatDither => 1.125 * (1.125 + level_term) - 1.0,
    }
}

fn cost(family: Family, input: &CostModelInput, s: u32, theta: f64) -> f64 {
    let w = family_omega(family, input, s);
    let (omega_m, direction_factor) = match input.model {
        CostModel::M1 | CostModel::M3 => (w, 2.0),
        CostModel::M2 => (0.0, 1.0),
        CostModel::M4 => (0.125, 1.0),
    };
    debug_assert!(input.model.two_way() == (direction_factor == 2.0));
    (omega_m + 1.0) * (w + 1.0).powf(theta) * direction_factor * bits_per_iteration(family, input, s)
}

/// Speedup of `family` over the model's baseline at one `θ`, with the best
/// `s` in `1..=s_max` for dithering families.
pub fn speedup_at(family: Family, input: &CostModelInput, theta: f64) -> Result<(f64, Option<u32>)> {
    input.validate()?;
    let base = cost(input.model.baseline(), input, 1, theta);
    if family.is_dither() {
        let (s, c) = (1..=input.s_max)
            .map(|s| (s, cost(family, input, s, theta)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("s_max >= 1");
        Ok((base / c, Some(s)))
    } else {
        Ok((base / cost(family, input, 1, theta), None))
    }
}

/// One row of a speedup table.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeedupRow {
    pub model: CostModel,
    pub family: Family,
    /// `θ = 1`.
    pub low: f64,
    /// `θ = 0`.
    pub high: f64,
    pub s_low: Option<u32>,
    pub s_high: Option<u32>,
    pub bits_low: f64,
    pub bits_high: f64,
}

pub fn speedup_factor(family: Family, input: &CostModelInput) -> Result<SpeedupRow> {
    let (low, s_low) = speedup_at(family, input, 1.0)?;
    let (high, s_high) = speedup_at(family, input, 0.0)?;
    Ok(SpeedupRow {
        model: input.model,
        family,
        low,
        high,
        s_low,
        s_high,
        bits_low: bits_per_iteration(family, input, s_low.unwrap_or(1)),
        bits_high: bits_per_iteration(family, input, s_high.unwrap_or(1)),
    })
}

/// Baseline row followed by the model's tabulated families.
pub fn cost_table(input: &CostModelInput) -> Result<Vec<SpeedupRow>> {
    std::iter::once(input.model.baseline())
        .chain(input.model.families().iter().copied())
        .map(|f| speedup_factor(f, input))
        .collect()
}

/// A point of the variance-versus-communication scatter.
#[derive(Clone, Debug, PartialEq)]
pub struct Fig1Point {
    pub label: String,
    pub family: Family,
    pub omega_plus_one: f64,
    pub bits: f64,
}

/// `(ω + 1, bits)` for every family, over `s` in `1..=s_max` for dithering
/// and over `q = d/2^k` for sparsification, with uplink bit counts.
pub fn fig1_points(d: usize, s_max: u32) -> Result<Vec<Fig1Point>> {
    let base = CostModelInput::new(CostModel::M2, d, d);
    base.validate()?;
    let mut out = Vec::new();
    for family in [Family::Identity, Family::Nat] {
        out.push(Fig1Point {
            label: family.to_string(),
            family,
            omega_plus_one: family_omega(family, &base, 1) + 1.0,
            bits: bits_per_iteration(family, &base, 1),
        });
    }
    let mut q = d;
    while q >= 1 {
        let input = CostModelInput { q, ..base };
        for family in [Family::Sparsify, Family::NatSparsify] {
            out.push(Fig1Point {
                label: format!("{family}:q={q}"),
                family,
                omega_plus_one: family_omega(family, &input, 1) + 1.0,
                bits: bits_per_iteration(family, &input, 1),
            });
        }
        q /= 2;
    }
    for s in 1..=s_max {
        for family in [Family::StdDither, Family::NatDither] {
            out.push(Fig1Point {
                label: format!("{family}:s={s}"),
                family,
                omega_plus_one: family_omega(family, &base, s) + 1.0,
                bits: bits_per_iteration(family, &base, s),
            });
        }
    }
    Ok(out)
}
