//! Monte-Carlo measurement of compression variance and bias.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ops::{nat_two_point_f64, Compressor};
use crate::rng::RngStream;
use crate::spec::CompressorSpec;
use crate::vector::DenseVector;

/// Minimum number of draws accepted by [`unbiasedness_gate`].
pub const MIN_GATE_DRAWS: u64 = 10_000;
/// z-score above which a coordinate counts as biased.
pub const Z_GATE: f64 = 4.0;

/// Where per-trial input vectors come from.
#[derive(Clone, Debug)]
pub enum InputLaw {
    /// i.i.d. standard normal coordinates, fresh per trial.
    Gaussian,
    /// Recorded vectors, used in turn (trial `t` takes vector `t mod len`).
    Vectors(Vec<DenseVector>),
}

/// Five-number summary; interior quantiles interpolate linearly.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quartiles {
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

impl Quartiles {
    pub fn of(samples: &[f64]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let mut v = samples.to_vec();
        v.sort_by(f64::total_cmp);
        Some(Self {
            min: v[0],
            q25: quantile_sorted(&v, 0.25),
            median: quantile_sorted(&v, 0.5),
            q75: quantile_sorted(&v, 0.75),
            max: v[v.len() - 1],
        })
    }
}

fn quantile_sorted(v: &[f64], q: f64) -> f64 {
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct VarianceReport {
    pub spec: CompressorSpec,
    pub d: usize,
    pub trials: usize,
    pub omega_samples: Vec<f64>,
    pub quartiles: Quartiles,
}

/// `‖C(x) − x‖² / ‖x‖²` for one draw; zero when `x = 0` and `C(x) = 0`.
pub fn omega_of_draw(x: &DenseVector, cx: &DenseVector) -> f64 {
    let den = x.norm_sq();
    let num = cx.dist_sq(x);
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        num / den
    }
}

/// A standard normal vector drawn from `rng`.
pub fn gaussian_vector(d: usize, rng: &RngStream) -> DenseVector {
    let mut cur = rng.cursor();
    let v = (0..d)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut cur);
            z as f32
        })
        .collect();
    DenseVector::from_trusted(v)
}

/// Per-trial normalized variance. Trial `t` draws its input from
/// `rng.substream(t).substream(0)` and its compression from `.substream(1)`,
/// so reports are independent of thread scheduling.
pub fn empirical_omega(
    spec: &CompressorSpec,
    d: usize,
    trials: usize,
    law: &InputLaw,
    rng: &RngStream,
) -> Result<VarianceReport> {
    if trials == 0 {
        return Err(Error::Config("trials must be at least 1".into()));
    }
    if let InputLaw::Vectors(vs) = law {
        if vs.is_empty() {
            return Err(Error::InvalidInput("no input vectors supplied".into()));
        }
        if let Some(bad) = vs.iter().find(|v| v.len() != d) {
            return Err(Error::InvalidInput(format!(
                "input vector has dimension {}, expected {d}",
                bad.len()
            )));
        }
    }
    spec.validate(d)?;
    let omega_samples = (0..trials)
        .into_par_iter()
        .map(|t| {
            let trial = rng.substream(t as u64);
            let owned;
            let x = match law {
                InputLaw::Gaussian => {
                    owned = gaussian_vector(d, &trial.substream(0));
                    &owned
                }
                InputLaw::Vectors(vs) => &vs[t % vs.len()],
            };
            let cx = spec.compress(x, &trial.substream(1))?;
            Ok(omega_of_draw(x, &cx))
        })
        .collect::<Result<Vec<_>>>()?;
    let quartiles = Quartiles::of(&omega_samples).expect("trials >= 1");
    Ok(VarianceReport {
        spec: spec.clone(),
        d,
        trials,
        omega_samples,
        quartiles,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GateReport {
    pub pass: bool,
    pub max_z: f64,
    /// Coordinate attaining `max_z`.
    pub worst: usize,
    pub mean: Vec<f64>,
    pub draws: u64,
}

/// Empirical-mean test of `E[C(x)] = x`: passes iff every coordinate's
/// z-score is at most [`Z_GATE`]. Draw `j` uses `rng.substream(j)`.
pub fn unbiasedness_gate<C: Compressor + ?Sized>(
    compressor: &C,
    x: &DenseVector,
    draws: u64,
    rng: &RngStream,
) -> Result<GateReport> {
    if draws < MIN_GATE_DRAWS {
        return Err(Error::Config(format!(
            "unbiasedness gate needs at least {MIN_GATE_DRAWS} draws, got {draws}"
        )));
    }
    let d = x.len();
    let xs = x.as_slice();
    let zero = || (vec![0.0f64; d], vec![0.0f64; d]);
    // deviations from x, so the sums stay small and well-conditioned
    let (sum, sumsq) = (0..draws)
        .into_par_iter()
        .try_fold(zero, |(mut s, mut s2), j| {
            let y = compressor.compress(x, &rng.substream(j))?;
            for ((a, b), (&yi, &xi)) in s.iter_mut().zip(s2.iter_mut()).zip(y.as_slice().iter().zip(xs)) {
                let e = yi as f64 - xi as f64;
                *a += e;
                *b += e * e;
            }
            Ok::<_, Error>((s, s2))
        })
        .try_reduce(zero, |(mut s, mut s2), (t, t2)| {
            s.iter_mut().zip(&t).for_each(|(a, b)| *a += b);
            s2.iter_mut().zip(&t2).for_each(|(a, b)| *a += b);
            Ok((s, s2))
        })?;
    let n = draws as f64;
    let mut max_z = 0.0f64;
    let mut worst = 0;
    let mut mean = Vec::with_capacity(d);
    for i in 0..d {
        let m = sum[i] / n;
        mean.push(xs[i] as f64 + m);
        let var = ((sumsq[i] - sum[i] * sum[i] / n) / (n - 1.0)).max(0.0);
        let z = if var == 0.0 {
            if m == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            m.abs() / (var / n).sqrt()
        };
        if z > max_z {
            max_z = z;
            worst = i;
        }
    }
    Ok(GateReport {
        pass: max_z <= Z_GATE,
        max_z,
        worst,
        mean,
        draws,
    })
}

/// Largest exact ratio `E[C_nat(t)²] / t²` over a grid, and where it occurs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RatioSup {
    pub sup: f64,
    pub argmax: f64,
    pub points: usize,
}

/// Evaluates the exact second-moment ratio of natural compression on
/// `points` log-spaced values in `[2^lo, 2^hi]` together with every
/// `(4/3)·2^a` in that range, where the ratio is maximal.
pub fn nat_ratio_supremum(lo: i32, hi: i32, points: usize) -> Result<RatioSup> {
    if lo >= hi || points < 2 {
        return Err(Error::Config("need lo < hi and at least two grid points".into()));
    }
    let span = (hi - lo) as f64;
    let log_grid = (0..points).map(|k| (lo as f64 + span * k as f64 / (points - 1) as f64).exp2());
    let peaks = (lo..hi).map(|a| 4.0 / 3.0 * (a as f64).exp2());
    let mut best = RatioSup {
        sup: 0.0,
        argmax: 0.0,
        points: 0,
    };
    for t in log_grid.chain(peaks) {
        let r = nat_two_point_f64(t).second_moment() / (t * t);
        best.points += 1;
        if r > best.sup {
            best.sup = r;
            best.argmax = t;
        }
    }
    Ok(best)
}
