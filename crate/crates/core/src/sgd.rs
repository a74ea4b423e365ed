//! Distributed SGD with bidirectional compression on synthetic problems.
//!
//! Per iteration every worker computes a noisy gradient, compresses it, the
//! master sums the compressed gradients, compresses the sum once and
//! broadcasts it, and all workers take the same step
//! `x ← x − (η/n)·C_M(Σ C_Wi(g_i))`.

use std::net::SocketAddr;
use std::path::Path;
use std::time::Duration;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Deserialize;

use crate::bounds::{alpha_beta, omega_of, ProblemSpec};
use crate::codec::payload_bits;
use crate::error::{Error, Result};
use crate::ina::InaGroup;
use crate::ops::compress;
use crate::rng::RngStream;
use crate::spec::CompressorSpec;
use crate::vector::DenseVector;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Quadratic,
    Logistic,
}

#[derive(Clone, Debug)]
enum WorkerData {
    /// `f_i(x) = ½ xᵀAx − bᵀx`.
    Quadratic { a: DMatrix<f64>, b: DVector<f64> },
    /// `f_i(x) = (1/m) Σ log(1 + exp(−y_j a_jᵀx)) + (λ/2)‖x‖²`, rows of `x` are `a_j`.
    Logistic { x: DMatrix<f64>, y: DVector<f64> },
}

/// A finite-sum problem split over `n` workers, with additive Gaussian
/// gradient noise of per-coordinate standard deviation `noise`.
#[derive(Clone, Debug)]
pub struct SyntheticProblem {
    kind: ProblemKind,
    d: usize,
    workers: Vec<WorkerData>,
    noise: f64,
    reg: f64,
    shared_data: bool,
    l: f64,
    /// Averaged quadratic, for quadratic problems.
    mean_quadratic: Option<(DMatrix<f64>, DVector<f64>)>,
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &RngStream) -> DMatrix<f64> {
    let mut cur = rng.cursor();
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut cur))
}

fn gaussian_dvector(d: usize, rng: &RngStream) -> DVector<f64> {
    let mut cur = rng.cursor();
    DVector::from_fn(d, |_, _| StandardNormal.sample(&mut cur))
}

fn lambda_max(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.max()
}

impl SyntheticProblem {
    /// Quadratic problem from explicit worker data; every `A_i` must be
    /// symmetric positive semidefinite and the average positive definite.
    pub fn quadratic(data: Vec<(DMatrix<f64>, DVector<f64>)>, noise: f64) -> Result<Self> {
        let n = data.len();
        if n == 0 {
            return Err(Error::Config("need at least one worker".into()));
        }
        let d = data[0].1.len();
        if d == 0 {
            return Err(Error::Config("dimension must be positive".into()));
        }
        if !(noise >= 0.0 && noise.is_finite()) {
            return Err(Error::Config(format!("noise {noise} must be finite and nonnegative")));
        }
        let mut abar = DMatrix::zeros(d, d);
        let mut bbar = DVector::zeros(d);
        for (i, (a, b)) in data.iter().enumerate() {
            if a.nrows() != d || a.ncols() != d || b.len() != d {
                return Err(Error::Config(format!("worker {i} data has the wrong shape")));
            }
            let scale = a.amax().max(1.0);
            if (a - a.transpose()).amax() > 1e-12 * scale {
                return Err(Error::Config(format!("worker {i} matrix is not symmetric")));
            }
            let min_eig = SymmetricEigen::new(a.clone()).eigenvalues.min();
            if min_eig < -1e-10 * scale {
                return Err(Error::Config(format!(
                    "worker {i} matrix is not positive semidefinite (eigenvalue {min_eig})"
                )));
            }
            abar += a;
            bbar += b;
        }
        abar /= n as f64;
        bbar /= n as f64;
        let l = lambda_max(&abar);
        if Cholesky::new(abar.clone()).is_none() {
            return Err(Error::Config("averaged quadratic is singular".into()));
        }
        let shared_data = data.iter().all(|w| *w == data[0]);
        Ok(Self {
            kind: ProblemKind::Quadratic,
            d,
            workers: data
                .into_iter()
                .map(|(a, b)| WorkerData::Quadratic { a, b })
                .collect(),
            noise,
            reg: 0.0,
            shared_data,
            l,
            mean_quadratic: Some((abar, bbar)),
        })
    }

    /// Random well-conditioned quadratic: `A_i = MᵀM/d + μI`, `b_i ~ N(0, I)`.
    /// With `shared` every worker gets worker 0's data.
    pub fn random_quadratic(d: usize, n: usize, mu: f64, noise: f64, shared: bool, seed: u64) -> Result<Self> {
        if !(mu > 0.0) {
            return Err(Error::Config("μ must be positive".into()));
        }
        let rng = RngStream::new(seed, 0);
        let make = |i: usize| {
            let r = rng.substream(i as u64);
            let m = gaussian_matrix(d, d, &r.substream(0));
            let a = m.transpose() * &m / d as f64 + DMatrix::identity(d, d) * mu;
            let a = (&a + a.transpose()) * 0.5;
            (a, gaussian_dvector(d, &r.substream(1)))
        };
        let data = if shared {
            vec![make(0); n]
        } else {
            (0..n).map(make).collect()
        };
        Self::quadratic(data, noise)
    }

    /// Logistic regression with `m` samples per worker and ridge `reg > 0`.
    pub fn random_logistic(d: usize, n: usize, m: usize, reg: f64, noise: f64, shared: bool, seed: u64) -> Result<Self> {
        if n == 0 || d == 0 || m == 0 {
            return Err(Error::Config("d, n and samples must be positive".into()));
        }
        if !(reg > 0.0) {
            return Err(Error::Config("logistic problems need a positive regulariser".into()));
        }
        if !(noise >= 0.0 && noise.is_finite()) {
            return Err(Error::Config(format!("noise {noise} must be finite and nonnegative")));
        }
        let rng = RngStream::new(seed, 1);
        let truth = gaussian_dvector(d, &rng.substream(u64::MAX));
        let make = |i: usize| {
            let r = rng.substream(i as u64);
            let x = gaussian_matrix(m, d, &r.substream(0)) / (d as f64).sqrt();
            let u = r.substream(1);
            let y = DVector::from_fn(m, |j, _| {
                let p = 1.0 / (1.0 + (-x.row(j).dot(&truth.transpose())).exp());
                if u.uniform_at(j as u64) < p {
                    1.0
                } else {
                    -1.0
                }
            });
            (x, y)
        };
        let data: Vec<_> = if shared {
            vec![make(0); n]
        } else {
            (0..n).map(make).collect()
        };
        let l = data
            .iter()
            .map(|(x, _)| 0.25 * lambda_max(&(x.transpose() * x)) / m as f64)
            .fold(0.0, f64::max)
            + reg;
        let shared_data = data.iter().all(|w| *w == data[0]);
        Ok(Self {
            kind: ProblemKind::Logistic,
            d,
            workers: data.into_iter().map(|(x, y)| WorkerData::Logistic { x, y }).collect(),
            noise,
            reg,
            shared_data,
            l,
            mean_quadratic: None,
        })
    }

    pub fn kind(&self) -> ProblemKind {
        self.kind
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.workers.len()
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    /// Smoothness constant: largest eigenvalue of the averaged quadratic, or
    /// `¼ λ_max(XᵀX)/m + λ` maximised over workers for logistic problems.
    pub fn l(&self) -> f64 {
        self.l
    }

    fn worker_value(&self, i: usize, x: &DVector<f64>) -> f64 {
        match &self.workers[i] {
            WorkerData::Quadratic { a, b } => 0.5 * x.dot(&(a * x)) - b.dot(x),
            WorkerData::Logistic { x: data, y } => {
                let z = data * x;
                let m = y.len() as f64;
                let loss: f64 = z.iter().zip(y.iter()).map(|(zj, yj)| softplus(-yj * zj)).sum();
                loss / m + 0.5 * self.reg * x.norm_squared()
            }
        }
    }

    pub fn worker_gradient(&self, i: usize, x: &DVector<f64>) -> DVector<f64> {
        match &self.workers[i] {
            WorkerData::Quadratic { a, b } => a * x - b,
            WorkerData::Logistic { x: data, y } => {
                let z = data * x;
                let m = y.len() as f64;
                let w = DVector::from_fn(y.len(), |j, _| -y[j] * sigmoid(-y[j] * z[j]) / m);
                data.transpose() * w + x * self.reg
            }
        }
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        if let Some((a, b)) = &self.mean_quadratic {
            return 0.5 * x.dot(&(a * x)) - b.dot(x);
        }
        (0..self.n()).map(|i| self.worker_value(i, x)).sum::<f64>() / self.n() as f64
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        if let Some((a, b)) = &self.mean_quadratic {
            return a * x - b;
        }
        let mut g = DVector::zeros(self.d);
        for i in 0..self.n() {
            g += self.worker_gradient(i, x);
        }
        g / self.n() as f64
    }

    /// Minimiser: closed form for quadratics, damped Newton for logistic.
    pub fn minimizer(&self) -> Result<DVector<f64>> {
        if let Some((a, b)) = &self.mean_quadratic {
            let ch = Cholesky::new(a.clone()).ok_or_else(|| Error::Config("singular quadratic".into()))?;
            return Ok(ch.solve(b));
        }
        let mut x = DVector::zeros(self.d);
        for _ in 0..100 {
            let g = self.gradient(&x);
            if g.norm() < 1e-13 {
                break;
            }
            let h = self.hessian(&x);
            let step = Cholesky::new(h)
                .ok_or_else(|| Error::Config("logistic Hessian not positive definite".into()))?
                .solve(&g);
            let f0 = self.value(&x);
            let mut t = 1.0;
            while self.value(&(&x - &step * t)) > f0 - 0.25 * t * g.dot(&step) && t > 1e-10 {
                t *= 0.5;
            }
            x -= step * t;
        }
        Ok(x)
    }

    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut h = DMatrix::identity(self.d, self.d) * self.reg;
        for w in &self.workers {
            if let WorkerData::Logistic { x: data, y } = w {
                let z = data * x;
                let m = y.len() as f64;
                let wts = DVector::from_fn(y.len(), |j, _| {
                    let s = sigmoid(z[j]);
                    s * (1.0 - s) / m
                });
                let scaled = DMatrix::from_fn(data.nrows(), data.ncols(), |r, c| data[(r, c)] * wts[r]);
                h += data.transpose() * scaled / self.n() as f64;
            }
        }
        h
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// Problem constants used by the convergence bound.
#[derive(Clone, Debug, PartialEq)]
pub struct ProblemConstants {
    pub l: f64,
    /// `d · noise²`.
    pub sigma2: f64,
    pub zeta2: f64,
    /// False when `zeta2` is exactly zero because all workers share data.
    pub zeta2_is_estimate: bool,
    pub f0_minus_fstar: f64,
    pub fstar: f64,
    pub x_star: DVector<f64>,
}

impl ProblemConstants {
    pub fn problem_spec(&self, n: usize) -> ProblemSpec {
        ProblemSpec {
            n,
            sigma2: self.sigma2,
            zeta2: self.zeta2,
            l: self.l,
            f0_minus_fstar: self.f0_minus_fstar,
        }
    }
}

/// Measures `L`, `σ²`, `ζ²` and `f(x⁰) − f*` with `x⁰ = 0`. For non-shared
/// data `ζ²` is the largest `(1/n) Σ‖∇f_i − ∇f‖²` over `grid` points spread
/// around the segment from `x⁰` to `x*`.
pub fn measure_problem_constants(problem: &SyntheticProblem, grid: usize, rng: &RngStream) -> Result<ProblemConstants> {
    if problem.d > 10_000 {
        return Err(Error::Config("constants need an eigendecomposition; d must be at most 10^4".into()));
    }
    let x_star = problem.minimizer()?;
    let fstar = problem.value(&x_star);
    let x0 = DVector::zeros(problem.d);
    let f0 = problem.value(&x0);
    let zeta2 = if problem.shared_data {
        0.0
    } else {
        let radius = x_star.norm().max(1.0);
        (0..grid.max(1))
            .map(|k| {
                let t = k as f64 / grid.max(2).saturating_sub(1) as f64;
                let jitter = gaussian_dvector(problem.d, &rng.substream(k as u64)) * (radius / (problem.d as f64).sqrt());
                let x = &x_star * t + jitter;
                let g = problem.gradient(&x);
                (0..problem.n())
                    .map(|i| (problem.worker_gradient(i, &x) - &g).norm_squared())
                    .sum::<f64>()
                    / problem.n() as f64
            })
            .fold(0.0, f64::max)
    };
    Ok(ProblemConstants {
        l: problem.l,
        sigma2: problem.d as f64 * problem.noise * problem.noise,
        zeta2,
        zeta2_is_estimate: !problem.shared_data,
        f0_minus_fstar: (f0 - fstar).max(0.0),
        fstar,
        x_star,
    })
}

/// Step-size rule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepRule {
    /// Must lie in `(0, 2/(βL))`.
    Fixed(f64),
    /// `η = ε / (L(α + εβ))`.
    Accuracy(f64),
    /// `η = sqrt(2(f⁰ − f*)/(L T α))`.
    Horizon,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Aggregation {
    /// Binary64 summation in process.
    Exact,
    /// Integer aggregation service at this address; the master compression
    /// is the service's own natural recompression.
    Ina { addr: SocketAddr, session_id: u64, timeout: Duration },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SgdConfig {
    /// One spec for all workers, or one per worker.
    pub worker_specs: Vec<CompressorSpec>,
    pub master_spec: CompressorSpec,
    pub step: StepRule,
    pub iterations: u64,
    pub seed: u64,
    pub aggregation: Aggregation,
}

impl SgdConfig {
    pub fn new(worker: CompressorSpec, master: CompressorSpec, step: StepRule, iterations: u64, seed: u64) -> Self {
        Self {
            worker_specs: vec![worker],
            master_spec: master,
            step,
            iterations,
            seed,
            aggregation: Aggregation::Exact,
        }
    }

    fn worker_spec(&self, i: usize) -> &CompressorSpec {
        if self.worker_specs.len() == 1 {
            &self.worker_specs[0]
        } else {
            &self.worker_specs[i]
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub k: u64,
    pub f: f64,
    pub grad_norm_sq: f64,
    pub bits_up: u64,
    pub bits_down: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunTrace {
    pub rows: Vec<TraceRow>,
    pub final_x: Vec<f64>,
    pub final_f: f64,
    pub eta: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Index drawn uniformly from `0..T`.
    pub sampled_k: u64,
    pub sampled_grad_norm_sq: f64,
    /// Mean of `‖∇f(x^k)‖²` over `k` in `0..T`: the expectation over the sampled index.
    pub mean_grad_norm_sq: f64,
    /// Worker inputs clipped by the 8-bit code on the aggregation path.
    pub clipped_inputs: u64,
}

/// Factor by which `f(x^k) − f*` may exceed `f(x⁰) − f*` before a run is
/// declared divergent.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

/// Worker ω (largest over workers) and master ω of a configuration.
pub fn config_omegas(config: &SgdConfig, n: usize, d: usize) -> Result<(f64, f64)> {
    let w = (0..n)
        .map(|i| omega_of(config.worker_spec(i), d).map(|b| b.value))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let m = match config.aggregation {
        Aggregation::Exact => omega_of(&config.master_spec, d)?.value,
        Aggregation::Ina { .. } => 0.125,
    };
    Ok((w, m))
}

fn to_f32_vector(v: &DVector<f64>) -> Result<DenseVector> {
    DenseVector::from_f64(v.as_slice()).map_err(|_| Error::Divergence("gradient left the binary32 range".into()))
}

fn check_divergence(k: u64, f: f64, fstar: f64, gap0: f64) -> Result<()> {
    if !f.is_finite() || f - fstar > DIVERGENCE_FACTOR * gap0 {
        return Err(Error::Divergence(format!(
            "iteration {k}: f − f* = {} exceeds {DIVERGENCE_FACTOR:e} × initial gap {gap0}",
            f - fstar
        )));
    }
    Ok(())
}

/// Runs the algorithm from `x⁰ = 0`.
pub fn run(problem: &SyntheticProblem, config: &SgdConfig) -> Result<RunTrace> {
    let n = problem.n();
    let d = problem.d;
    if config.worker_specs.len() != 1 && config.worker_specs.len() != n {
        return Err(Error::Config(format!(
            "{} worker specs for {n} workers",
            config.worker_specs.len()
        )));
    }
    if config.iterations == 0 {
        return Err(Error::Config("iterations must be positive".into()));
    }
    for i in 0..n {
        config.worker_spec(i).validate(d)?;
    }
    config.master_spec.validate(d)?;
    if matches!(config.aggregation, Aggregation::Ina { .. }) {
        if config.master_spec != CompressorSpec::Nat {
            return Err(Error::Config("the integer aggregation path recompresses with nat; set master = nat".into()));
        }
        if !(0..n).all(|i| config.worker_spec(i).emits_powers_of_two()) {
            return Err(Error::Config("the integer aggregation path needs workers that emit powers of two".into()));
        }
    }
    let consts = measure_problem_constants(problem, 16, &RngStream::new(config.seed, u64::MAX))?;
    let (omega_w, omega_m) = config_omegas(config, n, d)?;
    let (alpha, beta) = alpha_beta(&consts.problem_spec(n), omega_w, omega_m)?;
    let l = consts.l;
    let eta = match config.step {
        StepRule::Fixed(eta) => {
            if !(eta > 0.0 && eta < 2.0 / (beta * l)) {
                return Err(Error::Config(format!(
                    "step size {eta} outside (0, 2/(βL)) = (0, {})",
                    2.0 / (beta * l)
                )));
            }
            eta
        }
        StepRule::Accuracy(eps) => {
            if !(eps > 0.0) {
                return Err(Error::Config("accuracy must be positive".into()));
            }
            eps / (l * (alpha + eps * beta))
        }
        StepRule::Horizon => {
            if alpha <= 0.0 {
                return Err(Error::Config("horizon step rule divides by α, which is zero".into()));
            }
            (2.0 * consts.f0_minus_fstar / (l * config.iterations as f64 * alpha)).sqrt()
        }
    };

    let mut ina = match &config.aggregation {
        Aggregation::Exact => None,
        Aggregation::Ina {
            addr,
            session_id,
            timeout,
        } => {
            let n16 = u16::try_from(n).map_err(|_| Error::Config("too many workers".into()))?;
            Some(InaGroup::connect(*addr, *session_id, n16, d, crate::ina::MAX_CHUNK as u16, *timeout)?)
        }
    };

    let (bits_up, bits_down) = match config.aggregation {
        Aggregation::Exact => (
            (0..n).map(|i| payload_bits(config.worker_spec(i), d)).sum::<u64>(),
            payload_bits(&config.master_spec, d),
        ),
        Aggregation::Ina { .. } => (8 * d as u64 * n as u64, 8 * d as u64),
    };

    let base = RngStream::new(config.seed, 0);
    let gap0 = consts.f0_minus_fstar.max(f64::MIN_POSITIVE);
    let mut x = DVector::<f64>::zeros(d);
    let mut rows = Vec::with_capacity(config.iterations as usize);
    let mut clipped_inputs = 0u64;
    for k in 0..config.iterations {
        let f = problem.value(&x);
        let g = problem.gradient(&x);
        check_divergence(k, f, consts.fstar, gap0)?;
        rows.push(TraceRow {
            k,
            f,
            grad_norm_sq: g.norm_squared(),
            bits_up,
            bits_down,
        });
        let it = base.substream(k);
        let deltas = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut gi = problem.worker_gradient(i, &x);
                if problem.noise > 0.0 {
                    gi += gaussian_dvector(d, &it.substream(2 * i as u64)) * problem.noise;
                }
                compress(&to_f32_vector(&gi)?, config.worker_spec(i), &it.substream(2 * i as u64 + 1))
            })
            .collect::<Result<Vec<_>>>()?;
        let step_dir: Vec<f32> = match ina.as_mut() {
            None => {
                let mut sum = vec![0.0f64; d];
                for delta in &deltas {
                    for (s, &v) in sum.iter_mut().zip(delta.as_slice()) {
                        *s += v as f64;
                    }
                }
                let sum = DenseVector::from_f64(&sum)
                    .map_err(|_| Error::Divergence("aggregate left the binary32 range".into()))?;
                compress(&sum, &config.master_spec, &it.substream(u64::MAX))?.into_inner()
            }
            Some(group) => {
                let r = group.aggregate(&deltas)?;
                clipped_inputs += r.clipped_inputs as u64;
                r.values.into_inner()
            }
        };
        let scale = eta / n as f64;
        for (xi, &gk) in x.iter_mut().zip(&step_dir) {
            *xi -= scale * gk as f64;
        }
    }
    if let Some(group) = ina {
        group.finish()?;
    }
    let final_f = problem.value(&x);
    let sampled_k = base.substream(u64::MAX).bits_at(0) % config.iterations;
    let mean_grad_norm_sq = rows.iter().map(|r| r.grad_norm_sq).sum::<f64>() / rows.len() as f64;
    Ok(RunTrace {
        sampled_grad_norm_sq: rows[sampled_k as usize].grad_norm_sq,
        rows,
        final_x: x.as_slice().to_vec(),
        final_f,
        eta,
        alpha,
        beta,
        sampled_k,
        mean_grad_norm_sq,
        clipped_inputs,
    })
}

/// Run description read from a TOML file.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdFileConfig {
    pub problem: ProblemKind,
    pub d: usize,
    pub n: usize,
    #[serde(default)]
    pub noise: f64,
    #[serde(default = "default_true")]
    pub shared_data: bool,
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(default = "default_samples")]
    pub samples_per_worker: usize,
    #[serde(default = "default_reg")]
    pub reg: f64,
    #[serde(default)]
    pub problem_seed: u64,
    pub worker: String,
    #[serde(default = "default_identity")]
    pub master: String,
    /// `fixed`, `accuracy` or `horizon`.
    pub step: String,
    pub eta: Option<f64>,
    pub epsilon: Option<f64>,
    pub iterations: u64,
    #[serde(default)]
    pub seeds: Vec<u64>,
    /// `exact` or `ina`.
    #[serde(default = "default_exact")]
    pub aggregation: String,
    pub ina_addr: Option<String>,
    #[serde(default)]
    pub session_id: u64,
}

fn default_true() -> bool {
    true
}
fn default_mu() -> f64 {
    0.1
}
fn default_samples() -> usize {
    50
}
fn default_reg() -> f64 {
    0.01
}
fn default_identity() -> String {
    "identity".into()
}
fn default_exact() -> String {
    "exact".into()
}

impl SgdFileConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn build_problem(&self) -> Result<SyntheticProblem> {
        match self.problem {
            ProblemKind::Quadratic => {
                SyntheticProblem::random_quadratic(self.d, self.n, self.mu, self.noise, self.shared_data, self.problem_seed)
            }
            ProblemKind::Logistic => SyntheticProblem::random_logistic(
                self.d,
                self.n,
                self.samples_per_worker,
                self.reg,
                self.noise,
                self.shared_data,
                self.problem_seed,
            ),
        }
    }

    /// Run configuration for one seed.
    pub fn sgd_config(&self, seed: u64) -> Result<SgdConfig> {
        let step = match self.step.as_str() {
            "fixed" => StepRule::Fixed(self.eta.ok_or_else(|| Error::Config("step = fixed needs eta".into()))?),
            "accuracy" => {
                StepRule::Accuracy(self.epsilon.ok_or_else(|| Error::Config("step = accuracy needs epsilon".into()))?)
            }
            "horizon" => StepRule::Horizon,
            other => return Err(Error::Config(format!("unknown step rule {other:?}"))),
        };
        let aggregation = match self.aggregation.as_str() {
            "exact" => Aggregation::Exact,
            "ina" => {
                let addr = self
                    .ina_addr
                    .as_deref()
                    .ok_or_else(|| Error::Config("aggregation = ina needs ina_addr".into()))?;
                Aggregation::Ina {
                    addr: addr
                        .parse()
                        .map_err(|e| Error::Config(format!("bad ina_addr {addr:?}: {e}")))?,
                    session_id: self.session_id ^ seed,
                    timeout: crate::ina::server::DEFAULT_TIMEOUT,
                }
            }
            other => return Err(Error::Config(format!("unknown aggregation {other:?}"))),
        };
        Ok(SgdConfig {
            worker_specs: vec![self.worker.parse()?],
            master_spec: self.master.parse()?,
            step,
            iterations: self.iterations,
            seed,
            aggregation,
        })
    }
}
