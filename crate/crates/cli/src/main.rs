//! `natcomp`: command-line front end for the compression toolkit.
//!
//! Exit codes: 0 success, 2 usage, 3 input or configuration error,
//! 4 runtime failure (divergence, aggregation session, protocol).

mod output;
mod vecfile;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use natcomp::bounds::{self, CostModel, CostModelInput, Kappa, ProblemSpec, SparseIndexCost};
use natcomp::codec::{self, DitherPayload};
use natcomp::dither::{self, LevelLadder};
use natcomp::ina::client::InaWorker;
use natcomp::ina::{Hello, InaServer, ServerConfig, MAX_CHUNK};
use natcomp::sgd::{self, SgdFileConfig};
use natcomp::variance::{self, InputLaw};
use natcomp::{compress, CompressorSpec, Error, NormMode, Result, RngStream};

use output::{emit, Format};

#[derive(Parser, Debug)]
#[command(name = "natcomp", version, about = "Unbiased gradient compression toolkit")]
struct Cli {
    /// Seed for every random draw; printed to stderr by randomized commands.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output file (stdout when omitted).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compress a vector file into an encoded block.
    Compress(CompressArgs),
    /// Decode an encoded block back to a vector file.
    Decode(DecodeArgs),
    /// Measure per-trial normalized variance.
    Variance(VarianceArgs),
    /// Analytic ω, and α/β when problem constants are given.
    Bounds(BoundsArgs),
    /// Speedup factors of a communication model.
    CostTable(CostTableArgs),
    /// Variance-versus-bits scatter data.
    Fig1(Fig1Args),
    /// Distributed SGD from a TOML run description.
    Sgd(SgdArgs),
    /// Integer aggregation service and worker.
    #[command(subcommand)]
    Ina(InaCommand),
    /// Histogram of binary exponents of a vector file.
    Hist(HistArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum CodecChoice {
    Nat9,
    Nat8c,
}

#[derive(Args, Debug)]
struct CompressArgs {
    #[arg(long)]
    spec: CompressorSpec,
    #[arg(long)]
    input: PathBuf,
    /// Encoded block destination.
    #[arg(long)]
    block: PathBuf,
    /// Wire format for power-of-two outputs.
    #[arg(long, value_enum, default_value_t = CodecChoice::Nat9)]
    codec: CodecChoice,
}

#[derive(Args, Debug)]
struct DecodeArgs {
    #[arg(long)]
    block: PathBuf,
    /// Vector file destination (`.f32` for binary).
    #[arg(long)]
    vector: PathBuf,
}

#[derive(Args, Debug)]
struct VarianceArgs {
    #[arg(long)]
    spec: CompressorSpec,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// Recorded input vectors instead of Gaussian draws.
    #[arg(long)]
    input: Vec<PathBuf>,
    /// Summary row destination.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BoundsArgs {
    #[arg(long)]
    spec: CompressorSpec,
    #[arg(long)]
    d: usize,
    /// Master-side compressor for α/β.
    #[arg(long, default_value = "identity")]
    master: CompressorSpec,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 0.0)]
    sigma2: f64,
    #[arg(long, default_value_t = 0.0)]
    zeta2: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum IndexCostArg {
    Positions,
    Binomial,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum KappaArg {
    One,
    Min,
}

#[derive(Args, Debug)]
struct CostTableArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    model: u8,
    #[arg(long, default_value_t = 1_000_000)]
    d: usize,
    /// Kept coordinates for sparsification (default d/10).
    #[arg(long)]
    q: Option<usize>,
    #[arg(long, value_enum, default_value_t = IndexCostArg::Positions)]
    index_cost: IndexCostArg,
    #[arg(long, default_value_t = 9)]
    nat_sparse_width: u32,
    #[arg(long, value_enum, default_value_t = KappaArg::One)]
    kappa: KappaArg,
    #[arg(long, default_value_t = 64)]
    s_max: u32,
}

#[derive(Args, Debug)]
struct Fig1Args {
    #[arg(long, default_value_t = 1_000_000)]
    d: usize,
    #[arg(long, default_value_t = 16)]
    s_max: u32,
}

#[derive(Args, Debug)]
struct SgdArgs {
    #[arg(long)]
    config: PathBuf,
    /// Summary rows (one per seed) destination.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum InaCommand {
    /// Run the aggregator until killed.
    Serve {
        #[arg(long)]
        listen: String,
        #[arg(long)]
        workers: u16,
        #[arg(long, default_value_t = 5000)]
        timeout_ms: u64,
    },
    /// Contribute one vector to a session and write the aggregate.
    Worker {
        #[arg(long)]
        connect: String,
        #[arg(long)]
        workers: u16,
        #[arg(long)]
        worker_id: u16,
        #[arg(long, default_value_t = 1)]
        session: u64,
        #[arg(long)]
        input: PathBuf,
        /// Aggregate destination vector file.
        #[arg(long)]
        vector: PathBuf,
        #[arg(long, default_value_t = MAX_CHUNK as u16)]
        chunk: u16,
        #[arg(long, default_value_t = 10_000)]
        timeout_ms: u64,
    },
}

#[derive(Args, Debug)]
struct HistArgs {
    #[arg(long)]
    input: PathBuf,
}

fn announce_seed(seed: u64) {
    eprintln!("seed: {seed}");
}

#[derive(Serialize)]
struct CompressStats {
    spec: String,
    codec: &'static str,
    d: usize,
    block_bytes: usize,
    payload_bits: u64,
    fp32_ratio: f64,
    clipped: usize,
    seed: u64,
}

fn cmd_compress(cli: &Cli, a: &CompressArgs) -> Result<()> {
    announce_seed(cli.seed);
    let x = vecfile::load(&a.input)?;
    let rng = RngStream::new(cli.seed, 0);
    a.spec.validate(x.len())?;
    let (block, codec_name, clipped) = match &a.spec {
        CompressorSpec::StdDither { p, s } => {
            let r = dither::dither(&x, &LevelLadder::linear(*s)?, *p, NormMode::Exact, &rng)?;
            (codec::encode_dither(&DitherPayload::from(&r))?, "dither", 0)
        }
        CompressorSpec::NatDither { p, s, norm } => {
            let r = dither::dither(&x, &LevelLadder::geometric(*s)?, *p, *norm, &rng)?;
            (codec::encode_dither(&DitherPayload::from(&r))?, "dither", 0)
        }
        spec if spec.emits_powers_of_two() => {
            let y = compress(&x, spec, &rng)?;
            match a.codec {
                CodecChoice::Nat9 => (codec::encode_nat9(&y)?, "nat9", 0),
                CodecChoice::Nat8c => {
                    let (b, c) = codec::encode_nat8c(&y)?;
                    (b, "nat8c", c)
                }
            }
        }
        other => {
            return Err(Error::InvalidInput(format!(
                "{other} produces arbitrary binary32 values; no compressed wire format applies"
            )))
        }
    };
    fs::write(&a.block, block.as_bytes())?;
    let payload_bits = block.payload().len() as u64 * 8;
    let stats = CompressStats {
        spec: a.spec.to_string(),
        codec: codec_name,
        d: x.len(),
        block_bytes: block.as_bytes().len(),
        payload_bits,
        fp32_ratio: if payload_bits == 0 { 0.0 } else { 32.0 * x.len() as f64 / payload_bits as f64 },
        clipped,
        seed: cli.seed,
    };
    emit(&[stats], cli.format, cli.out.as_deref())
}

fn cmd_decode(a: &DecodeArgs) -> Result<()> {
    let bytes = fs::read(&a.block)?;
    let v = codec::decode(&bytes)?.to_vector()?;
    vecfile::save(&a.vector, &v)
}

#[derive(Serialize)]
struct TrialRow {
    trial: usize,
    omega: f64,
}

#[derive(Serialize)]
struct SummaryRow {
    spec: String,
    d: usize,
    trials: usize,
    min: f64,
    q25: f64,
    median: f64,
    q75: f64,
    max: f64,
}

fn cmd_variance(cli: &Cli, a: &VarianceArgs) -> Result<()> {
    announce_seed(cli.seed);
    let (law, d) = if a.input.is_empty() {
        let d = a
            .d
            .ok_or_else(|| Error::Config("--d is required for Gaussian inputs".into()))?;
        (InputLaw::Gaussian, d)
    } else {
        let vs = a.input.iter().map(|p| vecfile::load(p)).collect::<Result<Vec<_>>>()?;
        let d = vs[0].len();
        (InputLaw::Vectors(vs), d)
    };
    let r = variance::empirical_omega(&a.spec, d, a.trials, &law, &RngStream::new(cli.seed, 0))?;
    let rows: Vec<TrialRow> = r
        .omega_samples
        .iter()
        .enumerate()
        .map(|(trial, &omega)| TrialRow { trial, omega })
        .collect();
    emit(&rows, cli.format, cli.out.as_deref())?;
    let q = r.quartiles;
    let summary = SummaryRow {
        spec: a.spec.to_string(),
        d,
        trials: a.trials,
        min: q.min,
        q25: q.q25,
        median: q.median,
        q75: q.q75,
        max: q.max,
    };
    match &a.summary {
        Some(p) => emit(&[summary], cli.format, Some(p)),
        None => {
            eprintln!(
                "median omega {} (min {}, max {}) over {} trials",
                q.median, q.min, q.max, a.trials
            );
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct BoundsRow {
    spec: String,
    master: String,
    d: usize,
    omega_w: f64,
    omega_m: f64,
    n: Option<usize>,
    alpha: Option<f64>,
    beta: Option<f64>,
}

fn cmd_bounds(cli: &Cli, a: &BoundsArgs) -> Result<()> {
    let w = bounds::omega_of(&a.spec, a.d)?.value;
    let m = bounds::omega_of(&a.master, a.d)?.value;
    let ab = match a.n {
        Some(n) => Some(bounds::alpha_beta(
            &ProblemSpec {
                n,
                sigma2: a.sigma2,
                zeta2: a.zeta2,
                l: 1.0,
                f0_minus_fstar: 0.0,
            },
            w,
            m,
        )?),
        None => None,
    };
    let row = BoundsRow {
        spec: a.spec.to_string(),
        master: a.master.to_string(),
        d: a.d,
        omega_w: w,
        omega_m: m,
        n: a.n,
        alpha: ab.map(|x| x.0),
        beta: ab.map(|x| x.1),
    };
    emit(&[row], cli.format, cli.out.as_deref())
}

#[derive(Serialize)]
struct CostRow {
    model: u8,
    family: String,
    low: f64,
    high: f64,
    low_rounded: String,
    high_rounded: String,
    s_low: Option<u32>,
    s_high: Option<u32>,
    bits_low: f64,
    bits_high: f64,
}

fn cmd_cost_table(cli: &Cli, a: &CostTableArgs) -> Result<()> {
    let mut input = CostModelInput::new(CostModel::from_number(a.model)?, a.d, a.q.unwrap_or(a.d / 10).max(1));
    input.index_cost = match a.index_cost {
        IndexCostArg::Positions => SparseIndexCost::PositionList,
        IndexCostArg::Binomial => SparseIndexCost::Binomial,
    };
    input.nat_sparse_width = a.nat_sparse_width;
    input.kappa = match a.kappa {
        KappaArg::One => Kappa::One,
        KappaArg::Min => Kappa::Min,
    };
    input.s_max = a.s_max;
    let rows: Vec<CostRow> = bounds::cost_table(&input)?
        .into_iter()
        .map(|r| CostRow {
            model: a.model,
            family: r.family.to_string(),
            low: r.low,
            high: r.high,
            low_rounded: format!("{:.1}", r.low),
            high_rounded: format!("{:.1}", r.high),
            s_low: r.s_low,
            s_high: r.s_high,
            bits_low: r.bits_low,
            bits_high: r.bits_high,
        })
        .collect();
    emit(&rows, cli.format, cli.out.as_deref())
}

#[derive(Serialize)]
struct Fig1Row {
    label: String,
    family: String,
    omega_plus_one: f64,
    bits: f64,
}

fn cmd_fig1(cli: &Cli, a: &Fig1Args) -> Result<()> {
    let rows: Vec<Fig1Row> = bounds::fig1_points(a.d, a.s_max)?
        .into_iter()
        .map(|p| Fig1Row {
            label: p.label,
            family: p.family.to_string(),
            omega_plus_one: p.omega_plus_one,
            bits: p.bits,
        })
        .collect();
    emit(&rows, cli.format, cli.out.as_deref())
}

#[derive(Serialize)]
struct TraceCsvRow {
    seed: u64,
    k: u64,
    f: f64,
    grad_norm_sq: f64,
    bits_up: u64,
    bits_down: u64,
}

#[derive(Serialize)]
struct SgdSummaryRow {
    seed: u64,
    eta: f64,
    alpha: f64,
    beta: f64,
    final_f: f64,
    sampled_k: u64,
    sampled_grad_norm_sq: f64,
    mean_grad_norm_sq: f64,
    clipped_inputs: u64,
}

fn cmd_sgd(cli: &Cli, a: &SgdArgs) -> Result<()> {
    let file = SgdFileConfig::load(&a.config)?;
    let seeds = if file.seeds.is_empty() { vec![cli.seed] } else { file.seeds.clone() };
    eprintln!("seeds: {seeds:?}");
    let problem = file.build_problem()?;
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for &seed in &seeds {
        let t = sgd::run(&problem, &file.sgd_config(seed)?)?;
        rows.extend(t.rows.iter().map(|r| TraceCsvRow {
            seed,
            k: r.k,
            f: r.f,
            grad_norm_sq: r.grad_norm_sq,
            bits_up: r.bits_up,
            bits_down: r.bits_down,
        }));
        summary.push(SgdSummaryRow {
            seed,
            eta: t.eta,
            alpha: t.alpha,
            beta: t.beta,
            final_f: t.final_f,
            sampled_k: t.sampled_k,
            sampled_grad_norm_sq: t.sampled_grad_norm_sq,
            mean_grad_norm_sq: t.mean_grad_norm_sq,
            clipped_inputs: t.clipped_inputs,
        });
    }
    emit(&rows, cli.format, cli.out.as_deref())?;
    if let Some(p) = &a.summary {
        emit(&summary, cli.format, Some(p))?;
    }
    Ok(())
}

fn cmd_ina(cli: &Cli, c: &InaCommand) -> Result<()> {
    announce_seed(cli.seed);
    match c {
        InaCommand::Serve {
            listen,
            workers,
            timeout_ms,
        } => {
            let mut config = ServerConfig::new(*workers, cli.seed);
            config.timeout = Duration::from_millis(*timeout_ms);
            let server = InaServer::bind(listen.as_str(), config)?;
            eprintln!("listening on {}", server.local_addr()?);
            server.serve()
        }
        InaCommand::Worker {
            connect,
            workers,
            worker_id,
            session,
            input,
            vector,
            chunk,
            timeout_ms,
        } => {
            let x = vecfile::load(input)?;
            let nat = compress(&x, &CompressorSpec::Nat, &RngStream::new(cli.seed, *worker_id as u64))?;
            let hello = Hello {
                session_id: *session,
                worker_id: *worker_id,
                n_workers: *workers,
                d: x.len() as u64,
                chunk_size: *chunk,
            };
            let mut w = InaWorker::connect(connect.as_str(), hello, Duration::from_millis(*timeout_ms))?;
            let r = w.allreduce(0, &nat)?;
            w.finish()?;
            if r.clipped_inputs > 0 {
                eprintln!("{} inputs clipped to the 8-bit exponent range", r.clipped_inputs);
            }
            vecfile::save(vector, &r.values)
        }
    }
}

#[derive(Serialize)]
struct HistRow {
    exponent: String,
    count: u64,
}

fn cmd_hist(cli: &Cli, a: &HistArgs) -> Result<()> {
    let h = codec::exponent_histogram(&vecfile::load(&a.input)?);
    let mut rows: Vec<HistRow> = h
        .counts
        .iter()
        .map(|(e, &count)| HistRow {
            exponent: e.to_string(),
            count,
        })
        .collect();
    rows.push(HistRow {
        exponent: "zero".into(),
        count: h.zeros,
    });
    emit(&rows, cli.format, cli.out.as_deref())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidInput(_) | Error::Config(_) | Error::Format(_) | Error::Encode(_) | Error::Io(_) => 3,
        Error::Unbounded(_) | Error::Divergence(_) | Error::Protocol(_) | Error::Session(_) => 4,
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Compress(a) => cmd_compress(cli, a),
        Command::Decode(a) => cmd_decode(a),
        Command::Variance(a) => cmd_variance(cli, a),
        Command::Bounds(a) => cmd_bounds(cli, a),
        Command::CostTable(a) => cmd_cost_table(cli, a),
        Command::Fig1(a) => cmd_fig1(cli, a),
        Command::Sgd(a) => cmd_sgd(cli, a),
        Command::Ina(c) => cmd_ina(cli, c),
        Command::Hist(a) => cmd_hist(cli, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

