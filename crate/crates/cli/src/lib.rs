//! The `converse` command-line tool: non-blind deconvolution with a known
//! kernel, a Wiener baseline, the verification suite and a benchmark.

pub mod image;
pub mod report;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use converse_core::kernel_file::read_kernel_file;
use converse_core::verify::{self, Fault, VerifyOptions};
use converse_core::{
    converse_s1_fast, converse_solve, forward_model, normalize_kernel, prior_estimate, ConverseConfig, ConverseError,
    KernelBank, LambdaParam, PadMode, Tensor4, X0Strategy,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::image::{load_image, psnr, save_image, ImageError};
use crate::report::{BenchConfig, BenchReport, ImageShape, Residual, RestoreConfig, RunReport};

pub const THREADS_ENV: &str = "CONVERSE_THREADS";

pub const EXIT_PROPERTY_FAILURE: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_IO: u8 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("{context}: {source}")]
    Input { context: String, source: ConverseError },
    #[error(transparent)]
    Solver(#[from] ConverseError),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Image(_) | CliError::Input { .. } => EXIT_IO,
            CliError::Solver(e) => match e {
                ConverseError::Io(_) | ConverseError::MalformedKernel(_) | ConverseError::MalformedCheckpoint(_) => {
                    EXIT_IO
                }
                _ => EXIT_USAGE,
            },
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "converse", version, about = "Reverse-convolution image restoration with a known kernel")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Deconvolve (and optionally upscale) an image with a known kernel.
    Deconv(DeconvArgs),
    /// Tikhonov inverse filter at scale 1 with a zero prior, as a baseline.
    Wiener(WienerArgs),
    /// Run the seeded property and oracle suite; exit 1 on any failure.
    Verify(VerifyArgs),
    /// Time the solver on random data and report the median.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ImageArgs {
    /// Input PGM or PPM image.
    #[arg(short, long, visible_alias = "input-image")]
    pub input: PathBuf,
    /// Kernel file: header `C k_h k_w` then the rows. One channel is broadcast.
    #[arg(short, long, visible_alias = "kernel-file")]
    pub kernel: PathBuf,
    /// Regularization weight, used directly.
    #[arg(short, long, value_parser = parse_positive)]
    pub lambda: f64,
    /// Output image, written as 8-bit PGM or PPM after clamping to [0, 1].
    #[arg(short, long, visible_alias = "output-image")]
    pub output: PathBuf,
    /// Ground truth to compute PSNR against (defaults to the input when shapes match).
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Border added before the solve and cropped (times the scale) after.
    /// Leave at 0 for circular blurs; use reflect or replicate padding for real ones.
    #[arg(long, default_value_t = 0)]
    pub pad: usize,
    /// Padding mode: zero, reflect, replicate or circular.
    #[arg(long, default_value_t = PadMode::Circular)]
    pub mode: PadMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PriorArg {
    /// Nearest-neighbour upscaling of the input.
    Interp,
    Zero,
}

impl From<PriorArg> for X0Strategy {
    fn from(p: PriorArg) -> Self {
        match p {
            PriorArg::Interp => X0Strategy::InterpNearest,
            PriorArg::Zero => X0Strategy::Zero,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct DeconvArgs {
    #[command(flatten)]
    pub image: ImageArgs,
    /// Upscaling factor.
    #[arg(short, long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    pub scale: u32,
    /// Prior the regularizer pulls towards.
    #[arg(long, value_enum, default_value_t = PriorArg::Interp)]
    pub x0: PriorArg,
}

#[derive(Debug, Clone, Args)]
pub struct WienerArgs {
    #[command(flatten)]
    pub image: ImageArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FaultArg {
    CorruptBlockMean,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Largest low-resolution side in the oracle grid (grid sides are 3, 4 and 6).
    #[arg(long, default_value_t = 6, value_parser = clap::value_parser!(u32).range(3..))]
    pub max_size: u32,
    /// Also list every instance with its seed and parameters.
    #[arg(long)]
    pub instances: bool,
    #[arg(long, value_enum, hide = true)]
    pub inject_fault: Option<FaultArg>,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    /// Input size as HxW.
    #[arg(long, default_value = "64x64", value_parser = parse_size)]
    pub size: (usize, usize),
    #[arg(short, long, default_value_t = 8, value_parser = clap::value_parser!(u32).range(1..))]
    pub channels: u32,
    #[arg(short, long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    pub scale: u32,
    /// Timed repetitions after one warm-up run.
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u32).range(3..))]
    pub reps: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn parse_positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v > 0.0 => Ok(v),
        _ => Err(format!("expected a positive finite number, got `{s}`")),
    }
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let parsed = s.split_once(['x', 'X']).and_then(|(h, w)| Some((h.parse().ok()?, w.parse().ok()?)));
    match parsed {
        Some((h, w)) if h > 0 && w > 0 => Ok((h, w)),
        _ => Err(format!("expected HxW with positive sides, got `{s}`")),
    }
}

/// Thread cap from `CONVERSE_THREADS`; 0 or unset means automatic.
pub fn threads_from_env() -> Result<usize, CliError> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(0),
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{THREADS_ENV} must be a non-negative integer, got `{v}`"))),
    }
}

/// Result of a command that ran to completion.
pub struct Outcome {
    pub json: String,
    /// False when verification found a failing property.
    pub success: bool,
    pub diagnostics: Vec<String>,
}

/// Parses arguments, runs the command and maps the result to an exit code.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match threads_from_env().and_then(|threads| run_with_threads(cli.command, threads)) {
        Ok(outcome) => {
            println!("{}", outcome.json);
            for line in &outcome.diagnostics {
                eprintln!("{line}");
            }
            if outcome.success {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_PROPERTY_FAILURE)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

/// Runs `command` inside a pool of `threads` workers (0 = automatic).
pub fn run_with_threads(command: Command, threads: usize) -> Result<Outcome, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot build thread pool: {e}")))?;
    pool.install(|| run(command))
}

pub fn run(command: Command) -> Result<Outcome, CliError> {
    match command {
        Command::Deconv(args) => {
            let cfg = ConverseConfig {
                scale: args.scale as usize,
                pad_mode: args.image.mode,
                pad_size: args.image.pad,
                x0: args.x0.into(),
            };
            restore("deconv", &args.image, cfg, converse_solve).map(Outcome::report)
        }
        Command::Wiener(args) => {
            let cfg =
                ConverseConfig { scale: 1, pad_mode: args.image.mode, pad_size: args.image.pad, x0: X0Strategy::Zero };
            restore("wiener", &args.image, cfg, converse_s1_fast).map(Outcome::report)
        }
        Command::Verify(args) => run_verify(&args),
        Command::Bench(args) => bench(&args).map(Outcome::report),
    }
}

impl Outcome {
    fn report(report: impl serde::Serialize) -> Self {
        let json = serde_json::to_string_pretty(&report).expect("reports serialize");
        Outcome { json, success: true, diagnostics: Vec::new() }
    }
}

type Solver = fn(&Tensor4, &KernelBank, &LambdaParam, &ConverseConfig) -> converse_core::Result<Tensor4>;

fn shape_of(t: &Tensor4) -> ImageShape {
    ImageShape { channels: t.channels(), height: t.height(), width: t.width() }
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

/// Loads a kernel file and matches it to `channels` image channels.
pub fn load_kernel(path: &Path, channels: usize) -> Result<KernelBank, CliError> {
    let context = || display(path);
    let k = read_kernel_file(path).map_err(|source| CliError::Input { context: context(), source })?;
    match k.channels() {
        1 => k.broadcast(channels).map_err(|source| CliError::Input { context: context(), source }),
        c if c == channels => Ok(k),
        c => Err(CliError::Input {
            context: context(),
            source: ConverseError::MalformedKernel(format!("{c} kernel channels for a {channels}-channel image")),
        }),
    }
}

fn l2(t: &[f64]) -> f64 {
    t.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn restore(command: &'static str, args: &ImageArgs, cfg: ConverseConfig, solve: Solver) -> Result<RunReport, CliError> {
    let y = load_image(&args.input)?;
    let channels = y.channels();
    let kernel = load_kernel(&args.kernel, channels)?;
    let reference = args.reference.as_deref().map(load_image).transpose()?;
    let lambda = LambdaParam::fixed(vec![args.lambda; channels])?;

    let start = Instant::now();
    let x = solve(&y, &kernel, &lambda, &cfg)?;
    let runtime_ms = start.elapsed().as_secs_f64() * 1e3;

    let predicted = forward_model(&x, &normalize_kernel(&kernel), cfg.scale)?;
    let x0 = prior_estimate(&y, &cfg)?;
    let residual =
        Residual { data: l2(predicted.axpby(1.0, &y, -1.0)?.data()), prior: l2(x.axpby(1.0, &x0, -1.0)?.data()) };
    save_image(&args.output, &x)?;

    let (psnr_value, psnr_against) = match &reference {
        Some(r) if r.shape() == x.shape() => (psnr(&x, r), Some("reference")),
        Some(r) => {
            return Err(CliError::Usage(format!("reference is {:?} but the output is {:?}", shape_of(r), shape_of(&x))))
        }
        None if y.shape() == x.shape() => (psnr(&x, &y), Some("input")),
        None => (None, None),
    };
    let input_psnr = reference.as_ref().filter(|r| r.shape() == y.shape()).and_then(|r| psnr(&y, r));

    Ok(RunReport {
        command,
        config: RestoreConfig {
            input: display(&args.input),
            kernel: display(&args.kernel),
            output: display(&args.output),
            reference: args.reference.as_deref().map(display),
            lambda: args.lambda,
            solver: cfg,
            threads: rayon::current_num_threads(),
        },
        input_shape: shape_of(&y),
        output_shape: shape_of(&x),
        runtime_ms,
        psnr: psnr_value,
        psnr_against,
        input_psnr,
        residual,
    })
}

fn run_verify(args: &VerifyArgs) -> Result<Outcome, CliError> {
    let options = VerifyOptions {
        seed: args.seed,
        max_size: args.max_size as usize,
        fault: args.inject_fault.map(|FaultArg::CorruptBlockMean| Fault::CorruptBlockMean),
    };
    let report = verify::run(&options);
    let mut value = serde_json::to_value(&report).expect("reports serialize");
    if args.instances {
        value["instances"] = serde_json::to_value(&report.instances).expect("reports serialize");
    }
    let diagnostics = report
        .properties
        .iter()
        .filter(|p| !p.passed)
        .map(|p| match &p.first_failure {
            Some(f) => format!(
                "FAILED {}: {} of {} instances; first at index {} seed {} ({}): {}",
                p.name, p.failed, p.instances, f.index, f.seed, f.params, f.detail
            ),
            None => format!("FAILED {}", p.name),
        })
        .collect();
    Ok(Outcome {
        json: serde_json::to_string_pretty(&value).expect("reports serialize"),
        success: report.passed,
        diagnostics,
    })
}

pub const BENCH_KERNEL_SIZE: usize = 5;

/// Median of a non-empty sample.
pub fn median(samples: &[f64]) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

fn bench(args: &BenchArgs) -> Result<BenchReport, CliError> {
    let (height, width) = args.size;
    let channels = args.channels as usize;
    let cfg = ConverseConfig { scale: args.scale as usize, ..ConverseConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let y = converse_core::testing::random_tensor(&mut rng, [1, channels, height, width]);
    let logits = converse_core::testing::gaussian_vec(&mut rng, channels * BENCH_KERNEL_SIZE * BENCH_KERNEL_SIZE);
    let kernel = KernelBank::from_logits(channels, BENCH_KERNEL_SIZE, BENCH_KERNEL_SIZE, logits)?;
    let lambda = LambdaParam::zeros(channels);

    let time = || -> Result<f64, CliError> {
        let start = Instant::now();
        std::hint::black_box(converse_solve(&y, &kernel, &lambda, &cfg)?);
        Ok(start.elapsed().as_secs_f64() * 1e3)
    };
    let warmup_ms = time()?;
    let samples_ms = (0..args.reps).map(|_| time()).collect::<Result<Vec<_>, _>>()?;

    Ok(BenchReport {
        command: "bench",
        config: BenchConfig {
            height,
            width,
            channels,
            kernel_size: BENCH_KERNEL_SIZE,
            reps: args.reps as usize,
            seed: args.seed,
            solver: cfg,
            threads: rayon::current_num_threads(),
        },
        runtime_ms: median(&samples_ms),
        warmup_ms,
        samples_ms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sizes_and_lambdas() {
        assert_eq!(parse_size("64x32"), Ok((64, 32)));
        assert!(parse_size("64").is_err());
        assert!(parse_size("0x4").is_err());
        assert_eq!(parse_positive("1e-4"), Ok(1e-4));
        for bad in ["0", "-1", "nan", "inf", "x"] {
            assert!(parse_positive(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn median_of_odd_and_even_samples() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
    }

    #[test]
    fn bench_rejects_fewer_than_three_reps() {
        assert!(Cli::try_parse_from(["converse", "bench", "--reps", "2"]).is_err());
        assert!(Cli::try_parse_from(["converse", "bench", "--reps", "3"]).is_ok());
    }

    #[test]
    fn clap_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
