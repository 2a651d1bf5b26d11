//! The `unmix` command line.
//!
//! Exit codes: 0 success, 2 bad input (arguments, files, config, undefined
//! metric), 3 solver diverged, 4 bandwidth tuning failed.

use std::ffi::OsString;
use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use unmix_core::metrics::{evaluate, MetricName};
use unmix_core::synth::{gen_cube, gen_endmembers, GroundTruth, MixingModel, SyntheticSpec};
use unmix_core::{validate_problem, EndmemberMatrix, ObservationMatrix, TerminationReason, UnmixError};

use crate::algorithms::{format_report, run, AlgorithmName, RunDetails, RunParams, SigmaChoice};
use crate::config::{parse_model, parse_range, parse_snr};
use crate::experiment::{format_tsv, load_config, prepare_endmembers, run_experiment, worker_count, ExperimentError};
use crate::matrix_io::{format_value, read_matrix, write_matrix, MatrixFileError};

pub const EXIT_INPUT: u8 = 2;
pub const EXIT_DIVERGED: u8 = 3;
pub const EXIT_TUNING_FAILED: u8 = 4;

/// File names written by `generate`.
pub const Y_FILE: &str = "Y.txt";
pub const M_FILE: &str = "M.txt";
pub const X_TRUE_FILE: &str = "X_true.txt";
pub const META_FILE: &str = "truth.meta";

const DEFAULTS_HELP: &str = "\
Defaults:
  sigma            tuned automatically unless --sigma is given; the search starts at
                   sqrt(R/8L)*||Y - M X_LS||_F, grows by 1.2, accepts when
                   ||Y - MX||_F / ||Y - M X_LS||_F < 2, restarts at sigma0/p once
                   sigma exceeds 1000*sigma0, and gives up after 60 attempts
  rho              1 (ADMM penalty, scaled objective sigma^2 * correntropy)
  lambda           0; sparse terms use 1/2||y - Mx||^2 + lambda*||x||_1 scaling
  max-iters        1000 outer iterations; 50 inner steps at tolerance 1e-6
  stop thresholds  sqrt(R*T)*1e-5 for the primal and dual residuals
  inner step       preconditioned by the band-weighted Gram matrix, step 1
  init             cusal-fc: simplex projection of LS; cusal-sp: nonnegative LS
  baselines        SUnSAL-style ADMM, tolerance 1e-10, at most 20000 iterations
  generate         --model lmm --snr inf --corrupt 0 --seed 0 --b-range -3,3
                   --endmember-seed 1 --min-angle 10 (synthetic spectra)
  eval             SAD in radians (--degrees for degrees); --exclude bands are
                   1-based inclusive ranges such as 1-3,105-115
  experiment       lambda_grid 1e-5,5e-5,1e-4,5e-4,1e-3,1e-2,1e-1 with the best
                   value per cell by the first metric; UNMIX_THREADS caps workers
                   (default: available cores)

Exit codes: 0 ok, 2 bad input, 3 solver diverged, 4 sigma tuning failed";

#[derive(Debug, Parser)]
#[command(name = "unmix", version, about = "Robust hyperspectral unmixing", after_help = DEFAULTS_HELP)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic cube: Y, M, X_true and truth.meta
    Generate(GenerateArgs),
    /// Unconstrained least squares
    Ls(UnmixArgs),
    /// Fully constrained least squares
    Fcls(UnmixArgs),
    /// Nonnegative least squares with an l1 penalty
    SunsalSparse(UnmixArgs),
    /// Correntropy unmixing under the sum-to-one and nonnegativity constraints
    CusalFc(UnmixArgs),
    /// Sparse correntropy unmixing under nonnegativity
    CusalSp(UnmixArgs),
    /// Compare an estimate with a reference
    Eval(EvalArgs),
    /// Run an experiment grid and print a TSV table
    Experiment(ExperimentArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value = "lmm", value_parser = parse_model)]
    pub model: MixingModel,
    #[arg(long = "R", default_value_t = 3)]
    pub r: usize,
    #[arg(long = "L", default_value_t = 244)]
    pub l: usize,
    #[arg(long = "T", default_value_t = 2500)]
    pub t: usize,
    /// Signal-to-noise ratio in dB, or `inf` for no noise
    #[arg(long, default_value = "inf", value_parser = parse_snr)]
    pub snr: f64,
    /// Number of bands replaced by uniform noise
    #[arg(long, default_value_t = 0)]
    pub corrupt: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Nonzero abundances per pixel; dense when absent
    #[arg(long = "K")]
    pub k: Option<usize>,
    /// Interval of the nonlinearity coefficients
    #[arg(long, default_value = "-3,3", value_parser = parse_range, allow_hyphen_values = true)]
    pub b_range: (f64, f64),
    #[arg(long, default_value_t = 1)]
    pub endmember_seed: u64,
    /// Minimum pairwise angle of synthetic endmembers, in degrees
    #[arg(long, default_value_t = 10.0)]
    pub min_angle: f64,
    /// Endmember matrix file used instead of synthetic spectra
    #[arg(long)]
    pub endmembers: Option<PathBuf>,
    /// Output directory, created when missing
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct UnmixArgs {
    /// Observations, L x T
    pub y: PathBuf,
    /// Endmembers, L x R
    pub m: PathBuf,
    /// Estimated abundances, R x T
    #[arg(short, long)]
    pub out: PathBuf,
    /// Fixed kernel bandwidth
    #[arg(long, conflicts_with = "sigma_auto")]
    pub sigma: Option<f64>,
    /// Tune the bandwidth (the default)
    #[arg(long)]
    pub sigma_auto: bool,
    #[arg(long, default_value_t = 1.0)]
    pub rho: f64,
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    /// Outer ADMM iterations
    #[arg(long, default_value_t = 1000)]
    pub max_iters: usize,
    /// Where to write the run report
    #[arg(long)]
    pub report_path: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// rmse, sre or sad
    pub metric: String,
    /// Reference: true abundances, or Y for sad
    pub truth: PathBuf,
    /// Estimate: abundances, or a reconstruction for sad
    pub estimate: PathBuf,
    /// Endmembers; the estimate is then abundances and is reconstructed as M X
    #[arg(long)]
    pub endmembers: Option<PathBuf>,
    /// Bands left out of sad, 1-based inclusive ranges such as 1-3,105-115
    #[arg(long)]
    pub exclude: Option<String>,
    /// Report sad in degrees
    #[arg(long)]
    pub degrees: bool,
    /// Append `algorithm, n_corrupt, seed, value` to this TSV
    #[arg(long)]
    pub append: Option<PathBuf>,
    #[arg(long, default_value = "-")]
    pub algorithm: String,
    #[arg(long, default_value = "-")]
    pub n_corrupt: String,
    #[arg(long, default_value = "-")]
    pub seed: String,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    pub config: PathBuf,
    /// Write the table here instead of stdout
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Already formatted by clap.
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Diverged(String),
    #[error("{0}")]
    TuningFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) | Self::Input(_) => EXIT_INPUT,
            Self::Diverged(_) => EXIT_DIVERGED,
            Self::TuningFailed(_) => EXIT_TUNING_FAILED,
        }
    }
}

impl From<UnmixError> for CliError {
    fn from(e: UnmixError) -> Self {
        match e {
            UnmixError::TuningFailed { .. } => Self::TuningFailed(e.to_string()),
            UnmixError::NonFiniteIterate | UnmixError::InnerSolverFailure => Self::Diverged(e.to_string()),
            _ => Self::Input(e.to_string()),
        }
    }
}

impl From<MatrixFileError> for CliError {
    fn from(e: MatrixFileError) -> Self {
        Self::Input(e.to_string())
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        Self::Input(e.to_string())
    }
}

fn io_error(path: &Path, e: io::Error) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}

pub fn main() -> ExitCode {
    let stdout = io::stdout();
    match run_cli(std::env::args_os(), &mut stdout.lock()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprint!("{msg}");
            ExitCode::from(EXIT_INPUT)
        }
        Err(e) => {
            eprintln!("unmix: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

/// Parses `args` (program name first) and runs the command, printing to `out`.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            write!(out, "{e}").map_err(|e| CliError::Input(e.to_string()))?;
            return Ok(());
        }
        Err(e) => return Err(CliError::Usage(e.render().to_string())),
    };
    match cli.command {
        Command::Generate(args) => cmd_generate(&args),
        Command::Ls(args) => cmd_unmix(AlgorithmName::Ls, &args),
        Command::Fcls(args) => cmd_unmix(AlgorithmName::Fcls, &args),
        Command::SunsalSparse(args) => cmd_unmix(AlgorithmName::SunsalSparse, &args),
        Command::CusalFc(args) => cmd_unmix(AlgorithmName::CusalFc, &args),
        Command::CusalSp(args) => cmd_unmix(AlgorithmName::CusalSp, &args),
        Command::Eval(args) => cmd_eval(&args, out),
        Command::Experiment(args) => cmd_experiment(&args, out),
    }
}

impl GenerateArgs {
    pub fn spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            model: self.model,
            r: self.r,
            l: self.l,
            t: self.t,
            snr_db: self.snr,
            n_corrupt: self.corrupt,
            sparsity_k: self.k,
            seed: self.seed,
            b_range: self.b_range,
        }
    }
}

fn cmd_generate(args: &GenerateArgs) -> Result<(), CliError> {
    let m = match &args.endmembers {
        Some(path) => EndmemberMatrix::new(read_matrix(path)?)?,
        None => gen_endmembers(args.r, args.l, args.endmember_seed, args.min_angle)?,
    };
    let spec = args.spec();
    let (y, truth) = gen_cube(&m, &spec)?;
    fs::create_dir_all(&args.out).map_err(|e| io_error(&args.out, e))?;
    write_matrix(&args.out.join(Y_FILE), y.matrix())?;
    write_matrix(&args.out.join(M_FILE), m.matrix())?;
    write_matrix(&args.out.join(X_TRUE_FILE), truth.x_true.matrix())?;
    let meta_path = args.out.join(META_FILE);
    fs::write(&meta_path, format_truth_meta(&spec, &truth)).map_err(|e| io_error(&meta_path, e))
}

/// `key=value` lines; band indices are 1-based.
pub fn format_truth_meta(spec: &SyntheticSpec, truth: &GroundTruth) -> String {
    let join = |items: Vec<String>| items.join(",");
    let mut out = format!(
        "seed={}\nmodel={}\nR={}\nL={}\nT={}\nsnr_db={}\nnoise_sigma={}\nn_corrupt={}\ncorrupted_bands={}\n",
        truth.seed,
        spec.model.as_str(),
        spec.r,
        spec.l,
        spec.t,
        spec.snr_db,
        format_value(truth.noise_sigma),
        truth.corrupted_bands.len(),
        join(truth.corrupted_bands.iter().map(|b| (b + 1).to_string()).collect()),
    );
    if let Some(k) = spec.sparsity_k {
        out.push_str(&format!("K={k}\n"));
    }
    if let Some(b) = &truth.b {
        out.push_str(&format!(
            "b_range={},{}\nb={}\n",
            spec.b_range.0,
            spec.b_range.1,
            join(b.iter().map(|v| format_value(*v)).collect())
        ));
    }
    out
}

impl UnmixArgs {
    pub fn params(&self) -> RunParams {
        RunParams {
            sigma: match self.sigma {
                Some(s) => SigmaChoice::Fixed(s),
                None => SigmaChoice::Auto,
            },
            rho: self.rho,
            lambda: self.lambda,
            max_outer_iters: self.max_iters,
        }
    }
}

fn cmd_unmix(algorithm: AlgorithmName, args: &UnmixArgs) -> Result<(), CliError> {
    let y = ObservationMatrix::new(read_matrix(&args.y)?)?;
    let m = EndmemberMatrix::new(read_matrix(&args.m)?)?;
    let handle = validate_problem(y, m)?;
    let params = args.params();
    let outcome = run(algorithm, &handle, &params)?;
    write_matrix(&args.out, outcome.abundances.matrix())?;
    if let Some(path) = &args.report_path {
        fs::write(path, format_report(algorithm, &outcome)).map_err(|e| io_error(path, e))?;
    }
    match &outcome.details {
        RunDetails::Correntropy { report, tuning: None }
            if report.termination_reason == TerminationReason::PrimalIncreased =>
        {
            Err(CliError::Diverged(format!(
                "primal residual increased at iteration {} with sigma = {}; outputs written",
                report.iterations_run, report.sigma_used
            )))
        }
        _ => Ok(()),
    }
}

/// 1-based inclusive ranges `1-3,105-115,150` to sorted 0-based indices.
pub fn parse_band_ranges(s: &str) -> Result<Vec<usize>, String> {
    let mut bands = Vec::new();
    for item in s.split(',').map(str::trim).filter(|i| !i.is_empty()) {
        let bad = || format!("bad band range {item:?}");
        let (lo, hi) = match item.split_once('-') {
            Some((a, b)) => (
                a.trim().parse::<usize>().map_err(|_| bad())?,
                b.trim().parse::<usize>().map_err(|_| bad())?,
            ),
            None => {
                let v = item.parse::<usize>().map_err(|_| bad())?;
                (v, v)
            }
        };
        if lo == 0 || lo > hi {
            return Err(bad());
        }
        bands.extend(lo - 1..hi);
    }
    bands.sort_unstable();
    bands.dedup();
    Ok(bands)
}

fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let name = match args.metric.to_ascii_lowercase().as_str() {
        "rmse" => MetricName::Rmse,
        "sre" => MetricName::SreDb,
        "sad" => MetricName::SadRad,
        other => return Err(CliError::Input(format!("unknown metric {other:?} (expected rmse, sre or sad)"))),
    };
    if name != MetricName::SadRad && (args.exclude.is_some() || args.degrees) {
        return Err(CliError::Input("--exclude and --degrees apply to sad only".to_owned()));
    }
    let exclude = match &args.exclude {
        Some(s) => parse_band_ranges(s).map_err(CliError::Input)?,
        None => Vec::new(),
    };
    let reference = read_matrix(&args.truth)?;
    let mut estimate = read_matrix(&args.estimate)?;
    if let Some(path) = &args.endmembers {
        let m = read_matrix(path)?;
        if m.shape().1 != estimate.shape().0 {
            return Err(UnmixError::DimensionMismatch {
                what: "endmembers (columns) vs estimate (rows)",
                expected: (m.shape().0, estimate.shape().0),
                found: m.shape(),
            }
            .into());
        }
        estimate = m.matmul(&estimate);
    }
    let result = evaluate(name, &reference, &estimate, &exclude)?;
    let (label, value) = if args.degrees {
        ("SAD_deg", result.value.to_degrees())
    } else {
        (name.as_str(), result.value)
    };
    writeln!(out, "{label}\t{value}").map_err(|e| CliError::Input(e.to_string()))?;
    if let Some(path) = &args.append {
        append_row(path, &[&args.algorithm, &args.n_corrupt, &args.seed, &value.to_string()])?;
    }
    Ok(())
}

fn append_row(path: &Path, fields: &[&str]) -> Result<(), CliError> {
    let is_new = fs::metadata(path).map_or(true, |m| m.len() == 0);
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| io_error(path, e))?;
    let mut text = String::new();
    if is_new {
        text.push_str("algorithm\tn_corrupt\tseed\tvalue\n");
    }
    text.push_str(&fields.join("\t"));
    text.push('\n');
    file.write_all(text.as_bytes()).map_err(|e| io_error(path, e))
}

fn cmd_experiment(args: &ExperimentArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let config = load_config(&args.config)?;
    let m = prepare_endmembers(&config)?;
    let rows = run_experiment(&config, &m, worker_count()?);
    let tsv = format_tsv(&config, &rows);
    match &args.out {
        Some(path) => fs::write(path, tsv).map_err(|e| io_error(path, e)),
        None => out.write_all(tsv.as_bytes()).map_err(|e| CliError::Input(e.to_string())),
    }
}
