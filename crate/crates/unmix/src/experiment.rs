//! Grid runner: algorithms × corrupted-band counts × seeds, one TSV out.
//!
//! Each `(n_corrupt, seed)` cell generates one cube and runs every algorithm
//! on it. Cells run on a scoped worker pool; rows are sorted before
//! formatting, so the table does not depend on scheduling.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use unmix_core::metrics::{rmse, sad, sre_db};
use unmix_core::synth::{gen_cube, gen_endmembers, GroundTruth, SyntheticSpec};
use unmix_core::{validate_problem, EndmemberMatrix, TerminationReason, UnmixError};

use crate::algorithms::{run, AlgorithmName, RunDetails, RunOutcome, RunParams};
use crate::config::{ConfigError, ExperimentConfig, MetricKind};
use crate::matrix_io::{read_matrix, MatrixFileError};

/// Environment variable capping the worker pool.
pub const THREADS_VAR: &str = "UNMIX_THREADS";

pub const TSV_HEADER: &str = "algorithm\tmodel\tsnr\tn_corrupt\tK\tseed\tmetric\tvalue\tlambda\tstatus";

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    ConfigIo { path: String, source: std::io::Error },
    #[error("endmembers: {0}")]
    EndmemberFile(#[from] MatrixFileError),
    #[error("endmembers: {0}")]
    Endmembers(UnmixError),
    #[error("{THREADS_VAR} must be a positive integer, found {0:?}")]
    Threads(String),
}

/// One line of the table.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub algorithm: AlgorithmName,
    pub n_corrupt: usize,
    pub seed: u64,
    pub metric: MetricKind,
    /// NaN when the cell failed.
    pub value: f64,
    /// Selected λ, for algorithms that take one.
    pub lambda: Option<f64>,
    /// `ok`, a termination reason, or the failure kind.
    pub status: String,
}

impl Row {
    fn sort_key(&self) -> (usize, usize, u64, MetricKind) {
        let alg = AlgorithmName::ALL
            .iter()
            .position(|a| *a == self.algorithm)
            .expect("algorithm is listed in ALL");
        (alg, self.n_corrupt, self.seed, self.metric)
    }
}

/// Reads a config file, resolving a relative `endmembers` path against the
/// file's directory.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, ExperimentError> {
    let text = std::fs::read_to_string(path).map_err(|source| ExperimentError::ConfigIo {
        path: path.display().to_string(),
        source,
    })?;
    let mut config = ExperimentConfig::parse(&text)?;
    if let (Some(file), Some(dir)) = (&config.endmembers, path.parent()) {
        if file.is_relative() {
            config.endmembers = Some(dir.join(file));
        }
    }
    Ok(config)
}

/// The endmember file when one is configured, synthetic spectra otherwise.
pub fn prepare_endmembers(config: &ExperimentConfig) -> Result<EndmemberMatrix, ExperimentError> {
    let m = match &config.endmembers {
        Some(path) => EndmemberMatrix::new(read_matrix(path)?).map_err(ExperimentError::Endmembers)?,
        None => gen_endmembers(config.r, config.l, config.endmember_seed, config.min_angle_deg)
            .map_err(ExperimentError::Endmembers)?,
    };
    let expected = (config.l, config.r);
    let found = (m.band_count(), m.endmember_count());
    if expected != found {
        return Err(ExperimentError::Endmembers(UnmixError::DimensionMismatch {
            what: "endmembers (L x R)",
            expected,
            found,
        }));
    }
    Ok(m)
}

/// Worker count from `UNMIX_THREADS`, defaulting to the available parallelism.
pub fn worker_count() -> Result<usize, ExperimentError> {
    match std::env::var(THREADS_VAR) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(ExperimentError::Threads(v)),
        },
        Err(_) => Ok(thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Runs the whole grid on `threads` workers and returns canonically sorted rows.
pub fn run_experiment(config: &ExperimentConfig, m: &EndmemberMatrix, threads: usize) -> Vec<Row> {
    let cells: Vec<(usize, u64)> = config
        .corrupt_list
        .iter()
        .flat_map(|&c| config.seeds.iter().map(move |&s| (c, s)))
        .collect();
    let next = AtomicUsize::new(0);
    let rows = Mutex::new(Vec::new());
    let workers = threads.clamp(1, cells.len().max(1));
    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(n_corrupt, seed)) = cells.get(i) else {
                    break;
                };
                let cell = run_cell(config, m, n_corrupt, seed);
                rows.lock().expect("no worker panicked").extend(cell);
            });
        }
    });
    let mut rows = rows.into_inner().expect("no worker panicked");
    rows.sort_by_key(Row::sort_key);
    rows
}

/// Rows of one `(n_corrupt, seed)` cell, for every configured algorithm.
pub fn run_cell(config: &ExperimentConfig, m: &EndmemberMatrix, n_corrupt: usize, seed: u64) -> Vec<Row> {
    let spec = SyntheticSpec {
        model: config.model,
        r: config.r,
        l: config.l,
        t: config.t,
        snr_db: config.snr_db,
        n_corrupt,
        sparsity_k: config.sparsity_k,
        seed,
        b_range: config.b_range,
    };
    let generated = gen_cube(m, &spec).and_then(|(y, truth)| Ok((validate_problem(y, m.clone())?, truth)));
    let mut rows = Vec::new();
    for &algorithm in &config.algorithms {
        let result = match &generated {
            Ok((handle, truth)) => run_algorithm(config, handle, truth, algorithm),
            Err(e) => Err(status_of_error(e)),
        };
        let (values, lambda, status) = match result {
            Ok(scored) => (scored.values, scored.lambda, scored.status),
            Err(status) => (vec![f64::NAN; config.metrics.len()], None, status),
        };
        for (&metric, value) in config.metrics.iter().zip(values) {
            rows.push(Row {
                algorithm,
                n_corrupt,
                seed,
                metric,
                value,
                lambda,
                status: status.clone(),
            });
        }
    }
    rows
}

struct Scored {
    values: Vec<f64>,
    lambda: Option<f64>,
    status: String,
}

/// Runs one algorithm, picking the λ with the best first metric when it
/// takes one.
fn run_algorithm(
    config: &ExperimentConfig,
    handle: &unmix_core::ProblemHandle,
    truth: &GroundTruth,
    algorithm: AlgorithmName,
) -> Result<Scored, String> {
    let lambdas: Vec<Option<f64>> = if algorithm.uses_lambda() {
        config.lambda_grid.iter().copied().map(Some).collect()
    } else {
        vec![None]
    };
    let primary = config.metrics[0];
    let mut best: Option<(f64, Scored)> = None;
    let mut last_err = String::from("error");
    for lambda in lambdas {
        let params = RunParams {
            sigma: config.sigma,
            rho: config.rho,
            lambda: lambda.unwrap_or(0.0),
            max_outer_iters: config.max_outer_iters,
        };
        let outcome = match run(algorithm, handle, &params) {
            Ok(o) => o,
            Err(e) => {
                last_err = status_of_error(&e);
                continue;
            }
        };
        let values: Vec<f64> = config
            .metrics
            .iter()
            .map(|&k| metric_value(k, handle, truth, &outcome).unwrap_or(f64::NAN))
            .collect();
        // lower is better after this sign flip; NaN never wins
        let score = if primary.higher_is_better() { -values[0] } else { values[0] };
        let better = match &best {
            None => true,
            Some((b, _)) => score < *b || (b.is_nan() && !score.is_nan()),
        };
        if better {
            best = Some((
                score,
                Scored {
                    values,
                    lambda,
                    status: status_of_outcome(&outcome),
                },
            ));
        }
    }
    best.map(|(_, s)| s).ok_or(last_err)
}

/// Abundance metrics against the truth; SAD compares `Y` with `MX̂` on the
/// uncorrupted bands.
pub fn metric_value(
    kind: MetricKind,
    handle: &unmix_core::ProblemHandle,
    truth: &GroundTruth,
    outcome: &RunOutcome,
) -> Result<f64, UnmixError> {
    let x_hat = outcome.abundances.matrix();
    match kind {
        MetricKind::Rmse => rmse(truth.x_true.matrix(), x_hat),
        MetricKind::Sre => sre_db(truth.x_true.matrix(), x_hat),
        MetricKind::Sad => sad(handle.y(), &handle.m().matmul(x_hat), &truth.corrupted_bands),
    }
}

fn status_of_outcome(outcome: &RunOutcome) -> String {
    match &outcome.details {
        RunDetails::Baseline { converged: true, .. } => "ok".to_owned(),
        RunDetails::Baseline { converged: false, .. } => TerminationReason::MaxIters.as_str().to_owned(),
        RunDetails::Correntropy { report, .. } => match report.termination_reason {
            TerminationReason::ResidualsSmall => "ok".to_owned(),
            other => other.as_str().to_owned(),
        },
    }
}

fn status_of_error(e: &UnmixError) -> String {
    match e {
        UnmixError::TuningFailed { .. } => "tuning-failed",
        UnmixError::NonFiniteIterate | UnmixError::InnerSolverFailure => "diverged",
        _ => "error",
    }
    .to_owned()
}

/// The table, header first, one row per line.
pub fn format_tsv(config: &ExperimentConfig, rows: &[Row]) -> String {
    let k = config.sparsity_k.map_or_else(|| "-".to_owned(), |k| k.to_string());
    let mut out = String::from(TSV_HEADER);
    out.push('\n');
    for row in rows {
        let lambda = row.lambda.map_or_else(|| "-".to_owned(), |l| l.to_string());
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            row.algorithm,
            config.model.as_str(),
            config.snr_db,
            row.n_corrupt,
            k,
            row.seed,
            row.metric.label(),
            row.value,
            lambda,
            row.status
        )
        .expect("writing to a String");
    }
    out
}
