//! Named unmixing algorithms and a uniform way to run them.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use unmix_core::baselines::{solve_fcls, solve_ls, solve_sunsal_sparse, BaselineConfig};
use unmix_core::solvers::{
    cusal_fc, cusal_sp, initial_sigma, tune_sigma, Algorithm, TuningOutcome, TuningTrace,
};
use unmix_core::{AbundanceMatrix, ProblemHandle, SolverConfig, SolverReport, UnmixError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AlgorithmName {
    Ls,
    Fcls,
    SunsalSparse,
    CusalFc,
    CusalSp,
}

impl AlgorithmName {
    pub const ALL: [AlgorithmName; 5] = [
        Self::Ls,
        Self::Fcls,
        Self::SunsalSparse,
        Self::CusalFc,
        Self::CusalSp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ls => "ls",
            Self::Fcls => "fcls",
            Self::SunsalSparse => "sunsal-sparse",
            Self::CusalFc => "cusal-fc",
            Self::CusalSp => "cusal-sp",
        }
    }

    /// Whether `λ` affects the result.
    pub fn uses_lambda(self) -> bool {
        matches!(self, Self::SunsalSparse | Self::CusalSp)
    }
}

impl fmt::Display for AlgorithmName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AlgorithmName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| format!("unknown algorithm {s:?}"))
    }
}

/// How `σ` is chosen for the correntropy solvers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SigmaChoice {
    Fixed(f64),
    Auto,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunParams {
    pub sigma: SigmaChoice,
    pub rho: f64,
    pub lambda: f64,
    pub max_outer_iters: usize,
}

impl Default for RunParams {
    fn default() -> Self {
        let defaults = SolverConfig::default();
        Self {
            sigma: SigmaChoice::Auto,
            rho: defaults.rho,
            lambda: defaults.lambda,
            max_outer_iters: defaults.max_outer_iters,
        }
    }
}

/// Diagnostics of one run.
#[derive(Debug, Clone, PartialEq)]
pub enum RunDetails {
    Baseline { iterations: usize, converged: bool },
    Correntropy {
        report: SolverReport,
        tuning: Option<TuningTrace>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub abundances: AbundanceMatrix,
    pub details: RunDetails,
    /// `‖Y − MX̂‖_F / ‖Y − MX_LS‖_F`, when the least-squares fit exists and
    /// is inexact.
    pub ls_ratio: Option<f64>,
}

pub fn run(algorithm: AlgorithmName, handle: &ProblemHandle, params: &RunParams) -> Result<RunOutcome, UnmixError> {
    let baseline = BaselineConfig::default();
    let (abundances, details) = match algorithm {
        AlgorithmName::Ls => (
            solve_ls(handle)?,
            RunDetails::Baseline {
                iterations: 0,
                converged: true,
            },
        ),
        AlgorithmName::Fcls => {
            let (x, rep) = solve_fcls(handle, &baseline)?;
            (
                x,
                RunDetails::Baseline {
                    iterations: rep.iterations,
                    converged: rep.converged,
                },
            )
        }
        AlgorithmName::SunsalSparse => {
            let (x, rep) = solve_sunsal_sparse(handle, params.lambda, &baseline)?;
            (
                x,
                RunDetails::Baseline {
                    iterations: rep.iterations,
                    converged: rep.converged,
                },
            )
        }
        AlgorithmName::CusalFc | AlgorithmName::CusalSp => {
            let which = if algorithm == AlgorithmName::CusalFc {
                Algorithm::FullyConstrained
            } else {
                Algorithm::Sparse
            };
            let mut config = SolverConfig {
                rho: params.rho,
                lambda: params.lambda,
                max_outer_iters: params.max_outer_iters,
                ..SolverConfig::default()
            };
            match params.sigma {
                SigmaChoice::Auto => {
                    let tuned = tune_sigma(handle, which, &config)?;
                    (
                        tuned.abundances,
                        RunDetails::Correntropy {
                            report: tuned.report,
                            tuning: Some(tuned.trace),
                        },
                    )
                }
                SigmaChoice::Fixed(sigma) => {
                    config.sigma = sigma;
                    let (x, report) = match which {
                        Algorithm::FullyConstrained => cusal_fc(handle, &config, None)?,
                        Algorithm::Sparse => cusal_sp(handle, &config, None)?,
                    };
                    (x, RunDetails::Correntropy { report, tuning: None })
                }
            }
        }
    };
    let ls_ratio = initial_sigma(handle)
        .ok()
        .filter(|(_, _, ls)| *ls > 0.0)
        .map(|(_, _, ls)| handle.reconstruction_error(abundances.matrix()) / ls);
    Ok(RunOutcome {
        abundances,
        details,
        ls_ratio,
    })
}

/// Key-value summary followed by the per-iteration trace as TSV (shown
/// space-aligned below).
///
/// ```text
/// algorithm=cusal-fc
/// termination=residuals-small
/// iterations=87
/// sigma=0.0123
/// ratio=1.02
///
/// iteration  primal  dual  objective
/// 1          ...
/// ```
pub fn format_report(algorithm: AlgorithmName, outcome: &RunOutcome) -> String {
    let mut out = format!("algorithm={algorithm}\n");
    let mut kv = |k: &str, v: &dyn fmt::Display| writeln!(out, "{k}={v}").expect("writing to a String");
    match &outcome.details {
        RunDetails::Baseline { iterations, converged } => {
            kv("termination", &if *converged { "converged" } else { "max-iters" });
            kv("iterations", iterations);
        }
        RunDetails::Correntropy { report, tuning } => {
            kv("termination", &report.termination_reason.as_str());
            kv("iterations", &report.iterations_run);
            kv("sigma", &report.sigma_used);
            if let Some(trace) = tuning {
                kv("sigma0", &trace.sigma0);
                kv("sigma_floor", &trace.sigma_floor);
                kv("tuning_attempts", &trace.attempts.len());
                kv("restart_divisor", &trace.p);
            }
        }
    }
    if let Some(ratio) = outcome.ls_ratio {
        kv("ratio", &ratio);
    }
    if let RunDetails::Correntropy { report, tuning } = &outcome.details {
        out.push_str("\niteration\tprimal\tdual\tobjective\n");
        for (i, ((p, d), f)) in report
            .primal_residuals
            .iter()
            .zip(&report.dual_residuals)
            .zip(&report.objective_trace)
            .enumerate()
        {
            writeln!(out, "{}\t{p}\t{d}\t{f}", i + 1).expect("writing to a String");
        }
        if let Some(trace) = tuning {
            out.push_str("\nattempt\tsigma\toutcome\tratio\n");
            for (i, a) in trace.attempts.iter().enumerate() {
                let outcome = match a.outcome {
                    TuningOutcome::Converged => "converged",
                    TuningOutcome::Diverged => "diverged",
                    TuningOutcome::RatioTooLarge => "ratio-too-large",
                };
                let ratio = a.ratio.map_or_else(|| "-".to_owned(), |r| r.to_string());
                writeln!(out, "{}\t{}\t{outcome}\t{ratio}", i + 1, a.sigma).expect("writing to a String");
            }
        }
    }
    out
}
