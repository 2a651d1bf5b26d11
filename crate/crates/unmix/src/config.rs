//! Flat `key = value` experiment configuration.
//!
//! ```text
//! # corrupted-band sweep
//! model = lmm
//! R = 3
//! L = 244
//! T = 400
//! snr_db = 35
//! corrupt_list = 0,20,40,60
//! algorithms = fcls,cusal-fc
//! seeds = 1-5
//! metric = rmse
//! ```
//!
//! Unknown or repeated keys are errors. `#` starts a comment line.

use std::collections::BTreeMap;
use std::path::PathBuf;

use unmix_core::synth::MixingModel;

use crate::algorithms::{AlgorithmName, SigmaChoice};

/// λ values tried for the sparse methods when `lambda_grid` is absent.
pub const DEFAULT_LAMBDA_GRID: [f64; 7] = [1e-5, 5e-5, 1e-4, 5e-4, 1e-3, 1e-2, 1e-1];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum MetricKind {
    Rmse,
    Sre,
    Sad,
}

impl MetricKind {
    pub fn parse(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "rmse" => Ok(Self::Rmse),
            "sre" | "sre_db" => Ok(Self::Sre),
            "sad" | "sad_rad" => Ok(Self::Sad),
            _ => Err(format!("unknown metric {s:?} (expected rmse, sre or sad)")),
        }
    }

    /// Column label, as printed by `eval`.
    pub fn label(self) -> &'static str {
        match self {
            Self::Rmse => "RMSE",
            Self::Sre => "SRE_dB",
            Self::Sad => "SAD_rad",
        }
    }

    /// True when a larger value is better.
    pub fn higher_is_better(self) -> bool {
        self == Self::Sre
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: MixingModel,
    pub r: usize,
    pub l: usize,
    pub t: usize,
    /// `+∞` disables noise.
    pub snr_db: f64,
    pub corrupt_list: Vec<usize>,
    pub algorithms: Vec<AlgorithmName>,
    pub lambda_grid: Vec<f64>,
    pub seeds: Vec<u64>,
    pub metrics: Vec<MetricKind>,
    pub sparsity_k: Option<usize>,
    pub endmember_seed: u64,
    pub min_angle_deg: f64,
    pub b_range: (f64, f64),
    /// Matrix file replacing the synthetic endmembers.
    pub endmembers: Option<PathBuf>,
    /// Bandwidth for the correntropy solvers; tuned per cell by default.
    pub sigma: SigmaChoice,
    pub rho: f64,
    pub max_outer_iters: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("config line {line}: {message}")]
pub struct ConfigError {
    /// 0 for problems not tied to one line, such as a missing key.
    pub line: usize,
    pub message: String,
}

const KEYS: [&str; 18] = [
    "model",
    "R",
    "L",
    "T",
    "snr_db",
    "corrupt_list",
    "algorithms",
    "lambda_grid",
    "seeds",
    "metric",
    "K",
    "endmember_seed",
    "min_angle_deg",
    "b_range",
    "endmembers",
    "rho",
    "max_iters",
    "sigma",
];

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let Some((key, value)) = trimmed.split_once('=') else {
                return Err(ConfigError {
                    line,
                    message: format!("expected `key = value`, found {trimmed:?}"),
                });
            };
            let key = key.trim();
            if !KEYS.contains(&key) {
                return Err(ConfigError {
                    line,
                    message: format!("unknown key {key:?}"),
                });
            }
            if entries.insert(key, (line, value.trim())).is_some() {
                return Err(ConfigError {
                    line,
                    message: format!("key {key:?} given twice"),
                });
            }
        }
        let fields = Fields { entries };
        let algorithms = fields.required("algorithms", |v| {
            let list = split_list(v);
            if list.is_empty() {
                return Err("empty algorithms list".to_owned());
            }
            list.iter().map(|a| a.parse::<AlgorithmName>()).collect()
        })?;
        let config = Self {
            model: fields.optional("model", MixingModel::Linear, parse_model)?,
            r: fields.required("R", parse_positive)?,
            l: fields.required("L", parse_positive)?,
            t: fields.required("T", parse_positive)?,
            snr_db: fields.optional("snr_db", f64::INFINITY, parse_snr)?,
            corrupt_list: fields.optional("corrupt_list", vec![0], |v| {
                nonempty(split_list(v).iter().map(|s| parse_usize(s)).collect())
            })?,
            algorithms,
            lambda_grid: fields.optional("lambda_grid", DEFAULT_LAMBDA_GRID.to_vec(), |v| {
                nonempty(split_list(v).iter().map(|s| parse_nonnegative(s)).collect())
            })?,
            seeds: fields.required("seeds", parse_seeds)?,
            metrics: fields.optional("metric", vec![MetricKind::Rmse], |v| {
                nonempty(split_list(v).iter().map(|s| MetricKind::parse(s)).collect())
            })?,
            sparsity_k: fields.optional("K", None, |v| {
                if v.eq_ignore_ascii_case("none") {
                    Ok(None)
                } else {
                    parse_positive(v).map(Some)
                }
            })?,
            endmember_seed: fields.optional("endmember_seed", 1, |v| {
                v.parse().map_err(|_| format!("bad seed {v:?}"))
            })?,
            min_angle_deg: fields.optional("min_angle_deg", 10.0, parse_nonnegative)?,
            b_range: fields.optional("b_range", (-3.0, 3.0), parse_range)?,
            endmembers: fields.optional("endmembers", None, |v| Ok(Some(PathBuf::from(v))))?,
            rho: fields.optional("rho", 1.0, |v| {
                let x = parse_nonnegative(v)?;
                if x > 0.0 {
                    Ok(x)
                } else {
                    Err("rho must be positive".to_owned())
                }
            })?,
            max_outer_iters: fields.optional("max_iters", 1000, parse_positive)?,
            sigma: fields.optional("sigma", SigmaChoice::Auto, parse_sigma)?,
        };
        if let Some(k) = config.sparsity_k {
            if k > config.r {
                return Err(ConfigError {
                    line: fields.line_of("K"),
                    message: format!("K = {k} exceeds R = {}", config.r),
                });
            }
        }
        if let Some(&c) = config.corrupt_list.iter().find(|&&c| c > config.l) {
            return Err(ConfigError {
                line: fields.line_of("corrupt_list"),
                message: format!("{c} corrupted bands exceed L = {}", config.l),
            });
        }
        Ok(config)
    }

    /// Number of `(algorithm, n_corrupt, seed)` cells.
    pub fn cell_count(&self) -> usize {
        self.algorithms.len() * self.corrupt_list.len() * self.seeds.len()
    }
}

struct Fields<'a> {
    entries: BTreeMap<&'a str, (usize, &'a str)>,
}

impl Fields<'_> {
    fn line_of(&self, key: &str) -> usize {
        self.entries.get(key).map_or(0, |(l, _)| *l)
    }

    fn required<T>(&self, key: &str, parse: impl Fn(&str) -> Result<T, String>) -> Result<T, ConfigError> {
        match self.entries.get(key) {
            Some((line, value)) => parse(value).map_err(|message| ConfigError {
                line: *line,
                message: format!("{key}: {message}"),
            }),
            None => Err(ConfigError {
                line: 0,
                message: format!("missing required key {key:?}"),
            }),
        }
    }

    fn optional<T>(&self, key: &str, default: T, parse: impl Fn(&str) -> Result<T, String>) -> Result<T, ConfigError> {
        if self.entries.contains_key(key) {
            self.required(key, parse)
        } else {
            Ok(default)
        }
    }
}

fn split_list(v: &str) -> Vec<&str> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).collect()
}

fn nonempty<T>(r: Result<Vec<T>, String>) -> Result<Vec<T>, String> {
    match r {
        Ok(v) if v.is_empty() => Err("empty list".to_owned()),
        other => other,
    }
}

fn parse_usize(v: &str) -> Result<usize, String> {
    v.parse().map_err(|_| format!("expected a nonnegative integer, found {v:?}"))
}

fn parse_positive(v: &str) -> Result<usize, String> {
    match parse_usize(v)? {
        0 => Err("must be at least 1".to_owned()),
        n => Ok(n),
    }
}

fn parse_nonnegative(v: &str) -> Result<f64, String> {
    match v.parse::<f64>() {
        Ok(x) if x.is_finite() && x >= 0.0 => Ok(x),
        _ => Err(format!("expected a nonnegative number, found {v:?}")),
    }
}

/// `auto` or a positive bandwidth.
pub fn parse_sigma(v: &str) -> Result<SigmaChoice, String> {
    if v.eq_ignore_ascii_case("auto") {
        return Ok(SigmaChoice::Auto);
    }
    match v.parse::<f64>() {
        Ok(x) if x.is_finite() && x > 0.0 => Ok(SigmaChoice::Fixed(x)),
        _ => Err(format!("expected `auto` or a positive number, found {v:?}")),
    }
}

/// A decibel value or `inf`.
pub fn parse_snr(v: &str) -> Result<f64, String> {
    if v.eq_ignore_ascii_case("inf") {
        return Ok(f64::INFINITY);
    }
    match v.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        _ => Err(format!("expected decibels or `inf`, found {v:?}")),
    }
}

pub fn parse_model(v: &str) -> Result<MixingModel, String> {
    match v.to_ascii_lowercase().as_str() {
        "lmm" => Ok(MixingModel::Linear),
        "ppnmm" => Ok(MixingModel::PolynomialPostNonlinear),
        _ => Err(format!("unknown model {v:?} (expected lmm or ppnmm)")),
    }
}

/// `lo,hi` with `lo < hi`.
pub fn parse_range(v: &str) -> Result<(f64, f64), String> {
    let parts = split_list(v);
    let [lo, hi] = parts.as_slice() else {
        return Err(format!("expected `lo,hi`, found {v:?}"));
    };
    match (lo.parse::<f64>(), hi.parse::<f64>()) {
        (Ok(lo), Ok(hi)) if lo.is_finite() && hi.is_finite() && lo < hi => Ok((lo, hi)),
        _ => Err(format!("expected `lo,hi` with lo < hi, found {v:?}")),
    }
}

/// A comma list of seeds and inclusive ranges: `1-5`, `1,4,9`, `1-3,10`.
pub fn parse_seeds(v: &str) -> Result<Vec<u64>, String> {
    let mut seeds = Vec::new();
    for item in split_list(v) {
        match item.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u64, u64) = (
                    a.trim().parse().map_err(|_| format!("bad seed range {item:?}"))?,
                    b.trim().parse().map_err(|_| format!("bad seed range {item:?}"))?,
                );
                if a > b {
                    return Err(format!("empty seed range {item:?}"));
                }
                seeds.extend(a..=b);
            }
            None => seeds.push(item.parse().map_err(|_| format!("bad seed {item:?}"))?),
        }
    }
    seeds.sort_unstable();
    seeds.dedup();
    nonempty(Ok(seeds))
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "R = 3\nL = 20\nT = 10\nalgorithms = fcls, cusal-fc\nseeds = 1-3\n";

    #[test]
    fn minimal_config_uses_defaults() {
        let c = ExperimentConfig::parse(BASE).unwrap();
        assert_eq!((c.r, c.l, c.t), (3, 20, 10));
        assert_eq!(c.model, MixingModel::Linear);
        assert_eq!(c.seeds, vec![1, 2, 3]);
        assert_eq!(c.algorithms, vec![AlgorithmName::Fcls, AlgorithmName::CusalFc]);
        assert_eq!(c.lambda_grid, DEFAULT_LAMBDA_GRID.to_vec());
        assert_eq!(c.metrics, vec![MetricKind::Rmse]);
        assert_eq!(c.corrupt_list, vec![0]);
        assert!(c.snr_db.is_infinite());
        assert_eq!(c.cell_count(), 6);
    }

    #[test]
    fn full_config() {
        let text = format!(
            "{BASE}# comment\nmodel = ppnmm\nsnr_db = 30\ncorrupt_list = 0,5,10,20\nmetric = rmse,sre\nK = 2\nb_range = -0.3,0.3\nlambda_grid = 1e-3, 1e-2\n"
        );
        let c = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(c.model, MixingModel::PolynomialPostNonlinear);
        assert_eq!(c.corrupt_list, vec![0, 5, 10, 20]);
        assert_eq!(c.metrics, vec![MetricKind::Rmse, MetricKind::Sre]);
        assert_eq!(c.sparsity_k, Some(2));
        assert_eq!(c.b_range, (-0.3, 0.3));
        assert_eq!(c.lambda_grid, vec![1e-3, 1e-2]);
    }

    #[test]
    fn fail_closed() {
        let err = |text: &str| ExperimentConfig::parse(text).unwrap_err();
        assert_eq!(err(&format!("{BASE}colour = red\n")).line, 6);
        assert!(err(&format!("{BASE}R = 4\n")).message.contains("twice"));
        assert!(err("R = 3\nL = 20\nT = 10\nalgorithms =\nseeds = 1\n")
            .message
            .contains("empty algorithms list"));
        assert!(err("R = 3\nL = 20\nT = 10\nseeds = 1\n").message.contains("algorithms"));
        assert!(err(&format!("{BASE}K = 4\n")).message.contains("exceeds"));
        assert!(err(&format!("{BASE}corrupt_list = 21\n")).message.contains("exceed"));
        assert!(err(&format!("{BASE}metric = mse\n")).message.contains("unknown metric"));
        assert!(err(&format!("{BASE}just words\n")).message.contains("key = value"));
        assert!(err("R = 3\nL = 20\nT = 10\nalgorithms = kfcls\nseeds = 1\n")
            .message
            .contains("unknown algorithm"));
    }

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("1-3,10,2").unwrap(), vec![1, 2, 3, 10]);
        assert!(parse_seeds("5-1").is_err());
        assert!(parse_seeds("").is_err());
    }
}
