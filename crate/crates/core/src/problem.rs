//! Domain types shared by every solver, and the two elementwise proximal maps.

use alloc::vec::Vec;

use crate::error::{Result, UnmixError};
use crate::linalg::{HouseholderQr, Matrix};

/// Slack allowed when checking nonnegativity and sum-to-one tags.
pub const TOL_FEAS: f64 = 1e-9;

/// Condition estimate of `MᵀM` above which a problem is flagged.
pub const RANK_WARNING_THRESHOLD: f64 = 1e12;

/// Hyperspectral cube flattened to `bands × pixels`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationMatrix {
    data: Matrix,
}

impl ObservationMatrix {
    pub fn new(data: Matrix) -> Result<Self> {
        if data.rows() == 0 || data.cols() == 0 {
            return Err(UnmixError::InvalidInput(
                "observation matrix needs at least one band and one pixel".into(),
            ));
        }
        if !data.is_finite() {
            return Err(UnmixError::NonFiniteData("observation matrix"));
        }
        Ok(Self { data })
    }

    pub fn band_count(&self) -> usize {
        self.data.rows()
    }

    pub fn pixel_count(&self) -> usize {
        self.data.cols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.data
    }

    pub fn into_matrix(self) -> Matrix {
        self.data
    }
}

/// Known endmember spectra, one per column.
#[derive(Debug, Clone, PartialEq)]
pub struct EndmemberMatrix {
    data: Matrix,
}

impl EndmemberMatrix {
    /// Requires `1 ≤ R ≤ L` and finite entries. Repeated columns are accepted
    /// here and reported as a warning by [`validate_problem`].
    pub fn new(data: Matrix) -> Result<Self> {
        let (l, r) = data.shape();
        if r == 0 || l == 0 {
            return Err(UnmixError::InvalidInput(
                "endmember matrix needs at least one band and one endmember".into(),
            ));
        }
        if r > l {
            return Err(UnmixError::InvalidInput(alloc::format!(
                "{r} endmembers over {l} bands: endmember matrix must be tall"
            )));
        }
        if !data.is_finite() {
            return Err(UnmixError::NonFiniteData("endmember matrix"));
        }
        Ok(Self { data })
    }

    pub fn band_count(&self) -> usize {
        self.data.rows()
    }

    pub fn endmember_count(&self) -> usize {
        self.data.cols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.data
    }

    pub fn into_matrix(self) -> Matrix {
        self.data
    }
}

/// Which physical constraints an abundance matrix is known to satisfy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constraint {
    Unconstrained,
    /// Every entry ≥ −[`TOL_FEAS`].
    Nonnegative,
    /// Nonnegative and every column sums to one within [`TOL_FEAS`].
    FullyConstrained,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbundanceMatrix {
    data: Matrix,
    constraint: Constraint,
}

impl AbundanceMatrix {
    pub fn new(data: Matrix) -> Result<Self> {
        Self::with_constraint(data, Constraint::Unconstrained)
    }

    /// Tags `data` after checking that it satisfies `constraint`.
    pub fn with_constraint(data: Matrix, constraint: Constraint) -> Result<Self> {
        if !data.is_finite() {
            return Err(UnmixError::NonFiniteData("abundance matrix"));
        }
        match constraint {
            Constraint::Unconstrained => {}
            Constraint::Nonnegative => check_nonnegative(&data)?,
            Constraint::FullyConstrained => {
                check_nonnegative(&data)?;
                for (t, col) in data.columns().enumerate() {
                    let s: f64 = col.iter().sum();
                    if libm::fabs(s - 1.0) > TOL_FEAS {
                        return Err(UnmixError::InvalidInput(alloc::format!(
                            "abundances of pixel {t} sum to {s}, not 1"
                        )));
                    }
                }
            }
        }
        Ok(Self { data, constraint })
    }

    pub fn endmember_count(&self) -> usize {
        self.data.rows()
    }

    pub fn pixel_count(&self) -> usize {
        self.data.cols()
    }

    pub fn constraint(&self) -> Constraint {
        self.constraint
    }

    pub fn matrix(&self) -> &Matrix {
        &self.data
    }

    pub fn into_matrix(self) -> Matrix {
        self.data
    }
}

fn check_nonnegative(data: &Matrix) -> Result<()> {
    match data.as_slice().iter().position(|&v| v < -TOL_FEAS) {
        Some(i) => Err(UnmixError::InvalidInput(alloc::format!(
            "abundance entry ({}, {}) is negative",
            i % data.rows().max(1),
            i / data.rows().max(1)
        ))),
        None => Ok(()),
    }
}

/// Non-fatal diagnostics attached to a [`ProblemHandle`].
#[derive(Debug, Clone, PartialEq)]
pub enum Warning {
    /// `MᵀM` is numerically singular or badly conditioned.
    RankDeficiency { condition_estimate: f64 },
}

/// A validated `(Y, M)` pair shared read-only by all solvers.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemHandle {
    y: ObservationMatrix,
    m: EndmemberMatrix,
    condition_estimate: f64,
    warnings: Vec<Warning>,
}

impl ProblemHandle {
    pub fn y(&self) -> &Matrix {
        self.y.matrix()
    }

    pub fn m(&self) -> &Matrix {
        self.m.matrix()
    }

    pub fn observations(&self) -> &ObservationMatrix {
        &self.y
    }

    pub fn endmembers(&self) -> &EndmemberMatrix {
        &self.m
    }

    /// `L`
    pub fn bands(&self) -> usize {
        self.y.band_count()
    }

    /// `T`
    pub fn pixels(&self) -> usize {
        self.y.pixel_count()
    }

    /// `R`
    pub fn endmember_count(&self) -> usize {
        self.m.endmember_count()
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.bands(), self.pixels(), self.endmember_count())
    }

    pub fn condition_estimate(&self) -> f64 {
        self.condition_estimate
    }

    pub fn warnings(&self) -> &[Warning] {
        &self.warnings
    }

    /// The same endmembers with a different set of pixels.
    pub fn with_observations(&self, y: ObservationMatrix) -> Result<Self> {
        validate_problem(y, self.m.clone())
    }

    /// Sub-problem restricted to the given pixel columns.
    pub fn select_pixels(&self, pixels: &[usize]) -> Result<Self> {
        self.with_observations(ObservationMatrix::new(self.y().select_columns(pixels))?)
    }

    /// `‖Y − M X‖_F`
    pub fn reconstruction_error(&self, x: &Matrix) -> f64 {
        self.y().sub(&self.m().matmul(x)).frobenius_norm()
    }
}

/// Checks that `Y` and `M` describe the same bands and bundles them.
pub fn validate_problem(y: ObservationMatrix, m: EndmemberMatrix) -> Result<ProblemHandle> {
    if y.band_count() != m.band_count() {
        return Err(UnmixError::DimensionMismatch {
            what: "endmember matrix",
            expected: (y.band_count(), m.endmember_count()),
            found: (m.band_count(), m.endmember_count()),
        });
    }
    let condition_estimate = HouseholderQr::factor(m.matrix()).gram_condition_estimate();
    let mut warnings = Vec::new();
    if condition_estimate.is_nan() || condition_estimate > RANK_WARNING_THRESHOLD {
        warnings.push(Warning::RankDeficiency { condition_estimate });
    }
    Ok(ProblemHandle {
        y,
        m,
        condition_estimate,
        warnings,
    })
}

/// Hyperparameters of the correntropy solvers.
///
/// The solvers work on the scaled objective `σ²·C(X)`, which has the same
/// minimizers as `C` and behaves like half a weighted least-squares cost near
/// small residuals. `rho`, `eta` and `lambda` are expressed against that
/// scaled objective, so `lambda` means the same thing for the correntropy
/// solvers as for the quadratic baselines.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Gaussian kernel bandwidth, in reflectance units.
    pub sigma: f64,
    /// ADMM penalty.
    pub rho: f64,
    /// Initial inner step. `None` picks 1 when `preconditioned` is set and a
    /// Lipschitz bound of the inner gradient otherwise.
    pub eta: Option<f64>,
    /// ℓ₁ weight (sparse solver only).
    pub lambda: f64,
    /// Primal threshold; `None` uses `√(RT)·1e−5`.
    pub eps_primal: Option<f64>,
    /// Dual threshold; `None` uses `√(RT)·1e−5`.
    pub eps_dual: Option<f64>,
    pub max_outer_iters: usize,
    pub max_inner_iters: usize,
    /// Inner loop stops once `‖∇‖ ≤ inner_tol·(1 + ‖x‖)`.
    pub inner_tol: f64,
    /// Tune `sigma` automatically before solving.
    pub sigma_auto: bool,
    /// Scale inner gradient steps by the inverse of the band-weighted Gram
    /// matrix plus the ADMM penalty term, which bounds the inner Hessian.
    pub preconditioned: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            rho: 1.0,
            eta: None,
            lambda: 0.0,
            eps_primal: None,
            eps_dual: None,
            max_outer_iters: 1000,
            max_inner_iters: 50,
            inner_tol: 1e-6,
            sigma_auto: false,
            preconditioned: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        let bad = |what: &str| Err(UnmixError::InvalidInput(what.into()));
        if !positive(self.sigma) {
            return bad("sigma must be positive");
        }
        if !positive(self.rho) {
            return bad("rho must be positive");
        }
        if self.eta.is_some_and(|e| !positive(e)) {
            return bad("eta must be positive");
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return bad("lambda must be nonnegative");
        }
        if self.eps_primal.is_some_and(|e| !positive(e))
            || self.eps_dual.is_some_and(|e| !positive(e))
        {
            return bad("stopping thresholds must be positive");
        }
        if self.max_outer_iters == 0 || self.max_inner_iters == 0 {
            return bad("iteration caps must be at least 1");
        }
        if !positive(self.inner_tol) {
            return bad("inner_tol must be positive");
        }
        Ok(())
    }

    /// `(ε₁, ε₂)` for a problem with `n = R·T` unknowns.
    pub fn thresholds(&self, n: usize) -> (f64, f64) {
        let default = default_threshold(n);
        (
            self.eps_primal.unwrap_or(default),
            self.eps_dual.unwrap_or(default),
        )
    }
}

/// `√n · 1e−5`
pub fn default_threshold(n: usize) -> f64 {
    libm::sqrt(n as f64) * 1e-5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminationReason {
    /// Primal and dual residuals both under their thresholds.
    ResidualsSmall,
    /// The primal residual grew from one iteration to the next.
    PrimalIncreased,
    MaxIters,
}

impl TerminationReason {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::ResidualsSmall => "residuals-small",
            Self::PrimalIncreased => "primal-increased",
            Self::MaxIters => "max-iters",
        }
    }
}

/// Per-iteration diagnostics of one ADMM run.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverReport {
    pub iterations_run: usize,
    /// `‖x_{k+1} − z_{k+1}‖₂`
    pub primal_residuals: Vec<f64>,
    /// `ρ‖z_{k+1} − z_k‖₂`
    pub dual_residuals: Vec<f64>,
    pub objective_trace: Vec<f64>,
    pub termination_reason: TerminationReason,
    pub sigma_used: f64,
}

impl SolverReport {
    pub fn final_primal(&self) -> Option<f64> {
        self.primal_residuals.last().copied()
    }

    pub fn final_dual(&self) -> Option<f64> {
        self.dual_residuals.last().copied()
    }
}

/// `max(0, v)` elementwise.
pub fn project_nonnegative(v: &[f64]) -> Result<Vec<f64>> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(UnmixError::InvalidInput("non-finite entry".into()));
    }
    Ok(v.iter().map(|&x| x.max(0.0)).collect())
}

/// Soft thresholding `S_b`, the proximal map of `b‖·‖₁`. `|ζ| = b` maps to 0.
pub fn soft_threshold(v: &[f64], b: f64) -> Result<Vec<f64>> {
    if !b.is_finite() || b < 0.0 {
        return Err(UnmixError::InvalidInput(
            "threshold must be a nonnegative finite number".into(),
        ));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(UnmixError::InvalidInput("non-finite entry".into()));
    }
    Ok(v.iter().map(|&z| shrink(z, b)).collect())
}

#[inline]
pub(crate) fn shrink(z: f64, b: f64) -> f64 {
    if z > b {
        z - b
    } else if z < -b {
        z + b
    } else {
        0.0
    }
}
