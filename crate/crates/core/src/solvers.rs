//! ADMM solvers for correntropy unmixing.
//!
//! Both solvers split the problem as `f(x) + g(z)` subject to `x = z`, with
//! `x` the stacked columns of `X`:
//!
//! * [`cusal_fc`]: `f` is the correntropy objective restricted to the
//!   sum-to-one affine set (handled by eliminating the last abundance of each
//!   pixel), `g` is the indicator of the nonnegative orthant.
//! * [`cusal_sp`]: `f` is the correntropy objective, `g` adds `λ‖z‖₁` to the
//!   orthant indicator.
//!
//! The x-update has no closed form, so it is solved inexactly by gradient
//! descent with Armijo backtracking. By default the steps are preconditioned
//! with `AᵀWA + ρB`, the band-weighted Gram matrix of the (reduced) endmembers
//! plus the Hessian of the ADMM penalty. It bounds the inner Hessian from
//! above, so a unit step never overshoots the quadratic model. The scaled dual follows the convention
//! `z ← prox(x − u)`, `u ← u − (x − z)`.
//!
//! [`tune_sigma`] picks the kernel bandwidth by rerunning a solver, starting
//! from `σ₀² = R/(8L)·‖Y − M X_LS‖²_F`.

use alloc::vec;
use alloc::vec::Vec;

use crate::baselines;
use crate::correntropy::{reconstruct_into, CorrentropyEval};
use crate::error::{Result, UnmixError};
use crate::linalg::{dist2, dot, norm2, project_simplex, Cholesky, Matrix};
use crate::problem::{
    shrink, AbundanceMatrix, Constraint, ProblemHandle, SolverConfig, SolverReport,
    TerminationReason,
};

/// Iterates of scaled-form ADMM. All three vectors have length `R·T`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub u: Vec<f64>,
    pub k: usize,
}

impl AdmmState {
    /// `z₀ = x₀`, `u₀ = 0`.
    pub fn new(x0: Vec<f64>) -> Self {
        let n = x0.len();
        Self {
            z: x0.clone(),
            x: x0,
            u: vec![0.0; n],
            k: 0,
        }
    }

    /// `‖x − z‖₂`
    pub fn primal_residual(&self) -> f64 {
        dist2(&self.x, &self.z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminationDecision {
    Continue,
    Stop(TerminationReason),
}

/// Three-fold stopping rule, checked in this order:
///
/// 1. `‖x_{k+1} − z_{k+1}‖ ≤ ε₁` and `ρ‖z_{k+1} − z_k‖ ≤ ε₂`;
/// 2. `‖x_{k+1} − z_{k+1}‖ > ‖x_k − z_k‖`;
/// 3. `k + 1 ≥ max_outer_iters`.
///
/// Rule 2 needs a previous iterate, so it is not applied when `prev` is the
/// initial point (`prev.k == 0`).
pub fn stop_check(prev: &AdmmState, next: &AdmmState, config: &SolverConfig) -> TerminationDecision {
    let (eps1, eps2) = config.thresholds(next.x.len());
    let primal = next.primal_residual();
    let dual = config.rho * dist2(&next.z, &prev.z);
    if primal <= eps1 && dual <= eps2 {
        return TerminationDecision::Stop(TerminationReason::ResidualsSmall);
    }
    if prev.k > 0 && primal > prev.primal_residual() {
        return TerminationDecision::Stop(TerminationReason::PrimalIncreased);
    }
    if next.k >= config.max_outer_iters {
        return TerminationDecision::Stop(TerminationReason::MaxIters);
    }
    TerminationDecision::Continue
}

/// The two problem-specific steps of ADMM.
pub trait AdmmProblem {
    /// Approximately minimizes `f(x) + (ρ/2)‖x − z − u‖²`. `x` holds the
    /// previous x iterate on entry.
    fn x_update(&mut self, z: &[f64], u: &[f64], rho: f64, x: &mut [f64]) -> Result<()>;

    /// `z = argmin g(z) + (ρ/2)‖z − v‖²` with `v = x_{k+1} − u_k`.
    fn z_update(&self, v: &[f64], rho: f64, z: &mut [f64]);

    /// Value recorded in the objective trace.
    fn objective(&mut self, _x: &[f64]) -> f64 {
        f64::NAN
    }
}

/// Runs ADMM with `A = −I`, `B = I`, `c = 0` until [`stop_check`] fires.
pub fn admm_generic<P: AdmmProblem + ?Sized>(
    problem: &mut P,
    config: &SolverConfig,
    init: AdmmState,
) -> Result<(AdmmState, SolverReport)> {
    admm_observed(problem, config, init, &mut |_, _| {})
}

/// [`admm_generic`] with a callback receiving `(state_k, state_{k+1})` after
/// every outer iteration.
pub fn admm_observed<P: AdmmProblem + ?Sized>(
    problem: &mut P,
    config: &SolverConfig,
    init: AdmmState,
    observer: &mut dyn FnMut(&AdmmState, &AdmmState),
) -> Result<(AdmmState, SolverReport)> {
    config.validate()?;
    let n = init.x.len();
    if init.z.len() != n || init.u.len() != n {
        return Err(UnmixError::InvalidInput("ADMM state vectors differ in length".into()));
    }
    if init.x.iter().chain(&init.z).chain(&init.u).any(|v| !v.is_finite()) {
        return Err(UnmixError::NonFiniteIterate);
    }
    let rho = config.rho;
    let mut report = SolverReport {
        iterations_run: 0,
        primal_residuals: Vec::new(),
        dual_residuals: Vec::new(),
        objective_trace: Vec::new(),
        termination_reason: TerminationReason::MaxIters,
        sigma_used: config.sigma,
    };
    let mut state = init;
    let mut v = vec![0.0; n];
    loop {
        let mut next = state.clone();
        problem.x_update(&state.z, &state.u, rho, &mut next.x)?;
        if next.x.iter().any(|v| !v.is_finite()) {
            return Err(UnmixError::InnerSolverFailure);
        }
        for ((vi, xi), ui) in v.iter_mut().zip(&next.x).zip(&state.u) {
            *vi = xi - ui;
        }
        problem.z_update(&v, rho, &mut next.z);
        for ((ui, xi), zi) in next.u.iter_mut().zip(&next.x).zip(&next.z) {
            *ui -= xi - zi;
        }
        next.k = state.k + 1;
        if next.z.iter().chain(&next.u).any(|v| !v.is_finite()) {
            return Err(UnmixError::NonFiniteIterate);
        }

        report.primal_residuals.push(next.primal_residual());
        report.dual_residuals.push(rho * dist2(&next.z, &state.z));
        report.objective_trace.push(problem.objective(&next.x));
        report.iterations_run = next.k;
        observer(&state, &next);

        let decision = stop_check(&state, &next, config);
        state = next;
        if let TerminationDecision::Stop(reason) = decision {
            report.termination_reason = reason;
            return Ok((state, report));
        }
    }
}

/// A differentiable function for [`inner_gradient_descent`].
pub trait SmoothObjective {
    /// Returns `f(x)` and writes `∇f(x)` into `grad`.
    fn value_and_gradient(&mut self, x: &[f64], grad: &mut [f64]) -> f64;

    /// Replaces the gradient at the most recently evaluated point by
    /// `P⁻¹∇f` for a symmetric positive definite `P`. Identity by default.
    fn precondition(&mut self, _dir: &mut [f64]) {}
}

impl<F: FnMut(&[f64], &mut [f64]) -> f64> SmoothObjective for F {
    fn value_and_gradient(&mut self, x: &[f64], grad: &mut [f64]) -> f64 {
        self(x, grad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerOptions {
    pub eta: f64,
    pub max_iters: usize,
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerOutcome {
    pub iterations: usize,
    pub converged: bool,
    /// Step size after any backtracking.
    pub eta: f64,
    /// Objective at the start point and after every accepted step.
    pub objective_trace: Vec<f64>,
}

const ARMIJO_C: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

/// Gradient descent `x ← x − η P⁻¹∇f(x)` with Armijo backtracking, where
/// `P` is supplied by [`SmoothObjective::precondition`].
///
/// Stops when `‖∇f‖ ≤ tol·(1 + ‖x‖)` or after `max_iters` steps. A step that
/// fails the sufficient-decrease test halves `η`, and the halved value is
/// kept for the remaining steps of this call.
pub fn inner_gradient_descent<F: SmoothObjective + ?Sized>(
    objective: &mut F,
    x: &mut [f64],
    opts: InnerOptions,
) -> Result<InnerOutcome> {
    if opts.eta.is_nan() || opts.eta <= 0.0 {
        return Err(UnmixError::InvalidInput("eta must be positive".into()));
    }
    let n = x.len();
    let mut grad = vec![0.0; n];
    let mut dir = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut trial_grad = vec![0.0; n];
    let mut f = objective.value_and_gradient(x, &mut grad);
    if !f.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(UnmixError::NonFiniteIterate);
    }
    let mut outcome = InnerOutcome {
        iterations: 0,
        converged: false,
        eta: opts.eta,
        objective_trace: vec![f],
    };
    let mut eta = opts.eta;
    while outcome.iterations < opts.max_iters {
        let gnorm = norm2(&grad);
        if gnorm <= opts.tol * (1.0 + norm2(x)) {
            outcome.converged = true;
            break;
        }
        dir.copy_from_slice(&grad);
        objective.precondition(&mut dir);
        let slope = dot(&grad, &dir);
        if !slope.is_finite() {
            return Err(UnmixError::NonFiniteIterate);
        }
        if slope <= 0.0 {
            break;
        }
        let slack = 8.0 * f64::EPSILON * libm::fabs(f);
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            for ((t, xi), di) in trial.iter_mut().zip(x.iter()).zip(&dir) {
                *t = xi - eta * di;
            }
            let ft = objective.value_and_gradient(&trial, &mut trial_grad);
            if ft.is_finite() && ft <= f - ARMIJO_C * eta * slope + slack {
                accepted = true;
                f = ft;
                break;
            }
            eta *= 0.5;
        }
        if !accepted {
            // no representable decrease along the gradient
            break;
        }
        x.copy_from_slice(&trial);
        core::mem::swap(&mut grad, &mut trial_grad);
        if x.iter().chain(&grad).any(|v| !v.is_finite()) {
            return Err(UnmixError::NonFiniteIterate);
        }
        outcome.iterations += 1;
        outcome.objective_trace.push(f);
    }
    if !outcome.converged {
        outcome.converged = norm2(&grad) <= opts.tol * (1.0 + norm2(x));
    }
    outcome.eta = eta;
    Ok(outcome)
}

/// `AᵀWA + ρB` for `W = diag(w)`; `B = I + 11ᵀ` when `coupled`, else `I`.
fn penalized_gram(a: &Matrix, w: &[f64], rho: f64, coupled: bool) -> Matrix {
    let k = a.cols();
    let mut g = Matrix::zeros(k, k);
    let mut scaled = vec![0.0; a.rows()];
    for q in 0..k {
        for ((s, aq), wl) in scaled.iter_mut().zip(a.col(q)).zip(w) {
            *s = wl * aq;
        }
        for p in 0..=q {
            let v = dot(a.col(p), &scaled);
            g[(p, q)] = v;
            g[(q, p)] = v;
        }
    }
    for p in 0..k {
        for q in 0..k {
            let b = if p == q { 1.0 } else { 0.0 } + if coupled { 1.0 } else { 0.0 };
            g[(p, q)] += rho * b;
        }
    }
    g
}

/// Applies `P⁻¹` to every pixel block of `dir`, with `P` built from the band
/// weights of the last evaluation. Leaves `dir` untouched if `P` cannot be
/// factored.
fn precondition_blocks(a: &Matrix, w: &[f64], rho: f64, coupled: bool, dir: &mut [f64]) {
    let k = a.cols();
    if k == 0 {
        return;
    }
    if let Some(chol) = Cholesky::factor(&penalized_gram(a, w, rho, coupled)) {
        for block in dir.chunks_exact_mut(k) {
            chol.solve_in_place(block);
        }
    }
}

/// Inner objective of the fully-constrained x-update: `F(x̄) + φ(x̄)`.
struct FcInner<'s, 'a> {
    eval: &'s mut CorrentropyEval<'a>,
    diff: &'s Matrix,
    z: &'s [f64],
    u: &'s [f64],
    rho: f64,
    full: Vec<f64>,
    preconditioned: bool,
}

impl SmoothObjective for FcInner<'_, '_> {
    fn value_and_gradient(&mut self, xbar: &[f64], grad: &mut [f64]) -> f64 {
        let keep = self.diff.cols();
        let r = keep + 1;
        let value = self.eval.reduced(xbar, Some(&mut *grad));
        reconstruct_into(xbar, r, &mut self.full);
        let (z, u, rho) = (self.z, self.u, self.rho);
        if keep > 0 {
            for (t, g) in grad.chunks_exact_mut(keep).enumerate() {
                let base = t * r;
                let last = self.full[base + keep] - z[base + keep] - u[base + keep];
                for (p, gp) in g.iter_mut().enumerate() {
                    let d = self.full[base + p] - z[base + p] - u[base + p];
                    *gp += rho * (d - last);
                }
            }
        }
        let mut penalty = 0.0;
        for ((xi, zi), ui) in self.full.iter().zip(z).zip(u) {
            let d = xi - zi - ui;
            penalty += d * d;
        }
        value + 0.5 * rho * penalty
    }

    fn precondition(&mut self, dir: &mut [f64]) {
        if self.preconditioned {
            precondition_blocks(self.diff, self.eval.weights(), self.rho, true, dir);
        }
    }
}

/// Fully-constrained x-update over the reduced variables `x̄`.
struct FcProblem<'a> {
    eval: CorrentropyEval<'a>,
    /// `d_p = m_p − m_R`
    diff: Matrix,
    /// Warm start for the inner loop: the previous `x̄`.
    xbar: Vec<f64>,
    eta: f64,
    max_inner: usize,
    inner_tol: f64,
    preconditioned: bool,
    inner_iterations: usize,
}

impl AdmmProblem for FcProblem<'_> {
    fn x_update(&mut self, z: &[f64], u: &[f64], rho: f64, x: &mut [f64]) -> Result<()> {
        let r = self.diff.cols() + 1;
        let mut inner = FcInner {
            eval: &mut self.eval,
            diff: &self.diff,
            z,
            u,
            rho,
            full: vec![0.0; x.len()],
            preconditioned: self.preconditioned,
        };
        let outcome = inner_gradient_descent(
            &mut inner,
            &mut self.xbar,
            InnerOptions {
                eta: self.eta,
                max_iters: self.max_inner,
                tol: self.inner_tol,
            },
        )
        .map_err(|_| UnmixError::InnerSolverFailure)?;
        self.inner_iterations += outcome.iterations;
        reconstruct_into(&self.xbar, r, x);
        Ok(())
    }

    fn z_update(&self, v: &[f64], _rho: f64, z: &mut [f64]) {
        for (zi, vi) in z.iter_mut().zip(v) {
            *zi = vi.max(0.0);
        }
    }

    fn objective(&mut self, x: &[f64]) -> f64 {
        let s2 = self.eval.sigma() * self.eval.sigma();
        let l = self.eval.handle().bands() as f64;
        self.eval.full(x, None) / s2 - l
    }
}

/// Inner objective of the sparse x-update: `F(x) + (ρ/2)‖x − z − u‖²`.
struct SpInner<'s, 'a> {
    eval: &'s mut CorrentropyEval<'a>,
    z: &'s [f64],
    u: &'s [f64],
    rho: f64,
    preconditioned: bool,
}

impl SmoothObjective for SpInner<'_, '_> {
    fn value_and_gradient(&mut self, xv: &[f64], grad: &mut [f64]) -> f64 {
        let value = self.eval.full(xv, Some(&mut *grad));
        let mut penalty = 0.0;
        for (((g, xi), zi), ui) in grad.iter_mut().zip(xv).zip(self.z).zip(self.u) {
            let d = xi - zi - ui;
            *g += self.rho * d;
            penalty += d * d;
        }
        value + 0.5 * self.rho * penalty
    }

    fn precondition(&mut self, dir: &mut [f64]) {
        if self.preconditioned {
            let m = self.eval.handle().m();
            precondition_blocks(m, self.eval.weights(), self.rho, false, dir);
        }
    }
}

/// Sparse x-update over the full variables.
struct SpProblem<'a> {
    eval: CorrentropyEval<'a>,
    lambda: f64,
    eta: f64,
    max_inner: usize,
    inner_tol: f64,
    preconditioned: bool,
    inner_iterations: usize,
}

impl AdmmProblem for SpProblem<'_> {
    fn x_update(&mut self, z: &[f64], u: &[f64], rho: f64, x: &mut [f64]) -> Result<()> {
        let mut inner = SpInner {
            eval: &mut self.eval,
            z,
            u,
            rho,
            preconditioned: self.preconditioned,
        };
        let outcome = inner_gradient_descent(
            &mut inner,
            x,
            InnerOptions {
                eta: self.eta,
                max_iters: self.max_inner,
                tol: self.inner_tol,
            },
        )
        .map_err(|_| UnmixError::InnerSolverFailure)?;
        self.inner_iterations += outcome.iterations;
        Ok(())
    }

    fn z_update(&self, v: &[f64], rho: f64, z: &mut [f64]) {
        let b = self.lambda / rho;
        for (zi, vi) in z.iter_mut().zip(v) {
            *zi = shrink(*vi, b).max(0.0);
        }
    }

    fn objective(&mut self, x: &[f64]) -> f64 {
        let s2 = self.eval.sigma() * self.eval.sigma();
        let l = self.eval.handle().bands() as f64;
        let l1: f64 = x.iter().map(|v| libm::fabs(*v)).sum();
        (self.eval.full(x, None) + self.lambda * l1) / s2 - l
    }
}

/// Which correntropy solver to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    /// Nonnegativity and sum-to-one.
    FullyConstrained,
    /// Nonnegativity and an ℓ₁ penalty.
    Sparse,
}

/// Default starting abundances.
///
/// Fully-constrained: columns of `X_LS` projected onto the simplex. Sparse:
/// the nonnegative least-squares fit. Clipping `X_LS` to the orthant is a poor
/// start when `R` is large and some bands are corrupted: the clipped fit can
/// leave every band with a residual so large that all band weights vanish,
/// and the correntropy gradient with them. Falls back to uniform abundances
/// when the least-squares problem is singular.
pub fn default_init(handle: &ProblemHandle, algorithm: Algorithm) -> Matrix {
    let r = handle.endmember_count();
    let t = handle.pixels();
    let uniform = || Matrix::filled(r, t, 1.0 / r as f64);
    match algorithm {
        Algorithm::FullyConstrained => {
            let Ok(ls) = baselines::solve_ls(handle) else {
                return uniform();
            };
            let ls = ls.into_matrix();
            let mut out = Matrix::zeros(r, t);
            for c in 0..t {
                project_simplex(ls.col(c), out.col_mut(c));
            }
            out
        }
        Algorithm::Sparse => {
            let cfg = baselines::BaselineConfig {
                tol: 1e-7,
                max_iters: 5000,
                ..baselines::BaselineConfig::default()
            };
            match baselines::solve_sunsal_sparse(handle, 0.0, &cfg) {
                Ok((x, _)) => x.into_matrix(),
                Err(_) => uniform(),
            }
        }
    }
}

fn check_init(handle: &ProblemHandle, x0: &Matrix) -> Result<()> {
    let expected = (handle.endmember_count(), handle.pixels());
    if x0.shape() != expected {
        return Err(UnmixError::DimensionMismatch {
            what: "initial abundances",
            expected,
            found: x0.shape(),
        });
    }
    if !x0.is_finite() {
        return Err(UnmixError::NonFiniteData("initial abundances"));
    }
    Ok(())
}

/// Frobenius norm of `M` squared, the gradient Lipschitz bound of `σ²·C`.
fn lipschitz_bound(m: &Matrix) -> f64 {
    m.frobenius_norm_sq()
}

/// Correntropy unmixing with nonnegativity and sum-to-one constraints.
///
/// Uses `config.sigma`, or tunes it first when `config.sigma_auto` is set.
/// `x0` defaults to [`default_init`]. The result is the final z iterate with
/// each column rescaled to sum to one.
pub fn cusal_fc(
    handle: &ProblemHandle,
    config: &SolverConfig,
    x0: Option<&Matrix>,
) -> Result<(AbundanceMatrix, SolverReport)> {
    if config.sigma_auto {
        let tuned = tune_sigma(handle, Algorithm::FullyConstrained, config)?;
        return Ok((tuned.abundances, tuned.report));
    }
    cusal_fc_observed(handle, config, x0, &mut |_, _| {})
}

/// [`cusal_fc`] at a fixed `σ`, reporting every outer iteration to `observer`.
/// `state.x` is the reconstructed full iterate.
pub fn cusal_fc_observed(
    handle: &ProblemHandle,
    config: &SolverConfig,
    x0: Option<&Matrix>,
    observer: &mut dyn FnMut(&AdmmState, &AdmmState),
) -> Result<(AbundanceMatrix, SolverReport)> {
    config.validate()?;
    let r = handle.endmember_count();
    let x0 = match x0 {
        Some(x0) => {
            check_init(handle, x0)?;
            let mut p = Matrix::zeros(x0.rows(), x0.cols());
            for c in 0..x0.cols() {
                project_simplex(x0.col(c), p.col_mut(c));
            }
            p
        }
        None => default_init(handle, Algorithm::FullyConstrained),
    };
    let m = handle.m();
    let last = m.col(r - 1);
    let diff = Matrix::from_fn(m.rows(), r - 1, |i, p| m[(i, p)] - last[i]);
    let eta = config.eta.unwrap_or_else(|| {
        if config.preconditioned {
            1.0
        } else {
            1.0 / (diff.frobenius_norm_sq() + config.rho * r as f64)
        }
    });
    let mut problem = FcProblem {
        eval: CorrentropyEval::with_reduction(handle, config.sigma)?,
        diff,
        xbar: crate::correntropy::ReducedAbundance::from_full(&x0).matrix().as_slice().to_vec(),
        eta,
        max_inner: config.max_inner_iters,
        inner_tol: config.inner_tol,
        preconditioned: config.preconditioned,
        inner_iterations: 0,
    };
    let init = AdmmState::new(x0.into_vec());
    let (state, report) = admm_observed(&mut problem, config, init, observer)?;

    let mut out = Matrix::from_col_major(r, handle.pixels(), state.z)?;
    for c in 0..out.cols() {
        let s: f64 = out.col(c).iter().sum();
        if s > 0.0 {
            out.col_mut(c).iter_mut().for_each(|v| *v /= s);
        } else {
            project_simplex(&state.x[c * r..(c + 1) * r], out.col_mut(c));
        }
    }
    Ok((AbundanceMatrix::with_constraint(out, Constraint::FullyConstrained)?, report))
}

/// Correntropy unmixing with nonnegativity and an ℓ₁ penalty `λ‖X‖₁`.
///
/// Uses `config.sigma`, or tunes it first when `config.sigma_auto` is set.
/// The result is the final z iterate.
pub fn cusal_sp(
    handle: &ProblemHandle,
    config: &SolverConfig,
    x0: Option<&Matrix>,
) -> Result<(AbundanceMatrix, SolverReport)> {
    if config.sigma_auto {
        let tuned = tune_sigma(handle, Algorithm::Sparse, config)?;
        return Ok((tuned.abundances, tuned.report));
    }
    cusal_sp_observed(handle, config, x0, &mut |_, _| {})
}

/// [`cusal_sp`] at a fixed `σ`, reporting every outer iteration to `observer`.
pub fn cusal_sp_observed(
    handle: &ProblemHandle,
    config: &SolverConfig,
    x0: Option<&Matrix>,
    observer: &mut dyn FnMut(&AdmmState, &AdmmState),
) -> Result<(AbundanceMatrix, SolverReport)> {
    config.validate()?;
    let x0 = match x0 {
        Some(x0) => {
            check_init(handle, x0)?;
            x0.map(|v| v.max(0.0))
        }
        None => default_init(handle, Algorithm::Sparse),
    };
    let eta = config.eta.unwrap_or_else(|| {
        if config.preconditioned {
            1.0
        } else {
            1.0 / (lipschitz_bound(handle.m()) + config.rho)
        }
    });
    let mut problem = SpProblem {
        eval: CorrentropyEval::new(handle, config.sigma)?,
        lambda: config.lambda,
        eta,
        max_inner: config.max_inner_iters,
        inner_tol: config.inner_tol,
        preconditioned: config.preconditioned,
        inner_iterations: 0,
    };
    let (r, t) = x0.shape();
    let init = AdmmState::new(x0.into_vec());
    let (state, report) = admm_observed(&mut problem, config, init, observer)?;
    let out = Matrix::from_col_major(r, t, state.z)?;
    Ok((AbundanceMatrix::with_constraint(out, Constraint::Nonnegative)?, report))
}

/// Runs one solver at a fixed `σ`, ignoring `sigma_auto`.
pub fn solve_fixed_sigma(
    handle: &ProblemHandle,
    algorithm: Algorithm,
    config: &SolverConfig,
) -> Result<(AbundanceMatrix, SolverReport)> {
    match algorithm {
        Algorithm::FullyConstrained => cusal_fc_observed(handle, config, None, &mut |_, _| {}),
        Algorithm::Sparse => cusal_sp_observed(handle, config, None, &mut |_, _| {}),
    }
}

/// Growth factor applied to `σ` after a rejected attempt.
pub const SIGMA_GROWTH: f64 = 1.2;
/// Accept `σ` when `‖Y − MX̂‖_F / ‖Y − MX_LS‖_F` is below this.
pub const ACCEPT_RATIO: f64 = 2.0;
/// `σ` above this multiple of `σ₀` counts as overestimated.
pub const OVERESTIMATE_FACTOR: f64 = 1000.0;
pub const MAX_TUNING_ATTEMPTS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TuningOutcome {
    Converged,
    /// Primal residual increased, or the iterates blew up.
    Diverged,
    /// Converged, but too far from the least-squares fit.
    RatioTooLarge,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuningAttempt {
    pub sigma: f64,
    pub outcome: TuningOutcome,
    /// Reconstruction error ratio, when the solver converged.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuningTrace {
    /// `σ₀` before flooring; zero when the least-squares fit is exact.
    pub sigma0: f64,
    /// Lower bound applied to `σ₀`.
    pub sigma_floor: f64,
    pub attempts: Vec<TuningAttempt>,
    /// Divisor of the last `σ₀ / p` restart.
    pub p: usize,
    pub sigma_final: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TunedSolution {
    pub sigma: f64,
    pub trace: TuningTrace,
    pub abundances: AbundanceMatrix,
    pub report: SolverReport,
}

/// `σ₀ = √(R/(8L))·‖Y − M X_LS‖_F`, the floor `1e−6·max(1, ‖Y‖_F/√(LT))`, and
/// the least-squares residual norm.
pub fn initial_sigma(handle: &ProblemHandle) -> Result<(f64, f64, f64)> {
    let (l, t, r) = handle.dims();
    let x_ls = baselines::solve_ls(handle)?;
    let ls_residual = handle.reconstruction_error(x_ls.matrix());
    let sigma0 = libm::sqrt(r as f64 / (8.0 * l as f64)) * ls_residual;
    let rms = handle.y().frobenius_norm() / libm::sqrt((l * t) as f64);
    let floor = 1e-6 * rms.max(1.0);
    Ok((sigma0, floor, ls_residual))
}

/// Bandwidth selection by repeated solves.
///
/// Starting from `σ₀`: a run that converges (or hits the iteration cap) is
/// accepted when its reconstruction error is within twice the least-squares
/// error, otherwise `σ` grows by 1.2. A run whose primal residual increases
/// is treated as divergence: `σ` grows by 1.2 unless it already exceeds
/// `1000·σ₀`, in which case it restarts at `σ₀/p` with `p` incremented.
///
/// When the least-squares fit is exact the ratio's denominator is floored at
/// `σ_floor·√(LT)`.
pub fn tune_sigma(
    handle: &ProblemHandle,
    algorithm: Algorithm,
    config: &SolverConfig,
) -> Result<TunedSolution> {
    let (l, t, _) = handle.dims();
    let (sigma0_raw, floor, ls_residual) = initial_sigma(handle)?;
    let sigma0 = sigma0_raw.max(floor);
    let denom = ls_residual.max(floor * libm::sqrt((l * t) as f64));
    let mut trace = TuningTrace {
        sigma0: sigma0_raw,
        sigma_floor: floor,
        attempts: Vec::new(),
        p: 1,
        sigma_final: sigma0,
    };
    let mut sigma = sigma0;
    let mut run_config = config.clone();
    run_config.sigma_auto = false;
    while trace.attempts.len() < MAX_TUNING_ATTEMPTS {
        run_config.sigma = sigma;
        let run = solve_fixed_sigma(handle, algorithm, &run_config);
        let converged = match &run {
            Ok((_, report)) => report.termination_reason != TerminationReason::PrimalIncreased,
            Err(UnmixError::NonFiniteIterate | UnmixError::InnerSolverFailure) => false,
            Err(e) => return Err(e.clone()),
        };
        if let (true, Ok((x, report))) = (converged, run) {
            let ratio = handle.reconstruction_error(x.matrix()) / denom;
            if ratio < ACCEPT_RATIO {
                trace.attempts.push(TuningAttempt {
                    sigma,
                    outcome: TuningOutcome::Converged,
                    ratio: Some(ratio),
                });
                trace.sigma_final = sigma;
                return Ok(TunedSolution {
                    sigma,
                    trace,
                    abundances: x,
                    report,
                });
            }
            trace.attempts.push(TuningAttempt {
                sigma,
                outcome: TuningOutcome::RatioTooLarge,
                ratio: Some(ratio),
            });
            sigma *= SIGMA_GROWTH;
        } else {
            trace.attempts.push(TuningAttempt {
                sigma,
                outcome: TuningOutcome::Diverged,
                ratio: None,
            });
            if sigma > OVERESTIMATE_FACTOR * sigma0 {
                trace.p += 1;
                sigma = sigma0 / trace.p as f64;
            } else {
                sigma *= SIGMA_GROWTH;
            }
        }
    }
    Err(UnmixError::TuningFailed {
        attempts: trace.attempts.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(x: Vec<f64>, z: Vec<f64>, k: usize) -> AdmmState {
        let n = x.len();
        AdmmState {
            x,
            z,
            u: vec![0.0; n],
            k,
        }
    }

    #[test]
    fn stop_on_zero_residuals() {
        let s0 = state(vec![1.0, 2.0], vec![1.0, 2.0], 3);
        let s1 = state(vec![1.0, 2.0], vec![1.0, 2.0], 4);
        assert_eq!(
            stop_check(&s0, &s1, &SolverConfig::default()),
            TerminationDecision::Stop(TerminationReason::ResidualsSmall)
        );
    }

    #[test]
    fn stop_on_primal_increase() {
        let s0 = state(vec![0.5, 0.0], vec![0.0, 0.0], 3);
        let s1 = state(vec![0.6, 0.0], vec![0.0, 0.0], 4);
        assert_eq!(
            stop_check(&s0, &s1, &SolverConfig::default()),
            TerminationDecision::Stop(TerminationReason::PrimalIncreased)
        );
        // the initial point has no residual history
        let s0 = state(vec![0.0, 0.0], vec![0.0, 0.0], 0);
        assert_eq!(stop_check(&s0, &s1, &SolverConfig::default()), TerminationDecision::Continue);
    }

    #[test]
    fn stop_on_iteration_cap_and_precedence() {
        let cfg = SolverConfig {
            max_outer_iters: 5,
            ..SolverConfig::default()
        };
        let s0 = state(vec![0.7], vec![0.0], 4);
        let s1 = state(vec![0.6], vec![0.0], 5);
        assert_eq!(
            stop_check(&s0, &s1, &cfg),
            TerminationDecision::Stop(TerminationReason::MaxIters)
        );
        let s1 = state(vec![0.8], vec![0.0], 5);
        assert_eq!(
            stop_check(&s0, &s1, &cfg),
            TerminationDecision::Stop(TerminationReason::PrimalIncreased)
        );
        let s1 = state(vec![0.0], vec![0.0], 5);
        assert_eq!(
            stop_check(&s0, &s1, &cfg),
            TerminationDecision::Stop(TerminationReason::ResidualsSmall)
        );
    }

    #[test]
    fn dual_residual_scaled_by_rho() {
        let cfg = SolverConfig {
            rho: 1e4,
            ..SolverConfig::default()
        };
        let s0 = state(vec![0.0], vec![0.0], 1);
        let s1 = state(vec![1e-6], vec![1e-6], 2);
        // primal is zero but rho * |dz| = 1e-2 > sqrt(1)*1e-5
        assert_eq!(stop_check(&s0, &s1, &cfg), TerminationDecision::Continue);
    }

    #[test]
    fn gradient_descent_exact_step() {
        let a = [1.0, -2.0, 0.5];
        let mut f = |x: &[f64], g: &mut [f64]| {
            let mut v = 0.0;
            for ((gi, xi), ai) in g.iter_mut().zip(x).zip(&a) {
                *gi = xi - ai;
                v += 0.5 * (xi - ai) * (xi - ai);
            }
            v
        };
        let mut x = [0.0; 3];
        let out = inner_gradient_descent(
            &mut f,
            &mut x,
            InnerOptions {
                eta: 1.0,
                max_iters: 10,
                tol: 1e-12,
            },
        )
        .unwrap();
        assert_eq!(x, a);
        assert_eq!(out.iterations, 1);
        assert!(out.converged);
    }

    #[test]
    fn gradient_descent_geometric_rate() {
        let a = [1.0, 2.0];
        let mut f = |x: &[f64], g: &mut [f64]| {
            let mut v = 0.0;
            for ((gi, xi), ai) in g.iter_mut().zip(x).zip(&a) {
                *gi = xi - ai;
                v += 0.5 * (xi - ai) * (xi - ai);
            }
            v
        };
        let d0 = dist2(&[0.0, 0.0], &a);
        for k in 1..15 {
            let mut x = [0.0; 2];
            let out = inner_gradient_descent(
                &mut f,
                &mut x,
                InnerOptions {
                    eta: 0.1,
                    max_iters: k,
                    tol: 1e-15,
                },
            )
            .unwrap();
            assert_eq!(out.iterations, k);
            let expected = libm::pow(0.9, k as f64) * d0;
            assert!((dist2(&x, &a) - expected).abs() < 1e-12 * d0);
        }
    }

    #[test]
    fn gradient_descent_backtracks_oversized_step() {
        let mut f = |x: &[f64], g: &mut [f64]| {
            g[0] = 10.0 * x[0];
            5.0 * x[0] * x[0]
        };
        let mut x = [1.0];
        let out = inner_gradient_descent(
            &mut f,
            &mut x,
            InnerOptions {
                eta: 1.0,
                max_iters: 200,
                tol: 1e-10,
            },
        )
        .unwrap();
        assert!(out.eta < 0.2);
        assert!(x[0].abs() < 1e-9);
        assert!(out.objective_trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn gradient_descent_rejects_non_finite() {
        let mut f = |_: &[f64], g: &mut [f64]| {
            g[0] = f64::NAN;
            0.0
        };
        let mut x = [0.0];
        let err = inner_gradient_descent(
            &mut f,
            &mut x,
            InnerOptions {
                eta: 1.0,
                max_iters: 3,
                tol: 1e-6,
            },
        );
        assert_eq!(err, Err(UnmixError::NonFiniteIterate));
    }
}
