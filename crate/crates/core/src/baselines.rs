//! Quadratic baselines: unconstrained least squares, fully-constrained least
//! squares (FCLS) and nonnegative ℓ₁-regularized least squares.
//!
//! FCLS and the sparse variant follow the SUnSAL route: ADMM with a
//! closed-form x-update through one Cholesky factor of `MᵀM + ρI` shared by
//! all pixels. The penalty is rebalanced every few iterations when the primal
//! and dual residuals drift apart, which refactors that small `R × R` matrix.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Result, UnmixError};
use crate::linalg::{dist2, project_simplex, Cholesky, HouseholderQr, Matrix};
use crate::problem::{shrink, AbundanceMatrix, Constraint, ProblemHandle};

/// Which constraint set a quadratic baseline enforces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QuadraticConstraint {
    None,
    /// Nonnegativity.
    Anc,
    /// Nonnegativity and sum-to-one.
    AncAsc,
    /// Nonnegativity and `λ‖x‖₁`.
    AncL1(f64),
}

/// Least-squares unmixing problem with a constraint set.
#[derive(Debug, Clone)]
pub struct QuadraticUnmixProblem<'a> {
    pub handle: &'a ProblemHandle,
    pub constraints: QuadraticConstraint,
}

impl QuadraticUnmixProblem<'_> {
    pub fn solve(&self, config: &BaselineConfig) -> Result<(AbundanceMatrix, BaselineReport)> {
        match self.constraints {
            QuadraticConstraint::None => {
                let x = solve_ls(self.handle)?;
                Ok((
                    x,
                    BaselineReport {
                        iterations: 0,
                        converged: true,
                    },
                ))
            }
            QuadraticConstraint::Anc => solve_sunsal_sparse(self.handle, 0.0, config),
            QuadraticConstraint::AncAsc => solve_fcls(self.handle, config),
            QuadraticConstraint::AncL1(lambda) => solve_sunsal_sparse(self.handle, lambda, config),
        }
    }

    /// Per-pixel objective `½‖y_t − M x_t‖² (+ λ‖x_t‖₁)`, summed over pixels.
    pub fn objective(&self, x: &Matrix) -> f64 {
        let resid = self.handle.y().sub(&self.handle.m().matmul(x));
        let mut value = 0.5 * resid.frobenius_norm_sq();
        if let QuadraticConstraint::AncL1(lambda) = self.constraints {
            value += lambda * x.as_slice().iter().map(|v| libm::fabs(*v)).sum::<f64>();
        }
        value
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineConfig {
    /// Initial ADMM penalty; `None` uses `trace(MᵀM)/R`.
    pub rho: Option<f64>,
    /// Per-entry tolerance on the primal and dual residuals.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            rho: None,
            tol: 1e-10,
            max_iters: 20_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BaselineReport {
    pub iterations: usize,
    /// `false` means the iteration cap was hit before the tolerance.
    pub converged: bool,
}

/// `X_LS = (MᵀM)⁻¹MᵀY`, computed pixel by pixel from a Householder QR of `M`.
pub fn solve_ls(handle: &ProblemHandle) -> Result<AbundanceMatrix> {
    let m = handle.m();
    let qr = HouseholderQr::factor(m);
    if !qr.is_full_rank() {
        return Err(UnmixError::SingularNormalEquations);
    }
    let (_, t, r) = handle.dims();
    let mut x = Matrix::zeros(r, t);
    let mut b = vec![0.0; handle.bands()];
    for c in 0..t {
        b.copy_from_slice(handle.y().col(c));
        qr.solve_least_squares(&mut b, x.col_mut(c));
    }
    AbundanceMatrix::new(x)
}

/// Fully-constrained least squares: per pixel, `min ½‖y_t − M x_t‖²` over the
/// probability simplex.
pub fn solve_fcls(
    handle: &ProblemHandle,
    config: &BaselineConfig,
) -> Result<(AbundanceMatrix, BaselineReport)> {
    let (z, report) = quadratic_admm(handle, Prox::Simplex, config)?;
    let mut out = Matrix::zeros(z.rows(), z.cols());
    for c in 0..z.cols() {
        project_simplex(z.col(c), out.col_mut(c));
    }
    Ok((AbundanceMatrix::with_constraint(out, Constraint::FullyConstrained)?, report))
}

/// Sparse unmixing: per pixel, `min ½‖y_t − M x_t‖² + λ‖x_t‖₁` subject to
/// `x_t ≥ 0`. With `λ = 0` this is nonnegative least squares.
pub fn solve_sunsal_sparse(
    handle: &ProblemHandle,
    lambda: f64,
    config: &BaselineConfig,
) -> Result<(AbundanceMatrix, BaselineReport)> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(UnmixError::InvalidInput("lambda must be nonnegative".into()));
    }
    let (z, report) = quadratic_admm(handle, Prox::NonnegativeL1(lambda), config)?;
    Ok((AbundanceMatrix::with_constraint(z, Constraint::Nonnegative)?, report))
}

#[derive(Debug, Clone, Copy)]
enum Prox {
    /// x-update on the affine sum-to-one set, z-update onto the orthant.
    Simplex,
    NonnegativeL1(f64),
}

struct Factor {
    chol: Cholesky,
    /// `(MᵀM + ρI)⁻¹ 1`
    inv_ones: Vec<f64>,
    /// `1ᵀ(MᵀM + ρI)⁻¹ 1`
    ones_inv_ones: f64,
}

fn factor(gram: &Matrix, rho: f64) -> Result<Factor> {
    let r = gram.rows();
    let mut a = gram.clone();
    for i in 0..r {
        a[(i, i)] += rho;
    }
    let chol = Cholesky::factor(&a).ok_or(UnmixError::SingularNormalEquations)?;
    let mut inv_ones = vec![1.0; r];
    chol.solve_in_place(&mut inv_ones);
    let ones_inv_ones = inv_ones.iter().sum();
    Ok(Factor {
        chol,
        inv_ones,
        ones_inv_ones,
    })
}

fn quadratic_admm(
    handle: &ProblemHandle,
    prox: Prox,
    config: &BaselineConfig,
) -> Result<(Matrix, BaselineReport)> {
    let (_, t, r) = handle.dims();
    let m = handle.m();
    let gram = m.gram();
    let mty = m.tr_matmul(handle.y());
    let mut rho = config.rho.unwrap_or_else(|| {
        let tr: f64 = (0..r).map(|i| gram[(i, i)]).sum();
        (tr / r as f64).max(f64::MIN_POSITIVE)
    });
    if !rho.is_finite() || rho <= 0.0 {
        return Err(UnmixError::InvalidInput("rho must be positive".into()));
    }
    let mut fac = factor(&gram, rho)?;

    // start from the projected least-squares fit when it exists
    let mut z = match solve_ls(handle) {
        Ok(ls) => ls.into_matrix(),
        Err(_) => Matrix::filled(r, t, 1.0 / r as f64),
    };
    for c in 0..t {
        let col = z.col_mut(c);
        match prox {
            Prox::Simplex => {
                let v = col.to_vec();
                project_simplex(&v, col);
            }
            Prox::NonnegativeL1(_) => col.iter_mut().for_each(|v| *v = v.max(0.0)),
        }
    }
    let mut x = z.clone();
    let mut u = Matrix::zeros(r, t);
    let mut z_prev = z.clone();
    let scale = libm::sqrt((r * t) as f64);
    let tol = config.tol * scale;
    let mut rhs = vec![0.0; r];
    let mut report = BaselineReport {
        iterations: 0,
        converged: false,
    };

    while report.iterations < config.max_iters {
        report.iterations += 1;
        for c in 0..t {
            let (zc, uc, mc) = (z.col(c), u.col(c), mty.col(c));
            for i in 0..r {
                rhs[i] = mc[i] + rho * (zc[i] + uc[i]);
            }
            fac.chol.solve_in_place(&mut rhs);
            if let Prox::Simplex = prox {
                let excess = (rhs.iter().sum::<f64>() - 1.0) / fac.ones_inv_ones;
                for (v, w) in rhs.iter_mut().zip(&fac.inv_ones) {
                    *v -= excess * w;
                }
            }
            x.col_mut(c).copy_from_slice(&rhs);
        }
        core::mem::swap(&mut z, &mut z_prev);
        let zs = z.as_mut_slice();
        let (xs, us) = (x.as_slice(), u.as_slice());
        match prox {
            Prox::Simplex => {
                for ((zi, xi), ui) in zs.iter_mut().zip(xs).zip(us) {
                    *zi = (xi - ui).max(0.0);
                }
            }
            Prox::NonnegativeL1(lambda) => {
                let b = lambda / rho;
                for ((zi, xi), ui) in zs.iter_mut().zip(xs).zip(us) {
                    *zi = shrink(xi - ui, b).max(0.0);
                }
            }
        }
        for ((ui, xi), zi) in u.as_mut_slice().iter_mut().zip(xs).zip(z.as_slice()) {
            *ui -= xi - zi;
        }
        let primal = dist2(x.as_slice(), z.as_slice());
        let dual = rho * dist2(z.as_slice(), z_prev.as_slice());
        if !primal.is_finite() || !dual.is_finite() {
            return Err(UnmixError::NonFiniteIterate);
        }
        if primal <= tol && dual <= tol {
            report.converged = true;
            break;
        }
        if report.iterations.is_multiple_of(10) {
            let factor_change = if primal > 10.0 * dual {
                2.0
            } else if dual > 10.0 * primal {
                0.5
            } else {
                1.0
            };
            if factor_change != 1.0 {
                rho *= factor_change;
                u.as_mut_slice().iter_mut().for_each(|v| *v /= factor_change);
                fac = factor(&gram, rho)?;
            }
        }
    }
    Ok((z, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{validate_problem, EndmemberMatrix, ObservationMatrix};

    fn handle(y: Matrix, m: Matrix) -> ProblemHandle {
        validate_problem(
            ObservationMatrix::new(y).unwrap(),
            EndmemberMatrix::new(m).unwrap(),
        )
        .unwrap()
    }

    fn endmembers() -> Matrix {
        Matrix::from_row_major(
            5,
            3,
            &[
                0.9, 0.1, 0.3, 0.7, 0.2, 0.5, 0.4, 0.6, 0.2, 0.2, 0.8, 0.6, 0.1, 0.4, 0.9,
            ],
        )
        .unwrap()
    }

    #[test]
    fn ls_identity_returns_y() {
        let y = Matrix::from_fn(4, 3, |r, c| (r as f64 - c as f64) * 0.3);
        let h = handle(y.clone(), Matrix::identity(4));
        let x = solve_ls(&h).unwrap();
        for (a, b) in x.matrix().as_slice().iter().zip(y.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn ls_consistent_system_exact() {
        let m = endmembers();
        let x_true = Matrix::from_row_major(3, 2, &[0.2, -0.4, 0.5, 1.1, 0.3, 0.3]).unwrap();
        let h = handle(m.matmul(&x_true), m);
        let x = solve_ls(&h).unwrap();
        for (a, b) in x.matrix().as_slice().iter().zip(x_true.as_slice()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn ls_singular_rejected() {
        let m = Matrix::from_fn(4, 2, |r, _| r as f64 + 1.0);
        let h = handle(Matrix::filled(4, 1, 1.0), m);
        assert_eq!(solve_ls(&h), Err(UnmixError::SingularNormalEquations));
    }

    #[test]
    fn fcls_vertex_pixel() {
        let m = endmembers();
        let y = Matrix::from_columns(5, &[m.col(1), m.col(2)]).unwrap();
        let h = handle(y, m);
        let (x, report) = solve_fcls(&h, &BaselineConfig::default()).unwrap();
        assert!(report.converged);
        let expected = [0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        for (a, b) in x.matrix().as_slice().iter().zip(expected) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn fcls_interior_mixture() {
        let m = endmembers();
        let x_true = Matrix::from_row_major(3, 2, &[0.2, 0.6, 0.5, 0.1, 0.3, 0.3]).unwrap();
        let h = handle(m.matmul(&x_true), m);
        let (x, _) = solve_fcls(&h, &BaselineConfig::default()).unwrap();
        for (a, b) in x.matrix().as_slice().iter().zip(x_true.as_slice()) {
            assert!((a - b).abs() < 1e-6);
        }
        assert_eq!(x.constraint(), Constraint::FullyConstrained);
    }

    #[test]
    fn sparse_huge_lambda_is_zero() {
        let m = endmembers();
        let y = Matrix::from_fn(5, 3, |r, c| 0.1 * (r + c) as f64);
        let h = handle(y, m);
        let (x, _) = solve_sunsal_sparse(&h, 1e6, &BaselineConfig::default()).unwrap();
        assert!(x.matrix().as_slice().iter().all(|v| *v == 0.0));
        assert!(solve_sunsal_sparse(&h, -1.0, &BaselineConfig::default()).is_err());
    }

    #[test]
    fn sparse_single_endmember_support() {
        let m = endmembers();
        let y = Matrix::from_columns(5, &[m.col(0)]).unwrap();
        let h = handle(y, m);
        let (x, _) = solve_sunsal_sparse(&h, 0.05, &BaselineConfig::default()).unwrap();
        let col = x.matrix().col(0);
        assert!(col[0] > 0.5);
        assert_eq!(&col[1..], &[0.0, 0.0]);
    }
}
