//! The correntropy objective and its gradients.
//!
//! For abundances `X` the objective is
//!
//! ```text
//! C(X) = −Σ_l exp(−‖y_l* − (MX)_l*‖² / 2σ²)
//! ```
//!
//! where `y_l*` is band `l` over all pixels. Every band contributes a factor
//! `w_l = exp(−s_l / 2σ²)` with `s_l = Σ_t ε_lt²`; bands with a large residual
//! get a weight close to zero and stop influencing the fit.
//!
//! Two parameterizations are provided: the full one over `X` (`R × T`) and a
//! reduced one over the first `R − 1` rows, where the last abundance of each
//! pixel is eliminated through `x_Rt = 1 − Σ_{p<R} x_pt`.
//!
//! Reductions are sequential and fixed: `s_l` accumulates pixels in index
//! order with compensated summation, and the objective sums bands in index
//! order. Results are therefore bit-reproducible on a given platform.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Result, UnmixError};
use crate::linalg::{axpy, dot, Matrix, NeumaierSum};
use crate::problem::ProblemHandle;

/// Abundances with the last row eliminated: `(R − 1) × T`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedAbundance {
    data: Matrix,
}

impl ReducedAbundance {
    pub fn new(data: Matrix) -> Result<Self> {
        if !data.is_finite() {
            return Err(UnmixError::NonFiniteData("reduced abundances"));
        }
        Ok(Self { data })
    }

    /// Drops the last row of `x`.
    pub fn from_full(x: &Matrix) -> Self {
        let keep = x.rows().saturating_sub(1);
        Self {
            data: Matrix::from_fn(keep, x.cols(), |r, c| x[(r, c)]),
        }
    }

    /// Restores the eliminated row so that every column sums to one.
    pub fn to_full(&self) -> Matrix {
        let mut full = Matrix::zeros(self.data.rows() + 1, self.data.cols());
        reconstruct_into(self.data.as_slice(), self.data.rows() + 1, full.as_mut_slice());
        full
    }

    pub fn matrix(&self) -> &Matrix {
        &self.data
    }
}

/// Expands stacked reduced columns (`R − 1` entries each) into stacked full
/// columns (`R` entries each).
pub(crate) fn reconstruct_into(reduced: &[f64], r: usize, full: &mut [f64]) {
    let keep = r - 1;
    let t = full.len() / r;
    debug_assert_eq!(reduced.len(), keep * t);
    for c in 0..t {
        let src = &reduced[c * keep..(c + 1) * keep];
        let dst = &mut full[c * r..(c + 1) * r];
        dst[..keep].copy_from_slice(src);
        dst[keep] = 1.0 - src.iter().sum::<f64>();
    }
}

/// Residuals `ε = Y − M X` together with the per-band factors of `C`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualCache {
    /// `L × T` residual matrix.
    pub eps: Matrix,
    /// `s_l = Σ_t ε_lt²`
    pub band_sq_norms: Vec<f64>,
    /// `w_l = exp(−s_l / 2σ²)`
    pub band_weights: Vec<f64>,
}

impl ResidualCache {
    pub fn from_residuals(eps: Matrix, sigma: f64) -> Self {
        let band_sq_norms = band_square_norms(&eps);
        let inv = 1.0 / (2.0 * sigma * sigma);
        let band_weights = band_sq_norms.iter().map(|s| libm::exp(-s * inv)).collect();
        Self {
            eps,
            band_sq_norms,
            band_weights,
        }
    }

    /// Cache for full abundances `X`.
    pub fn compute(handle: &ProblemHandle, x: &Matrix, sigma: f64) -> Result<Self> {
        check_sigma(sigma)?;
        check_shape(handle, x, handle.endmember_count())?;
        let mut eps = Matrix::zeros(handle.bands(), handle.pixels());
        full_residuals(handle.y(), handle.m(), x.as_slice(), &mut eps);
        Ok(Self::from_residuals(eps, sigma))
    }

    /// `C = −Σ_l w_l`
    pub fn objective(&self) -> f64 {
        -self.band_weights.iter().sum::<f64>()
    }
}

fn band_square_norms(eps: &Matrix) -> Vec<f64> {
    let mut acc = vec![NeumaierSum::default(); eps.rows()];
    for col in eps.columns() {
        for (a, e) in acc.iter_mut().zip(col) {
            a.add(e * e);
        }
    }
    acc.iter().map(NeumaierSum::value).collect()
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma.is_finite() && sigma > 0.0 {
        Ok(())
    } else {
        Err(UnmixError::InvalidInput("sigma must be positive and finite".into()))
    }
}

fn check_shape(handle: &ProblemHandle, x: &Matrix, rows: usize) -> Result<()> {
    if x.shape() != (rows, handle.pixels()) {
        return Err(UnmixError::DimensionMismatch {
            what: "abundance matrix",
            expected: (rows, handle.pixels()),
            found: x.shape(),
        });
    }
    Ok(())
}

/// `eps = Y − M X`, with `x` the stacked columns of `X`.
fn full_residuals(y: &Matrix, m: &Matrix, x: &[f64], eps: &mut Matrix) {
    let r = m.cols();
    for t in 0..y.cols() {
        let dst = eps.col_mut(t);
        dst.copy_from_slice(y.col(t));
        for (k, &a) in x[t * r..(t + 1) * r].iter().enumerate() {
            axpy(-a, m.col(k), dst);
        }
    }
}

/// Evaluator shared by the public operations and the solvers.
///
/// It works on the scaled, shifted objective
/// `F = σ²(C + L) = σ² Σ_l (1 − w_l)`, which has the minimizers and the
/// gradient direction of `C` but avoids the cancellation in `−L + small`.
/// `σ²∇C = ∇F`.
#[derive(Debug, Clone)]
pub struct CorrentropyEval<'a> {
    handle: &'a ProblemHandle,
    sigma: f64,
    /// `Y − m_R 1ᵀ`, for the reduced parameterization.
    shifted_y: Option<Matrix>,
    /// `d_p = m_p − m_R`, for the reduced parameterization.
    diff: Option<Matrix>,
    eps: Matrix,
    weights: Vec<f64>,
    scratch: Vec<f64>,
}

impl<'a> CorrentropyEval<'a> {
    pub fn new(handle: &'a ProblemHandle, sigma: f64) -> Result<Self> {
        check_sigma(sigma)?;
        let (l, t, _) = handle.dims();
        Ok(Self {
            handle,
            sigma,
            shifted_y: None,
            diff: None,
            eps: Matrix::zeros(l, t),
            weights: vec![0.0; l],
            scratch: vec![0.0; l],
        })
    }

    /// Evaluator that also supports the reduced parameterization.
    pub fn with_reduction(handle: &'a ProblemHandle, sigma: f64) -> Result<Self> {
        let mut eval = Self::new(handle, sigma)?;
        let m = handle.m();
        let (l, r) = m.shape();
        let last = m.col(r - 1);
        eval.diff = Some(Matrix::from_fn(l, r - 1, |i, p| m[(i, p)] - last[i]));
        eval.shifted_y = Some(Matrix::from_fn(l, handle.pixels(), |i, t| {
            handle.y()[(i, t)] - last[i]
        }));
        Ok(eval)
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn handle(&self) -> &ProblemHandle {
        self.handle
    }

    /// Band weights from the most recent evaluation.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Residuals from the most recent evaluation.
    pub fn residuals(&self) -> &Matrix {
        &self.eps
    }

    fn finish_value(&mut self) -> f64 {
        let s2 = self.sigma * self.sigma;
        let inv = 1.0 / (2.0 * s2);
        let sq = band_square_norms(&self.eps);
        let mut value = NeumaierSum::default();
        for (w, s) in self.weights.iter_mut().zip(&sq) {
            let a = -s * inv;
            *w = libm::exp(a);
            value.add(-s2 * libm::expm1(a));
        }
        value.value()
    }

    /// `F(x)` for stacked full abundances; writes `∇F` when `grad` is given.
    pub fn full(&mut self, x: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let m = self.handle.m();
        full_residuals(self.handle.y(), m, x, &mut self.eps);
        let value = self.finish_value();
        if let Some(grad) = grad {
            weighted_projection(m, &self.eps, &self.weights, &mut self.scratch, grad);
        }
        value
    }

    /// `F(x̄)` for stacked reduced abundances; writes `∇F` when `grad` is given.
    pub fn reduced(&mut self, xr: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let diff = self
            .diff
            .as_ref()
            .expect("evaluator built without the reduced parameterization");
        let shifted = self.shifted_y.as_ref().expect("reduced evaluator");
        full_residuals(shifted, diff, xr, &mut self.eps);
        let value = self.finish_value();
        if let Some(grad) = grad {
            let diff = self.diff.as_ref().expect("reduced evaluator");
            weighted_projection(diff, &self.eps, &self.weights, &mut self.scratch, grad);
        }
        value
    }
}

/// `out_t = −Aᵀ (w ⊙ ε_t)` for every pixel `t`.
fn weighted_projection(a: &Matrix, eps: &Matrix, w: &[f64], scratch: &mut [f64], out: &mut [f64]) {
    let k = a.cols();
    for t in 0..eps.cols() {
        for ((s, e), wl) in scratch.iter_mut().zip(eps.col(t)).zip(w) {
            *s = wl * e;
        }
        for (p, o) in out[t * k..(t + 1) * k].iter_mut().enumerate() {
            *o = -dot(a.col(p), scratch);
        }
    }
}

/// `C(X) = −Σ_l exp(−‖y_l* − (MX)_l*‖² / 2σ²)`, always in `[−L, 0)`.
pub fn objective_c(handle: &ProblemHandle, x: &Matrix, sigma: f64) -> Result<f64> {
    Ok(ResidualCache::compute(handle, x, sigma)?.objective())
}

/// `∂C/∂x_rt = −(1/σ²) Σ_l m_lr ε_lt w_l`
pub fn gradient_full(handle: &ProblemHandle, x: &Matrix, sigma: f64) -> Result<Matrix> {
    check_shape(handle, x, handle.endmember_count())?;
    let mut eval = CorrentropyEval::new(handle, sigma)?;
    let mut grad = Matrix::zeros(x.rows(), x.cols());
    eval.full(x.as_slice(), Some(grad.as_mut_slice()));
    let inv = 1.0 / (sigma * sigma);
    grad.as_mut_slice().iter_mut().for_each(|g| *g *= inv);
    Ok(grad)
}

/// The objective in the reduced parameterization, `f₁(x̄) = C(reconstruct(x̄))`.
pub fn objective_reduced_f1(handle: &ProblemHandle, xr: &ReducedAbundance, sigma: f64) -> Result<f64> {
    let r = handle.endmember_count();
    check_shape(handle, xr.matrix(), r - 1)?;
    let mut eval = CorrentropyEval::with_reduction(handle, sigma)?;
    eval.reduced(xr.matrix().as_slice(), None);
    Ok(-eval.weights().iter().sum::<f64>())
}

/// `∂f₁/∂x̄_rt = (1/σ²) Σ_l (m_lR − m_lr) w_l ε_l(x̄_t)`
pub fn gradient_reduced_f1(
    handle: &ProblemHandle,
    xr: &ReducedAbundance,
    sigma: f64,
) -> Result<Matrix> {
    let r = handle.endmember_count();
    check_shape(handle, xr.matrix(), r - 1)?;
    let mut eval = CorrentropyEval::with_reduction(handle, sigma)?;
    let mut grad = Matrix::zeros(r - 1, handle.pixels());
    eval.reduced(xr.matrix().as_slice(), Some(grad.as_mut_slice()));
    let inv = 1.0 / (sigma * sigma);
    grad.as_mut_slice().iter_mut().for_each(|g| *g *= inv);
    Ok(grad)
}

/// `w_l = exp(−(1/2σ²) Σ_t ε_lt²)`: which bands the criterion trusts.
pub fn band_weights(handle: &ProblemHandle, x: &Matrix, sigma: f64) -> Result<Vec<f64>> {
    Ok(ResidualCache::compute(handle, x, sigma)?.band_weights)
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

    #[test]
    fn scalar_zero_residual() {
        let h = handle(Matrix::filled(1, 1, 1.0), Matrix::filled(1, 1, 1.0));
        let x = Matrix::filled(1, 1, 1.0);
        assert_eq!(objective_c(&h, &x, 1.0).unwrap(), -1.0);
        assert_eq!(gradient_full(&h, &x, 1.0).unwrap().as_slice(), &[0.0]);
    }

    #[test]
    fn half_weight_band() {
        // band 1 exact, band 2 with squared residual 2 ln 2 -> weight 1/2
        let e = libm::sqrt(2.0 * core::f64::consts::LN_2);
        let y = Matrix::from_row_major(2, 1, &[1.0, 1.0 + e]).unwrap();
        let m = Matrix::from_row_major(2, 1, &[1.0, 1.0]).unwrap();
        let h = handle(y, m);
        let x = Matrix::filled(1, 1, 1.0);
        let c = objective_c(&h, &x, 1.0).unwrap();
        assert!((c + 1.5).abs() < 1e-15, "{c}");
    }

    #[test]
    fn weight_of_one_tenth() {
        let sigma = 0.7;
        let s = 2.0 * sigma * sigma * core::f64::consts::LN_10;
        // spread s over two pixels
        let e = libm::sqrt(s / 2.0);
        let y = Matrix::from_row_major(2, 2, &[0.5, 0.5, 0.5 + e, 0.5 - e]).unwrap();
        let m = Matrix::from_row_major(2, 1, &[1.0, 1.0]).unwrap();
        let h = handle(y, m);
        let x = Matrix::filled(1, 2, 0.5);
        let w = band_weights(&h, &x, sigma).unwrap();
        assert_eq!(w[0], 1.0);
        assert!((w[1] - 0.1).abs() < 1e-14);
    }

    #[test]
    fn reduced_zero_is_last_endmember() {
        let m = Matrix::from_row_major(3, 2, &[1.0, 0.2, 0.5, 0.4, 0.1, 0.9]).unwrap();
        let y = Matrix::from_fn(3, 2, |r, c| 0.3 * r as f64 + 0.1 * c as f64);
        let h = handle(y, m);
        let xr = ReducedAbundance::new(Matrix::zeros(1, 2)).unwrap();
        let full = xr.to_full();
        assert_eq!(full.row(1).collect::<Vec<_>>(), vec![1.0, 1.0]);
        let f1 = objective_reduced_f1(&h, &xr, 0.8).unwrap();
        let c = objective_c(&h, &full, 0.8).unwrap();
        assert!((f1 - c).abs() < 1e-12);
    }

    #[test]
    fn reduced_zero_residual_gives_minus_l() {
        let m = Matrix::from_row_major(4, 3, &[
            1.0, 0.0, 0.2, 0.3, 1.0, 0.1, 0.0, 0.4, 1.0, 0.5, 0.5, 0.5,
        ])
        .unwrap();
        let x = Matrix::from_row_major(3, 2, &[0.2, 0.5, 0.3, 0.25, 0.5, 0.25]).unwrap();
        let h = handle(m.matmul(&x), m);
        let xr = ReducedAbundance::from_full(&x);
        let f1 = objective_reduced_f1(&h, &xr, 0.3).unwrap();
        assert!((f1 + 4.0).abs() < 1e-12);
        let g = gradient_reduced_f1(&h, &xr, 0.3).unwrap();
        assert!(g.as_slice().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn shape_errors() {
        let h = handle(Matrix::filled(3, 2, 1.0), Matrix::identity(3));
        assert!(objective_c(&h, &Matrix::zeros(2, 2), 1.0).is_err());
        assert!(objective_c(&h, &Matrix::zeros(3, 2), 0.0).is_err());
        let xr = ReducedAbundance::new(Matrix::zeros(3, 2)).unwrap();
        assert!(gradient_reduced_f1(&h, &xr, 1.0).is_err());
    }

    #[test]
    fn reconstruction_sums_to_one() {
        let xr = ReducedAbundance::new(
            Matrix::from_row_major(2, 3, &[0.1, 0.7, -0.2, 0.3, 0.9, 0.4]).unwrap(),
        )
        .unwrap();
        let full = xr.to_full();
        for col in full.columns() {
            assert!((col.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
        assert_eq!(ReducedAbundance::from_full(&full), xr);
    }
}
