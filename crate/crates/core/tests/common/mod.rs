#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unmix_core::{validate_problem, EndmemberMatrix, Matrix, ObservationMatrix, ProblemHandle};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

pub fn handle(y: Matrix, m: Matrix) -> ProblemHandle {
    validate_problem(ObservationMatrix::new(y).unwrap(), EndmemberMatrix::new(m).unwrap()).unwrap()
}

/// `C(X)` straight from the definition, no caching or compensated sums.
pub fn naive_c(y: &Matrix, m: &Matrix, x: &Matrix, sigma: f64) -> f64 {
    let (l, t) = y.shape();
    let mut total = 0.0;
    for band in 0..l {
        let mut s = 0.0;
        for px in 0..t {
            let mut fit = 0.0;
            for r in 0..m.cols() {
                fit += m[(band, r)] * x[(r, px)];
            }
            let e = y[(band, px)] - fit;
            s += e * e;
        }
        total -= (-s / (2.0 * sigma * sigma)).exp();
    }
    total
}

/// Full abundances from the reduced ones: last row is `1 − Σ` of the others.
pub fn naive_reconstruct(xr: &Matrix) -> Matrix {
    let (k, t) = xr.shape();
    Matrix::from_fn(k + 1, t, |r, c| {
        if r < k {
            xr[(r, c)]
        } else {
            1.0 - (0..k).map(|p| xr[(p, c)]).sum::<f64>()
        }
    })
}

/// Richardson-extrapolated central difference of `f` along every entry of
/// `x`, with truncation error `O(h⁴)`.
pub fn finite_difference(x: &Matrix, h: f64, mut f: impl FnMut(&Matrix) -> f64) -> Matrix {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    let mut probe = x.clone();
    for i in 0..x.as_slice().len() {
        let x0 = x.as_slice()[i];
        let mut central = |step: f64| {
            probe.as_mut_slice()[i] = x0 + step;
            let plus = f(&probe);
            probe.as_mut_slice()[i] = x0 - step;
            let minus = f(&probe);
            probe.as_mut_slice()[i] = x0;
            (plus - minus) / (2.0 * step)
        };
        let coarse = central(h);
        let fine = central(h / 2.0);
        out.as_mut_slice()[i] = (4.0 * fine - coarse) / 3.0;
    }
    out
}

/// `max |a − b| / max(‖b‖_∞, floor)`
pub fn max_rel_err(a: &Matrix, b: &Matrix, floor: f64) -> f64 {
    let scale = b.as_slice().iter().fold(floor, |m, v| m.max(v.abs()));
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
        / scale
}

/// Solves a small dense system by Gaussian elimination with partial
/// pivoting; `None` when singular.
pub fn dense_solve(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut aug: Vec<Vec<f64>> = a.iter().zip(b).map(|(row, bi)| {
        let mut r = row.clone();
        r.push(*bi);
        r
    }).collect();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| aug[i][col].abs().total_cmp(&aug[j][col].abs()))?;
        if aug[pivot][col].abs() < 1e-12 {
            return None;
        }
        aug.swap(col, pivot);
        for row in col + 1..n {
            let f = aug[row][col] / aug[col][col];
            let pivot_row = aug[col].clone();
            for (a, p) in aug[row][col..].iter_mut().zip(&pivot_row[col..]) {
                *a -= f * p;
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| aug[i][k] * x[k]).sum();
        x[i] = (aug[i][n] - s) / aug[i][i];
    }
    Some(x)
}

/// `‖y − Mx‖²` for one pixel.
pub fn pixel_sq_residual(m: &Matrix, y: &[f64], x: &[f64]) -> f64 {
    (0..m.rows())
        .map(|l| {
            let e = y[l] - (0..m.cols()).map(|r| m[(l, r)] * x[r]).sum::<f64>();
            e * e
        })
        .sum()
}

/// Exhaustive active-set oracle for `min ½‖y − Mx‖² + λ1ᵀx` subject to
/// `x ≥ 0` and, when `sum_to_one`, `1ᵀx = 1`. Every support is tried with the
/// equality-constrained normal equations; the best feasible candidate wins.
pub fn brute_force_pixel(m: &Matrix, y: &[f64], lambda: f64, sum_to_one: bool) -> Vec<f64> {
    let r = m.cols();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let objective = |x: &[f64]| 0.5 * pixel_sq_residual(m, y, x) + lambda * x.iter().sum::<f64>();
    for mask in 0u32..(1 << r) {
        let support: Vec<usize> = (0..r).filter(|i| mask & (1 << i) != 0).collect();
        let k = support.len();
        let mut x = vec![0.0; r];
        if k > 0 {
            let n = if sum_to_one { k + 1 } else { k };
            let mut a = vec![vec![0.0; n]; n];
            let mut b = vec![0.0; n];
            for (i, &p) in support.iter().enumerate() {
                for (j, &q) in support.iter().enumerate() {
                    a[i][j] = (0..m.rows()).map(|l| m[(l, p)] * m[(l, q)]).sum();
                }
                b[i] = (0..m.rows()).map(|l| m[(l, p)] * y[l]).sum::<f64>() - lambda;
                if sum_to_one {
                    a[i][k] = 1.0;
                    a[k][i] = 1.0;
                }
            }
            if sum_to_one {
                b[k] = 1.0;
            }
            let Some(sol) = dense_solve(&a, &b) else { continue };
            if sol[..k].iter().any(|v| *v < -1e-12) {
                continue;
            }
            for (i, &p) in support.iter().enumerate() {
                x[p] = sol[i].max(0.0);
            }
        } else if sum_to_one {
            continue;
        }
        let f = objective(&x);
        if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
            best = Some((f, x));
        }
    }
    best.expect("at least one feasible support").1
}
