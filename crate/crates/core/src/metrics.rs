//! Abundance and reconstruction error metrics.

use crate::error::{Result, UnmixError};
use crate::linalg::{norm2, Matrix, NeumaierSum};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricName {
    Rmse,
    SreDb,
    SadRad,
}

impl MetricName {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Rmse => "RMSE",
            Self::SreDb => "SRE_dB",
            Self::SadRad => "SAD_rad",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricResult {
    pub name: MetricName,
    /// `+∞` for an SRE with zero error.
    pub value: f64,
    /// Pixels averaged over.
    pub n_items: usize,
}

fn same_shape(a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(UnmixError::DimensionMismatch {
            what: "estimate",
            expected: a.shape(),
            found: b.shape(),
        });
    }
    Ok(())
}

fn error_energy(a: &Matrix, b: &Matrix) -> f64 {
    let mut acc = NeumaierSum::default();
    for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
        acc.add((x - y) * (x - y));
    }
    acc.value()
}

/// `√((1/RT)·Σ_t ‖x_t − x̂_t‖²)`
pub fn rmse(x_true: &Matrix, x_hat: &Matrix) -> Result<f64> {
    same_shape(x_true, x_hat)?;
    let n = x_true.as_slice().len();
    if n == 0 {
        return Err(UnmixError::UndefinedMetric("empty abundance matrix"));
    }
    Ok(libm::sqrt(error_energy(x_true, x_hat) / n as f64))
}

/// `10·log₁₀(Σ‖x_t‖² / Σ‖x_t − x̂_t‖²)`, `+∞` when the estimate is exact.
pub fn sre_db(x_true: &Matrix, x_hat: &Matrix) -> Result<f64> {
    same_shape(x_true, x_hat)?;
    let signal = x_true.frobenius_norm_sq();
    if signal == 0.0 {
        return Err(UnmixError::UndefinedMetric("reference abundances are all zero"));
    }
    let err = error_energy(x_true, x_hat);
    if err == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * libm::log10(signal / err))
}

/// Mean spectral angle in radians between columns of `y` and `y_hat`,
/// ignoring the (0-based) bands in `exclude_bands`.
pub fn sad(y: &Matrix, y_hat: &Matrix, exclude_bands: &[usize]) -> Result<f64> {
    same_shape(y, y_hat)?;
    let l = y.rows();
    if let Some(&b) = exclude_bands.iter().find(|&&b| b >= l) {
        return Err(UnmixError::InvalidInput(alloc::format!(
            "excluded band {b} out of range for {l} bands"
        )));
    }
    let keep: alloc::vec::Vec<usize> = (0..l).filter(|b| !exclude_bands.contains(b)).collect();
    let (y, y_hat) = if exclude_bands.is_empty() {
        (y.clone(), y_hat.clone())
    } else {
        (y.select_rows(&keep), y_hat.select_rows(&keep))
    };
    let t = y.cols();
    if t == 0 {
        return Err(UnmixError::UndefinedMetric("no pixels"));
    }
    let mut total = NeumaierSum::default();
    for c in 0..t {
        let (a, b) = (y.col(c), y_hat.col(c));
        let (na, nb) = (norm2(a), norm2(b));
        if na == 0.0 || nb == 0.0 {
            return Err(UnmixError::ZeroNormSpectrum { pixel: c });
        }
        total.add(angle_between(a, na, b, nb));
    }
    Ok(total.value() / t as f64)
}

/// `2·atan2(‖â − b̂‖, ‖â + b̂‖)` for unit vectors `â`, `b̂`. Equal to
/// `acos(âᵀb̂)` but exact for parallel vectors, where `acos` loses half the
/// digits.
fn angle_between(a: &[f64], na: f64, b: &[f64], nb: f64) -> f64 {
    let (mut diff, mut sum) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (p, q) = (x / na, y / nb);
        diff += (p - q) * (p - q);
        sum += (p + q) * (p + q);
    }
    2.0 * libm::atan2(libm::sqrt(diff), libm::sqrt(sum))
}

pub fn evaluate(name: MetricName, reference: &Matrix, estimate: &Matrix, exclude_bands: &[usize]) -> Result<MetricResult> {
    let value = match name {
        MetricName::Rmse => rmse(reference, estimate)?,
        MetricName::SreDb => sre_db(reference, estimate)?,
        MetricName::SadRad => sad(reference, estimate, exclude_bands)?,
    };
    Ok(MetricResult {
        name,
        value,
        n_items: reference.cols(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(rows: usize, cols: usize, v: &[f64]) -> Matrix {
        Matrix::from_row_major(rows, cols, v).unwrap()
    }

    #[test]
    fn rmse_examples() {
        let x = m(2, 2, &[0.3, 0.1, 0.7, 0.9]);
        assert_eq!(rmse(&x, &x).unwrap(), 0.0);
        let shifted = x.map(|v| v + 0.25);
        assert!((rmse(&x, &shifted).unwrap() - 0.25).abs() < 1e-15);
        let a = m(2, 1, &[0.3, 0.7]);
        let b = m(2, 1, &[0.5, 0.5]);
        assert!((rmse(&a, &b).unwrap() - 0.2).abs() < 1e-15);
        assert!(rmse(&a, &x).is_err());
    }

    #[test]
    fn sre_examples() {
        let x = m(2, 2, &[0.3, 0.1, 0.7, 0.9]);
        assert_eq!(sre_db(&x, &x).unwrap(), f64::INFINITY);
        // error equal to the signal itself
        let zero = Matrix::zeros(2, 2);
        assert!(sre_db(&x, &zero).unwrap().abs() < 1e-12);
        // error energy = signal / 100
        let near = x.map(|v| v * 1.1);
        assert!((sre_db(&x, &near).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(
            sre_db(&zero, &x),
            Err(UnmixError::UndefinedMetric("reference abundances are all zero"))
        );
    }

    #[test]
    fn sad_examples() {
        let y = m(3, 2, &[1.0, 0.2, 2.0, 0.5, 0.5, 0.1]);
        assert_eq!(sad(&y, &y, &[]).unwrap(), 0.0);
        assert!(sad(&y, &y.scaled(2.0), &[]).unwrap() < 1e-7);
        let a = m(2, 1, &[1.0, 0.0]);
        let b = m(2, 1, &[0.0, 3.0]);
        assert!((sad(&a, &b, &[]).unwrap() - core::f64::consts::FRAC_PI_2).abs() < 1e-15);
        // the only differing band is excluded
        let c = m(3, 1, &[1.0, 2.0, 3.0]);
        let d = m(3, 1, &[1.0, 2.0, -7.0]);
        assert_eq!(sad(&c, &d, &[2]).unwrap(), 0.0);
        assert!(sad(&c, &d, &[3]).is_err());
        assert_eq!(
            sad(&c, &Matrix::zeros(3, 1), &[]),
            Err(UnmixError::ZeroNormSpectrum { pixel: 0 })
        );
    }

    proptest! {
        #[test]
        fn rmse_is_a_scaled_norm(
            a in proptest::collection::vec(-1.0..1.0f64, 6),
            b in proptest::collection::vec(-1.0..1.0f64, 6),
            c in proptest::collection::vec(-1.0..1.0f64, 6),
        ) {
            let (a, b, c) = (m(2, 3, &a), m(2, 3, &b), m(2, 3, &c));
            let ab = rmse(&a, &b).unwrap();
            prop_assert_eq!(ab, rmse(&b, &a).unwrap());
            prop_assert!(ab <= rmse(&a, &c).unwrap() + rmse(&c, &b).unwrap() + 1e-12);
            prop_assert!(ab >= 0.0);
        }

        #[test]
        fn sre_drops_20db_per_decade_of_error(
            x in proptest::collection::vec(0.1..1.0f64, 6),
            e in proptest::collection::vec(-0.01..0.01f64, 6),
        ) {
            prop_assume!(e.iter().any(|v| v.abs() > 1e-4));
            let x = m(3, 2, &x);
            let e = m(3, 2, &e);
            let near = Matrix::from_fn(3, 2, |r, c| x[(r, c)] + e[(r, c)]);
            let far = Matrix::from_fn(3, 2, |r, c| x[(r, c)] + 10.0 * e[(r, c)]);
            let d = sre_db(&x, &near).unwrap() - sre_db(&x, &far).unwrap();
            prop_assert!((d - 20.0).abs() < 1e-6);
        }

        #[test]
        fn sad_invariant_to_positive_rescaling(
            y in proptest::collection::vec(0.1..1.0f64, 8),
            z in proptest::collection::vec(0.1..1.0f64, 8),
            s in proptest::collection::vec(0.1..10.0f64, 2),
        ) {
            let y = m(4, 2, &y);
            let z = m(4, 2, &z);
            let scaled = Matrix::from_fn(4, 2, |r, c| z[(r, c)] * s[c]);
            let base = sad(&y, &z, &[]).unwrap();
            prop_assert!((base - sad(&y, &scaled, &[]).unwrap()).abs() < 1e-7);
            prop_assert!((0.0..=core::f64::consts::PI).contains(&base));
        }
    }
}
