//! Ground-truthed synthetic cubes.
//!
//! All randomness comes from [`ChaCha8Rng`] seeded with `seed_from_u64`, so a
//! given [`SyntheticSpec`] always produces the same cube on every platform
//! with IEEE-754 doubles.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::error::{Result, UnmixError};
use crate::linalg::{dot, norm2, Matrix};
use crate::problem::{AbundanceMatrix, Constraint, EndmemberMatrix, ObservationMatrix};

/// The generator behind every synthetic draw.
pub type SynthRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SynthRng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixingModel {
    /// `y = M x + n`
    Linear,
    /// `y = M x + b (M x) ⊙ (M x) + n`
    PolynomialPostNonlinear,
}

impl MixingModel {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Linear => "lmm",
            Self::PolynomialPostNonlinear => "ppnmm",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub model: MixingModel,
    pub r: usize,
    pub l: usize,
    pub t: usize,
    /// Signal-to-noise ratio in dB; `f64::INFINITY` disables noise.
    pub snr_db: f64,
    /// Bands whose rows are replaced with uniform `[0, 1]` values.
    pub n_corrupt: usize,
    /// Nonzeros per abundance column; dense when `None`.
    pub sparsity_k: Option<usize>,
    pub seed: u64,
    /// Interval of the per-pixel nonlinearity coefficients `b_t`.
    pub b_range: (f64, f64),
}

impl SyntheticSpec {
    pub fn lmm(r: usize, l: usize, t: usize) -> Self {
        Self {
            model: MixingModel::Linear,
            r,
            l,
            t,
            snr_db: f64::INFINITY,
            n_corrupt: 0,
            sparsity_k: None,
            seed: 0,
            b_range: (-3.0, 3.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(UnmixError::InvalidInput(msg.into()));
        if self.r == 0 || self.l == 0 || self.t == 0 {
            return bad("R, L and T must be positive");
        }
        if self.n_corrupt > self.l {
            return bad("more corrupted bands than bands");
        }
        if let Some(k) = self.sparsity_k {
            if k == 0 || k > self.r {
                return bad("sparsity K must be in 1..=R");
            }
        }
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return bad("SNR must be a number or +inf");
        }
        let (lo, hi) = self.b_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return bad("b range must be a finite interval");
        }
        Ok(())
    }
}

/// Hidden variables of a synthetic cube.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub x_true: AbundanceMatrix,
    /// Strictly increasing, 0-based.
    pub corrupted_bands: Vec<usize>,
    /// PPNMM coefficients, one per pixel.
    pub b: Option<Vec<f64>>,
    /// Standard deviation of the additive Gaussian noise (0 when disabled).
    pub noise_sigma: f64,
    pub seed: u64,
}

fn dirichlet_one(rng: &mut SynthRng, out: &mut [f64]) {
    let mut total = 0.0;
    for v in out.iter_mut() {
        let e: f64 = Exp1.sample(rng);
        *v = e;
        total += e;
    }
    if total > 0.0 {
        out.iter_mut().for_each(|v| *v /= total);
    } else {
        let n = out.len() as f64;
        out.iter_mut().for_each(|v| *v = 1.0 / n);
    }
}

fn renormalize(col: &mut [f64]) {
    let s: f64 = col.iter().sum();
    col.iter_mut().for_each(|v| *v /= s);
}

/// Columns drawn from the symmetric Dirichlet(1) distribution, or with `k`
/// uniformly chosen nonzeros that are Dirichlet(1) on their support.
pub fn gen_abundances_with(
    rng: &mut SynthRng,
    r: usize,
    t: usize,
    k: Option<usize>,
) -> Result<AbundanceMatrix> {
    if r == 0 {
        return Err(UnmixError::InvalidInput("R must be positive".into()));
    }
    let mut x = Matrix::zeros(r, t);
    match k {
        None => {
            for c in 0..t {
                dirichlet_one(rng, x.col_mut(c));
                renormalize(x.col_mut(c));
            }
        }
        Some(k) => {
            if k == 0 || k > r {
                return Err(UnmixError::InvalidInput(alloc::format!(
                    "sparsity {k} outside 1..={r}"
                )));
            }
            let mut w = vec![0.0; k];
            for c in 0..t {
                let support = index::sample(rng, r, k);
                dirichlet_one(rng, &mut w);
                let col = x.col_mut(c);
                for (i, v) in support.iter().zip(&w) {
                    col[i] = *v;
                }
                renormalize(col);
            }
        }
    }
    AbundanceMatrix::with_constraint(x, Constraint::FullyConstrained)
}

pub fn gen_abundances(r: usize, t: usize, k: Option<usize>, seed: u64) -> Result<AbundanceMatrix> {
    gen_abundances_with(&mut rng_from_seed(seed), r, t, k)
}

/// Spectral angle between two vectors, in degrees.
pub fn spectral_angle_deg(a: &[f64], b: &[f64]) -> f64 {
    let cos = (dot(a, b) / (norm2(a) * norm2(b))).clamp(-1.0, 1.0);
    libm::acos(cos).to_degrees()
}

pub const MAX_ENDMEMBER_REJECTIONS: usize = 10_000;

/// `R` smooth nonnegative spectra over `L` bands, each a sum of Gaussian
/// bumps on a small baseline scaled to a peak of 1, with every pairwise
/// spectral angle at least `min_angle_deg`.
pub fn gen_endmembers(r: usize, l: usize, seed: u64, min_angle_deg: f64) -> Result<EndmemberMatrix> {
    if r == 0 || r > l {
        return Err(UnmixError::InvalidInput(alloc::format!(
            "cannot build {r} endmembers over {l} bands"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut accepted: Vec<Vec<f64>> = Vec::with_capacity(r);
    let mut rejections = 0;
    let lf = l as f64;
    while accepted.len() < r {
        let mut spec = vec![rng.random_range(0.02..0.15); l];
        let bumps = rng.random_range(2..=5);
        for _ in 0..bumps {
            let center = rng.random_range(0.0..lf);
            let width = rng.random_range(lf / 30.0..lf / 6.0).max(0.5);
            let amp = rng.random_range(0.2..1.0);
            for (i, v) in spec.iter_mut().enumerate() {
                let d = (i as f64 - center) / width;
                *v += amp * libm::exp(-0.5 * d * d);
            }
        }
        let peak = spec.iter().fold(0.0_f64, |a, &b| a.max(b));
        spec.iter_mut().for_each(|v| *v /= peak);
        if accepted
            .iter()
            .all(|m| spectral_angle_deg(m, &spec) >= min_angle_deg)
        {
            accepted.push(spec);
        } else {
            rejections += 1;
            if rejections > MAX_ENDMEMBER_REJECTIONS {
                return Err(UnmixError::GenerationFailed(alloc::format!(
                    "found only {} of {r} endmembers {min_angle_deg}° apart",
                    accepted.len()
                )));
            }
        }
    }
    let cols: Vec<&[f64]> = accepted.iter().map(Vec::as_slice).collect();
    EndmemberMatrix::new(Matrix::from_columns(l, &cols)?)
}

/// Noise-free signal for abundances `x`: `Mx`, plus `b_t (Mx)⊙(Mx)` per pixel
/// when `b` is given.
pub fn mix(m: &Matrix, x: &Matrix, b: Option<&[f64]>) -> Matrix {
    let mut s = m.matmul(x);
    if let Some(b) = b {
        for (c, bt) in b.iter().enumerate() {
            s.col_mut(c).iter_mut().for_each(|v| *v += bt * *v * *v);
        }
    }
    s
}

/// Generates a cube from `spec` with the given endmembers.
///
/// Draw order: abundances, PPNMM coefficients, Gaussian noise, corrupted band
/// indices, corrupted values. The noise variance is set from the clean signal,
/// `σ_n² = ‖S‖²_F / (LT·10^{snr/10})`.
pub fn gen_cube(m: &EndmemberMatrix, spec: &SyntheticSpec) -> Result<(ObservationMatrix, GroundTruth)> {
    spec.validate()?;
    if m.band_count() != spec.l || m.endmember_count() != spec.r {
        return Err(UnmixError::DimensionMismatch {
            what: "endmember matrix",
            expected: (spec.l, spec.r),
            found: (m.band_count(), m.endmember_count()),
        });
    }
    let mut rng = rng_from_seed(spec.seed);
    let x_true = gen_abundances_with(&mut rng, spec.r, spec.t, spec.sparsity_k)?;
    let b = match spec.model {
        MixingModel::Linear => None,
        MixingModel::PolynomialPostNonlinear => {
            let (lo, hi) = spec.b_range;
            Some(
                (0..spec.t)
                    .map(|_| if lo < hi { rng.random_range(lo..hi) } else { lo })
                    .collect::<Vec<f64>>(),
            )
        }
    };
    let mut y = mix(m.matrix(), x_true.matrix(), b.as_deref());

    let noise_sigma = if spec.snr_db.is_finite() {
        let power = y.frobenius_norm_sq() / (spec.l * spec.t) as f64;
        libm::sqrt(power / libm::pow(10.0, spec.snr_db / 10.0))
    } else {
        0.0
    };
    if noise_sigma > 0.0 {
        for v in y.as_mut_slice() {
            let n: f64 = StandardNormal.sample(&mut rng);
            *v += noise_sigma * n;
        }
    }

    let mut corrupted_bands = index::sample(&mut rng, spec.l, spec.n_corrupt).into_vec();
    corrupted_bands.sort_unstable();
    for &band in &corrupted_bands {
        for c in 0..spec.t {
            y[(band, c)] = rng.random_range(0.0..=1.0);
        }
    }

    Ok((
        ObservationMatrix::new(y)?,
        GroundTruth {
            x_true,
            corrupted_bands,
            b,
            noise_sigma,
            seed: spec.seed,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dirichlet_mean_is_uniform() {
        let x = gen_abundances(3, 10_000, None, 11).unwrap();
        for r in 0..3 {
            let mean = x.matrix().row(r).sum::<f64>() / 10_000.0;
            assert!((mean - 1.0 / 3.0).abs() < 0.01, "{mean}");
        }
    }

    #[test]
    fn single_support_gives_unit_vectors() {
        let x = gen_abundances(5, 50, Some(1), 3).unwrap();
        for col in x.matrix().columns() {
            assert_eq!(col.iter().filter(|v| **v != 0.0).count(), 1);
            assert_eq!(col.iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn k_sparse_columns() {
        let x = gen_abundances(62, 200, Some(4), 5).unwrap();
        for col in x.matrix().columns() {
            assert_eq!(col.iter().filter(|v| **v > 0.0).count(), 4);
            assert!((col.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
        assert!(gen_abundances(3, 2, Some(4), 5).is_err());
    }

    #[test]
    fn endmembers_are_separated_and_bounded() {
        let m = gen_endmembers(3, 244, 9, 10.0).unwrap();
        assert_eq!(m.matrix().shape(), (244, 3));
        assert!(m.matrix().as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
        for i in 0..3 {
            for j in i + 1..3 {
                assert!(spectral_angle_deg(m.matrix().col(i), m.matrix().col(j)) >= 10.0);
            }
        }
        assert_eq!(m, gen_endmembers(3, 244, 9, 10.0).unwrap());
    }

    #[test]
    fn twenty_endmembers_ten_degrees_apart() {
        let m = gen_endmembers(20, 244, 1, 10.0).unwrap();
        assert_eq!(m.endmember_count(), 20);
    }

    #[test]
    fn impossible_separation_fails() {
        assert!(matches!(
            gen_endmembers(6, 10, 1, 89.0),
            Err(UnmixError::GenerationFailed(_))
        ));
    }

    #[test]
    fn noise_free_lmm_is_exact() {
        let m = gen_endmembers(3, 30, 2, 5.0).unwrap();
        let spec = SyntheticSpec {
            seed: 4,
            ..SyntheticSpec::lmm(3, 30, 20)
        };
        let (y, truth) = gen_cube(&m, &spec).unwrap();
        assert_eq!(y.matrix(), &m.matrix().matmul(truth.x_true.matrix()));
        assert!(truth.corrupted_bands.is_empty());
        assert_eq!(truth.noise_sigma, 0.0);
    }

    #[test]
    fn ppnmm_with_zero_b_is_linear() {
        let m = gen_endmembers(3, 30, 2, 5.0).unwrap();
        let spec = SyntheticSpec {
            model: MixingModel::PolynomialPostNonlinear,
            b_range: (0.0, 0.0),
            ..SyntheticSpec::lmm(3, 30, 20)
        };
        let (y, truth) = gen_cube(&m, &spec).unwrap();
        assert_eq!(y.matrix(), &m.matrix().matmul(truth.x_true.matrix()));
        assert_eq!(truth.b.unwrap(), vec![0.0; 20]);
    }

    #[test]
    fn measured_snr_matches_request() {
        let m = gen_endmembers(3, 244, 2, 10.0).unwrap();
        let spec = SyntheticSpec {
            snr_db: 30.0,
            seed: 8,
            ..SyntheticSpec::lmm(3, 244, 225)
        };
        let (y, truth) = gen_cube(&m, &spec).unwrap();
        let s = m.matrix().matmul(truth.x_true.matrix());
        let noise = y.matrix().sub(&s);
        let snr = 10.0 * libm::log10(s.frobenius_norm_sq() / noise.frobenius_norm_sq());
        assert!((29.8..=30.2).contains(&snr), "{snr}");
    }

    #[test]
    fn corrupted_bands_are_sorted_and_uniform() {
        let m = gen_endmembers(3, 50, 2, 5.0).unwrap();
        let spec = SyntheticSpec {
            n_corrupt: 7,
            seed: 1,
            ..SyntheticSpec::lmm(3, 50, 40)
        };
        let (y, truth) = gen_cube(&m, &spec).unwrap();
        assert_eq!(truth.corrupted_bands.len(), 7);
        assert!(truth.corrupted_bands.windows(2).all(|w| w[0] < w[1]));
        for &b in &truth.corrupted_bands {
            assert!(y.matrix().row(b).all(|v| (0.0..=1.0).contains(&v)));
        }
        let (y2, _) = gen_cube(&m, &spec).unwrap();
        assert_eq!(y, y2);
    }

    #[test]
    fn dimension_checks() {
        let m = gen_endmembers(3, 50, 2, 5.0).unwrap();
        assert!(gen_cube(&m, &SyntheticSpec::lmm(4, 50, 10)).is_err());
        let spec = SyntheticSpec {
            n_corrupt: 51,
            ..SyntheticSpec::lmm(3, 50, 10)
        };
        assert!(gen_cube(&m, &spec).is_err());
    }
}
