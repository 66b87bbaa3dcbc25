//! Forward operators, noise models and frequency-grid plumbing.
//!
//! The mass-mapping operator maps a real convergence image `x` to a complex
//! shear measurement through a diagonal Fourier multiplier:
//!
//! ```text
//! A x = ifft2( D .* fft2(x) ),   D(kx, ky) = (kx^2 - ky^2 + 2i kx ky) / (kx^2 + ky^2)
//! ```
//!
//! with `D(0, 0) = 0` by convention; the zero-frequency mode is unobservable.
//! The multiplier has unit modulus off the DC bin, so with the unitary FFT
//! normalization used throughout, `A` is an isometry on zero-mean images and
//! both `A^T A` and `A^dagger A` equal the zero-mean projector
//! `x - mean(x)`. The pseudoinverse coincides with the adjoint.
//!
//! Operators are immutable after construction and safe to share across
//! worker threads.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::fft;
use crate::field::{ComplexField, Field, Measurement, RealField};

/// Integer DFT frequencies for an `n x n` grid, in unshifted DFT order.
///
/// Entries lie in `[-n/2, n/2)` and the DC frequency sits at index `(0, 0)`.
/// `kx` varies along columns, `ky` along rows.
#[derive(Debug, Clone)]
pub struct FrequencyGrid {
    n: usize,
    kx: Vec<i64>,
    ky: Vec<i64>,
}

impl FrequencyGrid {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kx(&self) -> &[i64] {
        &self.kx
    }

    pub fn ky(&self) -> &[i64] {
        &self.ky
    }
}

/// Unshifted integer frequency for index `i` on a length-`n` axis.
pub(crate) fn dft_frequency(i: usize, n: usize) -> i64 {
    if i < n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

/// Build the frequency rasters for an even grid size `n >= 2`.
pub fn make_frequency_grid(n: usize) -> Result<FrequencyGrid> {
    if n < 2 || n % 2 != 0 {
        return Err(Error::InvalidGrid(format!(
            "grid side must be even and at least 2, got {n}"
        )));
    }
    let mut kx = Vec::with_capacity(n * n);
    let mut ky = Vec::with_capacity(n * n);
    for r in 0..n {
        let fr = dft_frequency(r, n);
        for c in 0..n {
            kx.push(dft_frequency(c, n));
            ky.push(fr);
        }
    }
    Ok(FrequencyGrid { n, kx, ky })
}

/// The Fourier-domain lensing multiplier `D` evaluated on a grid.
///
/// `D(0,0) = 0`: the DC mode carries no shear signal.
pub fn lensing_kernel(grid: &FrequencyGrid) -> ComplexField {
    let values = grid
        .kx
        .iter()
        .zip(&grid.ky)
        .map(|(&kx, &ky)| {
            let (kx, ky) = (kx as f64, ky as f64);
            let denom = kx * kx + ky * ky;
            if denom == 0.0 {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new(kx * kx - ky * ky, 2.0 * kx * ky) / denom
            }
        })
        .collect();
    ComplexField::new_unchecked(grid.n, grid.n, values)
}

/// Additive Gaussian noise with covariance `sigma_component^2 * I` over the
/// real measurement components. `sigma_component` is the standard deviation
/// of each real component, so a complex pixel receives independent noise on
/// its real and imaginary parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianNoiseModel {
    sigma_component: f64,
}

impl GaussianNoiseModel {
    pub fn new(sigma_component: f64) -> Result<Self> {
        if !(sigma_component > 0.0) || !sigma_component.is_finite() {
            return Err(Error::NonPositiveSigma(sigma_component));
        }
        Ok(GaussianNoiseModel { sigma_component })
    }

    pub fn sigma_component(&self) -> f64 {
        self.sigma_component
    }

    /// `trace(Sigma)` for a measurement with `m_prime` real components.
    pub fn trace_sigma(&self, m_prime: usize) -> f64 {
        m_prime as f64 * self.sigma_component * self.sigma_component
    }

    /// Diagonal of `Sigma` over `m_prime` real components.
    pub fn sigma_diag(&self, m_prime: usize) -> Vec<f64> {
        vec![self.sigma_component * self.sigma_component; m_prime]
    }

    /// Perturb every real component by independent `N(0, sigma^2)` noise.
    /// Draw order is component order, so results are deterministic given the
    /// RNG stream.
    pub fn perturb<R: Rng>(&self, y: &Measurement, rng: &mut R) -> Measurement {
        let s = self.sigma_component;
        match y {
            Field::Real(f) => {
                let mut out = f.clone();
                for v in out.values_mut() {
                    *v += s * rng.sample::<f64, _>(StandardNormal);
                }
                Field::Real(out)
            }
            Field::Complex(f) => {
                let mut out = f.clone();
                for v in out.values_mut() {
                    v.re += s * rng.sample::<f64, _>(StandardNormal);
                    v.im += s * rng.sample::<f64, _>(StandardNormal);
                }
                Field::Complex(out)
            }
        }
    }
}

/// Perturb a complex measurement with the given noise model.
pub fn add_noise<R: Rng>(
    y: &ComplexField,
    noise: &GaussianNoiseModel,
    rng: &mut R,
) -> ComplexField {
    match noise.perturb(&Field::Complex(y.clone()), rng) {
        Field::Complex(f) => f,
        Field::Real(_) => unreachable!("complex input stays complex"),
    }
}

/// Behavioral contract for a linear forward operator `A` mapping a real
/// image to a measurement.
///
/// Requirements on implementors:
/// * `apply` is linear when `is_linear` reports true.
/// * `adjoint` satisfies `<A x, y> = <x, A^T y>` under the real inner
///   product over measurement components.
/// * `pseudoinverse` satisfies `A A^dagger A = A`.
/// * `pinv_measurement` is the pseudoinverse expressed in measurement
///   coordinates: for complex measurements the complex-linear `A^dagger`
///   with the imaginary part retained, for real measurements the plain
///   `A^dagger`. `pinv_gram_trace` is the squared Frobenius norm of that
///   map; the pair feeds the projector-score risk estimate and must use one
///   consistent convention.
pub trait ForwardOperator: Send + Sync {
    /// Image raster shape `(n_rows, n_cols)`.
    fn image_shape(&self) -> (usize, usize);

    /// Number of real measurement components `m'`.
    fn measurement_len_real(&self) -> usize;

    fn is_linear(&self) -> bool {
        true
    }

    fn apply(&self, x: &RealField) -> Result<Measurement>;

    fn adjoint(&self, y: &Measurement) -> Result<RealField>;

    fn pseudoinverse(&self, y: &Measurement) -> Result<RealField>;

    fn pinv_measurement(&self, y: &Measurement) -> Result<Measurement>;

    fn pinv_gram_trace(&self) -> f64;
}

/// The Fourier-diagonal mass-mapping operator on an even `n x n` grid.
#[derive(Debug, Clone)]
pub struct MassMappingOperator {
    n: usize,
    kernel: Vec<Complex64>,
}

impl MassMappingOperator {
    pub fn new(n: usize) -> Result<Self> {
        let grid = make_frequency_grid(n)?;
        let kernel = lensing_kernel(&grid).values().to_vec();
        Ok(MassMappingOperator { n, kernel })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn frequency_grid(&self) -> FrequencyGrid {
        make_frequency_grid(self.n).expect("grid size validated at construction")
    }

    fn check_image(&self, x: &RealField) -> Result<()> {
        if x.n_rows() != self.n || x.n_cols() != self.n {
            return Err(Error::DimensionMismatch {
                expected: format!("{0}x{0} image", self.n),
                got: format!("{}x{}", x.n_rows(), x.n_cols()),
            });
        }
        Ok(())
    }

    fn check_measurement<'a>(&self, y: &'a Measurement) -> Result<&'a ComplexField> {
        let f = y.as_complex()?;
        if f.n_rows() != self.n || f.n_cols() != self.n {
            return Err(Error::DimensionMismatch {
                expected: format!("{0}x{0} measurement", self.n),
                got: format!("{}x{}", f.n_rows(), f.n_cols()),
            });
        }
        Ok(f)
    }

    /// `ifft2(conj(D) .* fft2(y))` without taking real parts.
    fn conj_kernel_apply(&self, y: &ComplexField) -> Vec<Complex64> {
        let mut buf = y.values().to_vec();
        fft::fft2(&mut buf, self.n, self.n);
        for (v, d) in buf.iter_mut().zip(&self.kernel) {
            *v *= d.conj();
        }
        fft::ifft2(&mut buf, self.n, self.n);
        buf
    }
}

impl ForwardOperator for MassMappingOperator {
    fn image_shape(&self) -> (usize, usize) {
        (self.n, self.n)
    }

    fn measurement_len_real(&self) -> usize {
        2 * self.n * self.n
    }

    fn apply(&self, x: &RealField) -> Result<Measurement> {
        self.check_image(x)?;
        let mut buf = fft::complex_from_real(x.values());
        fft::fft2(&mut buf, self.n, self.n);
        for (v, d) in buf.iter_mut().zip(&self.kernel) {
            *v *= d;
        }
        fft::ifft2(&mut buf, self.n, self.n);
        Ok(Field::Complex(ComplexField::new_unchecked(self.n, self.n, buf)))
    }

    fn adjoint(&self, y: &Measurement) -> Result<RealField> {
        let f = self.check_measurement(y)?;
        let buf = self.conj_kernel_apply(f);
        Ok(RealField::new_unchecked(self.n, self.n, fft::real_parts(&buf)))
    }

    /// Identical to the adjoint: the nonzero singular values of `A` are all
    /// one, so `A^dagger = A^T`.
    fn pseudoinverse(&self, y: &Measurement) -> Result<RealField> {
        self.adjoint(y)
    }

    fn pinv_measurement(&self, y: &Measurement) -> Result<Measurement> {
        let f = self.check_measurement(y)?;
        let buf = self.conj_kernel_apply(f);
        Ok(Field::Complex(ComplexField::new_unchecked(self.n, self.n, buf)))
    }

    /// Closed form `m' - 2`: the complex-linear pseudoinverse is a partial
    /// isometry whose range excludes only the DC mode, and each complex
    /// dimension counts twice over real components.
    fn pinv_gram_trace(&self) -> f64 {
        (self.measurement_len_real() - 2) as f64
    }
}

/// Identity operator on `n x n` real fields, acting as its own measurement
/// space. Test double for validating risk estimators.
#[derive(Debug, Clone)]
pub struct IdentityOperator {
    n: usize,
}

impl IdentityOperator {
    pub fn new(n: usize) -> Self {
        IdentityOperator { n }
    }

    fn check<'a>(&self, y: &'a Measurement) -> Result<&'a RealField> {
        let f = y.as_real()?;
        if f.n_rows() != self.n || f.n_cols() != self.n {
            return Err(Error::DimensionMismatch {
                expected: format!("{0}x{0} field", self.n),
                got: format!("{}x{}", f.n_rows(), f.n_cols()),
            });
        }
        Ok(f)
    }
}

impl ForwardOperator for IdentityOperator {
    fn image_shape(&self) -> (usize, usize) {
        (self.n, self.n)
    }

    fn measurement_len_real(&self) -> usize {
        self.n * self.n
    }

    fn apply(&self, x: &RealField) -> Result<Measurement> {
        if x.n_rows() != self.n || x.n_cols() != self.n {
            return Err(Error::DimensionMismatch {
                expected: format!("{0}x{0} field", self.n),
                got: format!("{}x{}", x.n_rows(), x.n_cols()),
            });
        }
        Ok(Field::Real(x.clone()))
    }

    fn adjoint(&self, y: &Measurement) -> Result<RealField> {
        Ok(self.check(y)?.clone())
    }

    fn pseudoinverse(&self, y: &Measurement) -> Result<RealField> {
        Ok(self.check(y)?.clone())
    }

    fn pinv_measurement(&self, y: &Measurement) -> Result<Measurement> {
        self.check(y)?;
        Ok(y.clone())
    }

    fn pinv_gram_trace(&self) -> f64 {
        (self.n * self.n) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn random_field(n: usize, seed: u64) -> RealField {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        RealField::new(n, n, (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn random_complex(n: usize, seed: u64) -> ComplexField {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        ComplexField::new(
            n,
            n,
            (0..n * n)
                .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect(),
        )
        .unwrap()
    }

    /// Explicit quadratic-time realization of `ifft2(D .* fft2(x))` with the
    /// unitary convention. Independent of the FFT implementation.
    fn dense_forward_oracle(x: &RealField) -> Vec<Complex64> {
        let n = x.n_rows();
        let scale = 1.0 / n as f64;
        let mut spectrum = vec![Complex64::new(0.0, 0.0); n * n];
        for kr in 0..n {
            for kc in 0..n {
                let mut acc = Complex64::new(0.0, 0.0);
                for r in 0..n {
                    for c in 0..n {
                        let phase = -2.0
                            * std::f64::consts::PI
                            * ((kr * r + kc * c) as f64 / n as f64);
                        acc += x.get(r, c) * Complex64::new(phase.cos(), phase.sin());
                    }
                }
                let (kx, ky) = (dft_frequency(kc, n) as f64, dft_frequency(kr, n) as f64);
                let denom = kx * kx + ky * ky;
                let d = if denom == 0.0 {
                    Complex64::new(0.0, 0.0)
                } else {
                    Complex64::new(kx * kx - ky * ky, 2.0 * kx * ky) / denom
                };
                spectrum[kr * n + kc] = acc * scale * d;
            }
        }
        let mut out = vec![Complex64::new(0.0, 0.0); n * n];
        for r in 0..n {
            for c in 0..n {
                let mut acc = Complex64::new(0.0, 0.0);
                for kr in 0..n {
                    for kc in 0..n {
                        let phase =
                            2.0 * std::f64::consts::PI * ((kr * r + kc * c) as f64 / n as f64);
                        acc += spectrum[kr * n + kc] * Complex64::new(phase.cos(), phase.sin());
                    }
                }
                out[r * n + c] = acc * scale;
            }
        }
        out
    }

    #[test]
    fn frequency_grid_ordering() {
        let grid = make_frequency_grid(4).unwrap();
        assert_eq!(&grid.kx()[0..4], &[0, 1, -2, -1]);
        assert_eq!(grid.kx()[0], 0);
        assert_eq!(grid.ky()[0], 0);
        let small = make_frequency_grid(2).unwrap();
        assert_eq!(&small.kx()[0..2], &[0, -1]);
    }

    #[test]
    fn frequency_grid_rejects_odd_or_tiny() {
        assert!(matches!(make_frequency_grid(3), Err(Error::InvalidGrid(_))));
        assert!(matches!(make_frequency_grid(0), Err(Error::InvalidGrid(_))));
        assert!(matches!(make_frequency_grid(1), Err(Error::InvalidGrid(_))));
    }

    #[test]
    fn lensing_kernel_point_values() {
        let grid = make_frequency_grid(4).unwrap();
        let d = lensing_kernel(&grid);
        // (kx, ky) = (1, 0) sits at row 0, col 1.
        assert_abs_diff_eq!(d.values()[1].re, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.values()[1].im, 0.0, epsilon = 1e-15);
        // (kx, ky) = (0, 1) sits at row 1, col 0.
        assert_abs_diff_eq!(d.values()[4].re, -1.0, epsilon = 1e-15);
        // (kx, ky) = (1, 1): (0 + 2i) / 2 = i.
        assert_abs_diff_eq!(d.values()[5].re, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.values()[5].im, 1.0, epsilon = 1e-15);
        // DC convention.
        assert_eq!(d.values()[0], Complex64::new(0.0, 0.0));
    }

    #[test]
    fn apply_is_zero_on_zero_and_constant_fields() {
        let op = MassMappingOperator::new(8).unwrap();
        let zero = op.apply(&RealField::zeros(8, 8)).unwrap();
        assert_abs_diff_eq!(zero.norm_sq_components(), 0.0, epsilon = 1e-24);
        let constant = op.apply(&RealField::constant(8, 8, 3.7)).unwrap();
        assert!(constant.norm_sq_components() < 1e-24);
    }

    #[test]
    fn apply_matches_dense_dft_oracle_on_4x4() {
        let op = MassMappingOperator::new(4).unwrap();
        let x = random_field(4, 21);
        let fast = op.apply(&x).unwrap();
        let slow = dense_forward_oracle(&x);
        for (a, b) in fast.as_complex().unwrap().values().iter().zip(&slow) {
            assert_abs_diff_eq!(a.re, b.re, epsilon = 1e-12);
            assert_abs_diff_eq!(a.im, b.im, epsilon = 1e-12);
        }
    }

    #[test]
    fn adjoint_satisfies_inner_product_identity() {
        let op = MassMappingOperator::new(8).unwrap();
        for seed in 0..100u64 {
            let x = random_field(8, seed);
            let y = Field::Complex(random_complex(8, 1000 + seed));
            let ax = op.apply(&x).unwrap();
            let aty = op.adjoint(&y).unwrap();
            let lhs: f64 = ax
                .real_components()
                .iter()
                .zip(y.real_components().iter())
                .map(|(a, b)| a * b)
                .sum();
            let rhs: f64 = x.values().iter().zip(aty.values()).map(|(a, b)| a * b).sum();
            assert_relative_eq!(lhs, rhs, max_relative = 1e-10, epsilon = 1e-12);
        }
    }

    #[test]
    fn adjoint_of_zero_is_zero() {
        let op = MassMappingOperator::new(8).unwrap();
        let out = op.adjoint(&Field::Complex(ComplexField::zeros(8, 8))).unwrap();
        assert_abs_diff_eq!(out.norm_l2(), 0.0, epsilon = 1e-24);
    }

    #[test]
    fn gram_is_zero_mean_projector() {
        let op = MassMappingOperator::new(4).unwrap();
        for seed in [3u64, 4, 5] {
            let x = random_field(4, seed);
            let ata = op.adjoint(&op.apply(&x).unwrap()).unwrap();
            let expected = x.zero_mean();
            assert!(ata.max_abs_diff(&expected).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn isometry_off_dc() {
        let op = MassMappingOperator::new(16).unwrap();
        for seed in 0..20u64 {
            let x = random_field(16, 50 + seed);
            let ax = op.apply(&x).unwrap();
            let lhs = ax.norm_sq_components().sqrt();
            let rhs = x.zero_mean().norm_l2();
            assert_relative_eq!(lhs, rhs, max_relative = 1e-10, epsilon = 1e-12);
        }
    }

    #[test]
    fn pseudoinverse_recovers_zero_mean_preimage() {
        let op = MassMappingOperator::new(8).unwrap();
        let x = random_field(8, 77).zero_mean();
        let y = op.apply(&x).unwrap();
        let back = op.pseudoinverse(&y).unwrap();
        assert!(back.max_abs_diff(&x).unwrap() <= 1e-12);
    }

    #[test]
    fn pseudoinverse_satisfies_a_adag_a() {
        let op = MassMappingOperator::new(8).unwrap();
        let x = random_field(8, 99);
        let ax = op.apply(&x).unwrap();
        let a_adag_ax = op.apply(&op.pseudoinverse(&ax).unwrap()).unwrap();
        let diff = a_adag_ax.sub(&ax).unwrap();
        assert!(diff.norm_sq_components().sqrt() <= 1e-12 * ax.norm_sq_components().sqrt());
    }

    #[test]
    fn pinv_gram_trace_matches_dense_oracle() {
        let op = MassMappingOperator::new(4).unwrap();
        // Frobenius norm of the complex-coordinate pseudoinverse, columns
        // probed over all measurement components.
        let m_prime = op.measurement_len_real();
        let mut trace = 0.0;
        let template = Field::Complex(ComplexField::zeros(4, 4));
        for j in 0..m_prime {
            let mut e = vec![0.0; m_prime];
            e[j] = 1.0;
            let col = op
                .pinv_measurement(&template.from_real_components_like(&e).unwrap())
                .unwrap();
            trace += col.norm_sq_components();
        }
        assert_relative_eq!(trace, op.pinv_gram_trace(), max_relative = 1e-10);
        assert_abs_diff_eq!(op.pinv_gram_trace(), (m_prime - 2) as f64);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let op = MassMappingOperator::new(8).unwrap();
        assert!(op.apply(&RealField::zeros(4, 4)).is_err());
        assert!(op.adjoint(&Field::Complex(ComplexField::zeros(4, 4))).is_err());
        assert!(op.adjoint(&Field::Real(RealField::zeros(8, 8))).is_err());
    }

    #[test]
    fn noise_model_rejects_bad_sigma() {
        assert!(GaussianNoiseModel::new(0.0).is_err());
        assert!(GaussianNoiseModel::new(-1.0).is_err());
        assert!(GaussianNoiseModel::new(f64::NAN).is_err());
    }

    #[test]
    fn noise_is_deterministic_given_seed() {
        let noise = GaussianNoiseModel::new(0.5).unwrap();
        let y = Field::Complex(random_complex(8, 1));
        let a = noise.perturb(&y, &mut ChaCha12Rng::seed_from_u64(3));
        let b = noise.perturb(&y, &mut ChaCha12Rng::seed_from_u64(3));
        assert_eq!(a, b);
    }

    #[test]
    fn tiny_sigma_approaches_identity() {
        // Perturbations at sigma = 1e-300 vanish against O(1) entries.
        let noise = GaussianNoiseModel::new(1e-300).unwrap();
        let y = Field::Complex(random_complex(8, 2));
        let out = noise.perturb(&y, &mut ChaCha12Rng::seed_from_u64(0));
        let diff = out.sub(&y).unwrap();
        assert!(diff.norm_sq_components() < 1e-30);
    }

    #[test]
    fn noise_sample_std_matches_sigma() {
        let noise = GaussianNoiseModel::new(0.8).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        let y = Field::Real(RealField::zeros(1, 1));
        let mut samples = Vec::with_capacity(100_000);
        for _ in 0..100_000 {
            samples.push(noise.perturb(&y, &mut rng).real_components()[0]);
        }
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        let var =
            samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / samples.len() as f64;
        assert_relative_eq!(var.sqrt(), 0.8, max_relative = 0.01);
    }

    #[test]
    fn trace_sigma_counts_real_components() {
        let noise = GaussianNoiseModel::new(0.5).unwrap();
        assert_abs_diff_eq!(noise.trace_sigma(128), 128.0 * 0.25, epsilon = 1e-12);
    }

    #[test]
    fn identity_operator_contract() {
        let op = IdentityOperator::new(4);
        let x = random_field(4, 8);
        let y = op.apply(&x).unwrap();
        assert_eq!(y.as_real().unwrap(), &x);
        assert_eq!(&op.adjoint(&y).unwrap(), &x);
        assert_eq!(&op.pseudoinverse(&y).unwrap(), &x);
        assert_abs_diff_eq!(op.pinv_gram_trace(), 16.0);
        assert_eq!(op.measurement_len_real(), 16);
    }
}
