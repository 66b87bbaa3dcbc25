//! Reconstruction methods.
//!
//! [`KaiserSquires`] is the classical linear mass-mapping reconstructor:
//! apply the operator pseudoinverse, then smooth with a Gaussian kernel
//! realized as a Fourier multiplier (periodic convolution). The multiplier
//! form keeps the reconstructor exactly linear, which lets the risk
//! estimator compute Jacobian-vector products without finite differences.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fft;
use crate::field::{Measurement, RealField};
use crate::operators::{make_frequency_grid, ForwardOperator, FrequencyGrid};

/// Behavioral contract for a reconstruction method.
///
/// Implementations must be deterministic: the same measurement always yields
/// the same image. When `is_linear` reports true, `reconstruct` must satisfy
/// superposition; the risk estimator relies on it for exact Jacobian-vector
/// products.
pub trait Reconstructor: Send + Sync {
    fn reconstruct(&self, y: &Measurement) -> Result<RealField>;

    fn is_linear(&self) -> bool;
}

/// Smoothing scale for Kaiser-Squires, in pixels. The scale is defined in
/// pixel units and does not rescale with the grid size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KaiserSquiresConfig {
    pub sigma_smooth: f64,
}

impl KaiserSquiresConfig {
    pub fn new(sigma_smooth: f64) -> Result<Self> {
        if !sigma_smooth.is_finite() || sigma_smooth < 0.0 {
            return Err(Error::InvalidValue(format!(
                "smoothing sigma must be finite and non-negative, got {sigma_smooth}"
            )));
        }
        Ok(KaiserSquiresConfig { sigma_smooth })
    }

    /// Default smoothing scale of 1/0.29 pixels.
    pub fn default_smoothing() -> Self {
        KaiserSquiresConfig { sigma_smooth: 1.0 / 0.29 }
    }
}

/// Gaussian smoothing multiplier `exp(-2 pi^2 sigma^2 (kx^2 + ky^2) / n^2)`
/// over the frequency grid. Strictly positive, equal to one at DC and
/// monotone non-increasing in radial frequency.
pub fn smoothing_multiplier(grid: &FrequencyGrid, sigma_smooth: f64) -> Result<RealField> {
    if !sigma_smooth.is_finite() || sigma_smooth < 0.0 {
        return Err(Error::InvalidValue(format!(
            "smoothing sigma must be finite and non-negative, got {sigma_smooth}"
        )));
    }
    let n = grid.n();
    let coeff = -2.0 * std::f64::consts::PI.powi(2) * sigma_smooth * sigma_smooth
        / (n as f64 * n as f64);
    let values = grid
        .kx()
        .iter()
        .zip(grid.ky())
        .map(|(&kx, &ky)| (coeff * (kx * kx + ky * ky) as f64).exp())
        .collect();
    Ok(RealField::new_unchecked(n, n, values))
}

/// Kaiser-Squires reconstructor: `smooth(A^dagger y)`.
pub struct KaiserSquires {
    op: Arc<dyn ForwardOperator>,
    multiplier: Vec<f64>,
    config: KaiserSquiresConfig,
    n: usize,
}

impl KaiserSquires {
    pub fn new(op: Arc<dyn ForwardOperator>, config: KaiserSquiresConfig) -> Result<Self> {
        let (rows, cols) = op.image_shape();
        if rows != cols {
            return Err(Error::InvalidGrid(format!(
                "Kaiser-Squires requires a square grid, got {rows}x{cols}"
            )));
        }
        let grid = make_frequency_grid(rows)?;
        let multiplier = smoothing_multiplier(&grid, config.sigma_smooth)?;
        Ok(KaiserSquires { op, multiplier: multiplier.values().to_vec(), config, n: rows })
    }

    pub fn config(&self) -> KaiserSquiresConfig {
        self.config
    }

    fn smooth(&self, x: &RealField) -> RealField {
        let mut buf = fft::complex_from_real(x.values());
        fft::fft2(&mut buf, self.n, self.n);
        for (v, g) in buf.iter_mut().zip(&self.multiplier) {
            *v *= g;
        }
        fft::ifft2(&mut buf, self.n, self.n);
        RealField::new_unchecked(self.n, self.n, fft::real_parts(&buf))
    }
}

impl Reconstructor for KaiserSquires {
    fn reconstruct(&self, y: &Measurement) -> Result<RealField> {
        let x = self.op.pseudoinverse(y)?;
        Ok(self.smooth(&x))
    }

    fn is_linear(&self) -> bool {
        true
    }
}

/// One-shot Kaiser-Squires reconstruction.
pub fn kaiser_squires(
    y: &Measurement,
    op: Arc<dyn ForwardOperator>,
    config: KaiserSquiresConfig,
) -> Result<RealField> {
    KaiserSquires::new(op, config)?.reconstruct(y)
}

/// Identity reconstructor for real measurement spaces. Test double paired
/// with [`crate::operators::IdentityOperator`].
pub struct IdentityReconstructor;

impl Reconstructor for IdentityReconstructor {
    fn reconstruct(&self, y: &Measurement) -> Result<RealField> {
        Ok(y.as_real()?.clone())
    }

    fn is_linear(&self) -> bool {
        true
    }
}
