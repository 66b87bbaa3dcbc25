//! Invertible image transformations for equivariant bootstrapping.
//!
//! A sampled group element composes, in this fixed order: horizontal and
//! vertical flips, quarter-turn rotations, cyclic pixel shifts, and a
//! frequency shelving filter. The shelving filter attenuates Fourier bins
//! whose centered radial frequency lies below the low threshold or above the
//! high threshold to a fixed fraction of their amplitude; since the fraction
//! is strictly positive the filter is exactly invertible, and the inverse
//! transform divides the same bins back out.
//!
//! Threshold distributions are specified at a reference grid size of 300
//! pixels and rescale linearly with the actual grid size.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft;
use crate::field::RealField;
use crate::operators::dft_frequency;

/// Grid size at which the threshold means and standard deviations are
/// quoted.
pub const THRESHOLD_REFERENCE_GRID: f64 = 300.0;

/// Largest centered radial frequency on an `n x n` grid.
pub fn max_radial_frequency(n: usize) -> f64 {
    std::f64::consts::SQRT_2 * n as f64 / 2.0
}

/// One sampled group element with an exact inverse.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransformSpec {
    flip_h: bool,
    flip_v: bool,
    rot_quarter: u8,
    shift: (i32, i32),
    low_threshold: f64,
    high_threshold: f64,
    attenuation: f64,
}

impl TransformSpec {
    /// Validates the group-element invariants: rotations in `{0..3}`, shifts
    /// within two pixels, ordered non-negative thresholds, and a strictly
    /// positive attenuation (zero would not be invertible).
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        flip_h: bool,
        flip_v: bool,
        rot_quarter: u8,
        shift: (i32, i32),
        low_threshold: f64,
        high_threshold: f64,
        attenuation: f64,
    ) -> Result<Self> {
        if rot_quarter > 3 {
            return Err(Error::InvalidValue(format!(
                "rotation count must lie in 0..=3, got {rot_quarter}"
            )));
        }
        if shift.0.abs() > 2 || shift.1.abs() > 2 {
            return Err(Error::InvalidValue(format!(
                "cyclic shifts are limited to two pixels, got {shift:?}"
            )));
        }
        if !(low_threshold >= 0.0) || !(high_threshold >= 0.0) {
            return Err(Error::InvalidValue("thresholds must be non-negative".into()));
        }
        if low_threshold > high_threshold {
            return Err(Error::InvalidValue(format!(
                "low threshold {low_threshold} exceeds high threshold {high_threshold}"
            )));
        }
        if !(attenuation > 0.0 && attenuation <= 1.0) {
            return Err(Error::InvalidValue(format!(
                "attenuation must lie in (0, 1], got {attenuation}"
            )));
        }
        Ok(TransformSpec {
            flip_h,
            flip_v,
            rot_quarter,
            shift,
            low_threshold,
            high_threshold,
            attenuation,
        })
    }

    /// The identity element for an `n x n` grid: no geometric action and an
    /// all-pass shelf.
    pub fn identity(n: usize) -> Self {
        TransformSpec {
            flip_h: false,
            flip_v: false,
            rot_quarter: 0,
            shift: (0, 0),
            low_threshold: 0.0,
            high_threshold: max_radial_frequency(n),
            attenuation: 1.0,
        }
    }

    pub fn flip_h(&self) -> bool {
        self.flip_h
    }

    pub fn flip_v(&self) -> bool {
        self.flip_v
    }

    pub fn rot_quarter(&self) -> u8 {
        self.rot_quarter
    }

    pub fn shift(&self) -> (i32, i32) {
        self.shift
    }

    pub fn low_threshold(&self) -> f64 {
        self.low_threshold
    }

    pub fn high_threshold(&self) -> f64 {
        self.high_threshold
    }

    pub fn attenuation(&self) -> f64 {
        self.attenuation
    }
}

/// Sampling distribution for group elements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformSamplerConfig {
    /// Grid side length the sampler targets.
    pub n: usize,
    /// Low-threshold mean at the reference grid size.
    pub low_mean: f64,
    pub low_std: f64,
    /// High-threshold mean at the reference grid size.
    pub high_mean: f64,
    pub high_std: f64,
    /// Shelf attenuation factor in (0, 1].
    pub attenuation: f64,
    /// Enable flips, rotations and shifts.
    pub geometric: bool,
    /// Enable the shelving filter.
    pub shelving: bool,
}

impl TransformSamplerConfig {
    /// Reference parameters: thresholds centered at 200 and 350 with
    /// standard deviations of 50 at grid size 300, and a 5% shelf.
    pub fn reference(n: usize) -> Self {
        TransformSamplerConfig {
            n,
            low_mean: 200.0,
            low_std: 50.0,
            high_mean: 350.0,
            high_std: 50.0,
            attenuation: 0.05,
            geometric: true,
            shelving: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.n % 2 != 0 {
            return Err(Error::InvalidGrid(format!(
                "sampler grid must be even and at least 2, got {}",
                self.n
            )));
        }
        if self.low_mean < 0.0 || self.high_mean < 0.0 {
            return Err(Error::InvalidConfig("threshold means must be non-negative".into()));
        }
        if self.low_std < 0.0 || self.high_std < 0.0 {
            return Err(Error::InvalidConfig(
                "threshold standard deviations must be non-negative".into(),
            ));
        }
        if !(self.attenuation > 0.0 && self.attenuation <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "attenuation must lie in (0, 1], got {}",
                self.attenuation
            )));
        }
        Ok(())
    }
}

/// Draw one group element.
///
/// Flips and rotations are uniform over their domains, shifts uniform over
/// `[-2, 2]^2`, and thresholds Gaussian around the rescaled reference means,
/// clamped to the representable radial range. If the low draw lands above
/// the high draw the two are swapped. Draw order is fixed (flips, rotation,
/// shifts, thresholds) so samples are reproducible from the RNG stream.
pub fn sample_transform<R: Rng>(cfg: &TransformSamplerConfig, rng: &mut R) -> Result<TransformSpec> {
    cfg.validate()?;
    let max_r = max_radial_frequency(cfg.n);
    let (flip_h, flip_v, rot_quarter, shift) = if cfg.geometric {
        (
            rng.gen_bool(0.5),
            rng.gen_bool(0.5),
            rng.gen_range(0..4u8),
            (rng.gen_range(-2..=2), rng.gen_range(-2..=2)),
        )
    } else {
        (false, false, 0, (0, 0))
    };
    let (low, high, attenuation) = if cfg.shelving {
        let scale = cfg.n as f64 / THRESHOLD_REFERENCE_GRID;
        let low_dist = Normal::new(cfg.low_mean * scale, cfg.low_std * scale)
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let high_dist = Normal::new(cfg.high_mean * scale, cfg.high_std * scale)
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let low = low_dist.sample(rng).clamp(0.0, max_r);
        let high = high_dist.sample(rng).clamp(0.0, max_r);
        if low > high {
            (high, low, cfg.attenuation)
        } else {
            (low, high, cfg.attenuation)
        }
    } else {
        // Disabled shelf is the all-pass element.
        (0.0, max_r, 1.0)
    };
    TransformSpec::new(flip_h, flip_v, rot_quarter, shift, low, high, attenuation)
}

fn check_square(x: &RealField) -> Result<usize> {
    if x.n_rows() != x.n_cols() {
        return Err(Error::DimensionMismatch {
            expected: "square field".into(),
            got: format!("{}x{}", x.n_rows(), x.n_cols()),
        });
    }
    Ok(x.n_rows())
}

fn flip_horizontal(x: &RealField) -> RealField {
    let n = x.n_rows();
    let mut out = RealField::zeros(n, n);
    for r in 0..n {
        for c in 0..n {
            out.set(r, c, x.get(r, n - 1 - c));
        }
    }
    out
}

fn flip_vertical(x: &RealField) -> RealField {
    let n = x.n_rows();
    let mut out = RealField::zeros(n, n);
    for r in 0..n {
        for c in 0..n {
            out.set(r, c, x.get(n - 1 - r, c));
        }
    }
    out
}

/// Counter-clockwise quarter turns.
fn rotate_quarter(x: &RealField, quarters: u8) -> RealField {
    let n = x.n_rows();
    let mut out = x.clone();
    for _ in 0..(quarters % 4) {
        let prev = out.clone();
        for r in 0..n {
            for c in 0..n {
                out.set(r, c, prev.get(c, n - 1 - r));
            }
        }
    }
    out
}

/// Cyclic shift by `dx` columns and `dy` rows.
fn cyclic_shift(x: &RealField, dx: i32, dy: i32) -> RealField {
    let n = x.n_rows() as i32;
    let mut out = RealField::zeros(x.n_rows(), x.n_cols());
    for r in 0..n {
        for c in 0..n {
            let src_r = (r - dy).rem_euclid(n) as usize;
            let src_c = (c - dx).rem_euclid(n) as usize;
            out.set(r as usize, c as usize, x.get(src_r, src_c));
        }
    }
    out
}

/// Multiply shelved Fourier bins by `factor`. A bin is shelved when its
/// centered radial frequency is strictly below `low` or strictly above
/// `high`; the DC bin participates like any other bin.
fn shelving_filter(x: &RealField, low: f64, high: f64, factor: f64) -> RealField {
    let n = x.n_rows();
    let mut buf = fft::complex_from_real(x.values());
    fft::fft2(&mut buf, n, n);
    for r in 0..n {
        let ky = dft_frequency(r, n) as f64;
        for c in 0..n {
            let kx = dft_frequency(c, n) as f64;
            let radius = (kx * kx + ky * ky).sqrt();
            if radius < low || radius > high {
                buf[r * n + c] *= factor;
            }
        }
    }
    fft::ifft2(&mut buf, n, n);
    RealField::new_unchecked(n, n, fft::real_parts(&buf))
}

/// Apply a group element: flips, rotation, cyclic shift, then the shelving
/// filter.
pub fn apply_transform(t: &TransformSpec, x: &RealField) -> Result<RealField> {
    check_square(x)?;
    let mut out = x.clone();
    if t.flip_h {
        out = flip_horizontal(&out);
    }
    if t.flip_v {
        out = flip_vertical(&out);
    }
    if t.rot_quarter != 0 {
        out = rotate_quarter(&out, t.rot_quarter);
    }
    if t.shift != (0, 0) {
        out = cyclic_shift(&out, t.shift.0, t.shift.1);
    }
    if t.attenuation != 1.0 {
        out = shelving_filter(&out, t.low_threshold, t.high_threshold, t.attenuation);
    }
    Ok(out)
}

/// Exact inverse of [`apply_transform`]: un-shelve, reverse the shift, the
/// rotation, then the flips.
pub fn invert_transform(t: &TransformSpec, x: &RealField) -> Result<RealField> {
    check_square(x)?;
    let mut out = x.clone();
    if t.attenuation != 1.0 {
        out = shelving_filter(&out, t.low_threshold, t.high_threshold, 1.0 / t.attenuation);
    }
    if t.shift != (0, 0) {
        out = cyclic_shift(&out, -t.shift.0, -t.shift.1);
    }
    if t.rot_quarter != 0 {
        out = rotate_quarter(&out, 4 - t.rot_quarter);
    }
    if t.flip_v {
        out = flip_vertical(&out);
    }
    if t.flip_h {
        out = flip_horizontal(&out);
    }
    Ok(out)
}
