//! Raster field types: the carriers of images and measurements.
//!
//! A [`RealField`] holds a row-major 2-D raster of real scalars (the
//! convergence image). A [`ComplexField`] holds complex scalars (the shear
//! measurement). A complex field is also viewed as a real vector with twice
//! as many components; that view interleaves `(re, im)` pairs in row-major
//! pixel order, matching the on-disk payload layout in [`crate::simdata`].

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Row-major 2-D raster of real values. All entries are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct RealField {
    n_rows: usize,
    n_cols: usize,
    values: Vec<f64>,
}

impl RealField {
    pub fn new(n_rows: usize, n_cols: usize, values: Vec<f64>) -> Result<Self> {
        check_shape(n_rows, n_cols, values.len())?;
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidValue("non-finite entry in real field".into()));
        }
        Ok(RealField { n_rows, n_cols, values })
    }

    /// Construction without the finiteness scan, for internal arithmetic on
    /// already-validated data.
    pub(crate) fn new_unchecked(n_rows: usize, n_cols: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), n_rows * n_cols);
        RealField { n_rows, n_cols, values }
    }

    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        RealField { n_rows, n_cols, values: vec![0.0; n_rows * n_cols] }
    }

    pub fn constant(n_rows: usize, n_cols: usize, value: f64) -> Self {
        RealField { n_rows, n_cols, values: vec![value; n_rows * n_cols] }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.n_cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.values[row * self.n_cols + col] = value;
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// The field with its mean subtracted.
    pub fn zero_mean(&self) -> RealField {
        let m = self.mean();
        let values = self.values.iter().map(|v| v - m).collect();
        RealField::new_unchecked(self.n_rows, self.n_cols, values)
    }

    pub fn norm_l2(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn sub(&self, other: &RealField) -> Result<RealField> {
        self.check_same_shape(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        Ok(RealField::new_unchecked(self.n_rows, self.n_cols, values))
    }

    pub fn add(&self, other: &RealField) -> Result<RealField> {
        self.check_same_shape(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + b)
            .collect();
        Ok(RealField::new_unchecked(self.n_rows, self.n_cols, values))
    }

    pub fn add_scalar(&self, c: f64) -> RealField {
        let values = self.values.iter().map(|v| v + c).collect();
        RealField::new_unchecked(self.n_rows, self.n_cols, values)
    }

    pub fn scale(&self, c: f64) -> RealField {
        let values = self.values.iter().map(|v| v * c).collect();
        RealField::new_unchecked(self.n_rows, self.n_cols, values)
    }

    pub fn max_abs_diff(&self, other: &RealField) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    fn check_same_shape(&self, other: &RealField) -> Result<()> {
        if self.n_rows != other.n_rows || self.n_cols != other.n_cols {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{}", self.n_rows, self.n_cols),
                got: format!("{}x{}", other.n_rows, other.n_cols),
            });
        }
        Ok(())
    }
}

/// Row-major 2-D raster of complex values. All entries are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    n_rows: usize,
    n_cols: usize,
    values: Vec<Complex64>,
}

impl ComplexField {
    pub fn new(n_rows: usize, n_cols: usize, values: Vec<Complex64>) -> Result<Self> {
        check_shape(n_rows, n_cols, values.len())?;
        if !values.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
            return Err(Error::InvalidValue("non-finite entry in complex field".into()));
        }
        Ok(ComplexField { n_rows, n_cols, values })
    }

    pub(crate) fn new_unchecked(n_rows: usize, n_cols: usize, values: Vec<Complex64>) -> Self {
        debug_assert_eq!(values.len(), n_rows * n_cols);
        ComplexField { n_rows, n_cols, values }
    }

    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        ComplexField { n_rows, n_cols, values: vec![Complex64::new(0.0, 0.0); n_rows * n_cols] }
    }

    pub fn from_real(field: &RealField) -> ComplexField {
        let values = field.values().iter().map(|&v| Complex64::new(v, 0.0)).collect();
        ComplexField::new_unchecked(field.n_rows(), field.n_cols(), values)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    /// Real part as a real field.
    pub fn re(&self) -> RealField {
        let values = self.values.iter().map(|v| v.re).collect();
        RealField::new_unchecked(self.n_rows, self.n_cols, values)
    }

    pub fn sub(&self, other: &ComplexField) -> Result<ComplexField> {
        if self.n_rows != other.n_rows || self.n_cols != other.n_cols {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{}", self.n_rows, self.n_cols),
                got: format!("{}x{}", other.n_rows, other.n_cols),
            });
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        Ok(ComplexField::new_unchecked(self.n_rows, self.n_cols, values))
    }
}

fn check_shape(n_rows: usize, n_cols: usize, len: usize) -> Result<()> {
    if n_rows == 0 || n_cols == 0 {
        return Err(Error::InvalidValue("field dimensions must be positive".into()));
    }
    let expected = n_rows
        .checked_mul(n_cols)
        .ok_or_else(|| Error::InvalidValue("field dimensions overflow".into()))?;
    if len != expected {
        return Err(Error::LengthMismatch { left: len, right: expected });
    }
    Ok(())
}

/// A field that is either real or complex. Used both as the generic
/// measurement-space carrier and as the payload of field files.
#[derive(Debug, Clone, PartialEq)]
pub enum Field {
    Real(RealField),
    Complex(ComplexField),
}

/// A point in measurement space. Complex measurements are treated as real
/// vectors with two components per pixel.
pub type Measurement = Field;

impl Field {
    pub fn shape(&self) -> (usize, usize) {
        match self {
            Field::Real(f) => (f.n_rows(), f.n_cols()),
            Field::Complex(f) => (f.n_rows(), f.n_cols()),
        }
    }

    /// Number of real components: one per entry for real fields, two per
    /// entry for complex fields.
    pub fn real_component_len(&self) -> usize {
        match self {
            Field::Real(f) => f.len(),
            Field::Complex(f) => 2 * f.len(),
        }
    }

    /// Flat real-component view; complex entries contribute interleaved
    /// `(re, im)` pairs.
    pub fn real_components(&self) -> Vec<f64> {
        match self {
            Field::Real(f) => f.values().to_vec(),
            Field::Complex(f) => {
                let mut out = Vec::with_capacity(2 * f.len());
                for v in f.values() {
                    out.push(v.re);
                    out.push(v.im);
                }
                out
            }
        }
    }

    /// Rebuild a field of the same kind and shape from a flat component
    /// vector. Inverse of [`Field::real_components`].
    pub fn from_real_components_like(&self, components: &[f64]) -> Result<Field> {
        if components.len() != self.real_component_len() {
            return Err(Error::LengthMismatch {
                left: components.len(),
                right: self.real_component_len(),
            });
        }
        match self {
            Field::Real(f) => Ok(Field::Real(RealField::new_unchecked(
                f.n_rows(),
                f.n_cols(),
                components.to_vec(),
            ))),
            Field::Complex(f) => {
                let values = components
                    .chunks_exact(2)
                    .map(|p| Complex64::new(p[0], p[1]))
                    .collect();
                Ok(Field::Complex(ComplexField::new_unchecked(f.n_rows(), f.n_cols(), values)))
            }
        }
    }

    /// Squared Euclidean norm over the real components.
    pub fn norm_sq_components(&self) -> f64 {
        match self {
            Field::Real(f) => f.values().iter().map(|v| v * v).sum(),
            Field::Complex(f) => f.values().iter().map(|v| v.norm_sqr()).sum(),
        }
    }

    pub fn sub(&self, other: &Field) -> Result<Field> {
        match (self, other) {
            (Field::Real(a), Field::Real(b)) => Ok(Field::Real(a.sub(b)?)),
            (Field::Complex(a), Field::Complex(b)) => Ok(Field::Complex(a.sub(b)?)),
            _ => Err(Error::DimensionMismatch {
                expected: self.kind_name().into(),
                got: other.kind_name().into(),
            }),
        }
    }

    /// `self + a * z`, elementwise over real components.
    pub fn axpy(&self, a: f64, z: &Field) -> Result<Field> {
        match (self, z) {
            (Field::Real(x), Field::Real(y)) => {
                let mut out = x.clone();
                if x.len() != y.len() {
                    return Err(Error::LengthMismatch { left: x.len(), right: y.len() });
                }
                for (o, v) in out.values_mut().iter_mut().zip(y.values()) {
                    *o += a * v;
                }
                Ok(Field::Real(out))
            }
            (Field::Complex(x), Field::Complex(y)) => {
                let mut out = x.clone();
                if x.len() != y.len() {
                    return Err(Error::LengthMismatch { left: x.len(), right: y.len() });
                }
                for (o, v) in out.values_mut().iter_mut().zip(y.values()) {
                    *o += a * v;
                }
                Ok(Field::Complex(out))
            }
            _ => Err(Error::DimensionMismatch {
                expected: self.kind_name().into(),
                got: z.kind_name().into(),
            }),
        }
    }

    pub fn as_real(&self) -> Result<&RealField> {
        match self {
            Field::Real(f) => Ok(f),
            Field::Complex(_) => Err(Error::DimensionMismatch {
                expected: "real field".into(),
                got: "complex field".into(),
            }),
        }
    }

    pub fn as_complex(&self) -> Result<&ComplexField> {
        match self {
            Field::Complex(f) => Ok(f),
            Field::Real(_) => Err(Error::DimensionMismatch {
                expected: "complex field".into(),
                got: "real field".into(),
            }),
        }
    }

    pub fn into_complex(self) -> Result<ComplexField> {
        match self {
            Field::Complex(f) => Ok(f),
            Field::Real(_) => Err(Error::DimensionMismatch {
                expected: "complex field".into(),
                got: "real field".into(),
            }),
        }
    }

    fn kind_name(&self) -> &'static str {
        match self {
            Field::Real(_) => "real field",
            Field::Complex(_) => "complex field",
        }
    }
}
