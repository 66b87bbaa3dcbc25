//! Unitary 2-D FFT on row-major buffers.
//!
//! Both directions carry a `1/sqrt(n_rows * n_cols)` factor so the transform
//! is an isometry and `ifft2(fft2(x)) = x` to machine precision. Plans are
//! cached per thread.

use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, direction: FftDirection) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft(len, direction))
}

fn fft2_in_place(values: &mut [Complex64], n_rows: usize, n_cols: usize, direction: FftDirection) {
    debug_assert_eq!(values.len(), n_rows * n_cols);
    let row_fft = plan(n_cols, direction);
    for row in values.chunks_exact_mut(n_cols) {
        row_fft.process(row);
    }
    let col_fft = plan(n_rows, direction);
    let mut column = vec![Complex64::new(0.0, 0.0); n_rows];
    for c in 0..n_cols {
        for r in 0..n_rows {
            column[r] = values[r * n_cols + c];
        }
        col_fft.process(&mut column);
        for r in 0..n_rows {
            values[r * n_cols + c] = column[r];
        }
    }
    let scale = 1.0 / ((n_rows * n_cols) as f64).sqrt();
    for v in values.iter_mut() {
        *v *= scale;
    }
}

/// Forward unitary 2-D FFT, in place.
pub fn fft2(values: &mut [Complex64], n_rows: usize, n_cols: usize) {
    fft2_in_place(values, n_rows, n_cols, FftDirection::Forward);
}

/// Inverse unitary 2-D FFT, in place.
pub fn ifft2(values: &mut [Complex64], n_rows: usize, n_cols: usize) {
    fft2_in_place(values, n_rows, n_cols, FftDirection::Inverse);
}

/// Lift a real buffer to a complex one.
pub fn complex_from_real(values: &[f64]) -> Vec<Complex64> {
    values.iter().map(|&v| Complex64::new(v, 0.0)).collect()
}

/// Real parts of a complex buffer.
pub fn real_parts(values: &[Complex64]) -> Vec<f64> {
    values.iter().map(|v| v.re).collect()
}
