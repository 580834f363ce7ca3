//! Golden kernels and reference oracles for the uplink receive chain.
//!
//! All golden kernels operate on 32-bit complex floats ([`Complex32`]); the
//! oracles (`dft_oracle`, the test-only dense references) accumulate in 64-bit
//! precision so they form an independent check on the fast paths.

mod estimation;
mod fft;
mod linalg;

pub use estimation::{channel_estimate_ls, noise_variance_estimate, NoiseVariance};
pub use fft::{dft_oracle, digit_reverse_base4, fft_radix4, TwiddleTable};
pub use linalg::{cholesky_crout, gramian, mmm, mmse_equalize, solve_lower, solve_upper};

pub use num_complex::Complex32;
use num_complex::Complex64;
use thiserror::Error;

/// Errors produced by the numeric kernels.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("length {len} is not a power of four")]
    LengthNotPowerOfFour { len: usize },
    #[error("dimension mismatch: {context}")]
    DimensionMismatch { context: String },
    #[error("matrix is not positive definite (pivot {pivot_index} = {pivot})")]
    NotPositiveDefinite { pivot_index: usize, pivot: f64 },
    #[error("matrix is not hermitian at ({row},{col})")]
    NotHermitian { row: usize, col: usize },
    #[error("singular diagonal entry at index {index}")]
    SingularDiagonal { index: usize },
    #[error("pilot symbol for layer {layer} at subcarrier {subcarrier} is below threshold")]
    PilotZero { layer: usize, subcarrier: usize },
    #[error("noise variance must be non-negative, got {value}")]
    NegativeVariance { value: f32 },
    #[error("empty vector or matrix")]
    Empty,
    #[error("non-finite entry at index {index}")]
    NonFinite { index: usize },
}

/// Absolute threshold below which a pivot, diagonal entry or pilot symbol is
/// treated as zero.
pub const ZERO_TOLERANCE: f64 = 1e-12;

/// Dense complex vector, the unit of FFT and solver traffic.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexVector {
    data: Vec<Complex32>,
}

impl ComplexVector {
    /// Builds a vector, rejecting empty input and non-finite entries.
    pub fn new(data: Vec<Complex32>) -> Result<Self, NumericsError> {
        if data.is_empty() {
            return Err(NumericsError::Empty);
        }
        if let Some(index) = data.iter().position(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(NumericsError::NonFinite { index });
        }
        Ok(Self { data })
    }

    pub fn from_fn(len: usize, f: impl FnMut(usize) -> Complex32) -> Self {
        Self { data: (0..len).map(f).collect() }
    }

    pub fn zeros(len: usize) -> Self {
        Self { data: vec![Complex32::new(0.0, 0.0); len] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[Complex32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<Complex32> {
        self.data
    }

    /// Euclidean norm, accumulated in f64.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr() as f64).sum::<f64>().sqrt()
    }

    /// Relative L2 distance to `other`, in f64: ||self - other|| / max(||other||, eps).
    pub fn relative_error(&self, other: &Self) -> f64 {
        assert_eq!(self.len(), other.len(), "relative_error on mismatched lengths");
        let diff: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| {
                let d = Complex64::new((a.re - b.re) as f64, (a.im - b.im) as f64);
                d.norm_sqr()
            })
            .sum();
        diff.sqrt() / other.norm().max(f64::MIN_POSITIVE)
    }
}

impl std::ops::Index<usize> for ComplexVector {
    type Output = Complex32;
    fn index(&self, i: usize) -> &Complex32 {
        &self.data[i]
    }
}

impl std::ops::IndexMut<usize> for ComplexVector {
    fn index_mut(&mut self, i: usize) -> &mut Complex32 {
        &mut self.data[i]
    }
}

/// Dense row-major complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex32>,
}

impl ComplexMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<Complex32>) -> Result<Self, NumericsError> {
        if rows == 0 || cols == 0 {
            return Err(NumericsError::Empty);
        }
        if data.len() != rows * cols {
            return Err(NumericsError::DimensionMismatch {
                context: format!("matrix {}x{} needs {} entries, got {}", rows, cols, rows * cols, data.len()),
            });
        }
        if let Some(index) = data.iter().position(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(NumericsError::NonFinite { index });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![Complex32::new(0.0, 0.0); rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex32) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Identity on the main diagonal; rectangular shapes get a truncated identity.
    pub fn identity(rows: usize, cols: usize) -> Self {
        Self::from_fn(rows, cols, |i, j| {
            if i == j { Complex32::new(1.0, 0.0) } else { Complex32::new(0.0, 0.0) }
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> Complex32 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: Complex32) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[Complex32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[Complex32] {
        &self.data
    }

    pub fn conj_transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i).conj())
    }

    pub fn column(&self, j: usize) -> ComplexVector {
        ComplexVector::from_fn(self.rows, |i| self.get(i, j))
    }

    /// Frobenius norm, accumulated in f64.
    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr() as f64).sum::<f64>().sqrt()
    }

    /// Relative Frobenius distance to `other`, in f64.
    pub fn relative_error(&self, other: &Self) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let diff: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| {
                let d = Complex64::new((a.re - b.re) as f64, (a.im - b.im) as f64);
                d.norm_sqr()
            })
            .sum();
        diff.sqrt() / other.frobenius_norm().max(f64::MIN_POSITIVE)
    }

    /// True when `self` equals its conjugate transpose within `tol` (absolute,
    /// per entry) and the diagonal is real within `tol`.
    pub fn is_hermitian(&self, tol: f32) -> bool {
        if self.rows != self.cols {
            return false;
        }
        for i in 0..self.rows {
            if self.get(i, i).im.abs() > tol {
                return false;
            }
            for j in (i + 1)..self.cols {
                let d = self.get(i, j) - self.get(j, i).conj();
                if d.re.abs() > tol || d.im.abs() > tol {
                    return false;
                }
            }
        }
        true
    }

    /// True when every entry strictly above the diagonal is exactly zero.
    pub fn is_lower_triangular(&self) -> bool {
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let z = self.get(i, j);
                if z.re != 0.0 || z.im != 0.0 {
                    return false;
                }
            }
        }
        true
    }
}

pub(crate) fn c64(z: Complex32) -> Complex64 {
    Complex64::new(z.re as f64, z.im as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vector_rejects_empty_and_non_finite() {
        assert_eq!(ComplexVector::new(vec![]), Err(NumericsError::Empty));
        let bad = vec![Complex32::new(0.0, 0.0), Complex32::new(f32::NAN, 0.0)];
        assert_eq!(ComplexVector::new(bad), Err(NumericsError::NonFinite { index: 1 }));
    }

    #[test]
    fn matrix_shape_checks() {
        let err = ComplexMatrix::new(2, 3, vec![Complex32::new(1.0, 0.0); 5]);
        assert!(matches!(err, Err(NumericsError::DimensionMismatch { .. })));
        let m = ComplexMatrix::identity(3, 3);
        assert!(m.is_hermitian(0.0));
        assert!(!ComplexMatrix::from_fn(2, 2, |i, j| Complex32::new((i + 2 * j) as f32, 0.0))
            .is_hermitian(1e-6));
    }

    #[test]
    fn conj_transpose_involution() {
        let m = ComplexMatrix::from_fn(3, 2, |i, j| Complex32::new(i as f32, j as f32 + 1.0));
        assert_eq!(m.conj_transpose().conj_transpose(), m);
    }
}
