//! Dense complex linear algebra: matrix products, the regularised Gram
//! matrix, Crout-ordered Cholesky factorisation, triangular solves, and the
//! MMSE equaliser built from them.
//!
//! The equaliser never forms an explicit inverse: it factors the Gram matrix
//! and runs one forward and one backward substitution per right-hand side.

use super::{Complex32, ComplexMatrix, ComplexVector, NoiseVariance, NumericsError, ZERO_TOLERANCE};

/// `C = A * B`, accumulated entry-by-entry in ascending `k` order.
///
/// The accumulation order is part of the contract: the scheduled kernel
/// produces bit-identical results because it sums in the same order.
pub fn mmm(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix, NumericsError> {
    if a.cols() != b.rows() {
        return Err(NumericsError::DimensionMismatch {
            context: format!("mmm {}x{} * {}x{}", a.rows(), a.cols(), b.rows(), b.cols()),
        });
    }
    let mut c = ComplexMatrix::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        for j in 0..b.cols() {
            let mut acc = Complex32::new(0.0, 0.0);
            for k in 0..a.cols() {
                acc += a.get(i, k) * b.get(k, j);
            }
            c.set(i, j, acc);
        }
    }
    Ok(c)
}

/// Regularised Gram matrix `G = H^H * H + sigma2 * I`.
///
/// The strict lower triangle is mirrored from the computed upper triangle, so
/// the result is hermitian exactly (not just up to rounding).
pub fn gramian(h: &ComplexMatrix, sigma2: NoiseVariance) -> Result<ComplexMatrix, NumericsError> {
    let n = h.cols();
    let mut g = ComplexMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let mut acc = Complex32::new(0.0, 0.0);
            for b in 0..h.rows() {
                acc += h.get(b, i).conj() * h.get(b, j);
            }
            if i == j {
                acc += Complex32::new(sigma2.value(), 0.0);
                // conj(x)*x has an exactly-zero imaginary part in floating
                // point, so the diagonal is real without further forcing.
            }
            g.set(i, j, acc);
            if i != j {
                g.set(j, i, acc.conj());
            }
        }
    }
    Ok(g)
}

/// Cholesky factorisation `G = L * L^H` in Crout order: each column is
/// finished (diagonal first, then the entries below it) before the next
/// column starts.
///
/// `G` must be hermitian; positive definiteness is established as a byproduct
/// (a pivot at or below [`ZERO_TOLERANCE`] aborts). The returned `L` is lower
/// triangular with a real positive diagonal.
pub fn cholesky_crout(g: &ComplexMatrix) -> Result<ComplexMatrix, NumericsError> {
    let n = g.rows();
    if g.cols() != n {
        return Err(NumericsError::DimensionMismatch {
            context: format!("cholesky on {}x{}", n, g.cols()),
        });
    }
    if let Some((row, col)) = hermitian_defect(g) {
        return Err(NumericsError::NotHermitian { row, col });
    }
    let mut l = ComplexMatrix::zeros(n, n);
    for j in 0..n {
        // Diagonal entry: the pivot is the residual of G[j][j] after removing
        // the energy of the already-computed part of row j.
        let mut pivot = g.get(j, j).re;
        for k in 0..j {
            pivot -= l.get(j, k).norm_sqr();
        }
        if (pivot as f64) <= ZERO_TOLERANCE {
            return Err(NumericsError::NotPositiveDefinite { pivot_index: j, pivot: pivot as f64 });
        }
        let diag = pivot.sqrt();
        l.set(j, j, Complex32::new(diag, 0.0));
        // Entries below the diagonal, completing the column.
        for i in (j + 1)..n {
            let mut acc = g.get(i, j);
            for k in 0..j {
                acc -= l.get(i, k) * l.get(j, k).conj();
            }
            l.set(i, j, Complex32::new(acc.re / diag, acc.im / diag));
        }
    }
    Ok(l)
}

/// Returns the first (row, col) where `g` fails the hermitian check, with a
/// tolerance scaled to the magnitude of the entries involved.
fn hermitian_defect(g: &ComplexMatrix) -> Option<(usize, usize)> {
    let n = g.rows();
    for i in 0..n {
        let scale = g.get(i, i).re.abs().max(1.0);
        if g.get(i, i).im.abs() > 1e-5 * scale {
            return Some((i, i));
        }
        for j in (i + 1)..n {
            let d = g.get(i, j) - g.get(j, i).conj();
            let scale = g.get(i, j).norm().max(g.get(j, i).norm()).max(1.0);
            if d.norm() > 1e-5 * scale {
                return Some((i, j));
            }
        }
    }
    None
}

/// Forward substitution: solves `L * y = b` for lower-triangular `L`.
///
/// The diagonal is taken as real (as produced by [`cholesky_crout`]); an
/// entry at or below [`ZERO_TOLERANCE`] in magnitude is rejected.
pub fn solve_lower(l: &ComplexMatrix, b: &ComplexVector) -> Result<ComplexVector, NumericsError> {
    let n = l.rows();
    if l.cols() != n || b.len() != n {
        return Err(NumericsError::DimensionMismatch {
            context: format!("solve_lower {}x{} with rhs {}", l.rows(), l.cols(), b.len()),
        });
    }
    let mut y = ComplexVector::zeros(n);
    for i in 0..n {
        let mut acc = b[i];
        for k in 0..i {
            acc -= l.get(i, k) * y[k];
        }
        let d = l.get(i, i).re;
        if (d.abs() as f64) <= ZERO_TOLERANCE {
            return Err(NumericsError::SingularDiagonal { index: i });
        }
        y[i] = Complex32::new(acc.re / d, acc.im / d);
    }
    Ok(y)
}

/// Backward substitution: solves `L^H * x = y` for the same lower-triangular
/// `L` used by [`solve_lower`] (the conjugate transpose is applied on the
/// fly, no transposed copy is formed).
pub fn solve_upper(l: &ComplexMatrix, y: &ComplexVector) -> Result<ComplexVector, NumericsError> {
    let n = l.rows();
    if l.cols() != n || y.len() != n {
        return Err(NumericsError::DimensionMismatch {
            context: format!("solve_upper {}x{} with rhs {}", l.rows(), l.cols(), y.len()),
        });
    }
    let mut x = ComplexVector::zeros(n);
    for i in (0..n).rev() {
        let mut acc = y[i];
        for k in (i + 1)..n {
            acc -= l.get(k, i).conj() * x[k];
        }
        let d = l.get(i, i).re;
        if (d.abs() as f64) <= ZERO_TOLERANCE {
            return Err(NumericsError::SingularDiagonal { index: i });
        }
        x[i] = Complex32::new(acc.re / d, acc.im / d);
    }
    Ok(x)
}

/// MMSE equalisation of one received vector: solves
/// `(H^H H + sigma2 I) x = H^H y` by Cholesky factorisation and two
/// triangular solves.
pub fn mmse_equalize(
    h: &ComplexMatrix,
    y: &ComplexVector,
    sigma2: NoiseVariance,
) -> Result<ComplexVector, NumericsError> {
    if h.rows() != y.len() {
        return Err(NumericsError::DimensionMismatch {
            context: format!("mmse H {}x{} with y {}", h.rows(), h.cols(), y.len()),
        });
    }
    let g = gramian(h, sigma2)?;
    let rhs = ComplexVector::from_fn(h.cols(), |i| {
        let mut acc = Complex32::new(0.0, 0.0);
        for b in 0..h.rows() {
            acc += h.get(b, i).conj() * y[b];
        }
        acc
    });
    let l = cholesky_crout(&g)?;
    let mid = solve_lower(&l, &rhs)?;
    solve_upper(&l, &mid)
}
