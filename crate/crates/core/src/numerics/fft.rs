//! Radix-4 decimation-in-frequency FFT and its dense reference oracle.
//!
//! The fast path works stage by stage on an in-place buffer: a stage that
//! operates on sub-transforms of length `L` combines the four inputs at
//! distance `L/4`, multiplies three of the outputs by twiddle factors, and
//! leaves four independent sub-problems of length `L/4`. After `log4(N)`
//! stages the buffer holds the spectrum in base-4 digit-reversed order; a
//! final permutation restores natural order.

use super::{c64, Complex32, ComplexVector, NumericsError};
use num_complex::Complex64;

/// Precomputed roots of unity `w[k] = exp(-2*pi*i*k/n)` for `k in 0..n`.
///
/// One table serves every stage of an `n`-point transform: a stage working on
/// sub-length `L` uses `w[j * (n/L)]`.
#[derive(Debug, Clone)]
pub struct TwiddleTable {
    n: usize,
    factors: Vec<Complex32>,
}

impl TwiddleTable {
    /// Builds the table for an `n`-point transform; `n` must be a power of
    /// four and at least 4. Factors are evaluated in f64 and rounded once.
    pub fn new(n: usize) -> Result<Self, NumericsError> {
        if !is_power_of_four(n) {
            return Err(NumericsError::LengthNotPowerOfFour { len: n });
        }
        let factors = (0..n)
            .map(|k| {
                let angle = -2.0 * std::f64::consts::PI * (k as f64) / (n as f64);
                let (s, c) = angle.sin_cos();
                Complex32::new(c as f32, s as f32)
            })
            .collect();
        Ok(Self { n, factors })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Factor for exponent `k`, reduced modulo `n`.
    pub fn factor(&self, k: usize) -> Complex32 {
        self.factors[k % self.n]
    }
}

fn is_power_of_four(n: usize) -> bool {
    n >= 4 && n.is_power_of_two() && n.trailing_zeros() % 2 == 0
}

/// `-i * z`, as a cheap rotation (no multiplier involved).
#[inline]
pub(crate) fn rotate_neg_i(z: Complex32) -> Complex32 {
    Complex32::new(z.im, -z.re)
}

/// One radix-4 decimation-in-frequency butterfly.
///
/// Inputs are the four values at distance `L/4` inside a length-`L`
/// sub-transform; `w1..w3` are the twiddles for the three rotated outputs.
/// Output `k` feeds the sub-problem that produces spectral residue `k mod 4`.
#[inline]
pub(crate) fn dif_butterfly(
    a: Complex32,
    b: Complex32,
    c: Complex32,
    d: Complex32,
    w1: Complex32,
    w2: Complex32,
    w3: Complex32,
) -> (Complex32, Complex32, Complex32, Complex32) {
    let sum_ac = a + c;
    let dif_ac = a - c;
    let sum_bd = b + d;
    let dif_bd = rotate_neg_i(b - d);
    let y0 = sum_ac + sum_bd;
    let y1 = (dif_ac + dif_bd) * w1;
    let y2 = (sum_ac - sum_bd) * w2;
    let y3 = (dif_ac - dif_bd) * w3;
    (y0, y1, y2, y3)
}

/// Reverses the base-4 digits of `index` (using `digits` digits).
pub fn digit_reverse_base4(index: usize, digits: u32) -> usize {
    let mut v = index;
    let mut out = 0;
    for _ in 0..digits {
        out = (out << 2) | (v & 0b11);
        v >>= 2;
    }
    out
}

/// In-place radix-4 DIF transform over `work`, leaving the result in base-4
/// digit-reversed order. Shared by the golden kernel and by tests that need
/// the pre-permutation layout.
pub(crate) fn radix4_stages(work: &mut [Complex32], tw: &TwiddleTable) {
    let n = work.len();
    let mut sub_len = n;
    while sub_len >= 4 {
        let quarter = sub_len / 4;
        let stride = n / sub_len;
        for base in (0..n).step_by(sub_len) {
            for j in 0..quarter {
                let (y0, y1, y2, y3) = dif_butterfly(
                    work[base + j],
                    work[base + j + quarter],
                    work[base + j + 2 * quarter],
                    work[base + j + 3 * quarter],
                    tw.factor(j * stride),
                    tw.factor(2 * j * stride),
                    tw.factor(3 * j * stride),
                );
                work[base + j] = y0;
                work[base + j + quarter] = y1;
                work[base + j + 2 * quarter] = y2;
                work[base + j + 3 * quarter] = y3;
            }
        }
        sub_len = quarter;
    }
}

/// Forward FFT of `x` (length a power of four), returned in natural order.
///
/// The transform is unnormalised: `X[k] = sum_j x[j] * exp(-2*pi*i*j*k/N)`.
pub fn fft_radix4(x: &ComplexVector, tw: &TwiddleTable) -> Result<ComplexVector, NumericsError> {
    let n = x.len();
    if !is_power_of_four(n) {
        return Err(NumericsError::LengthNotPowerOfFour { len: n });
    }
    if n != tw.len() {
        return Err(NumericsError::DimensionMismatch {
            context: format!("input length {} vs twiddle table for {}", n, tw.len()),
        });
    }
    let mut work = x.as_slice().to_vec();
    radix4_stages(&mut work, tw);
    let digits = n.trailing_zeros() / 2;
    let out = ComplexVector::from_fn(n, |k| work[digit_reverse_base4(k, digits)]);
    Ok(out)
}

/// Dense O(N^2) DFT evaluated with f64 accumulation — the independent oracle
/// against which the fast transform is checked. Any length is accepted.
pub fn dft_oracle(x: &ComplexVector) -> ComplexVector {
    let n = x.len();
    // Tabulating the f64 roots once keeps the oracle exact in angle (the
    // exponent is reduced mod n before evaluation) and fast enough for 4096.
    let roots: Vec<Complex64> = (0..n)
        .map(|k| {
            let angle = -2.0 * std::f64::consts::PI * (k as f64) / (n as f64);
            let (s, c) = angle.sin_cos();
            Complex64::new(c, s)
        })
        .collect();
    let xs: Vec<Complex64> = x.as_slice().iter().copied().map(c64).collect();
    ComplexVector::from_fn(n, |k| {
        let mut acc = Complex64::new(0.0, 0.0);
        for (j, xj) in xs.iter().enumerate() {
            acc += xj * roots[(j * k) % n];
        }
        Complex32::new(acc.re as f32, acc.im as f32)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vector(n: usize, seed: u64) -> ComplexVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ComplexVector::from_fn(n, |_| {
            Complex32::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    #[test]
    fn rejects_non_power_of_four() {
        for n in [1, 2, 8, 32, 100, 2048] {
            assert_eq!(TwiddleTable::new(n).unwrap_err(), NumericsError::LengthNotPowerOfFour { len: n });
        }
        let tw = TwiddleTable::new(4).unwrap();
        let x = ComplexVector::zeros(16);
        assert!(matches!(fft_radix4(&x, &tw), Err(NumericsError::DimensionMismatch { .. })));
    }

    #[test]
    fn twiddles_lie_on_unit_circle() {
        let tw = TwiddleTable::new(256).unwrap();
        for k in 0..256 {
            assert!((tw.factor(k).norm() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn impulse_transforms_to_all_ones() {
        let tw = TwiddleTable::new(64).unwrap();
        let mut x = ComplexVector::zeros(64);
        x[0] = Complex32::new(1.0, 0.0);
        let y = fft_radix4(&x, &tw).unwrap();
        for k in 0..64 {
            assert!((y[k] - Complex32::new(1.0, 0.0)).norm() < 1e-6, "bin {}", k);
        }
    }

    #[test]
    fn single_tone_concentrates_in_one_bin() {
        // x[j] = exp(+2*pi*i*j/N) puts all energy in bin 1 with value N.
        let n = 256;
        let tw = TwiddleTable::new(n).unwrap();
        let x = ComplexVector::from_fn(n, |j| {
            let angle = 2.0 * std::f64::consts::PI * (j as f64) / (n as f64);
            Complex32::new(angle.cos() as f32, angle.sin() as f32)
        });
        let y = fft_radix4(&x, &tw).unwrap();
        assert!((y[1] - Complex32::new(n as f32, 0.0)).norm() < 1e-3);
        for k in (0..n).filter(|&k| k != 1) {
            assert!(y[k].norm() < 1e-3, "bin {} = {}", k, y[k]);
        }
    }

    #[test]
    fn matches_dense_oracle_for_length_64() {
        let x = random_vector(64, 7);
        let fast = fft_radix4(&x, &TwiddleTable::new(64).unwrap()).unwrap();
        let slow = dft_oracle(&x);
        assert!(fast.relative_error(&slow) < 1e-4);
    }

    #[test]
    fn matches_dense_oracle_across_sizes_and_seeds() {
        for n in [4usize, 16, 64, 256, 1024] {
            let tw = TwiddleTable::new(n).unwrap();
            for seed in 0..5 {
                let x = random_vector(n, seed);
                let fast = fft_radix4(&x, &tw).unwrap();
                let slow = dft_oracle(&x);
                let err = fast.relative_error(&slow);
                assert!(err < 1e-4, "n={} seed={} err={}", n, seed, err);
            }
        }
    }

    #[test]
    fn linear_in_its_input() {
        let n = 64;
        let tw = TwiddleTable::new(n).unwrap();
        let a = random_vector(n, 1);
        let b = random_vector(n, 2);
        let sum = ComplexVector::from_fn(n, |i| a[i] + b[i]);
        let fa = fft_radix4(&a, &tw).unwrap();
        let fb = fft_radix4(&b, &tw).unwrap();
        let fsum = fft_radix4(&sum, &tw).unwrap();
        let recomposed = ComplexVector::from_fn(n, |i| fa[i] + fb[i]);
        assert!(fsum.relative_error(&recomposed) < 1e-5);
    }

    #[test]
    fn digit_reversal_is_an_involution() {
        for digits in 1..6 {
            let n = 1usize << (2 * digits);
            for i in 0..n {
                assert_eq!(digit_reverse_base4(digit_reverse_base4(i, digits), digits), i);
            }
        }
        // Spot values for 16 points (2 digits): 1 -> 4, 7 = 13 base4 -> 31 base4 = 13.
        assert_eq!(digit_reverse_base4(1, 2), 4);
        assert_eq!(digit_reverse_base4(7, 2), 13);
    }

    #[test]
    fn parseval_energy_is_preserved() {
        let n = 256;
        let x = random_vector(n, 11);
        let y = fft_radix4(&x, &TwiddleTable::new(n).unwrap()).unwrap();
        let ex: f64 = x.as_slice().iter().map(|z| z.norm_sqr() as f64).sum();
        let ey: f64 = y.as_slice().iter().map(|z| z.norm_sqr() as f64).sum();
        assert!((ey / (n as f64) - ex).abs() / ex < 1e-5);
    }
}
