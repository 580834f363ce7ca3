//! Least-squares channel estimation on comb pilots and residual-power noise
//! estimation.
//!
//! Pilot symbols are block-type: a whole OFDM symbol carries pilots, with the
//! layers interleaved in frequency — layer `l` owns the subcarriers congruent
//! to `l` modulo the layer count, and is silent elsewhere. Every subcarrier of
//! a pilot symbol therefore belongs to exactly one layer.

use super::{ComplexMatrix, NumericsError, ZERO_TOLERANCE};

/// Noise power in linear units; never negative.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct NoiseVariance {
    sigma2: f32,
}

impl NoiseVariance {
    pub fn new(sigma2: f32) -> Result<Self, NumericsError> {
        if !sigma2.is_finite() || sigma2 < 0.0 {
            return Err(NumericsError::NegativeVariance { value: sigma2 });
        }
        Ok(Self { sigma2 })
    }

    pub fn zero() -> Self {
        Self { sigma2: 0.0 }
    }

    pub fn value(self) -> f32 {
        self.sigma2
    }
}

/// Layer that owns subcarrier `sc` on a pilot symbol, given `n_layers` combs.
#[inline]
pub(crate) fn comb_layer(sc: usize, n_layers: usize) -> usize {
    sc % n_layers
}

/// Element-wise least-squares channel estimate from one pilot symbol.
///
/// `y_pilot` is the received grid (beams x subcarriers) and `x_pilot` the
/// transmitted pilot grid (layers x subcarriers). Column `sc` of the result
/// is the estimated channel column of the layer owning that subcarrier:
/// `H_hat[b][sc] = y[b][sc] / x[comb_layer(sc)][sc]`.
pub fn channel_estimate_ls(
    y_pilot: &ComplexMatrix,
    x_pilot: &ComplexMatrix,
) -> Result<ComplexMatrix, NumericsError> {
    if y_pilot.cols() != x_pilot.cols() {
        return Err(NumericsError::DimensionMismatch {
            context: format!(
                "channel estimate: y has {} subcarriers, x has {}",
                y_pilot.cols(),
                x_pilot.cols()
            ),
        });
    }
    let n_layers = x_pilot.rows();
    let mut h = ComplexMatrix::zeros(y_pilot.rows(), y_pilot.cols());
    for sc in 0..y_pilot.cols() {
        let layer = comb_layer(sc, n_layers);
        let pilot = x_pilot.get(layer, sc);
        if (pilot.norm() as f64) <= ZERO_TOLERANCE {
            return Err(NumericsError::PilotZero { layer, subcarrier: sc });
        }
        for b in 0..y_pilot.rows() {
            h.set(b, sc, y_pilot.get(b, sc) / pilot);
        }
    }
    Ok(h)
}

/// Mean residual power over all pilot resource elements:
/// `sigma2_hat = sum ||y - h_hat * x||^2 / (beams * subcarriers * symbols)`.
///
/// `h_hat` uses the same per-subcarrier column layout as
/// [`channel_estimate_ls`], so the expected value at (b, sc) is
/// `h_hat[b][sc] * x[comb_layer(sc)][sc]`. Only the zero-lag term (plain
/// residual power) enters the estimate. Accumulation runs beams-innermost,
/// then subcarriers, then symbols; the scheduled kernel mirrors this order.
pub fn noise_variance_estimate(
    y_pilots: &[ComplexMatrix],
    h_hat: &ComplexMatrix,
    x_pilots: &[ComplexMatrix],
) -> Result<NoiseVariance, NumericsError> {
    if y_pilots.is_empty() || y_pilots.len() != x_pilots.len() {
        return Err(NumericsError::DimensionMismatch {
            context: format!("noise estimate: {} received vs {} transmitted symbols", y_pilots.len(), x_pilots.len()),
        });
    }
    let n_beams = h_hat.rows();
    let n_sc = h_hat.cols();
    let n_layers = x_pilots[0].rows();
    for (y, x) in y_pilots.iter().zip(x_pilots) {
        if y.rows() != n_beams || y.cols() != n_sc || x.cols() != n_sc || x.rows() != n_layers {
            return Err(NumericsError::DimensionMismatch {
                context: "noise estimate: inconsistent grid shapes".to_string(),
            });
        }
    }
    let mut acc: f32 = 0.0;
    for (y, x) in y_pilots.iter().zip(x_pilots) {
        for sc in 0..n_sc {
            let pilot = x.get(comb_layer(sc, n_layers), sc);
            for b in 0..n_beams {
                let r = y.get(b, sc) - h_hat.get(b, sc) * pilot;
                acc += r.norm_sqr();
            }
        }
    }
    let count = (n_beams * n_sc * y_pilots.len()) as f32;
    NoiseVariance::new(acc / count)
}
