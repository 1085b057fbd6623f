//! Localized Rademacher complexity of a linear sieve ball.
//!
//! Over `{h = Φc : E_n[h²] ≤ δ²}` the supremum of `|E_n[ε h]|` is
//! `δ · ‖S^{−1/2} Φᵀε / n‖` with `S` the empirical Gram, so the complexity is
//! `δ κ` for a slope `κ` that only depends on the design. The empirical-norm
//! ball stands in for the population ball.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::basis::BasisSpec;
use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::substream;
use crate::scalar::Real;

/// Monte Carlo estimate of `κ` with its standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RademacherSlope<T> {
    pub kappa: T,
    pub standard_error: T,
    pub draws: usize,
}

/// Estimates `κ = E_ε ‖S^{−1/2} Φᵀε / n‖`. Draw `k` uses substream `k` of
/// `seed`, so the estimate does not depend on evaluation order.
pub fn rademacher_slope<T: Real>(
    basis: &BasisSpec,
    points: &DMatrix<T>,
    draws: usize,
    seed: u64,
) -> Result<RademacherSlope<T>> {
    if draws == 0 {
        return Err(Error::InvalidParameter("draws must be ≥ 1".into()));
    }
    let n = points.nrows();
    if n == 0 {
        return Err(Error::DegenerateDesign);
    }
    let phi = basis.design_matrix(points)?;
    let nt = T::from_usize_lossy(n);
    let gram = phi.tr_mul(&phi) / nt;
    let whiten = linalg::sym_inv_sqrt(&gram, T::eps().sqrt())?;
    let projector = &whiten * phi.transpose() / nt;

    let mut sum = 0.0f64;
    let mut sum_sq = 0.0f64;
    let mut eps = DVector::<T>::zeros(n);
    for k in 0..draws {
        let mut rng = substream(seed, k as u64);
        for e in eps.iter_mut() {
            *e = if rng.random::<bool>() { T::one() } else { -T::one() };
        }
        let v = (&projector * &eps).norm().as_f64();
        sum += v;
        sum_sq += v * v;
    }
    let d = draws as f64;
    let mean = sum / d;
    let var = if draws > 1 { ((sum_sq - d * mean * mean) / (d - 1.0)).max(0.0) } else { 0.0 };
    Ok(RademacherSlope { kappa: T::lit(mean), standard_error: T::lit((var / d).sqrt()), draws })
}

/// `R(δ) = δ κ`.
pub fn local_rademacher<T: Real>(
    basis: &BasisSpec,
    points: &DMatrix<T>,
    delta: T,
    draws: usize,
    seed: u64,
) -> Result<T> {
    if delta < T::zero() {
        return Err(Error::InvalidParameter("δ must be nonnegative".into()));
    }
    Ok(delta * rademacher_slope(basis, points, draws, seed)?.kappa)
}

/// Smallest `δ` with `δ κ ≤ δ²`, which is `κ` itself.
pub fn critical_radius<T: Real>(basis: &BasisSpec, points: &DMatrix<T>, draws: usize, seed: u64) -> Result<T> {
    Ok(rademacher_slope(basis, points, draws, seed)?.kappa)
}
