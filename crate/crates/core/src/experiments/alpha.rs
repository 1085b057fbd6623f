//! Smallest `α` satisfying the error lower bound
//! `Σᵢ (μᵢ⁽ⁿ⁾)^α ⟨e_n, φᵢ⟩² ≤ C ‖T e_n‖²` over a set of error functions.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const FEASIBILITY_RTOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaProbe {
    pub alpha: f64,
    /// `C‖Te_n‖² − Σ μ^α e²` per error function at `alpha`.
    pub margins: Vec<f64>,
    /// `Σ e² / μ` per error function; infinite where some `μᵢ = 0` meets `eᵢ ≠ 0`.
    pub smoothness: Vec<f64>,
}

fn lower_sum(e: &DVector<f64>, mu: &DVector<f64>, alpha: f64) -> f64 {
    e.iter().zip(mu.iter()).map(|(c, m)| if *m == 0.0 { 0.0 } else { m.powf(alpha) * c * c }).sum()
}

fn smoothness(e: &DVector<f64>, mu: &DVector<f64>) -> f64 {
    e.iter()
        .zip(mu.iter())
        .map(|(c, m)| match (*c == 0.0, *m == 0.0) {
            (true, _) => 0.0,
            (false, true) => f64::INFINITY,
            (false, false) => c * c / m,
        })
        .sum()
}

/// `errors[k]` are coefficients of `e_{n_k}` on the basis `φ`, `mu[k]` the
/// matching `μᵢ⁽ⁿᵏ⁾`, `projected_sq[k] = ‖T e_{n_k}‖²`.
pub fn alpha_probe(errors: &[DVector<f64>], projected_sq: &[f64], mu: &[DVector<f64>], constant: f64, grid: &[f64]) -> Result<AlphaProbe> {
    if errors.is_empty() || errors.len() != projected_sq.len() || errors.len() != mu.len() {
        return Err(Error::Dimension("errors, projected errors and μ must have the same nonzero length".into()));
    }
    if errors.iter().zip(mu).any(|(e, m)| e.len() != m.len()) {
        return Err(Error::Dimension("μ and error coefficients differ in length".into()));
    }
    if mu.iter().flat_map(|m| m.iter()).any(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(Error::InvalidParameter("μ must be nonnegative".into()));
    }
    if !(constant > 0.0) {
        return Err(Error::InvalidParameter("constant must be positive".into()));
    }
    let mut sorted = grid.to_vec();
    sorted.retain(|a| *a > 0.0 && a.is_finite());
    sorted.sort_by(f64::total_cmp);
    for &alpha in &sorted {
        let margins: Vec<f64> = errors.iter().zip(mu).zip(projected_sq).map(|((e, m), p)| constant * p - lower_sum(e, m, alpha)).collect();
        let ok = margins.iter().zip(projected_sq).all(|(g, p)| *g >= -FEASIBILITY_RTOL * constant * p.abs().max(f64::MIN_POSITIVE));
        if ok {
            let smooth = errors.iter().zip(mu).map(|(e, m)| smoothness(e, m)).collect();
            return Ok(AlphaProbe { alpha, margins, smoothness: smooth });
        }
    }
    Err(Error::AlphaInfeasible)
}

/// Injective-operator specialisation: `φ` the right singular functions,
/// `μᵢ = (σᵢ/σ₁)^β` for every `n`, `‖Te‖² = Σ σᵢ² eᵢ²` and `C = 1`. Grid
/// points below `2/β` are dropped.
pub fn alpha_probe_singular(errors: &[DVector<f64>], sigmas: &[f64], beta: f64, grid: &[f64]) -> Result<AlphaProbe> {
    if !(beta > 0.0) {
        return Err(Error::InvalidParameter("β must be positive".into()));
    }
    let top = sigmas.iter().copied().fold(0.0, f64::max);
    if !(top > 0.0) {
        return Err(Error::InvalidParameter("need a positive singular value".into()));
    }
    let mu = DVector::from_iterator(sigmas.len(), sigmas.iter().map(|s| (s / top).powf(beta)));
    let projected: Vec<f64> = errors
        .iter()
        .map(|e| {
            if e.len() != sigmas.len() {
                return Err(Error::Dimension(format!("error has {} coefficients for {} singular values", e.len(), sigmas.len())));
            }
            Ok(e.iter().zip(sigmas).map(|(c, s)| (s * c).powi(2)).sum())
        })
        .collect::<Result<_>>()?;
    let floor = 2.0 / beta;
    let kept: Vec<f64> = grid.iter().copied().filter(|a| *a >= floor * (1.0 - 1e-12)).collect();
    if kept.is_empty() {
        return Err(Error::InvalidParameter(format!("grid has no value ≥ 2/β = {floor}")));
    }
    alpha_probe(errors, &projected, &vec![mu; errors.len()], 1.0, &kept)
}

/// `count` evenly spaced values from `start` to `stop`.
pub fn linear_grid(start: f64, stop: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![start],
        _ => (0..count).map(|i| start + (stop - start) * i as f64 / (count - 1) as f64).collect(),
    }
}
