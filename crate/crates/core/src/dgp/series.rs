//! Nonparametric IV design with a known singular system.
//!
//! `(W, Z)` has density `1 + Σᵢ sᵢ φᵢ₊₁(w) φᵢ₊₁(z)` on `[0,1]²` with cosine
//! elements `φ`, so both marginals are uniform and
//! `E[φᵢ₊₁(W) | Z] = sᵢ φᵢ₊₁(Z)`.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, RoleMap};
use crate::basis::BasisSpec;
use crate::error::{Error, Result};
use crate::function::FunctionHandle;
use crate::operator::{LinearOperator, SingularSystem, SieveOperator};
use crate::rng::substream;

const MIN_ACCEPTANCE: f64 = 0.01;
const POSITIVITY_GRID: usize = 400;
const POSITIVITY_FLOOR: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesNpivDgp {
    /// `s₁ ≥ s₂ ≥ …`, the singular values of the non-constant elements.
    pub sigmas: Vec<f64>,
    /// `h₀` on `cosine(m + 1)`.
    pub h0: FunctionHandle<f64>,
    pub noise_sd: f64,
    pub endogeneity: f64,
}

impl SeriesNpivDgp {
    pub fn new(sigmas: Vec<f64>, h0: FunctionHandle<f64>, noise_sd: f64, endogeneity: f64) -> Result<Self> {
        let d = Self { sigmas, h0, noise_sd, endogeneity };
        d.validate()?;
        Ok(d)
    }

    /// `h₀ = (T*T)^{β/2} w` on the full system (constant element included).
    pub fn with_source(sigmas: Vec<f64>, beta: f64, w: &[f64], noise_sd: f64, endogeneity: f64) -> Result<Self> {
        let sys = Self::system_for(&sigmas)?;
        let w = FunctionHandle::from_slice(BasisSpec::cosine(sigmas.len() + 1), w)?;
        let h0 = sys.make_source_solution(beta, &w)?;
        Self::new(sigmas, h0, noise_sd, endogeneity)
    }

    fn system_for(sigmas: &[f64]) -> Result<SingularSystem<f64>> {
        let mut all = Vec::with_capacity(sigmas.len() + 1);
        all.push(1.0);
        all.extend_from_slice(sigmas);
        SingularSystem::on_cosine(all)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::InvalidParameter("sigmas must be nonnegative".into()));
        }
        if self.sigmas.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::InvalidParameter("sigmas must be nonincreasing".into()));
        }
        let total: f64 = self.sigmas.iter().sum();
        if 2.0 * total >= 1.0 {
            let floor = self.grid_min_density(POSITIVITY_GRID);
            if floor < POSITIVITY_FLOOR {
                return Err(Error::InvalidParameter(format!(
                    "2·Σσ = {} and the density reaches {floor:.3} on a grid; it must stay above {POSITIVITY_FLOOR}",
                    2.0 * total
                )));
            }
        }
        if self.h0.basis() != &BasisSpec::cosine(self.sigmas.len() + 1) {
            return Err(Error::BasisMismatch {
                expected: BasisSpec::cosine(self.sigmas.len() + 1).to_string(),
                found: self.h0.basis().to_string(),
            });
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return Err(Error::InvalidParameter("noise_sd must be nonnegative".into()));
        }
        if !(-1.0..=1.0).contains(&self.endogeneity) {
            return Err(Error::InvalidParameter("endogeneity must lie in [−1, 1]".into()));
        }
        Ok(())
    }

    /// Minimum of the density over a `k × k` grid including the edges.
    pub fn grid_min_density(&self, k: usize) -> f64 {
        let mut lo = f64::INFINITY;
        for i in 0..=k {
            for j in 0..=k {
                lo = lo.min(self.density(i as f64 / k as f64, j as f64 / k as f64));
            }
        }
        lo
    }

    pub fn basis(&self) -> BasisSpec {
        BasisSpec::cosine(self.sigmas.len() + 1)
    }

    pub fn density(&self, w: f64, z: f64) -> f64 {
        1.0 + self
            .sigmas
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let k = (i + 1) as f64 * PI;
                2.0 * s * (k * w).cos() * (k * z).cos()
            })
            .sum::<f64>()
    }

    /// `F(w | z) = ∫₀ʷ p(u, z) du`.
    pub fn conditional_cdf(&self, w: f64, z: f64) -> f64 {
        w + self
            .sigmas
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let k = (i + 1) as f64 * PI;
                s * SQRT_2 * (k * z).cos() * SQRT_2 * (k * w).sin() / k
            })
            .sum::<f64>()
    }

    pub fn true_solution(&self) -> FunctionHandle<f64> {
        self.h0.clone()
    }

    /// Singular system `(1, s₁, …, s_m)` on `cosine(m + 1)`.
    /// Fails when some `sᵢ` is zero, since the system then has lower rank.
    pub fn true_operator(&self) -> Result<SingularSystem<f64>> {
        Self::system_for(&self.sigmas)
    }

    /// `diag(1, s₁, …, s_m)`; defined for zero `sᵢ` as well.
    pub fn true_sieve_operator(&self) -> SieveOperator<f64> {
        let b = self.basis();
        let mut diag = vec![1.0];
        diag.extend_from_slice(&self.sigmas);
        SieveOperator::new(DMatrix::from_diagonal(&DVector::from_vec(diag)), b.clone(), b).expect("square diagonal")
    }

    /// `r₀ = T h₀` in the `Z` basis.
    pub fn true_r(&self) -> FunctionHandle<f64> {
        self.true_sieve_operator().apply(&self.h0).expect("matching basis")
    }

    pub fn roles() -> RoleMap {
        RoleMap::new(&["W"], &["Z"], "g0", "g1")
    }

    /// Columns `W, Z, Y, g0 (= Y), g1 (= 1)` with roles attached.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Dataset<f64>> {
        self.validate()?;
        if n == 0 {
            return Err(Error::InvalidParameter("n must be ≥ 1".into()));
        }
        let envelope = 1.0 + 2.0 * self.sigmas.iter().sum::<f64>();
        let mut rng = substream(seed, 0);
        let mut rows = Vec::with_capacity(5 * n);
        let mut tries: u64 = 0;
        let basis = self.basis();
        let mut accepted = 0;
        while accepted < n {
            tries += 1;
            let (w, z, u): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
            if u * envelope > self.density(w, z) {
                if tries >= 1000 && (accepted as f64) < MIN_ACCEPTANCE * tries as f64 {
                    return Err(Error::LowAcceptance { rate: accepted as f64 / tries as f64 });
                }
                continue;
            }
            accepted += 1;
            let noise: f64 = rng.sample(StandardNormal);
            let eps = self.endogeneity * 12f64.sqrt() * (self.conditional_cdf(w, z) - 0.5) + self.noise_sd * noise;
            let y = basis.evaluate(&[w])?.dot(self.h0.coeffs()) + eps;
            rows.extend_from_slice(&[w, z, y, y, 1.0]);
        }
        let cols = ["W", "Z", "Y", "g0", "g1"].iter().map(|s| s.to_string()).collect();
        Dataset::new(cols, DMatrix::from_row_slice(n, 5, &rows))?.with_roles(Self::roles())
    }
}

/// Access to the true solution and operator, for error reporting.
pub trait Truth: Send + Sync {
    /// `‖h − h₀‖₂`.
    fn source_error(&self, h: &FunctionHandle<f64>) -> Result<f64>;
    /// `‖T(h − h₀)‖₂`.
    fn projected_error(&self, h: &FunctionHandle<f64>) -> Result<f64>;
}

impl Truth for SeriesNpivDgp {
    fn source_error(&self, h: &FunctionHandle<f64>) -> Result<f64> {
        Ok(h.padded_difference(&self.h0)?.norm())
    }

    fn projected_error(&self, h: &FunctionHandle<f64>) -> Result<f64> {
        let diff = h.padded_difference(&self.h0)?;
        let mut total = 0.0;
        for (i, d) in diff.iter().enumerate() {
            let s = match i {
                0 => 1.0,
                _ => self.sigmas.get(i - 1).copied().unwrap_or(0.0),
            };
            total += (s * d).powi(2);
        }
        Ok(total.sqrt())
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;

    fn dgp(sigmas: Vec<f64>, noise: f64, endo: f64) -> SeriesNpivDgp {
        let m = sigmas.len();
        let mut w = vec![0.0; m + 1];
        w[0] = 0.5;
        for (i, v) in w.iter_mut().enumerate().skip(1) {
            *v = 1.0 / i as f64;
        }
        SeriesNpivDgp::with_source(sigmas, 1.0, &w, noise, endo).unwrap()
    }

    #[test]
    fn rejects_positivity_violation() {
        let h0 = FunctionHandle::zeros(BasisSpec::cosine(3));
        assert!(SeriesNpivDgp::new(vec![0.45, 0.45], h0.clone(), 1.0, 0.0).is_err());
        // beyond the sufficient margin but still bounded away from zero
        assert!(SeriesNpivDgp::new(vec![0.4, 0.2], h0, 1.0, 0.0).is_ok());
    }

    #[test]
    fn density_is_positive_on_grid() {
        let d = dgp(vec![0.2, 0.1, 0.05], 1.0, 0.5);
        let bound = 1.0 - 2.0 * 0.35;
        for i in 0..=100 {
            for j in 0..=100 {
                assert!(d.density(i as f64 / 100.0, j as f64 / 100.0) >= bound - 1e-12);
            }
        }
    }

    #[test]
    fn cdf_matches_numerical_integral() {
        let d = dgp(vec![0.2, 0.1], 1.0, 0.5);
        let (w, z) = (0.63, 0.21);
        let steps = 20_000;
        let h = w / steps as f64;
        let integral: f64 = (0..steps).map(|k| d.density((k as f64 + 0.5) * h, z) * h).sum();
        assert!((integral - d.conditional_cdf(w, z)).abs() < 1e-8);
        assert!((d.conditional_cdf(1.0, z) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn deterministic_sampling() {
        let d = dgp(vec![0.2, 0.1], 0.3, 0.5);
        assert_eq!(d.sample(50, 3).unwrap(), d.sample(50, 3).unwrap());
        assert_ne!(d.sample(50, 3).unwrap(), d.sample(50, 4).unwrap());
    }

    #[test]
    fn independence_when_sigmas_vanish() {
        let d = SeriesNpivDgp::new(vec![0.0], FunctionHandle::zeros(BasisSpec::cosine(2)), 1.0, 0.0).unwrap();
        let n = 20_000;
        let data = d.sample(n, 5).unwrap();
        let b = BasisSpec::cosine(2);
        let fw = b.design_matrix(&data.select(&["W".into()]).unwrap()).unwrap().column(1).into_owned();
        let fz = b.design_matrix(&data.select(&["Z".into()]).unwrap()).unwrap().column(1).into_owned();
        let corr = fw.dot(&fz) / n as f64;
        assert!(corr.abs() < 3.0 / (n as f64).sqrt(), "{corr}");
    }

    #[test]
    fn sieve_regression_recovers_singular_values() {
        let sig = vec![0.3, 0.15];
        let d = dgp(sig.clone(), 1.0, 0.5);
        let n = 100_000;
        let data = d.sample(n, 11).unwrap();
        let b = BasisSpec::cosine(3);
        let fw = b.design_matrix(&data.select(&["W".into()]).unwrap()).unwrap();
        let fz = b.design_matrix(&data.select(&["Z".into()]).unwrap()).unwrap();
        // regression of φᵢ₊₁(W) on the Z basis; SE from the residual variance
        let gram = fz.tr_mul(&fz);
        for (i, s) in sig.iter().enumerate() {
            let y = fw.column(i + 1).into_owned();
            let beta = linalg::spd_solve_vec(&gram, &fz.tr_mul(&y)).unwrap();
            let resid = &y - &fz * &beta;
            let se = (resid.norm_squared() / n as f64).sqrt() / (n as f64).sqrt();
            assert!((beta[i + 1] - s).abs() < 3.0 * se.max(1e-12), "{} vs {s}", beta[i + 1]);
        }
    }

    #[test]
    fn errors_are_mean_zero_given_instrument() {
        let d = dgp(vec![0.3, 0.15], 0.5, 1.0);
        let n = 50_000;
        let data = d.sample(n, 13).unwrap();
        let y = data.column("Y").unwrap();
        let hw = d.h0.evaluate(&data.select(&["W".into()]).unwrap()).unwrap();
        let eps = y - hw;
        let fz = BasisSpec::cosine(4).design_matrix(&data.select(&["Z".into()]).unwrap()).unwrap();
        let moments = fz.tr_mul(&eps) / n as f64;
        let sd = (eps.norm_squared() / n as f64).sqrt();
        for k in 0..4 {
            assert!(moments[k].abs() < 3.0 * sd * 1.5 / (n as f64).sqrt(), "moment {k}: {}", moments[k]);
        }
        let fw = BasisSpec::cosine(2).design_matrix(&data.select(&["W".into()]).unwrap()).unwrap();
        assert!((fw.column(1).dot(&eps) / n as f64).abs() > 0.05, "instrumentless endogeneity expected");
    }

    #[test]
    fn truth_errors() {
        let d = dgp(vec![0.5 * 0.8, 0.05], 0.0, 0.0);
        assert_eq!(d.projected_error(&d.h0).unwrap(), 0.0);
        let r = d.true_r();
        for i in 0..3 {
            let s = if i == 0 { 1.0 } else { d.sigmas[i - 1] };
            assert_eq!(r.coeffs()[i], s * d.h0.coeffs()[i]);
        }
        let shifted = FunctionHandle::from_slice(d.basis(), &[0.0, 1.0, 0.0]).unwrap().add(&d.h0).unwrap();
        assert!((d.projected_error(&shifted).unwrap() - 0.4).abs() < 1e-15);
        assert!((d.source_error(&shifted).unwrap() - 1.0).abs() < 1e-15);
        assert!(d.true_operator().unwrap().source_condition_norm(&d.h0, 1.0).unwrap().is_finite());
    }
}
