//! Sieve least-squares estimates of `T` and `r₀`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSpec;
use crate::dgp::Dataset;
use crate::error::{Error, Result};
use crate::function::{FunctionHandle, FunctionRecord};
use crate::linalg;
use crate::operator::{OperatorRecord, SieveOperator};
use crate::rng::substream;
use crate::scalar::Real;

/// Evaluated design of a moment restriction on one sample.
///
/// `phi` is the `V_h` basis at each row, `psi` the `V_q` basis, and `mass` the
/// row weights (`1/n` for a sample, the atom masses for an enumerated law).
#[derive(Clone, Debug)]
pub struct Design<T: Real> {
    pub basis_h: BasisSpec,
    pub basis_q: BasisSpec,
    pub phi: DMatrix<T>,
    pub psi: DMatrix<T>,
    pub g0: DVector<T>,
    pub g1: DVector<T>,
    pub mass: DVector<T>,
}

impl<T: Real> Design<T> {
    pub fn from_dataset(data: &Dataset<T>, basis_h: &BasisSpec, basis_q: &BasisSpec) -> Result<Self> {
        let roles = data.require_roles()?;
        let phi = basis_h.design_matrix(&data.select(&roles.v_h)?)?;
        let psi = basis_q.design_matrix(&data.select(&roles.v_q)?)?;
        Ok(Self {
            basis_h: basis_h.clone(),
            basis_q: basis_q.clone(),
            phi,
            psi,
            g0: data.column(&roles.g0)?,
            g1: data.column(&roles.g1)?,
            mass: data.masses(),
        })
    }

    pub fn n(&self) -> usize {
        self.phi.nrows()
    }

    /// `Σᵢ massᵢ aᵢ bᵢᵀ` for row-aligned matrices.
    pub fn cross(&self, a: &DMatrix<T>, b: &DMatrix<T>) -> DMatrix<T> {
        let mut wb = b.clone();
        for (i, mut row) in wb.row_iter_mut().enumerate() {
            row *= self.mass[i];
        }
        a.tr_mul(&wb)
    }

    pub fn cross_vec(&self, a: &DMatrix<T>, v: &DVector<T>) -> DVector<T> {
        a.tr_mul(&v.component_mul(&self.mass))
    }

    pub fn mean(&self, v: &DVector<T>) -> T {
        v.dot(&self.mass)
    }

    /// Rows `g₁ᵢ φ(v_h,ᵢ)ᵀ`.
    pub fn weighted_phi(&self) -> DMatrix<T> {
        let mut m = self.phi.clone();
        for (i, mut row) in m.row_iter_mut().enumerate() {
            row *= self.g1[i];
        }
        m
    }

    /// Empirical Gram `E_n[φ φᵀ]` of the `V_h` basis.
    pub fn gram_h(&self) -> DMatrix<T> {
        self.cross(&self.phi, &self.phi)
    }

    pub fn gram_q(&self) -> DMatrix<T> {
        self.cross(&self.psi, &self.psi)
    }
}

#[derive(Clone, Debug)]
pub struct NuisanceFit<T: Real> {
    pub t_hat: SieveOperator<T>,
    pub r_hat: FunctionHandle<T>,
    pub ridge: T,
    pub n_used: usize,
    pub condition_number: f64,
}

/// Default stabiliser `1e−8 · tr(E_n[ψψᵀ]) / K`.
pub fn default_ridge<T: Real>(gram_q: &DMatrix<T>) -> T {
    T::lit(1e-8) * gram_q.trace() / T::from_usize_lossy(gram_q.nrows())
}

fn normal_matrix<T: Real>(design: &Design<T>, ridge: T) -> Result<DMatrix<T>> {
    if ridge < T::zero() || !ridge.is_finite_value() {
        return Err(Error::InvalidParameter("ridge must be nonnegative".into()));
    }
    let k = design.basis_q.dimension();
    Ok(design.gram_q() + DMatrix::identity(k, k) * ridge)
}

fn solve_normal<T: Real>(a: &DMatrix<T>, rhs: &DMatrix<T>) -> Result<DMatrix<T>> {
    if linalg::spd_condition_number(a) > 1.0 / (T::eps().as_f64() * 1e2) {
        return Err(Error::RankDeficient);
    }
    linalg::spd_solve(a, rhs)
}

/// `Â = (E_n[ψψᵀ] + ridge·I)⁻¹ E_n[ψ g₁ φᵀ]`.
pub fn fit_operator_design<T: Real>(design: &Design<T>, ridge: T) -> Result<SieveOperator<T>> {
    let a = normal_matrix(design, ridge)?;
    let rhs = design.cross(&design.psi, &design.weighted_phi());
    SieveOperator::new(solve_normal(&a, &rhs)?, design.basis_h.clone(), design.basis_q.clone())
}

/// `d = (E_n[ψψᵀ] + ridge·I)⁻¹ E_n[ψ g₀]`.
pub fn fit_r_design<T: Real>(design: &Design<T>, ridge: T) -> Result<FunctionHandle<T>> {
    let a = normal_matrix(design, ridge)?;
    let b = design.cross_vec(&design.psi, &design.g0);
    let sol = solve_normal(&a, &DMatrix::from_column_slice(b.len(), 1, b.as_slice()))?;
    FunctionHandle::new(design.basis_q.clone(), sol.column(0).into_owned())
}

pub fn fit_operator<T: Real>(data: &Dataset<T>, basis_h: &BasisSpec, basis_q: &BasisSpec, ridge: T) -> Result<SieveOperator<T>> {
    fit_operator_design(&Design::from_dataset(data, basis_h, basis_q)?, ridge)
}

pub fn fit_r<T: Real>(data: &Dataset<T>, basis_q: &BasisSpec, ridge: T) -> Result<FunctionHandle<T>> {
    let roles = data.require_roles()?;
    let psi = basis_q.design_matrix(&data.select(&roles.v_q)?)?;
    let design = Design {
        basis_h: basis_q.clone(),
        basis_q: basis_q.clone(),
        phi: DMatrix::zeros(psi.nrows(), 0),
        psi,
        g0: data.column(&roles.g0)?,
        g1: data.column(&roles.g1)?,
        mass: data.masses(),
    };
    fit_r_design(&design, ridge)
}

/// Both nuisances on one sample; `ridge = None` selects [`default_ridge`].
pub fn fit_nuisances<T: Real>(design: &Design<T>, ridge: Option<T>) -> Result<NuisanceFit<T>> {
    let gram = design.gram_q();
    let ridge = ridge.unwrap_or_else(|| default_ridge(&gram));
    let k = gram.nrows();
    let condition_number = linalg::spd_condition_number(&(gram + DMatrix::identity(k, k) * ridge));
    Ok(NuisanceFit {
        t_hat: fit_operator_design(design, ridge)?,
        r_hat: fit_r_design(design, ridge)?,
        ridge,
        n_used: design.n(),
        condition_number,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorruptionMode {
    /// `U diag(ξ) Vᵀ` in the singular frame of the operator, `ξ` Gaussian.
    Spectral,
    /// Gaussian entries.
    Random,
    /// `u vᵀ` with Gaussian unit vectors.
    RankOne,
}

/// `A + ε·D/‖D‖` for a seeded direction `D`, so the spectral distance to the
/// input is exactly `ε`.
pub fn corrupt_operator<T: Real>(t: &SieveOperator<T>, epsilon: T, mode: CorruptionMode, seed: u64) -> Result<SieveOperator<T>> {
    if epsilon < T::zero() || !epsilon.is_finite_value() {
        return Err(Error::InvalidParameter("ε must be nonnegative".into()));
    }
    if epsilon == T::zero() {
        return Ok(t.clone());
    }
    let a = t.matrix();
    let (k, j) = a.shape();
    let mut rng = substream(seed, 0);
    let mut gauss = || T::lit(rng.sample::<f64, _>(StandardNormal));
    let direction = match mode {
        CorruptionMode::Random => DMatrix::from_fn(k, j, |_, _| gauss()),
        CorruptionMode::RankOne => {
            let u = DVector::from_fn(k, |_, _| gauss());
            let v = DVector::from_fn(j, |_, _| gauss());
            u * v.transpose()
        }
        CorruptionMode::Spectral => {
            let svd = a.clone().svd(true, true);
            let u = svd.u.expect("u requested");
            let vt = svd.v_t.expect("v_t requested");
            let xi = DVector::from_fn(svd.singular_values.len(), |_, _| gauss());
            u * DMatrix::from_diagonal(&xi) * vt
        }
    };
    let norm = linalg::spectral_norm(&direction);
    if norm <= T::zero() {
        return Err(Error::InvalidParameter("degenerate corruption direction".into()));
    }
    t.with_matrix(a + direction * (epsilon / norm))
}

/// Serialized [`NuisanceFit`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NuisanceRecord {
    pub t_hat: OperatorRecord,
    pub r_hat: FunctionRecord,
    pub ridge: f64,
    pub n_used: usize,
    pub condition_number: f64,
}

impl<T: Real> NuisanceFit<T> {
    pub fn to_record(&self) -> NuisanceRecord {
        NuisanceRecord {
            t_hat: self.t_hat.to_record(),
            r_hat: self.r_hat.to_record(),
            ridge: self.ridge.as_f64(),
            n_used: self.n_used,
            condition_number: self.condition_number,
        }
    }
}
