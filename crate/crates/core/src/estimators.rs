//! Tikhonov and debiased iterated-Tikhonov estimators over a linear sieve.
//!
//! For `h = φᵀc` the debiased risk is the quadratic
//! `ψ̂(c) = cᵀHc + ℓᵀc + E_n[g₀²]` with `P = ΨÂ`, `M = G Φ`,
//! `H = PᵀM + MᵀP − PᵀP` and `ℓ = 2(−Pᵀg₀ − Mᵀr̂ + Pᵀr̂)`, all moments taken
//! under the design masses. Each iteration solves
//! `(H + λS) c = −ℓ/2 + λ S c_prev` with `S = E_n[φφᵀ]`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::function::{FunctionHandle, FunctionRecord};
use crate::linalg;
use crate::nuisance::{Design, NuisanceFit};
use crate::operator::SieveOperator;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Plug-in projected risk `E_n[(T̂h − g₀)²]`.
    Baseline,
    /// Influence-function corrected risk `ψ̂(h)`.
    Debiased,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Method::Baseline),
            "debiased" => Ok(Method::Debiased),
            other => Err(Error::InvalidParameter(format!("unknown method {other:?}"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Baseline => "baseline",
            Method::Debiased => "debiased",
        })
    }
}

#[derive(Clone, Debug)]
pub struct FitConfig<T: Real> {
    pub lambda: T,
    pub iterations: usize,
    /// Starting point; zero when absent.
    pub initial: Option<FunctionHandle<T>>,
    pub hessian_floor: T,
    pub method: Method,
}

impl<T: Real> FitConfig<T> {
    pub fn new(lambda: T, method: Method) -> Self {
        Self { lambda, iterations: 2, initial: None, hessian_floor: T::zero(), method }
    }

    pub fn with_iterations(mut self, t: usize) -> Self {
        self.iterations = t;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > T::zero() && self.lambda.is_finite_value()) {
            return Err(Error::InvalidParameter("λ must be positive".into()));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidParameter("iterations must be ≥ 1".into()));
        }
        if self.hessian_floor < T::zero() {
            return Err(Error::InvalidParameter("hessian_floor must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct FitResult<T: Real> {
    pub h_hat: FunctionHandle<T>,
    /// Risk plus `λ E_n[(ĥ − ĥ_prev)²]` at the last iteration.
    pub objective_value: T,
    pub hessian_min_eig: T,
    pub gradient_norm: T,
    /// Coefficients after each iteration.
    pub trajectory: Vec<DVector<T>>,
    pub lambda: T,
    pub method: Method,
}

/// Serialized [`FitResult`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub h_hat: FunctionRecord,
    pub lambda: f64,
    pub iterations: usize,
    pub method: Method,
    pub objective_value: f64,
    pub hessian_min_eig: f64,
    pub gradient_norm: f64,
    pub trajectory: Vec<Vec<f64>>,
}

impl<T: Real> FitResult<T> {
    pub fn to_record(&self) -> FitRecord {
        FitRecord {
            h_hat: self.h_hat.to_record(),
            lambda: self.lambda.as_f64(),
            iterations: self.trajectory.len(),
            method: self.method,
            objective_value: self.objective_value.as_f64(),
            hessian_min_eig: self.hessian_min_eig.as_f64(),
            gradient_norm: self.gradient_norm.as_f64(),
            trajectory: self.trajectory.iter().map(|c| c.iter().map(|v| v.as_f64()).collect()).collect(),
        }
    }
}

fn check_bases<T: Real>(h: &FunctionHandle<T>, design: &Design<T>, t_hat: &SieveOperator<T>) -> Result<()> {
    h.ensure_basis(&design.basis_h)?;
    use crate::operator::LinearOperator;
    if t_hat.input_basis() != &design.basis_h || t_hat.output_basis() != &design.basis_q {
        return Err(Error::BasisMismatch {
            expected: format!("{} -> {}", design.basis_h, design.basis_q),
            found: format!("{} -> {}", t_hat.input_basis(), t_hat.output_basis()),
        });
    }
    Ok(())
}

/// `E_n[{(T̂h)(V_q) − g₀}²]`.
pub fn projected_risk_plugin<T: Real>(h: &FunctionHandle<T>, design: &Design<T>, t_hat: &SieveOperator<T>) -> Result<T> {
    check_bases(h, design, t_hat)?;
    let th = &design.psi * (t_hat.matrix() * h.coeffs());
    let resid = th - &design.g0;
    Ok(design.mean(&resid.component_mul(&resid)))
}

/// Per-row integrand of `ψ̂(h)`, without the `− ψ(h)` centring.
pub fn debiased_integrand<T: Real>(
    h: &FunctionHandle<T>,
    design: &Design<T>,
    t_hat: &SieveOperator<T>,
    r_hat: &FunctionHandle<T>,
) -> Result<DVector<T>> {
    check_bases(h, design, t_hat)?;
    r_hat.ensure_basis(&design.basis_q)?;
    let th = &design.psi * (t_hat.matrix() * h.coeffs());
    let gh = (&design.phi * h.coeffs()).component_mul(&design.g1);
    let r = &design.psi * r_hat.coeffs();
    let two = T::lit(2.0);
    Ok(DVector::from_fn(design.n(), |i, _| {
        let a = th[i] - design.g0[i];
        a * a + two * (th[i] - r[i]) * (gh[i] - th[i])
    }))
}

/// `ψ̂(h) = E_n[(T̂h − g₀)² + 2(T̂h − r̂)(g₁h − T̂h)]`. May be negative.
pub fn debiased_risk<T: Real>(
    h: &FunctionHandle<T>,
    design: &Design<T>,
    t_hat: &SieveOperator<T>,
    r_hat: &FunctionHandle<T>,
) -> Result<T> {
    Ok(design.mean(&debiased_integrand(h, design, t_hat, r_hat)?))
}

/// Influence function of `ψ(h)` at one observation, given `g₀`, `g₁`, `h(v_h)`,
/// `E[g₁h | v_q]`, `E[g₀ | v_q]` and `ψ(h)`.
pub fn influence_value<T: Real>(g0: T, g1: T, h_value: T, th_value: T, r_value: T, psi: T) -> T {
    let a = th_value - g0;
    a * a + T::lit(2.0) * (th_value - r_value) * (g1 * h_value - th_value) - psi
}

/// Quadratic form of the empirical objective in the coefficients.
#[derive(Clone, Debug)]
pub struct Quadratic<T: Real> {
    pub h: DMatrix<T>,
    pub l: DVector<T>,
    pub constant: T,
    pub gram: DMatrix<T>,
}

impl<T: Real> Quadratic<T> {
    pub fn build(design: &Design<T>, nuisance: &NuisanceFit<T>, method: Method) -> Result<Self> {
        let j = design.basis_h.dimension();
        check_bases(&FunctionHandle::zeros(design.basis_h.clone()), design, &nuisance.t_hat)?;
        let p = &design.psi * nuisance.t_hat.matrix();
        let ptp = design.cross(&p, &p);
        let ptg0 = design.cross_vec(&p, &design.g0);
        let two = T::lit(2.0);
        let (h, l) = match method {
            Method::Baseline => (ptp, ptg0 * (-two)),
            Method::Debiased => {
                nuisance.r_hat.ensure_basis(&design.basis_q)?;
                let m = design.weighted_phi();
                let r = &design.psi * nuisance.r_hat.coeffs();
                let ptm = design.cross(&p, &m);
                let h = &ptm + ptm.transpose() - ptp;
                let l = (-ptg0 - design.cross_vec(&m, &r) + design.cross_vec(&p, &r)) * two;
                (h, l)
            }
        };
        debug_assert_eq!(h.nrows(), j);
        let constant = design.mean(&design.g0.component_mul(&design.g0));
        Ok(Self { h: linalg::symmetrize(&h), l, constant, gram: design.gram_h() })
    }

    pub fn risk(&self, c: &DVector<T>) -> T {
        (c.transpose() * &self.h * c)[(0, 0)] + self.l.dot(c) + self.constant
    }

    pub fn penalty(&self, c: &DVector<T>, anchor: &DVector<T>) -> T {
        let d = c - anchor;
        (d.transpose() * &self.gram * &d)[(0, 0)]
    }

    pub fn objective(&self, c: &DVector<T>, anchor: &DVector<T>, lambda: T) -> T {
        self.risk(c) + lambda * self.penalty(c, anchor)
    }

    pub fn gradient(&self, c: &DVector<T>, anchor: &DVector<T>, lambda: T) -> DVector<T> {
        let two = T::lit(2.0);
        &self.h * c * two + &self.l + &self.gram * (c - anchor) * (two * lambda)
    }
}

fn gradient_tolerance<T: Real>() -> T {
    // 1e−8 in double precision, scaled with the unit roundoff otherwise.
    T::lit(1e-8) * (T::eps() / T::lit(f64::EPSILON)).sqrt()
}

/// Iterated Tikhonov fit. Each step minimises the chosen risk plus
/// `λ E_n[(h − h_prev)²]`; fails rather than regularising further when the
/// objective is not strictly convex.
pub fn fit<T: Real>(design: &Design<T>, nuisance: &NuisanceFit<T>, config: &FitConfig<T>) -> Result<FitResult<T>> {
    config.validate()?;
    let q = Quadratic::build(design, nuisance, config.method)?;
    fit_quadratic(&q, design, config)
}

/// [`fit`] with a prebuilt quadratic, so a λ grid shares one build.
pub fn fit_quadratic<T: Real>(q: &Quadratic<T>, design: &Design<T>, config: &FitConfig<T>) -> Result<FitResult<T>> {
    config.validate()?;
    let lambda = config.lambda;
    let system = &q.h + &q.gram * lambda;
    let min_eig = linalg::min_eigenvalue(&system);
    if min_eig <= config.hessian_floor {
        return Err(Error::NonConvex { min_eigenvalue: min_eig.as_f64(), floor: config.hessian_floor.as_f64() });
    }
    let chol = linalg::symmetrize(&system).cholesky().ok_or(Error::NonConvex {
        min_eigenvalue: min_eig.as_f64(),
        floor: config.hessian_floor.as_f64(),
    })?;
    let mut c = match &config.initial {
        Some(h0) => {
            h0.ensure_basis(&design.basis_h)?;
            h0.coeffs().clone()
        }
        None => DVector::zeros(design.basis_h.dimension()),
    };
    let half = T::lit(0.5);
    let tol = gradient_tolerance::<T>();
    let mut trajectory = Vec::with_capacity(config.iterations);
    let mut anchor = c.clone();
    let mut grad_norm = T::zero();
    for _ in 0..config.iterations {
        anchor = c.clone();
        let rhs = -&q.l * half + &q.gram * &anchor * lambda;
        let mut sol = chol.solve(&rhs);
        for _ in 0..3 {
            let g = q.gradient(&sol, &anchor, lambda);
            grad_norm = g.norm();
            if grad_norm <= tol * (T::one() + sol.norm()) {
                break;
            }
            sol -= chol.solve(&(g * half));
        }
        grad_norm = q.gradient(&sol, &anchor, lambda).norm();
        if grad_norm > tol * (T::one() + sol.norm()) {
            return Err(Error::NotOptimal { gradient_norm: grad_norm.as_f64(), tolerance: (tol * (T::one() + sol.norm())).as_f64() });
        }
        c = sol;
        trajectory.push(c.clone());
    }
    let objective_value = q.objective(&c, &anchor, lambda);
    Ok(FitResult {
        h_hat: FunctionHandle::new(design.basis_h.clone(), c)?,
        objective_value,
        hessian_min_eig: min_eig,
        gradient_norm: grad_norm,
        trajectory,
        lambda,
        method: config.method,
    })
}
