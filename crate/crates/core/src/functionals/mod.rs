//! Linear functionals `ψ₀ = E[s₁ q₀ h₀ + s₂ q₀ + s₃ h₀ + s₄]` with bridges
//! `h₀`, `q₀` solving `E[s₁h₀ + s₂ | V_q] = 0` and `E[s₁q₀ + s₃ | V_h] = 0`.

pub mod rates;

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSpec;
use crate::dgp::{Dataset, RoleMap, SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::function::{FunctionHandle, FunctionRecord};
use crate::rng::derive_seed;
use crate::selection::{fit_cv_pipeline, split, GridSpec, PipelineConfig};

pub use rates::{rate_requirement, snap_rational, RateRequirement, Rational, Regime};

pub const MIXED_BIAS_TOL: f64 = 1e-9;

/// One row of a dataset, addressed by column name.
pub struct Row<'a> {
    columns: &'a [String],
    values: &'a [f64],
}

impl Row<'_> {
    /// Value of a column declared in [`MomentFunctional::columns`].
    pub fn get(&self, name: &str) -> f64 {
        let j = self.columns.iter().position(|c| c == name).unwrap_or_else(|| panic!("column {name} was not declared"));
        self.values[j]
    }
}

pub type Evaluator = Arc<dyn Fn(&Row<'_>) -> f64 + Send + Sync>;

/// The four coefficient functions and the argument sets of the two bridges.
#[derive(Clone)]
pub struct MomentFunctional {
    pub s1: Evaluator,
    pub s2: Evaluator,
    pub s3: Evaluator,
    pub s4: Evaluator,
    pub v_h: Vec<String>,
    pub v_q: Vec<String>,
    /// Every column the evaluators read.
    pub columns: Vec<String>,
}

impl fmt::Debug for MomentFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MomentFunctional").field("v_h", &self.v_h).field("v_q", &self.v_q).field("columns", &self.columns).finish()
    }
}

/// Values of `s₁..s₄` per row.
#[derive(Clone, Debug)]
pub struct Coefficients {
    pub s1: DVector<f64>,
    pub s2: DVector<f64>,
    pub s3: DVector<f64>,
    pub s4: DVector<f64>,
}

pub const H_G0: &str = "g0_h";
pub const H_G1: &str = "g1_h";
pub const Q_G0: &str = "g0_q";
pub const Q_G1: &str = "g1_q";

impl MomentFunctional {
    pub fn coefficients(&self, data: &Dataset<f64>) -> Result<Coefficients> {
        for c in self.columns.iter().chain(&self.v_h).chain(&self.v_q) {
            data.index_of(c)?;
        }
        let n = data.n();
        let mut out = Coefficients {
            s1: DVector::zeros(n),
            s2: DVector::zeros(n),
            s3: DVector::zeros(n),
            s4: DVector::zeros(n),
        };
        let mut buf = vec![0.0; data.columns().len()];
        for i in 0..n {
            for (j, v) in buf.iter_mut().enumerate() {
                *v = data.data()[(i, j)];
            }
            let row = Row { columns: data.columns(), values: &buf };
            out.s1[i] = (self.s1)(&row);
            out.s2[i] = (self.s2)(&row);
            out.s3[i] = (self.s3)(&row);
            out.s4[i] = (self.s4)(&row);
        }
        Ok(out)
    }

    /// `data` with `g₁ = s₁`, `g₀ = −s₂` and roles for `h` on `V_h` given `V_q`.
    pub fn h_equation(&self, data: &Dataset<f64>) -> Result<Dataset<f64>> {
        let s = self.coefficients(data)?;
        let v_h: Vec<&str> = self.v_h.iter().map(String::as_str).collect();
        let v_q: Vec<&str> = self.v_q.iter().map(String::as_str).collect();
        data.clone()
            .push_column(H_G0, -s.s2)?
            .push_column(H_G1, s.s1)?
            .with_roles(RoleMap::new(&v_h, &v_q, H_G0, H_G1))
    }

    /// `data` with `g₁ = s₁`, `g₀ = −s₃` and roles for `q` on `V_q` given `V_h`.
    pub fn q_equation(&self, data: &Dataset<f64>) -> Result<Dataset<f64>> {
        let s = self.coefficients(data)?;
        let v_h: Vec<&str> = self.v_h.iter().map(String::as_str).collect();
        let v_q: Vec<&str> = self.v_q.iter().map(String::as_str).collect();
        data.clone()
            .push_column(Q_G0, -s.s3)?
            .push_column(Q_G1, s.s1)?
            .with_roles(RoleMap::new(&v_h, &v_q, Q_G0, Q_G1).swapped(Q_G0, Q_G1))
    }

    /// `s₁ q h + s₂ q + s₃ h + s₄` per row.
    pub fn integrand(&self, data: &Dataset<f64>, h: &FunctionHandle<f64>, q: &FunctionHandle<f64>) -> Result<DVector<f64>> {
        let s = self.coefficients(data)?;
        let hv = h.evaluate(&data.select(&self.v_h)?)?;
        let qv = q.evaluate(&data.select(&self.v_q)?)?;
        Ok(DVector::from_fn(data.n(), |i, _| s.s1[i] * qv[i] * hv[i] + s.s2[i] * qv[i] + s.s3[i] * hv[i] + s.s4[i]))
    }
}

/// `s₁ = −I(A = a)`, `s₂ = I(A = a) Y`, `s₃ = 1`, `s₄ = 0`, `V_h = W`, `V_q = (Z, A)`.
pub fn proximal_functional(a: u8) -> Result<MomentFunctional> {
    if a > 1 {
        return Err(Error::InvalidParameter(format!("treatment level {a} must be 0 or 1")));
    }
    let level = f64::from(a);
    let treated = move |row: &Row<'_>| if row.get("A") == level { 1.0 } else { 0.0 };
    Ok(MomentFunctional {
        s1: Arc::new(move |row| -treated(row)),
        s2: Arc::new(move |row| treated(row) * row.get("Y")),
        s3: Arc::new(|_| 1.0),
        s4: Arc::new(|_| 0.0),
        v_h: vec!["W".into()],
        v_q: vec!["Z".into(), "A".into()],
        columns: vec!["A".into(), "Y".into()],
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionalEstimate {
    pub psi_hat: f64,
    pub standard_error: f64,
    pub ci95: [f64; 2],
    pub n: usize,
}

impl FunctionalEstimate {
    /// Unweighted rows use the sample variance with `n − 1`; weighted atoms
    /// use the variance under their law.
    fn from_values(values: &DVector<f64>, masses: Option<&DVector<f64>>, n: usize) -> Self {
        let (psi_hat, var) = match masses {
            Some(m) => {
                let psi = values.dot(m);
                (psi, values.iter().zip(m.iter()).map(|(v, w)| w * (v - psi).powi(2)).sum::<f64>())
            }
            None => {
                let psi = values.mean();
                (psi, if n > 1 { values.iter().map(|v| (v - psi).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 })
            }
        };
        let se = (var.max(0.0) / n as f64).sqrt();
        Self { psi_hat, standard_error: se, ci95: [psi_hat - 1.96 * se, psi_hat + 1.96 * se], n }
    }

    pub fn covers(&self, truth: f64) -> bool {
        self.ci95[0] <= truth && truth <= self.ci95[1]
    }
}

/// `E_n[s₁q̂ĥ + s₂q̂ + s₃ĥ + s₄]` with a plug-in standard error.
pub fn if_estimate(data: &Dataset<f64>, h_hat: &FunctionHandle<f64>, q_hat: &FunctionHandle<f64>, functional: &MomentFunctional) -> Result<FunctionalEstimate> {
    let values = functional.integrand(data, h_hat, q_hat)?;
    Ok(FunctionalEstimate::from_values(&values, data.weights(), data.n()))
}

/// `E[ψ̂] − ψ₀` under the exact law given as weighted atoms, computed directly
/// and as `E[s₁(q̂ − q₀)(ĥ − h₀)]`; the two must agree.
pub fn mixed_bias(
    atoms: &Dataset<f64>,
    functional: &MomentFunctional,
    h_hat: &FunctionHandle<f64>,
    q_hat: &FunctionHandle<f64>,
    h0: &FunctionHandle<f64>,
    q0: &FunctionHandle<f64>,
    psi0: f64,
) -> Result<f64> {
    let mass = atoms.masses();
    let direct = functional.integrand(atoms, h_hat, q_hat)?.dot(&mass) - psi0;
    let s = functional.coefficients(atoms)?;
    let dh = h_hat.sub(h0)?.evaluate(&atoms.select(&functional.v_h)?)?;
    let dq = q_hat.sub(q0)?.evaluate(&atoms.select(&functional.v_q)?)?;
    let product: f64 = (0..atoms.n()).map(|i| mass[i] * s.s1[i] * dq[i] * dh[i]).sum();
    if (direct - product).abs() > MIXED_BIAS_TOL {
        return Err(Error::Consistency(format!("mixed-bias sides differ: {direct:e} vs {product:e}")));
    }
    Ok(product)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionalConfig {
    pub basis_h: BasisSpec,
    pub basis_q: BasisSpec,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default)]
    pub ridge: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

fn default_folds() -> usize {
    2
}

fn default_iterations() -> usize {
    2
}

impl FunctionalConfig {
    pub fn new(basis_h: BasisSpec, basis_q: BasisSpec) -> Self {
        Self { basis_h, basis_q, folds: default_folds(), grid: GridSpec::default(), iterations: default_iterations(), ridge: None, seed: 0 }
    }

    fn pipeline(&self, h_side: bool, seed: u64) -> PipelineConfig {
        let (a, b) = if h_side { (&self.basis_h, &self.basis_q) } else { (&self.basis_q, &self.basis_h) };
        let mut p = PipelineConfig::new(a.clone(), b.clone());
        p.grid = self.grid.clone();
        p.iterations = self.iterations;
        p.ridge = self.ridge;
        p.seed = seed;
        p
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub psi_hat: f64,
    pub n: usize,
    pub lambda_h: f64,
    pub lambda_q: f64,
    pub h_hat: FunctionRecord,
    pub q_hat: FunctionRecord,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionalReport {
    pub schema_version: u32,
    pub psi_hat: f64,
    pub se: f64,
    pub ci95: [f64; 2],
    pub n: usize,
    pub per_fold: Vec<FoldReport>,
    pub lambda_h: Vec<f64>,
    pub lambda_q: Vec<f64>,
    pub seed: u64,
}

/// Cross-fitted two-layer estimator: on each fold's complement, debiased CV
/// fits of `ĥ` and `q̂`; the integrand is averaged over the held-out fold.
/// `ψ̂` is the mean of all held-out integrand values and the variance is
/// pooled around it.
pub fn full_pipeline_functional(data: &Dataset<f64>, functional: &MomentFunctional, config: &FunctionalConfig) -> Result<(FunctionalEstimate, FunctionalReport)> {
    if config.folds < 2 {
        return Err(Error::InvalidParameter("cross-fitting needs at least two folds".into()));
    }
    let plan = split(data.n(), &vec![1.0 / config.folds as f64; config.folds], config.seed)?;
    let n = data.n();
    let mut values = DVector::zeros(n);
    let mut per_fold = Vec::with_capacity(config.folds);
    for (k, held_out) in plan.folds.iter().enumerate() {
        let train_idx: Vec<usize> = plan.folds.iter().enumerate().filter(|(j, _)| *j != k).flat_map(|(_, f)| f.iter().copied()).collect();
        let train = data.subset(&train_idx)?;
        let eval = data.subset(held_out)?;
        let h = fit_cv_pipeline(&functional.h_equation(&train)?, &config.pipeline(true, derive_seed(config.seed, &[k as u64, 0])), None)?;
        let q = fit_cv_pipeline(&functional.q_equation(&train)?, &config.pipeline(false, derive_seed(config.seed, &[k as u64, 1])), None)?;
        let fold_values = functional.integrand(&eval, &h.selected, &q.selected)?;
        for (i, &row) in held_out.iter().enumerate() {
            values[row] = fold_values[i];
        }
        per_fold.push(FoldReport {
            psi_hat: fold_values.mean(),
            n: held_out.len(),
            lambda_h: h.report.selected_lambda,
            lambda_q: q.report.selected_lambda,
            h_hat: h.selected.to_record(),
            q_hat: q.selected.to_record(),
        });
    }
    let est = FunctionalEstimate::from_values(&values, None, n);
    let report = FunctionalReport {
        schema_version: SCHEMA_VERSION,
        psi_hat: est.psi_hat,
        se: est.standard_error,
        ci95: est.ci95,
        n,
        lambda_h: per_fold.iter().map(|f| f.lambda_h).collect(),
        lambda_q: per_fold.iter().map(|f| f.lambda_q).collect(),
        per_fold,
        seed: config.seed,
    };
    Ok((est, report))
}

/// Indicator bases for `W` and `(Z, A)` with category weights taken from the
/// sample frequencies.
pub fn proximal_bases(data: &Dataset<f64>) -> Result<(BasisSpec, BasisSpec)> {
    let freq = |name: &str| -> Result<Vec<f64>> {
        let col = data.column(name)?;
        let mut counts: Vec<f64> = Vec::new();
        for v in col.iter() {
            if !(*v >= 0.0 && v.fract() == 0.0) {
                return Err(Error::InvalidParameter(format!("column {name} must hold category codes, found {v}")));
            }
            let c = *v as usize;
            if c >= counts.len() {
                counts.resize(c + 1, 0.0);
            }
            counts[c] += 1.0;
        }
        if counts.contains(&0.0) {
            return Err(Error::Identification(format!("column {name} has an unobserved category")));
        }
        let n = col.len() as f64;
        Ok(counts.into_iter().map(|c| c / n).collect())
    };
    let mut pa = freq("A")?;
    if pa.len() == 1 {
        return Err(Error::Identification("A takes a single value".into()));
    }
    pa.truncate(2);
    Ok((
        BasisSpec::indicator_weighted(freq("W")?)?,
        BasisSpec::tensor(BasisSpec::indicator_weighted(freq("Z")?)?, BasisSpec::indicator_weighted(pa)?),
    ))
}
