//! Exact bias of the debiased and plug-in risks under controlled nuisance error.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::slope::{loglog_fit, LineFit};
use crate::basis::BasisSpec;
use crate::dgp::{Dataset, DiscreteProximalDgp};
use crate::error::{Error, Result};
use crate::estimators::{debiased_risk, projected_risk_plugin};
use crate::function::FunctionHandle;
use crate::functionals::proximal_functional;
use crate::nuisance::{fit_operator_design, fit_r_design, Design};
use crate::operator::SieveOperator;
use crate::rng::substream;

/// A design whose rows are the atoms of the law, with the true `T` and `r₀`.
/// Norms and inner products are those of `L²` under the law, through the
/// population Gram matrices.
#[derive(Clone, Debug)]
pub struct PopulationProblem {
    pub design: Design<f64>,
    pub t: SieveOperator<f64>,
    pub r0: FunctionHandle<f64>,
    pub gram_h: DMatrix<f64>,
    pub gram_q: DMatrix<f64>,
}

impl PopulationProblem {
    pub fn from_atoms(atoms: &Dataset<f64>, basis_h: &BasisSpec, basis_q: &BasisSpec) -> Result<Self> {
        let design = Design::from_dataset(atoms, basis_h, basis_q)?;
        let t = fit_operator_design(&design, 0.0)?;
        let r0 = fit_r_design(&design, 0.0)?;
        let (gram_h, gram_q) = (design.gram_h(), design.gram_q());
        Ok(Self { design, t, r0, gram_h, gram_q })
    }

    /// `⟨a, b⟩` for output coefficients.
    pub fn inner_q(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        a.dot(&(&self.gram_q * b))
    }

    /// `‖T − T̂‖` as an operator between the `L²` spaces.
    pub fn op_distance(&self, t_hat: &SieveOperator<f64>) -> Result<f64> {
        self.t.norm_diff(t_hat, &self.gram_h, &self.gram_q)
    }

    /// The outcome-bridge equation of the discrete proximal design.
    pub fn proximal(dgp: &DiscreteProximalDgp) -> Result<Self> {
        let f = proximal_functional(dgp.a)?;
        Self::from_atoms(&f.h_equation(&dgp.atoms()?)?, &dgp.basis_w(), &dgp.basis_za())
    }

    /// `ψ(h) = E[(Th − g₀)²]`.
    pub fn risk(&self, h: &FunctionHandle<f64>) -> Result<f64> {
        projected_risk_plugin(h, &self.design, &self.t)
    }

    /// `Th − r₀` in the output coefficients.
    pub fn residual(&self, h: &FunctionHandle<f64>) -> Result<DVector<f64>> {
        Ok(self.t.matrix() * h.coeffs() - self.r0.coeffs())
    }
}

/// Biases at one nuisance pair, measured and predicted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasPoint {
    /// `‖T − T̂‖`.
    pub op_error: f64,
    /// `‖r̂ − r₀‖`.
    pub r_error: f64,
    /// `ψ(h) − E[ψ̂(h)]`.
    pub debiased: f64,
    /// `‖(T − T̂)h‖² + 2⟨(T − T̂)h, r̂ − r₀⟩`.
    pub debiased_predicted: f64,
    /// `ψ(h) − E[(T̂h − g₀)²]`.
    pub plugin: f64,
    /// `−‖(T − T̂)h‖² + 2⟨(T − T̂)h, Th − r₀⟩`.
    pub plugin_predicted: f64,
}

pub fn bias_at(problem: &PopulationProblem, h: &FunctionHandle<f64>, t_hat: &SieveOperator<f64>, r_hat: &FunctionHandle<f64>) -> Result<BiasPoint> {
    let psi = problem.risk(h)?;
    let a = (problem.t.matrix() - t_hat.matrix()) * h.coeffs();
    let dr = r_hat.coeffs() - problem.r0.coeffs();
    let resid = problem.residual(h)?;
    let aa = problem.inner_q(&a, &a);
    Ok(BiasPoint {
        op_error: problem.op_distance(t_hat)?,
        r_error: problem.inner_q(&dr, &dr).sqrt(),
        debiased: psi - debiased_risk(h, &problem.design, t_hat, r_hat)?,
        debiased_predicted: aa + 2.0 * problem.inner_q(&a, &dr),
        plugin: psi - projected_risk_plugin(h, &problem.design, t_hat)?,
        plugin_predicted: -aa + 2.0 * problem.inner_q(&a, &resid),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RMode {
    Exact,
    /// `r̂ = r₀ + size·w` for a seeded unit direction `w`.
    Misspecified { size: f64, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasProbeReport {
    pub epsilons: Vec<f64>,
    pub points: Vec<BiasPoint>,
    pub debiased_fit: Option<LineFit>,
    pub plugin_fit: Option<LineFit>,
    /// Points left out of each fit because the bias was not positive.
    pub debiased_excluded: usize,
    pub plugin_excluded: usize,
    /// Largest `|measured − predicted|` over both risks.
    pub max_identity_gap: f64,
}

/// Rank-one error `T − T̂ = ε (Th − r₀) ⊗ h`, normalised so `‖T − T̂‖ = ε`
/// and `(T − T̂)h` points along the plug-in's first-order term.
pub fn aligned_operator(problem: &PopulationProblem, h: &FunctionHandle<f64>, epsilon: f64) -> Result<SieveOperator<f64>> {
    let c = h.coeffs();
    let resid = problem.residual(h)?;
    let (hn, rn) = (c.dot(&(&problem.gram_h * c)).sqrt(), problem.inner_q(&resid, &resid).sqrt());
    if hn == 0.0 || rn == 0.0 {
        return Err(Error::InvalidParameter("aligned corruption needs h ≠ 0 and Th ≠ r₀".into()));
    }
    let u = &resid / rn;
    let v = &problem.gram_h * c / hn;
    problem.t.with_matrix(problem.t.matrix() - u * v.transpose() * epsilon)
}

fn misspecified_r(problem: &PopulationProblem, mode: &RMode) -> Result<FunctionHandle<f64>> {
    match mode {
        RMode::Exact => Ok(problem.r0.clone()),
        RMode::Misspecified { size, seed } => {
            let mut rng = substream(*seed, 0);
            let k = problem.r0.dimension();
            let w: DVector<f64> = DVector::from_fn(k, |_, _| StandardNormal.sample(&mut rng));
            let w: DVector<f64> = &w / problem.inner_q(&w, &w).sqrt();
            FunctionHandle::new(problem.r0.basis().clone(), problem.r0.coeffs() + w * *size)
        }
    }
}

fn positive_fit(eps: &[f64], values: impl Iterator<Item = f64>) -> (Option<LineFit>, usize) {
    let (mut x, mut y, mut dropped) = (Vec::new(), Vec::new(), 0);
    for (e, v) in eps.iter().zip(values) {
        if v > 0.0 {
            x.push(*e);
            y.push(v);
        } else {
            dropped += 1;
        }
    }
    (loglog_fit(&x, &y).ok(), dropped)
}

/// Biases of both risks at `h` over an `ε` schedule of aligned operator error,
/// with log-log slopes against `ε`.
pub fn bias_probe(problem: &PopulationProblem, h: &FunctionHandle<f64>, epsilons: &[f64], r_mode: &RMode) -> Result<BiasProbeReport> {
    if epsilons.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
        return Err(Error::InvalidParameter("ε values must be positive".into()));
    }
    let r_hat = misspecified_r(problem, r_mode)?;
    let points: Vec<BiasPoint> = epsilons
        .iter()
        .map(|&e| bias_at(problem, h, &aligned_operator(problem, h, e)?, &r_hat))
        .collect::<Result<_>>()?;
    let (debiased_fit, debiased_excluded) = positive_fit(epsilons, points.iter().map(|p| p.debiased));
    let (plugin_fit, plugin_excluded) = positive_fit(epsilons, points.iter().map(|p| p.plugin));
    let max_identity_gap = points
        .iter()
        .map(|p| (p.debiased - p.debiased_predicted).abs().max((p.plugin - p.plugin_predicted).abs()))
        .fold(0.0, f64::max);
    Ok(BiasProbeReport {
        epsilons: epsilons.to_vec(),
        points,
        debiased_fit,
        plugin_fit,
        debiased_excluded,
        plugin_excluded,
        max_identity_gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (PopulationProblem, FunctionHandle<f64>) {
        let d = DiscreteProximalDgp::default();
        let p = PopulationProblem::proximal(&d).unwrap();
        let h = d.true_bridges().unwrap().h0.scale(0.1);
        (p, h)
    }

    #[test]
    fn true_nuisances_have_no_bias() {
        let (p, h) = setup();
        let b = bias_at(&p, &h, &p.t, &p.r0).unwrap();
        assert!(b.debiased.abs() < 1e-12 && b.plugin.abs() < 1e-12);
    }

    #[test]
    fn bridge_has_zero_residual() {
        let d = DiscreteProximalDgp::default();
        let p = PopulationProblem::proximal(&d).unwrap();
        assert!(p.residual(&d.true_bridges().unwrap().h0).unwrap().norm() < 1e-12);
    }

    #[test]
    fn slopes_two_and_one() {
        let (p, h) = setup();
        let eps = [0.2, 0.1, 0.05, 0.025];
        let rep = bias_probe(&p, &h, &eps, &RMode::Exact).unwrap();
        assert!(rep.max_identity_gap < 1e-9);
        assert!((rep.debiased_fit.unwrap().slope - 2.0).abs() < 0.1);
        assert!((rep.plugin_fit.unwrap().slope - 1.0).abs() < 0.1);
        for (pt, e) in rep.points.iter().zip(eps) {
            assert!((pt.op_error - e).abs() < 1e-12);
        }
    }

    #[test]
    fn misspecified_r_alone_is_harmless() {
        let (p, h) = setup();
        for seed in 0..5 {
            let r_hat = misspecified_r(&p, &RMode::Misspecified { size: 0.5, seed }).unwrap();
            assert!(bias_at(&p, &h, &p.t, &r_hat).unwrap().debiased.abs() <= 1e-10);
        }
        let rep = bias_probe(&p, &h, &[0.2, 0.1], &RMode::Misspecified { size: 0.5, seed: 3 }).unwrap();
        assert!(rep.max_identity_gap < 1e-9);
    }
}
