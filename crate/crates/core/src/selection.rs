//! Sample splitting, the λ grid and cross-validated selection by debiased risk.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSpec;
use crate::dgp::{Dataset, Truth, SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::estimators::{debiased_risk, fit_quadratic, FitConfig, FitResult, Method, Quadratic};
use crate::function::{FunctionHandle, FunctionRecord};
use crate::nuisance::{fit_nuisances, Design, NuisanceFit};
use crate::operator::SieveOperator;
use crate::rng::substream;

/// Disjoint row index sets covering `0..n`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: Vec<Vec<usize>>,
    pub seed: u64,
}

impl FoldPlan {
    pub fn sizes(&self) -> Vec<usize> {
        self.folds.iter().map(Vec::len).collect()
    }

    /// Rows used to fit the candidates.
    pub fn candidate_training(&self) -> &[usize] {
        &self.folds[0]
    }

    pub fn nuisance_training(&self) -> &[usize] {
        &self.folds[1]
    }

    pub fn validation(&self) -> &[usize] {
        &self.folds[2]
    }
}

/// Seeded shuffle cut into consecutive blocks whose sizes follow `fractions`
/// by largest remainder.
pub fn split(n: usize, fractions: &[f64], seed: u64) -> Result<FoldPlan> {
    if fractions.is_empty() || fractions.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
        return Err(Error::InvalidParameter("fold fractions must be positive".into()));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!("fold fractions sum to {total}")));
    }
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let short = n - sizes.iter().sum::<usize>();
    for &k in order.iter().take(short) {
        sizes[k] += 1;
    }
    if sizes.contains(&0) {
        return Err(Error::EmptyFold("a fold received no rows"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut substream(seed, 0));
    let mut folds = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for s in sizes {
        let mut f = idx[start..start + s].to_vec();
        f.sort_unstable();
        folds.push(f);
        start += s;
    }
    Ok(FoldPlan { folds, seed })
}

/// `λᵢ = b_n + (i/M) B_n` for `i = 1..M`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaGrid {
    pub b_n: f64,
    pub big_b_n: f64,
    pub count: usize,
    pub values: Vec<f64>,
}

impl LambdaGrid {
    pub fn explicit(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyCandidates);
        }
        if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidParameter("λ must be positive".into()));
        }
        if values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter("λ grid must be strictly increasing".into()));
        }
        Ok(Self { b_n: values[0], big_b_n: values[values.len() - 1] - values[0], count: values.len(), values })
    }
}

/// `b_n = proxy^{1−ε}`, `B_n = proxy^{1/3}`, `M = count` or `n`.
pub fn make_grid(n: usize, delta_n_proxy: f64, epsilon: f64, count: Option<usize>) -> Result<LambdaGrid> {
    if !(delta_n_proxy > 0.0 && delta_n_proxy < 1.0) {
        return Err(Error::InvalidParameter(format!("δ_n proxy {delta_n_proxy} must lie in (0, 1)")));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidParameter("ε must lie in (0, 1)".into()));
    }
    let m = count.unwrap_or(n);
    if m == 0 {
        return Err(Error::EmptyCandidates);
    }
    let b = delta_n_proxy.powf(1.0 - epsilon);
    let big = delta_n_proxy.cbrt();
    let values = (1..=m).map(|i| b + (i as f64 / m as f64) * big).collect();
    Ok(LambdaGrid { b_n: b, big_b_n: big, count: m, values })
}

/// Index of the smallest debiased validation risk (ties to the smaller index)
/// and the full risk vector.
pub fn cv_select(
    candidates: &[FunctionHandle<f64>],
    validation: &Design<f64>,
    t_hat: &SieveOperator<f64>,
    r_hat: &FunctionHandle<f64>,
) -> Result<(usize, Vec<f64>)> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let risks: Vec<f64> = candidates.iter().map(|h| debiased_risk(h, validation, t_hat, r_hat)).collect::<Result<_>>()?;
    let mut best = 0;
    for (i, r) in risks.iter().enumerate() {
        if *r < risks[best] {
            best = i;
        }
    }
    Ok((best, risks))
}

/// How the λ grid of a pipeline is built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Explicit λ values; overrides the other fields.
    #[serde(default)]
    pub lambdas: Option<Vec<f64>>,
    /// Critical-radius proxy; `√(J/n)` on the training fold when absent.
    #[serde(default)]
    pub delta_n_proxy: Option<f64>,
    #[serde(default = "default_grid_epsilon")]
    pub epsilon: f64,
    /// Grid size; `min(n, 64)` when absent.
    #[serde(default)]
    pub count: Option<usize>,
}

fn default_grid_epsilon() -> f64 {
    0.01
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { lambdas: None, delta_n_proxy: None, epsilon: default_grid_epsilon(), count: None }
    }
}

pub const DEFAULT_GRID_CAP: usize = 64;

impl GridSpec {
    pub fn build(&self, n: usize, dimension: usize) -> Result<LambdaGrid> {
        if let Some(v) = &self.lambdas {
            return LambdaGrid::explicit(v.clone());
        }
        let proxy = self.delta_n_proxy.unwrap_or_else(|| (dimension as f64 / n as f64).sqrt().min(0.99));
        make_grid(n, proxy, self.epsilon, Some(self.count.unwrap_or(n.min(DEFAULT_GRID_CAP))))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub basis_h: BasisSpec,
    pub basis_q: BasisSpec,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default = "default_fractions")]
    pub fractions: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_method")]
    pub method: Method,
    /// Nuisance ridge; the default stabiliser when absent.
    #[serde(default)]
    pub ridge: Option<f64>,
    #[serde(default)]
    pub hessian_floor: f64,
}

fn default_fractions() -> Vec<f64> {
    vec![1.0 / 3.0; 3]
}

fn default_iterations() -> usize {
    2
}

fn default_method() -> Method {
    Method::Debiased
}

impl PipelineConfig {
    pub fn new(basis_h: BasisSpec, basis_q: BasisSpec) -> Self {
        Self {
            basis_h,
            basis_q,
            grid: GridSpec::default(),
            fractions: default_fractions(),
            seed: 0,
            iterations: default_iterations(),
            method: default_method(),
            ridge: None,
            hessian_floor: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.basis_h.validate()?;
        self.basis_q.validate()?;
        if self.fractions.len() != 3 {
            return Err(Error::InvalidParameter("fractions needs three entries".into()));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidParameter("iterations must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Oracle errors of a candidate against the true solution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleErrors {
    pub source: Vec<Option<f64>>,
    pub projected: Vec<Option<f64>>,
    /// Index of the candidate with the smallest projected error.
    pub best_index: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub schema_version: u32,
    pub grid: Vec<f64>,
    /// Validation risk per λ; `None` where the fit failed.
    pub risks: Vec<Option<f64>>,
    /// Failure message per λ.
    pub failures: Vec<Option<String>>,
    pub selected_index: usize,
    pub selected_lambda: f64,
    pub selected: FunctionRecord,
    pub fold_sizes: Vec<usize>,
    pub seed: u64,
    pub method: Method,
    pub iterations: usize,
    pub nuisance_condition_number: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub oracle_errors: Option<OracleErrors>,
}

/// Everything produced by [`fit_cv_pipeline`].
#[derive(Clone, Debug)]
pub struct PipelineOutcome {
    pub selected: FunctionHandle<f64>,
    pub fit: FitResult<f64>,
    pub candidates: Vec<Option<FitResult<f64>>>,
    pub nuisance: NuisanceFit<f64>,
    pub report: PipelineReport,
}

/// Split into candidate / nuisance / validation folds, fit one candidate per
/// grid λ, and keep the candidate with the smallest debiased validation risk.
///
/// Validation risks use the nuisances of the nuisance fold, so neither the
/// candidates nor the validation data are reused to build `T̂`, `r̂`. Candidates
/// whose objective is not strictly convex are skipped and reported.
pub fn fit_cv_pipeline(data: &Dataset<f64>, config: &PipelineConfig, truth: Option<&dyn Truth>) -> Result<PipelineOutcome> {
    config.validate()?;
    let plan = split(data.n(), &config.fractions, config.seed)?;
    let train = Design::from_dataset(&data.subset(plan.candidate_training())?, &config.basis_h, &config.basis_q)?;
    let aux = Design::from_dataset(&data.subset(plan.nuisance_training())?, &config.basis_h, &config.basis_q)?;
    let valid = Design::from_dataset(&data.subset(plan.validation())?, &config.basis_h, &config.basis_q)?;
    let nuisance = fit_nuisances(&aux, config.ridge)?;
    let grid = config.grid.build(train.n(), config.basis_h.dimension())?;
    let q = Quadratic::build(&train, &nuisance, config.method)?;

    let fits: Vec<Result<FitResult<f64>>> = grid
        .values
        .par_iter()
        .map(|&lambda| {
            let mut fc = FitConfig::new(lambda, config.method).with_iterations(config.iterations);
            fc.hessian_floor = config.hessian_floor;
            fit_quadratic(&q, &train, &fc)
        })
        .collect();

    let mut risks = Vec::with_capacity(fits.len());
    let mut failures = Vec::with_capacity(fits.len());
    let mut candidates = Vec::with_capacity(fits.len());
    let mut first_failure = None;
    for f in fits {
        match f {
            Ok(res) => {
                risks.push(Some(debiased_risk(&res.h_hat, &valid, &nuisance.t_hat, &nuisance.r_hat)?));
                failures.push(None);
                candidates.push(Some(res));
            }
            Err(e) if e.is_numerical() => {
                risks.push(None);
                failures.push(Some(e.to_string()));
                candidates.push(None);
                first_failure.get_or_insert(e);
            }
            Err(e) => return Err(e),
        }
    }
    let mut selected_index = None;
    for (i, r) in risks.iter().enumerate() {
        if let Some(r) = r {
            if selected_index.map_or(true, |b: usize| *r < risks[b].expect("selected has a risk")) {
                selected_index = Some(i);
            }
        }
    }
    let Some(selected_index) = selected_index else {
        return Err(first_failure.expect("an empty grid is rejected earlier"));
    };
    let fit = candidates[selected_index].clone().expect("selected candidate exists");

    let oracle_errors = match truth {
        Some(t) => {
            let mut source = Vec::new();
            let mut projected = Vec::new();
            for c in &candidates {
                match c {
                    Some(res) => {
                        source.push(Some(t.source_error(&res.h_hat)?));
                        projected.push(Some(t.projected_error(&res.h_hat)?));
                    }
                    None => {
                        source.push(None);
                        projected.push(None);
                    }
                }
            }
            let best_index = projected
                .iter()
                .enumerate()
                .filter_map(|(i, p)| p.map(|p| (i, p)))
                .fold((selected_index, f64::INFINITY), |acc, (i, p)| if p < acc.1 { (i, p) } else { acc })
                .0;
            Some(OracleErrors { source, projected, best_index })
        }
        None => None,
    };

    let report = PipelineReport {
        schema_version: SCHEMA_VERSION,
        grid: grid.values.clone(),
        risks,
        failures,
        selected_index,
        selected_lambda: grid.values[selected_index],
        selected: fit.h_hat.to_record(),
        fold_sizes: plan.sizes(),
        seed: config.seed,
        method: config.method,
        iterations: config.iterations,
        nuisance_condition_number: nuisance.condition_number,
        oracle_errors,
    };
    Ok(PipelineOutcome {
        selected: fit.h_hat.clone(),
        fit,
        candidates,
        nuisance,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::SeriesNpivDgp;
    use crate::nuisance::Design;

    #[test]
    fn split_sizes_and_determinism() {
        let p = split(9, &[1.0 / 3.0; 3], 4).unwrap();
        assert_eq!(p.sizes(), vec![3, 3, 3]);
        assert_eq!(p, split(9, &[1.0 / 3.0; 3], 4).unwrap());
        let mut all: Vec<usize> = p.folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..9).collect::<Vec<_>>());
        assert_eq!(split(10, &[0.5, 0.3, 0.2], 1).unwrap().sizes(), vec![5, 3, 2]);
        assert_eq!(split(10, &[1.0 / 3.0; 3], 1).unwrap().sizes().iter().sum::<usize>(), 10);
        assert!(split(2, &[1.0 / 3.0; 3], 1).is_err());
        assert!(split(9, &[0.5, 0.6], 1).is_err());
    }

    #[test]
    fn grid_formula() {
        let g = make_grid(100, 0.01, 0.01, Some(4)).unwrap();
        let b = 0.01f64.powf(0.99);
        let big = 0.01f64.cbrt();
        assert!((g.big_b_n - 0.215_443_469).abs() < 1e-8);
        for (i, v) in g.values.iter().enumerate() {
            assert!((v - (b + (i + 1) as f64 / 4.0 * big)).abs() < 1e-15);
        }
        assert!((g.values[3] - (b + big)).abs() < 1e-15);
        assert!(g.values.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(make_grid(7, 0.2, 0.5, None).unwrap().count, 7);
        assert!(make_grid(10, 1.0, 0.01, None).is_err());
        let tiny = make_grid(10, 0.04, 1e-9, Some(1)).unwrap();
        assert!((tiny.b_n - 0.04).abs() < 1e-9);
    }

    fn dgp() -> SeriesNpivDgp {
        SeriesNpivDgp::with_source(vec![0.3, 0.1], 1.0, &[0.5, 1.0, 0.5], 0.5, 0.5).unwrap()
    }

    #[test]
    fn cv_select_basics() {
        let d = dgp();
        let b = d.basis();
        let valid = Design::from_dataset(&d.sample(500, 1).unwrap(), &b, &b).unwrap();
        let (t, r) = (d.true_sieve_operator(), d.true_r());
        let h0 = d.true_solution();
        assert_eq!(cv_select(std::slice::from_ref(&h0), &valid, &t, &r).unwrap().0, 0);
        let far = h0.add(&FunctionHandle::from_slice(b.clone(), &[1.0, 1.0, 1.0]).unwrap()).unwrap();
        let cands = vec![far.clone(), h0.clone(), h0.clone()];
        let (idx, risks) = cv_select(&cands, &valid, &t, &r).unwrap();
        assert_eq!(idx, 1, "ties go to the smaller index");
        for (c, risk) in cands.iter().zip(&risks) {
            assert_eq!(*risk, debiased_risk(c, &valid, &t, &r).unwrap());
        }
        assert_eq!(risks[idx], risks.iter().cloned().fold(f64::INFINITY, f64::min));
        assert!(matches!(cv_select(&[], &valid, &t, &r), Err(Error::EmptyCandidates)));
    }

    #[test]
    fn single_lambda_pipeline_equals_single_fit() {
        let d = dgp();
        let data = d.sample(900, 2).unwrap();
        let mut cfg = PipelineConfig::new(d.basis(), d.basis());
        cfg.grid.lambdas = Some(vec![0.05]);
        cfg.seed = 3;
        let out = fit_cv_pipeline(&data, &cfg, Some(&d)).unwrap();
        let plan = split(900, &cfg.fractions, 3).unwrap();
        let train = Design::from_dataset(&data.subset(plan.candidate_training()).unwrap(), &d.basis(), &d.basis()).unwrap();
        let aux = Design::from_dataset(&data.subset(plan.nuisance_training()).unwrap(), &d.basis(), &d.basis()).unwrap();
        let nuis = fit_nuisances(&aux, None).unwrap();
        let single = crate::estimators::fit(&train, &nuis, &FitConfig::new(0.05, Method::Debiased)).unwrap();
        assert_eq!(out.selected, single.h_hat);
        assert_eq!(out.report.selected_index, 0);
        let again = fit_cv_pipeline(&data, &cfg, Some(&d)).unwrap();
        assert_eq!(serde_json::to_string(&out.report).unwrap(), serde_json::to_string(&again.report).unwrap());
    }

    #[test]
    fn pipeline_report_shape() {
        let d = dgp();
        let data = d.sample(1500, 5).unwrap();
        let mut cfg = PipelineConfig::new(d.basis(), d.basis());
        cfg.grid.count = Some(8);
        let out = fit_cv_pipeline(&data, &cfg, Some(&d)).unwrap();
        let r = &out.report;
        assert_eq!(r.grid.len(), 8);
        assert_eq!(r.risks.len(), 8);
        assert_eq!(r.fold_sizes, vec![500, 500, 500]);
        let picked = r.risks[r.selected_index].unwrap();
        assert!(r.risks.iter().flatten().all(|v| *v >= picked));
        assert!(r.oracle_errors.is_some());
        let v: serde_json::Value = serde_json::to_value(r).unwrap();
        for key in ["grid", "risks", "selected_index", "selected_lambda", "fold_sizes", "seed", "oracle_errors", "schema_version"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }
}
