//! Monte Carlo rate sweeps on the series design.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::SweepRecord;
use super::slope::{loglog_fit, median, LineFit};
use crate::dgp::{SeriesNpivDgp, Truth};
use crate::error::{Error, Result};
use crate::estimators::{fit, FitConfig, Method};
use crate::nuisance::{corrupt_operator, fit_nuisances, CorruptionMode, Design, NuisanceFit};
use crate::rng::derive_seed;
use crate::selection::{fit_cv_pipeline, split, GridSpec, PipelineConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LambdaRule {
    /// `λ = scale · Δ_n^{1/min{5, β+2}}` with `Δ_n` from the measured nuisance
    /// errors and `δ_n = √(J/n)`.
    Oracle {
        #[serde(default = "one")]
        scale: f64,
    },
    Fixed {
        lambda: f64,
    },
    /// Debiased cross-validation over a grid.
    Cv {
        #[serde(default)]
        grid: GridSpec,
    },
}

fn one() -> f64 {
    1.0
}

/// Extra operator error `ε(n) = scale · n^{−exponent}` added to `T̂`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Corruption {
    pub scale: f64,
    #[serde(default)]
    pub exponent: f64,
    #[serde(default = "spectral")]
    pub mode: CorruptionMode,
}

fn spectral() -> CorruptionMode {
    CorruptionMode::Spectral
}

impl Corruption {
    pub fn epsilon(&self, n: usize) -> f64 {
        self.scale * (n as f64).powf(-self.exponent)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub dgp: SeriesNpivDgp,
    /// Source-condition exponent used by the oracle `λ` and the predicted slopes.
    pub beta: f64,
    pub ns: Vec<usize>,
    pub replications: usize,
    #[serde(default = "both_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "oracle")]
    pub lambda: LambdaRule,
    #[serde(default)]
    pub corruption: Option<Corruption>,
    #[serde(default = "two")]
    pub iterations: usize,
    #[serde(default)]
    pub ridge: Option<f64>,
    /// Share of each sample used for the nuisances outside CV mode.
    #[serde(default = "half")]
    pub nuisance_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    /// Fill `runtime_ms`; off by default so outputs are reproducible.
    #[serde(default)]
    pub record_runtime: bool,
}

fn both_methods() -> Vec<Method> {
    vec![Method::Baseline, Method::Debiased]
}

fn oracle() -> LambdaRule {
    LambdaRule::Oracle { scale: 1.0 }
}

fn two() -> usize {
    2
}

fn half() -> f64 {
    0.5
}

impl SweepConfig {
    pub fn new(dgp: SeriesNpivDgp, beta: f64, ns: Vec<usize>, replications: usize) -> Self {
        Self {
            dgp,
            beta,
            ns,
            replications,
            methods: both_methods(),
            lambda: oracle(),
            corruption: None,
            iterations: 2,
            ridge: None,
            nuisance_fraction: 0.5,
            seed: 0,
            record_runtime: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dgp.validate()?;
        if self.ns.is_empty() || self.ns.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter("ns must be nonempty and strictly increasing".into()));
        }
        if self.replications == 0 {
            return Err(Error::InvalidParameter("replications must be ≥ 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidParameter("methods must be nonempty".into()));
        }
        if !(self.beta > 0.0) {
            return Err(Error::InvalidParameter("β must be positive".into()));
        }
        if !(self.nuisance_fraction > 0.0 && self.nuisance_fraction < 1.0) {
            return Err(Error::InvalidParameter("nuisance_fraction must lie in (0, 1)".into()));
        }
        match &self.lambda {
            LambdaRule::Oracle { scale } if !(*scale > 0.0) => return Err(Error::InvalidParameter("λ scale must be positive".into())),
            LambdaRule::Fixed { lambda } if !(*lambda > 0.0) => return Err(Error::InvalidParameter("λ must be positive".into())),
            LambdaRule::Cv { .. } if self.corruption.is_some() => {
                return Err(Error::InvalidParameter("operator corruption is not available with CV λ".into()))
            }
            _ => {}
        }
        if let Some(c) = &self.corruption {
            if !(c.scale >= 0.0) {
                return Err(Error::InvalidParameter("corruption scale must be nonnegative".into()));
            }
        }
        Ok(())
    }

    fn m5(&self) -> f64 {
        (self.beta + 2.0).min(5.0)
    }

    /// `λ*` for measured nuisance errors.
    pub fn oracle_lambda(&self, scale: f64, delta_n: f64) -> f64 {
        scale * delta_n.powf(1.0 / self.m5())
    }

    /// Slope of the projected error against `n` implied by a `Δ_n` slope.
    pub fn predicted_projected_slope(&self, delta_slope: f64) -> f64 {
        delta_slope * (self.beta + 1.0).min(4.0) / (2.0 * self.m5())
    }

    pub fn predicted_source_slope(&self, delta_slope: f64) -> f64 {
        delta_slope * self.beta.min(3.0) / (2.0 * self.m5())
    }
}

/// `Δ_n = max{‖T − T̂‖⁴, ‖T − T̂‖²‖r̂ − r₀‖², δ_n²}`.
pub fn delta_n(op_err: f64, r_err: f64, critical_radius: f64) -> f64 {
    op_err.powi(4).max(op_err.powi(2) * r_err.powi(2)).max(critical_radius.powi(2))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepFailure {
    pub n: usize,
    pub rep: usize,
    pub method: Method,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub ns: Vec<usize>,
    pub median_source: Vec<f64>,
    pub median_proj: Vec<f64>,
    pub median_delta: Vec<f64>,
    pub source_fit: Option<LineFit>,
    pub proj_fit: Option<LineFit>,
    pub delta_fit: Option<LineFit>,
    pub predicted_proj_slope: Option<f64>,
    pub predicted_source_slope: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub records: Vec<SweepRecord>,
    /// `Δ_n` behind each record.
    pub deltas: Vec<f64>,
    pub failures: Vec<SweepFailure>,
    pub summaries: Vec<MethodSummary>,
}

struct Unit {
    records: Vec<SweepRecord>,
    deltas: Vec<f64>,
    failures: Vec<SweepFailure>,
}

fn nuisance_errors(dgp: &SeriesNpivDgp, nuis: &NuisanceFit<f64>) -> Result<(f64, f64)> {
    let op = dgp.true_sieve_operator().spectral_distance(&nuis.t_hat)?;
    let r = nuis.r_hat.padded_difference(&dgp.true_r())?.norm();
    Ok((op, r))
}

fn run_unit(config: &SweepConfig, n: usize, rep: usize) -> Result<Unit> {
    let seed = derive_seed(config.seed, &[n as u64, rep as u64]);
    let dgp = &config.dgp;
    let basis = dgp.basis();
    let data = dgp.sample(n, seed)?;
    let mut unit = Unit { records: Vec::new(), deltas: Vec::new(), failures: Vec::new() };
    let push = |unit: &mut Unit, method: Method, outcome: Result<(f64, crate::function::FunctionHandle<f64>, f64, f64, f64)>, started: Instant| {
        match outcome {
            Ok((lambda, h, op_err, r_err, delta)) => {
                let record = SweepRecord {
                    n,
                    rep,
                    method,
                    lambda,
                    source_err: dgp.source_error(&h)?,
                    proj_err: dgp.projected_error(&h)?,
                    op_err,
                    r_err,
                    runtime_ms: if config.record_runtime { started.elapsed().as_millis() as u64 } else { 0 },
                };
                unit.records.push(record);
                unit.deltas.push(delta);
            }
            Err(e) if e.is_numerical() => unit.failures.push(SweepFailure { n, rep, method, message: e.to_string() }),
            Err(e) => return Err(e),
        }
        Ok(())
    };
    match &config.lambda {
        LambdaRule::Cv { grid } => {
            for &method in &config.methods {
                let started = Instant::now();
                let mut p = PipelineConfig::new(basis.clone(), basis.clone());
                p.grid = grid.clone();
                p.method = method;
                p.iterations = config.iterations;
                p.ridge = config.ridge;
                p.seed = seed;
                let outcome = fit_cv_pipeline(&data, &p, None).and_then(|out| {
                    let (op, r) = nuisance_errors(dgp, &out.nuisance)?;
                    let radius = (basis.dimension() as f64 / out.report.fold_sizes[0] as f64).sqrt();
                    Ok((out.report.selected_lambda, out.selected, op, r, delta_n(op, r, radius)))
                });
                push(&mut unit, method, outcome, started)?;
            }
        }
        rule => {
            let plan = split(n, &[1.0 - config.nuisance_fraction, config.nuisance_fraction], seed)?;
            let design = Design::from_dataset(&data.subset(&plan.folds[0])?, &basis, &basis)?;
            let aux = Design::from_dataset(&data.subset(&plan.folds[1])?, &basis, &basis)?;
            let mut nuis = fit_nuisances(&aux, config.ridge)?;
            if let Some(c) = &config.corruption {
                nuis.t_hat = corrupt_operator(&nuis.t_hat, c.epsilon(n), c.mode, derive_seed(seed, &[1]))?;
            }
            let (op, r) = nuisance_errors(dgp, &nuis)?;
            let delta = delta_n(op, r, (basis.dimension() as f64 / design.n() as f64).sqrt());
            let lambda = match rule {
                LambdaRule::Oracle { scale } => config.oracle_lambda(*scale, delta),
                LambdaRule::Fixed { lambda } => *lambda,
                LambdaRule::Cv { .. } => unreachable!("handled above"),
            };
            for &method in &config.methods {
                let started = Instant::now();
                let fc = FitConfig::new(lambda, method).with_iterations(config.iterations);
                let outcome = fit(&design, &nuis, &fc).map(|res| (lambda, res.h_hat, op, r, delta));
                push(&mut unit, method, outcome, started)?;
            }
        }
    }
    Ok(unit)
}

/// Runs every `(n, replication)` pair in parallel with seeds derived from
/// `(seed, n, rep)`; numerical failures are recorded and skipped.
pub fn rate_sweep(config: &SweepConfig) -> Result<SweepOutcome> {
    config.validate()?;
    let pairs: Vec<(usize, usize)> = config.ns.iter().flat_map(|&n| (0..config.replications).map(move |r| (n, r))).collect();
    let units: Vec<Unit> = pairs.par_iter().map(|&(n, rep)| run_unit(config, n, rep)).collect::<Result<_>>()?;
    let mut records = Vec::new();
    let mut deltas = Vec::new();
    let mut failures = Vec::new();
    for u in units {
        records.extend(u.records);
        deltas.extend(u.deltas);
        failures.extend(u.failures);
    }
    let summaries = config.methods.iter().map(|&m| summarize(config, m, &records, &deltas)).collect();
    Ok(SweepOutcome { records, deltas, failures, summaries })
}

fn summarize(config: &SweepConfig, method: Method, records: &[SweepRecord], deltas: &[f64]) -> MethodSummary {
    let mut ns = Vec::new();
    let (mut src, mut proj, mut del) = (Vec::new(), Vec::new(), Vec::new());
    for &n in &config.ns {
        let idx: Vec<usize> = (0..records.len()).filter(|&i| records[i].n == n && records[i].method == method).collect();
        let pick = |f: &dyn Fn(usize) -> f64| median(&idx.iter().map(|&i| f(i)).collect::<Vec<_>>());
        if let (Some(s), Some(p), Some(d)) = (pick(&|i| records[i].source_err), pick(&|i| records[i].proj_err), pick(&|i| deltas[i])) {
            ns.push(n);
            src.push(s);
            proj.push(p);
            del.push(d);
        }
    }
    let x: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    let delta_fit = loglog_fit(&x, &del).ok();
    MethodSummary {
        method,
        source_fit: loglog_fit(&x, &src).ok(),
        proj_fit: loglog_fit(&x, &proj).ok(),
        predicted_proj_slope: delta_fit.map(|f| config.predicted_projected_slope(f.slope)),
        predicted_source_slope: delta_fit.map(|f| config.predicted_source_slope(f.slope)),
        delta_fit,
        ns,
        median_source: src,
        median_proj: proj,
        median_delta: del,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> SweepConfig {
        let dgp = SeriesNpivDgp::with_source(vec![0.3, 0.1], 2.0, &[0.5, 1.0, 0.5], 0.5, 0.5).unwrap();
        let mut c = SweepConfig::new(dgp, 2.0, vec![500, 2000], 3);
        c.seed = 5;
        c
    }

    #[test]
    fn deterministic_records() {
        let c = config();
        let a = rate_sweep(&c).unwrap();
        let b = rate_sweep(&c).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.records.len() + a.failures.len(), 2 * 3 * 2);
        assert!(a.records.iter().all(|r| r.source_err >= 0.0 && r.proj_err >= 0.0 && r.runtime_ms == 0));
    }

    #[test]
    fn matched_lambda_and_cv_mode() {
        let mut c = config();
        c.corruption = Some(Corruption { scale: 0.2, exponent: 0.0, mode: CorruptionMode::Spectral });
        let out = rate_sweep(&c).unwrap();
        for pair in out.records.chunks(2) {
            assert_eq!(pair[0].lambda, pair[1].lambda);
            assert!(pair[0].op_err > 0.1);
        }
        c.lambda = LambdaRule::Cv { grid: GridSpec { count: Some(6), ..GridSpec::default() } };
        assert!(c.validate().is_err());
        c.corruption = None;
        let cv = rate_sweep(&c).unwrap();
        assert_eq!(cv.summaries.len(), 2);
    }

    #[test]
    fn error_norms_match_quadrature() {
        let c = config();
        let dgp = &c.dgp;
        let h = crate::function::FunctionHandle::from_slice(dgp.basis(), &[0.1, -0.3, 0.2]).unwrap();
        let k = 20_000;
        let diff = |x: f64| h.evaluate_at(&[x]).unwrap() - dgp.true_solution().evaluate_at(&[x]).unwrap();
        let quad: f64 = (0..k).map(|i| diff((i as f64 + 0.5) / k as f64).powi(2)).sum::<f64>() / k as f64;
        assert!((quad.sqrt() - dgp.source_error(&h).unwrap()).abs() < 1e-6);
    }
}
