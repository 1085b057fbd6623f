use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use illposed::experiments::{rate_sweep, write_records, Format, MethodSummary, SweepConfig, SweepFailure};
use illposed::function::FunctionRecord;
use illposed::functionals::{proximal_bases, rates::rational_to_f64, snap_rational, FunctionalConfig};
use illposed::selection::GridSpec;
use illposed::{
    fit_cv_pipeline, full_pipeline_functional, proximal_functional, rate_requirement, Dataset, DiscreteProximalDgp, FitConfig, Method,
    PipelineConfig, Regime, RoleMap, SeriesNpivDgp, SCHEMA_VERSION,
};

const MAX_DENOMINATOR: i64 = 64;

#[derive(Parser)]
#[command(name = "illposed", version, about = "Debiased estimators for ill-posed conditional moment restrictions")]
struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum DgpKind {
    SeriesNpiv,
    DiscreteProximal,
}

#[derive(Clone, Copy, ValueEnum)]
enum Design {
    Proximal,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic dataset with its role map and truth sidecar.
    Simulate {
        #[arg(long, value_enum)]
        dgp: DgpKind,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// DGP parameters as JSON; built-in defaults otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        roles: PathBuf,
        /// Truth sidecar; `<out stem>.truth.json` next to the data by default.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Fit one regularised estimator at a fixed λ.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        roles: PathBuf,
        /// Pipeline JSON with at least `basis_h` and `basis_q`.
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "debiased")]
        method: String,
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Select λ over a grid by debiased validation risk.
    Cv {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        roles: PathBuf,
        /// Pipeline JSON: bases, grid, folds, method, seed.
        #[arg(long)]
        grid_config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-fitted doubly robust estimate of a linear functional.
    Functional {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "proximal")]
        design: Design,
        #[arg(long, default_value_t = 1)]
        a: u8,
        /// Optional JSON with `folds`, `grid`, `iterations`, `ridge`.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte Carlo rate sweep on the series design.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Records; JSON when the extension is `.json`, CSV otherwise.
        #[arg(long)]
        out: PathBuf,
        /// Per-method medians and fitted slopes.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Exponent `e` such that nuisance rates `o(n^{−e})` give root-n inference.
    Rates {
        #[arg(long)]
        beta_h: f64,
        #[arg(long)]
        beta_q: f64,
        #[arg(long)]
        alpha_h: f64,
        #[arg(long)]
        alpha_q: f64,
        #[arg(long, default_value = "corollary3")]
        regime: String,
    },
}

#[derive(Debug)]
enum CliError {
    Config(String),
    Io(String),
    Numerical(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Io(m) | CliError::Numerical(m) => m,
        }
    }
}

impl From<illposed::Error> for CliError {
    fn from(e: illposed::Error) -> Self {
        if e.is_io() {
            CliError::Io(e.to_string())
        } else if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Config(e.to_string())
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn io_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let file = File::open(path).map_err(|e| io_error(path, e))?;
    let mut de = serde_json::Deserializer::from_reader(BufReader::new(file));
    serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let at = e.path().to_string();
        let inner = e.into_inner();
        if inner.is_io() {
            io_error(path, inner)
        } else {
            CliError::Config(format!("{}: at `{at}`: {inner}", path.display()))
        }
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let file = File::create(path).map_err(|e| io_error(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| io_error(path, e))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| io_error(path, e))
}

fn read_data(data: &Path, roles: Option<&Path>) -> CliResult<Dataset<f64>> {
    let ds = Dataset::read_csv_path(data).map_err(|e| match e {
        illposed::Error::Io(io) => io_error(data, io),
        other => CliError::Config(format!("{}: {other}", data.display())),
    })?;
    match roles {
        Some(r) => Ok(ds.with_roles(read_json::<RoleMap>(r)?)?),
        None => Ok(ds),
    }
}

fn sidecar_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "data".into());
    out.with_file_name(format!("{stem}.truth.json"))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SeriesSpec {
    #[serde(default = "default_sigmas")]
    sigmas: Vec<f64>,
    #[serde(default = "default_beta")]
    beta: f64,
    /// Source element; all ones when absent.
    #[serde(default)]
    w: Option<Vec<f64>>,
    #[serde(default = "default_noise")]
    noise_sd: f64,
    #[serde(default = "default_endogeneity")]
    endogeneity: f64,
}

fn default_sigmas() -> Vec<f64> {
    (1..=8).map(|i| 0.4 * 0.6f64.powi(i - 1)).collect()
}

fn default_beta() -> f64 {
    2.0
}

fn default_noise() -> f64 {
    0.5
}

fn default_endogeneity() -> f64 {
    0.5
}

#[derive(Serialize)]
struct SeriesTruth {
    schema_version: u32,
    dgp: &'static str,
    sigmas: Vec<f64>,
    beta: f64,
    w: Vec<f64>,
    h0: FunctionRecord,
    noise_sd: f64,
    endogeneity: f64,
}

#[derive(Serialize)]
struct ProximalTruth {
    schema_version: u32,
    dgp: &'static str,
    a: u8,
    psi0: f64,
    h0: FunctionRecord,
    q0: FunctionRecord,
    h_values: Vec<f64>,
    q_values: Vec<f64>,
    parameters: DiscreteProximalDgp,
}

#[allow(clippy::too_many_arguments)]
fn simulate(kind: DgpKind, n: usize, seed: u64, config: Option<&Path>, out: &Path, roles: &Path, truth: Option<&Path>) -> CliResult<()> {
    if n == 0 {
        return Err(CliError::Config("n must be ≥ 1".into()));
    }
    let truth_path = truth.map(Path::to_path_buf).unwrap_or_else(|| sidecar_path(out));
    match kind {
        DgpKind::SeriesNpiv => {
            let spec: SeriesSpec = match config {
                Some(p) => read_json(p)?,
                None => serde_json::from_str("{}").expect("defaults parse"),
            };
            let w = spec.w.clone().unwrap_or_else(|| vec![1.0; spec.sigmas.len() + 1]);
            let dgp = SeriesNpivDgp::with_source(spec.sigmas.clone(), spec.beta, &w, spec.noise_sd, spec.endogeneity)?;
            let data = dgp.sample(n, seed)?;
            data.write_csv_path(out).map_err(|e| io_error(out, e))?;
            write_json(roles, &SeriesNpivDgp::roles())?;
            write_json(
                &truth_path,
                &SeriesTruth {
                    schema_version: SCHEMA_VERSION,
                    dgp: "series-npiv",
                    sigmas: spec.sigmas,
                    beta: spec.beta,
                    w,
                    h0: dgp.true_solution().to_record(),
                    noise_sd: spec.noise_sd,
                    endogeneity: spec.endogeneity,
                },
            )?;
        }
        DgpKind::DiscreteProximal => {
            let dgp: DiscreteProximalDgp = match config {
                Some(p) => read_json(p)?,
                None => DiscreteProximalDgp::default(),
            };
            dgp.validate()?;
            let f = proximal_functional(dgp.a)?;
            let data = f.h_equation(&dgp.sample(n, seed)?)?;
            data.write_csv_path(out).map_err(|e| io_error(out, e))?;
            write_json(roles, data.require_roles()?)?;
            let b = dgp.true_bridges()?;
            write_json(
                &truth_path,
                &ProximalTruth {
                    schema_version: SCHEMA_VERSION,
                    dgp: "discrete-proximal",
                    a: dgp.a,
                    psi0: dgp.psi0(),
                    h0: b.h0.to_record(),
                    q0: b.q0.to_record(),
                    h_values: b.h_values,
                    q_values: b.q_values,
                    parameters: dgp,
                },
            )?;
        }
    }
    info!("wrote {} rows, roles and truth sidecar {}", n, truth_path.display());
    Ok(())
}

#[derive(Serialize)]
struct FitOutput {
    schema_version: u32,
    seed: u64,
    fold_sizes: Vec<usize>,
    /// Debiased risk of the fit on the validation fold.
    validation_risk: f64,
    nuisance_condition_number: f64,
    #[serde(flatten)]
    fit: illposed::estimators::FitRecord,
}

fn fit_cmd(data: &Path, roles: &Path, config: &Path, method: &str, lambda: f64, iters: Option<usize>, seed: Option<u64>, out: &Path) -> CliResult<()> {
    let method: Method = method.parse()?;
    let mut cfg: PipelineConfig = read_json(config)?;
    cfg.method = method;
    if let Some(t) = iters {
        cfg.iterations = t;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    FitConfig::new(lambda, method).with_iterations(cfg.iterations).validate()?;
    cfg.grid = GridSpec { lambdas: Some(vec![lambda]), ..GridSpec::default() };
    let ds = read_data(data, Some(roles))?;
    let outcome = fit_cv_pipeline(&ds, &cfg, None)?;
    let report = outcome.report;
    write_json(
        out,
        &FitOutput {
            schema_version: SCHEMA_VERSION,
            seed: report.seed,
            fold_sizes: report.fold_sizes,
            validation_risk: report.risks[0].expect("single candidate succeeded"),
            nuisance_condition_number: report.nuisance_condition_number,
            fit: outcome.fit.to_record(),
        },
    )
}

fn cv_cmd(data: &Path, roles: &Path, grid_config: &Path, seed: Option<u64>, out: &Path) -> CliResult<()> {
    let mut cfg: PipelineConfig = read_json(grid_config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let ds = read_data(data, Some(roles))?;
    let outcome = fit_cv_pipeline(&ds, &cfg, None)?;
    info!("selected λ = {} (index {})", outcome.report.selected_lambda, outcome.report.selected_index);
    write_json(out, &outcome.report)
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FunctionalOptions {
    #[serde(default)]
    folds: Option<usize>,
    #[serde(default)]
    grid: Option<GridSpec>,
    #[serde(default)]
    iterations: Option<usize>,
    #[serde(default)]
    ridge: Option<f64>,
}

fn functional_cmd(data: &Path, a: u8, config: Option<&Path>, seed: u64, out: &Path) -> CliResult<()> {
    let opts: FunctionalOptions = match config {
        Some(p) => read_json(p)?,
        None => FunctionalOptions::default(),
    };
    let raw = read_data(data, None)?;
    let keep: Vec<String> = ["Z", "W", "A", "Y"].iter().map(|s| s.to_string()).collect();
    let ds = Dataset::new(keep.clone(), raw.select(&keep)?)?;
    let f = proximal_functional(a)?;
    let (bh, bq) = proximal_bases(&ds)?;
    let mut cfg = FunctionalConfig::new(bh, bq);
    cfg.seed = seed;
    if let Some(k) = opts.folds {
        cfg.folds = k;
    }
    if let Some(g) = opts.grid {
        cfg.grid = g;
    }
    if let Some(t) = opts.iterations {
        cfg.iterations = t;
    }
    cfg.ridge = opts.ridge;
    let (est, report) = full_pipeline_functional(&ds, &f, &cfg)?;
    info!("ψ̂ = {} (se {})", est.psi_hat, est.standard_error);
    write_json(out, &report)
}

#[derive(Serialize)]
struct SweepSummary {
    schema_version: u32,
    summaries: Vec<MethodSummary>,
    failures: Vec<SweepFailure>,
}

fn sweep_cmd(config: &Path, out: &Path, summary: Option<&Path>) -> CliResult<()> {
    let cfg: SweepConfig = read_json(config)?;
    let outcome = rate_sweep(&cfg)?;
    for f in &outcome.failures {
        log::warn!("n = {}, rep = {}, {}: {}", f.n, f.rep, f.method, f.message);
    }
    let format = match out.extension().and_then(|e| e.to_str()) {
        Some("json") => Format::Json,
        _ => Format::Csv,
    };
    let file = File::create(out).map_err(|e| io_error(out, e))?;
    write_records(&outcome.records, format, BufWriter::new(file))?;
    if let Some(p) = summary {
        write_json(p, &SweepSummary { schema_version: SCHEMA_VERSION, summaries: outcome.summaries, failures: outcome.failures })?;
    }
    Ok(())
}

fn rates_cmd(beta_h: f64, beta_q: f64, alpha_h: f64, alpha_q: f64, regime: &str) -> CliResult<String> {
    let regime: Regime = regime.parse()?;
    let mut lines = Vec::new();
    let mut snap = |name: &str, x: f64| -> CliResult<_> {
        let r = snap_rational(x, MAX_DENOMINATOR)?;
        lines.push(format!("{name} {x} -> {r}"));
        Ok(r)
    };
    let (bh, bq, ah, aq) = (snap("beta_h", beta_h)?, snap("beta_q", beta_q)?, snap("alpha_h", alpha_h)?, snap("alpha_q", alpha_q)?);
    let req = rate_requirement(bh, bq, ah, aq, regime)?;
    lines.push(format!("regime {regime}"));
    let mut last = format!("exponent {} ({})", req.exponent, rational_to_f64(req.exponent));
    if req.infeasible {
        last.push_str(" infeasible");
    }
    lines.push(last);
    Ok(lines.join("\n"))
}

fn run(cli: Cli) -> CliResult<Option<String>> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot size the thread pool: {e}")))?;
    }
    match cli.command {
        Command::Simulate { dgp, n, seed, config, out, roles, truth } => {
            simulate(dgp, n, seed, config.as_deref(), &out, &roles, truth.as_deref())?;
            Ok(Some(out.display().to_string()))
        }
        Command::Fit { data, roles, config, method, lambda, iters, seed, out } => {
            fit_cmd(&data, &roles, &config, &method, lambda, iters, seed, &out)?;
            Ok(Some(out.display().to_string()))
        }
        Command::Cv { data, roles, grid_config, seed, out } => {
            cv_cmd(&data, &roles, &grid_config, seed, &out)?;
            Ok(Some(out.display().to_string()))
        }
        Command::Functional { data, design: Design::Proximal, a, config, seed, out } => {
            functional_cmd(&data, a, config.as_deref(), seed, &out)?;
            Ok(Some(out.display().to_string()))
        }
        Command::Sweep { config, out, summary } => {
            sweep_cmd(&config, &out, summary.as_deref())?;
            Ok(Some(out.display().to_string()))
        }
        Command::Rates { beta_h, beta_q, alpha_h, alpha_q, regime } => rates_cmd(beta_h, beta_q, alpha_h, alpha_q, &regime).map(Some),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).target(env_logger::Target::Stderr).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(Some(line)) => {
            println!("{line}");
            ExitCode::SUCCESS
        }
        Ok(None) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
