//! Monte Carlo probes of the bias identities, rates and selection.

pub mod alpha;
pub mod bias;
pub mod report;
pub mod slope;
pub mod sweep;

pub use alpha::{alpha_probe, alpha_probe_singular, linear_grid, AlphaProbe};
pub use bias::{aligned_operator, bias_at, bias_probe, BiasPoint, BiasProbeReport, PopulationProblem, RMode};
pub use report::{read_records, write_records, Format, SweepRecord, CSV_HEADER};
pub use slope::{loglog_fit, median, ols, LineFit};
pub use sweep::{delta_n, rate_sweep, Corruption, LambdaRule, MethodSummary, SweepConfig, SweepFailure, SweepOutcome};
