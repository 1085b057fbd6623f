//! Debiased estimation for ill-posed conditional moment restrictions
//! `E[g₁(V) h(V_h) − g₀(V) | V_q] = 0`.
//!
//! The estimator minimises an influence-function corrected projected risk
//! with iterated Tikhonov regularisation, selects `λ` by debiased
//! cross-validation, and plugs the resulting bridges into doubly robust
//! estimators of linear functionals.
//!
//! Numerical code is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the scalar.

pub mod basis;
pub mod complexity;
pub mod dgp;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod function;
pub mod functionals;
pub mod linalg;
pub mod nuisance;
pub mod operator;
pub mod rng;
pub mod scalar;
pub mod selection;

pub use basis::BasisSpec;
pub use dgp::{Dataset, DiscreteProximalDgp, RoleMap, SeriesNpivDgp, Truth, SCHEMA_VERSION};
pub use error::{Error, Result};
pub use estimators::{fit, FitConfig, FitResult, Method};
pub use function::FunctionHandle;
pub use functionals::{full_pipeline_functional, if_estimate, mixed_bias, proximal_functional, rate_requirement, FunctionalEstimate, MomentFunctional, Regime};
pub use nuisance::{fit_nuisances, Design, NuisanceFit};
pub use operator::{LinearOperator, SieveOperator, SingularSystem};
pub use scalar::Real;
pub use selection::{cv_select, fit_cv_pipeline, make_grid, split, PipelineConfig};

pub type FunctionHandle64 = FunctionHandle<f64>;
pub type FunctionHandle32 = FunctionHandle<f32>;
pub type Dataset64 = Dataset<f64>;
pub type Dataset32 = Dataset<f32>;
pub type SieveOperator64 = SieveOperator<f64>;
pub type SieveOperator32 = SieveOperator<f32>;
pub type SingularSystem64 = SingularSystem<f64>;
pub type SingularSystem32 = SingularSystem<f32>;
pub type Design64 = Design<f64>;
pub type Design32 = Design<f32>;
pub type FitConfig64 = FitConfig<f64>;
pub type FitConfig32 = FitConfig<f32>;
pub type FitResult64 = FitResult<f64>;
pub type FitResult32 = FitResult<f32>;
pub type NuisanceFit64 = NuisanceFit<f64>;
pub type NuisanceFit32 = NuisanceFit<f32>;
