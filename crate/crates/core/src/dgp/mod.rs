//! Synthetic designs with known ground truth.

pub mod dataset;
pub mod proximal;
pub mod series;

pub use dataset::{Dataset, RoleMap, SCHEMA_VERSION};
pub use proximal::{Bridges, DiscreteProximalDgp};
pub use series::{SeriesNpivDgp, Truth};
