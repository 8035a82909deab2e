//! Data preparation: ingestion, gap filling, transforms, exploratory fits
//! and synthetic data from the forward model.

pub mod build;
pub mod explore;
pub mod raw;
pub mod synthetic;

pub use build::{build_dataset, harmonic_design, monthly_partition, ResponseSpec, TransformSpec};
pub use explore::{daily_averages, explore_monthly_ols, hour_of_day_averages, OlsRow};
pub use raw::{fill_gaps, ingest, ingest_str, read_coords, GapPolicy, RawTable, Variable};
pub use synthetic::{sample_prior_state, simulate_dataset, synthetic_design, TruthSpec};
