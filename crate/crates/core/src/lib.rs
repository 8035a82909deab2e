//! Bayesian time-varying clustering of multivariate functional data.
//!
//! Responses observed at `n` sites over time are modelled as partition-wise
//! regressions whose clustered coefficients follow an exchangeable Dirichlet
//! process per time partition, plus latent Gaussian-process factor residuals
//! mixed across components by a lower-triangular coregionalization matrix.
//! The factors are Ornstein-Uhlenbeck processes, so every density and full
//! conditional is evaluated sequentially in time without forming `T x T`
//! covariance matrices.
//!
//! The crate is organised as
//!
//! * [`config`], [`data`], [`state`]: domain types and validation,
//! * [`gp`]: AR(1) transitions, factor assembly and cross-covariances,
//! * [`dp`]: Polya-urn draws and the collapsed label update,
//! * [`gibbs`]: full-conditional updates and the chain driver,
//! * [`posterior`]: label-invariant summaries of retained draws,
//! * [`pipeline`]: ingestion, transforms, exploratory fits and simulation,
//! * [`sensitivity`]: grids of fits over prior settings,
//! * [`io`]: the CSV layout used for states, datasets and summaries.

pub mod config;
pub mod data;
pub mod dp;
pub mod error;
pub mod gibbs;
pub mod gp;
pub mod io;
pub mod linalg;
pub mod pipeline;
pub mod posterior;
pub mod sensitivity;
pub mod state;

pub use config::{DpMode, GaussianPrior, McmcSchedule, ModelConfig, PriorSpec, Violation};
pub use data::Dataset;
pub use error::{Error, Result};
pub use state::{Atom, ClusterState, ClusterTable, ParameterState};
