//! Model configuration, prior hyperparameters and validation.
//!
//! Configurations are read from TOML. All decay rates are per hour and
//! indexed `decay_rates[k][j]` for component `k` and factor `j`.

use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DpMode {
    /// One label per site and partition drives every component's coefficients.
    Joint,
    /// Each component has its own Dirichlet process and label vector.
    IndependentPerComponent,
}

impl fmt::Display for DpMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DpMode::Joint => f.write_str("joint"),
            DpMode::IndependentPerComponent => f.write_str("independent-per-component"),
        }
    }
}

/// A multivariate normal prior, either isotropic (`mean * 1`, `variance * I`)
/// or fully specified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GaussianPrior {
    Isotropic { mean: f64, variance: f64 },
    Full { mean: Vec<f64>, cov: Vec<Vec<f64>> },
}

impl GaussianPrior {
    pub fn isotropic(mean: f64, variance: f64) -> Self {
        GaussianPrior::Isotropic { mean, variance }
    }

    /// Fixed dimension of a fully specified prior; `None` for isotropic priors.
    pub fn dim(&self) -> Option<usize> {
        match self {
            GaussianPrior::Isotropic { .. } => None,
            GaussianPrior::Full { mean, .. } => Some(mean.len()),
        }
    }

    pub fn mean_vector(&self, dim: usize) -> DVector<f64> {
        match self {
            GaussianPrior::Isotropic { mean, .. } => DVector::from_element(dim, *mean),
            GaussianPrior::Full { mean, .. } => DVector::from_column_slice(mean),
        }
    }

    pub fn covariance(&self, dim: usize) -> DMatrix<f64> {
        match self {
            GaussianPrior::Isotropic { variance, .. } => DMatrix::identity(dim, dim) * *variance,
            GaussianPrior::Full { cov, .. } => {
                DMatrix::from_fn(cov.len(), cov.len(), |r, c| cov[r].get(c).copied().unwrap_or(f64::NAN))
            }
        }
    }

    fn check(&self, what: &str, dim: usize, out: &mut Vec<Violation>) {
        match self {
            GaussianPrior::Isotropic { mean, variance } => {
                if !mean.is_finite() {
                    out.push(Violation::new(ViolationKind::NonFinite, format!("{what}: mean is not finite")));
                }
                if !(*variance > 0.0 && variance.is_finite()) {
                    out.push(Violation::new(
                        ViolationKind::NonPositive,
                        format!("{what}: variance must be positive, got {variance}"),
                    ));
                }
            }
            GaussianPrior::Full { mean, cov } => {
                if mean.len() != dim || cov.len() != dim || cov.iter().any(|row| row.len() != dim) {
                    out.push(Violation::new(
                        ViolationKind::Dimension,
                        format!("{what}: expected dimension {dim}, got mean of length {} and {}x? covariance", mean.len(), cov.len()),
                    ));
                    return;
                }
                let m = self.covariance(dim);
                let symmetric = (0..dim).all(|r| (0..dim).all(|c| (m[(r, c)] - m[(c, r)]).abs() <= 1e-12 * (1.0 + m[(r, c)].abs())));
                if !symmetric || m.clone().cholesky().is_none() {
                    out.push(Violation::new(
                        ViolationKind::NotPositiveDefinite,
                        format!("{what}: covariance must be symmetric positive definite"),
                    ));
                }
            }
        }
    }
}

/// Prior hyperparameters. Per-component vectors have length `n_components`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    /// Prior for the non-clustered coefficients, one entry per component.
    pub gamma: Vec<GaussianPrior>,
    /// Dirichlet-process base measure, one entry per component.
    pub beta_base: Vec<GaussianPrior>,
    /// Prior on each loading row, shared across sites and components.
    pub lambda: GaussianPrior,
    /// Prior mean of the strictly-lower coregionalization entries.
    pub a_mean: f64,
    /// Prior variance of the strictly-lower coregionalization entries.
    pub a_var: f64,
    pub tau2_shape: Vec<f64>,
    pub tau2_rate: Vec<f64>,
}

impl PriorSpec {
    /// Isotropic priors replicated across `n_components`.
    pub fn isotropic(
        n_components: usize,
        gamma_var: f64,
        beta_var: f64,
        lambda_var: f64,
        a_var: f64,
        tau2: (f64, f64),
    ) -> Self {
        PriorSpec {
            gamma: vec![GaussianPrior::isotropic(0.0, gamma_var); n_components],
            beta_base: vec![GaussianPrior::isotropic(0.0, beta_var); n_components],
            lambda: GaussianPrior::isotropic(0.0, lambda_var),
            a_mean: 0.0,
            a_var,
            tau2_shape: vec![tau2.0; n_components],
            tau2_rate: vec![tau2.1; n_components],
        }
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McmcSchedule {
    pub n_iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub rng_seed: u64,
    pub n_chains: usize,
    /// Keep the latent factor paths in every retained draw. Full-scale runs
    /// switch this off; the final state always carries them.
    #[serde(default = "default_true")]
    pub retain_factor_paths: bool,
}

impl McmcSchedule {
    pub fn n_retained(&self) -> usize {
        if self.thin == 0 || self.n_iterations <= self.burn_in {
            0
        } else {
            (self.n_iterations - self.burn_in) / self.thin
        }
    }

    /// Whether the state after sweep `iteration` (1-based) is retained.
    pub fn is_retained(&self, iteration: usize) -> bool {
        iteration > self.burn_in
            && (iteration - self.burn_in) % self.thin == 0
            && (iteration - self.burn_in) / self.thin <= self.n_retained()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_sites: usize,
    pub n_components: usize,
    pub n_factors: usize,
    pub n_partitions: usize,
    /// Per-hour decay rates, `decay_rates[k][j]`.
    pub decay_rates: Vec<Vec<f64>>,
    pub dp_concentration: f64,
    pub dp_mode: DpMode,
    pub priors: PriorSpec,
    pub mcmc: McmcSchedule,
}

impl ModelConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn decay_rate(&self, component: usize, factor: usize) -> f64 {
        self.decay_rates[component][factor]
    }

    /// Checks that do not need data: positivity, ordering, shapes and schedule.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for (name, value) in [
            ("n_sites", self.n_sites),
            ("n_components", self.n_components),
            ("n_factors", self.n_factors),
            ("n_partitions", self.n_partitions),
        ] {
            if value == 0 {
                out.push(Violation::new(ViolationKind::NonPositive, format!("{name} must be positive")));
            }
        }

        if self.decay_rates.len() != self.n_components {
            out.push(Violation::new(
                ViolationKind::Dimension,
                format!("decay_rates has {} rows, expected n_components = {}", self.decay_rates.len(), self.n_components),
            ));
        }
        for (k, rates) in self.decay_rates.iter().enumerate() {
            if rates.len() != self.n_factors {
                out.push(Violation::new(
                    ViolationKind::Dimension,
                    format!("decay_rates[{k}] has {} entries, expected n_factors = {}", rates.len(), self.n_factors),
                ));
            }
            if let Some(bad) = rates.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
                out.push(Violation::new(
                    ViolationKind::NonPositive,
                    format!("decay_rates[{k}] contains non-positive rate {bad}"),
                ));
            } else if rates.windows(2).any(|w| w[1] <= w[0]) {
                out.push(Violation::new(
                    ViolationKind::DecayOrdering,
                    format!("decay_rates[{k}] = {rates:?} must be strictly increasing in the factor index"),
                ));
            }
        }

        if !(self.dp_concentration > 0.0 && self.dp_concentration.is_finite()) {
            out.push(Violation::new(
                ViolationKind::NonPositive,
                format!("dp_concentration must be positive, got {}", self.dp_concentration),
            ));
        }

        let p = &self.priors;
        let k = self.n_components;
        for (name, len) in [
            ("priors.gamma", p.gamma.len()),
            ("priors.beta_base", p.beta_base.len()),
            ("priors.tau2_shape", p.tau2_shape.len()),
            ("priors.tau2_rate", p.tau2_rate.len()),
        ] {
            if len != k {
                out.push(Violation::new(
                    ViolationKind::Dimension,
                    format!("{name} has {len} entries, expected n_components = {k}"),
                ));
            }
        }
        for (name, values) in [("priors.tau2_shape", &p.tau2_shape), ("priors.tau2_rate", &p.tau2_rate)] {
            if let Some(bad) = values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
                out.push(Violation::new(ViolationKind::NonPositive, format!("{name} contains non-positive value {bad}")));
            }
        }
        if !(p.a_var > 0.0 && p.a_var.is_finite()) {
            out.push(Violation::new(ViolationKind::NonPositive, format!("priors.a_var must be positive, got {}", p.a_var)));
        }
        if !p.a_mean.is_finite() {
            out.push(Violation::new(ViolationKind::NonFinite, "priors.a_mean is not finite"));
        }
        p.lambda.check("priors.lambda", self.n_factors, &mut out);
        // Full-covariance dimensions of gamma/beta are data-determined; only
        // their self-consistency is checked here.
        for (kk, g) in p.gamma.iter().enumerate() {
            let dim = g.dim().unwrap_or(1);
            g.check(&format!("priors.gamma[{kk}]"), dim, &mut out);
        }
        for (kk, b) in p.beta_base.iter().enumerate() {
            let dim = b.dim().unwrap_or(1);
            b.check(&format!("priors.beta_base[{kk}]"), dim, &mut out);
        }

        let s = &self.mcmc;
        if s.n_iterations == 0 {
            out.push(Violation::new(ViolationKind::Schedule, "mcmc.n_iterations must be positive"));
        }
        if s.thin == 0 {
            out.push(Violation::new(ViolationKind::Schedule, "mcmc.thin must be positive"));
        }
        if s.n_chains == 0 {
            out.push(Violation::new(ViolationKind::Schedule, "mcmc.n_chains must be positive"));
        }
        if s.burn_in >= s.n_iterations {
            out.push(Violation::new(
                ViolationKind::Schedule,
                format!("mcmc.burn_in ({}) must be smaller than n_iterations ({})", s.burn_in, s.n_iterations),
            ));
        } else if s.thin > 0 && s.n_retained() == 0 {
            out.push(Violation::new(
                ViolationKind::Schedule,
                "mcmc schedule retains no draws: (n_iterations - burn_in) / thin < 1",
            ));
        }
        out
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ViolationKind {
    NonPositive,
    NonFinite,
    Dimension,
    DecayOrdering,
    NonContiguousPartition,
    TimeOrder,
    MissingValue,
    NotPositiveDefinite,
    Schedule,
}

impl ViolationKind {
    pub fn name(&self) -> &'static str {
        match self {
            ViolationKind::NonPositive => "non-positive",
            ViolationKind::NonFinite => "non-finite",
            ViolationKind::Dimension => "dimension",
            ViolationKind::DecayOrdering => "decay-rate ordering",
            ViolationKind::NonContiguousPartition => "non-contiguous partitions",
            ViolationKind::TimeOrder => "time ordering",
            ViolationKind::MissingValue => "missing value",
            ViolationKind::NotPositiveDefinite => "not positive definite",
            ViolationKind::Schedule => "schedule",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub message: String,
}

impl Violation {
    pub fn new(kind: ViolationKind, message: impl Into<String>) -> Self {
        Violation {
            kind,
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.kind.name(), self.message)
    }
}

/// Every violated invariant of `config` and `data` together; empty when the
/// pair can be handed to the sampler.
pub fn validate_config(config: &ModelConfig, data: &Dataset) -> Vec<Violation> {
    let mut out = config.violations();
    out.extend(data.violations());

    if data.n_sites() != config.n_sites {
        out.push(Violation::new(
            ViolationKind::Dimension,
            format!("data has {} sites, config expects {}", data.n_sites(), config.n_sites),
        ));
    }
    if data.n_components() != config.n_components {
        out.push(Violation::new(
            ViolationKind::Dimension,
            format!("data has {} components, config expects {}", data.n_components(), config.n_components),
        ));
    }
    if let Some(max) = data.partition_of.iter().max() {
        if *max >= config.n_partitions {
            out.push(Violation::new(
                ViolationKind::Dimension,
                format!("partition index {max} out of range for n_partitions = {}", config.n_partitions),
            ));
        }
    }
    let (px, pz) = (data.p_x(), data.p_z());
    for (k, g) in config.priors.gamma.iter().enumerate() {
        if let Some(d) = g.dim() {
            if d != pz {
                out.push(Violation::new(
                    ViolationKind::Dimension,
                    format!("priors.gamma[{k}] has dimension {d}, data has p_z = {pz}"),
                ));
            }
        }
    }
    for (k, b) in config.priors.beta_base.iter().enumerate() {
        if let Some(d) = b.dim() {
            if d != px {
                out.push(Violation::new(
                    ViolationKind::Dimension,
                    format!("priors.beta_base[{k}] has dimension {d}, data has p_x = {px}"),
                ));
            }
        }
    }
    out
}
