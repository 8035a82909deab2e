//! Forward simulation from the model: designs, prior draws and datasets.

use std::path::Path;

use ndarray::{Array2, Array3, Array4};
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::build::harmonic_design;
use crate::config::{DpMode, ModelConfig};
use crate::data::{ComponentTransform, Dataset};
use crate::dp::{urn_prior_sample, BaseMeasure};
use crate::error::{Error, Result};
use crate::gibbs::blocks::{regression_parts, SamplerContext};
use crate::gp::{eta_field, simulate_factors};
use crate::state::{Atom, ClusterState, ClusterTable, ParameterState};

/// Regular times `0, step, 2 step, ...` split into `m` contiguous, nearly equal partitions.
pub fn regular_times(n_times: usize, step: f64, m: usize) -> (Vec<f64>, Vec<usize>) {
    let times = (0..n_times).map(|t| t as f64 * step).collect();
    let partition_of = (0..n_times).map(|t| (t * m) / n_times.max(1)).collect();
    (times, partition_of)
}

/// A dataset shell with Gaussian clustered covariates, harmonic site-level
/// covariates (up to 3 columns) and zero responses.
pub fn synthetic_design<R: Rng + ?Sized>(
    n: usize,
    k: usize,
    px: usize,
    pz: usize,
    times: Vec<f64>,
    partition_of: Vec<usize>,
    covariate_sd: f64,
    rng: &mut R,
) -> Result<Dataset> {
    if pz > 3 {
        return Err(Error::Domain(format!("at most 3 harmonic covariates are available, asked for {pz}")));
    }
    let t = times.len();
    let x = Array3::from_shape_fn((n, px, t), |_| covariate_sd * rng.sample::<f64, _>(StandardNormal));
    let z = Array3::from_shape_fn((n, pz, t), |(_, j, s)| harmonic_design(times[s])[j]);
    let coords = (0..n).map(|_| [rng.random_range(0.0..50.0), rng.random_range(0.0..50.0)]).collect();
    Ok(Dataset {
        times,
        y: Array3::zeros((n, k, t)),
        x,
        z,
        partition_of,
        site_names: (0..n).map(|i| format!("site{i:02}")).collect(),
        site_coords: Some(coords),
        transform_log: (0..k).map(|j| ComponentTransform::identity(format!("y{j}"))).collect(),
        covariate_log: (0..px).map(|j| ComponentTransform::identity(format!("x{j}"))).collect(),
    })
}

fn draw(base: &BaseMeasure, rng: &mut (impl Rng + ?Sized)) -> Vec<f64> {
    base.sample(rng).expect("base covariance was factored when the measure was built").iter().copied().collect()
}

/// One draw of every parameter from the prior, factor paths included.
pub fn sample_prior_state<R: Rng>(config: &ModelConfig, data: &Dataset, rng: &mut R) -> Result<ParameterState> {
    let ctx = SamplerContext::new(config, data)?;
    let (n, kk, r, mm, pz) = (data.n_sites(), config.n_components, config.n_factors, config.n_partitions, data.p_z());
    let alpha = config.dp_concentration;
    let mut tables = Vec::new();
    for m in 0..mm {
        match config.dp_mode {
            DpMode::Joint => {
                let u = urn_prior_sample(
                    n,
                    alpha,
                    |g: &mut R| Atom { coefs: ctx.beta_bases.iter().map(|b| draw(b, g)).collect() },
                    rng,
                );
                tables.push(ClusterTable::new(m, (0..kk).collect(), u.labels, u.atoms));
            }
            DpMode::IndependentPerComponent => {
                for k in 0..kk {
                    let base = &ctx.beta_bases[k];
                    let u = urn_prior_sample(n, alpha, |g: &mut R| Atom { coefs: vec![draw(base, g)] }, rng);
                    tables.push(ClusterTable::new(m, vec![k], u.labels, u.atoms));
                }
            }
        }
    }
    let mut gamma = Array4::zeros((n, mm, kk, pz));
    for i in 0..n {
        for m in 0..mm {
            for k in 0..kk {
                for (j, v) in draw(&ctx.gamma_priors[k], rng).into_iter().enumerate() {
                    gamma[[i, m, k, j]] = v;
                }
            }
        }
    }
    let mut lambda = Array3::zeros((kk, n, r));
    for k in 0..kk {
        for i in 0..n {
            for (l, v) in draw(&ctx.lambda_prior, rng).into_iter().enumerate() {
                lambda[[k, i, l]] = v;
            }
        }
    }
    let a_dist = Normal::new(config.priors.a_mean, config.priors.a_var.sqrt()).map_err(|e| Error::Domain(e.to_string()))?;
    let coreg = Array2::from_shape_fn((kk, kk), |(a, b)| match a.cmp(&b) {
        std::cmp::Ordering::Equal => 1.0,
        std::cmp::Ordering::Greater => a_dist.sample(rng),
        std::cmp::Ordering::Less => 0.0,
    });
    let tau2 = (0..kk)
        .map(|k| {
            let g = Gamma::new(config.priors.tau2_shape[k], 1.0 / config.priors.tau2_rate[k]).map_err(|e| Error::Domain(e.to_string()))?;
            Ok(1.0 / g.sample(rng))
        })
        .collect::<Result<Vec<_>>>()?;
    let nu = simulate_factors(config, &data.times, rng)?;
    Ok(ParameterState {
        gamma,
        clusters: ClusterState { mode: config.dp_mode, n_components: kk, tables },
        lambda,
        coreg,
        tau2,
        nu,
    })
}

/// Replaces the responses of `data` with a draw from the model under `truth`
/// (its factor paths are redrawn). Returns the dataset and the truth with the
/// factor paths actually used.
pub fn simulate_dataset<R: Rng + ?Sized>(
    config: &ModelConfig,
    truth: &ParameterState,
    data: &Dataset,
    rng: &mut R,
) -> Result<(Dataset, ParameterState)> {
    let mut truth = truth.clone();
    truth.nu = simulate_factors(config, &data.times, rng)?;
    let mut out = data.clone();
    fill_responses(config, &truth, &mut out, rng);
    Ok((out, truth))
}

/// Writes `x'beta + z'gamma + eta + noise` into `data.y` using the factor paths stored in `state`.
pub fn fill_responses<R: Rng + ?Sized>(config: &ModelConfig, state: &ParameterState, data: &mut Dataset, rng: &mut R) {
    let segments = data.segments(config.n_partitions);
    let (xb, zg) = regression_parts(state, data, &segments);
    let eta = eta_field(&state.lambda, &state.coreg, &state.nu);
    let (n, kk, t) = data.y.dim();
    for i in 0..n {
        for k in 0..kk {
            let sd = state.tau2[k].sqrt();
            for s in 0..t {
                let e: f64 = rng.sample(StandardNormal);
                data.y[[i, k, s]] = xb[[i, k, s]] + zg[[i, k, s]] + eta[[i, k, s]] + sd * e;
            }
        }
    }
}

/// How to lay out a synthetic design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSpec {
    pub n_times: usize,
    #[serde(default = "one")]
    pub time_step: f64,
    #[serde(default = "one")]
    pub covariate_sd: f64,
}

fn one() -> f64 {
    1.0
}

/// True clustering of one partition: `atoms[c][k]` is the coefficient vector
/// of cluster `c` for component `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionTruth {
    pub labels: Vec<usize>,
    pub atoms: Vec<Vec<Vec<f64>>>,
}

/// Ground truth for a simulation, read from TOML.
///
/// `gamma[k]` is shared by every site and partition. Loadings are given
/// explicitly as `lambda[k][i]` or drawn i.i.d. `N(0, lambda_sd^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthSpec {
    pub design: DesignSpec,
    pub partitions: Vec<PartitionTruth>,
    pub gamma: Vec<Vec<f64>>,
    #[serde(default)]
    pub lambda: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(default)]
    pub lambda_sd: Option<f64>,
    pub coreg: Vec<Vec<f64>>,
    pub tau2: Vec<f64>,
}

impl TruthSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Design shell plus truth state (without factor paths) for `config`.
    pub fn realize<R: Rng + ?Sized>(&self, config: &ModelConfig, rng: &mut R) -> Result<(Dataset, ParameterState)> {
        let (n, kk, r, mm) = (config.n_sites, config.n_components, config.n_factors, config.n_partitions);
        let bad = |m: String| Err(Error::Config(format!("truth: {m}")));
        if self.partitions.len() != mm {
            return bad(format!("{} partitions given, config has {mm}", self.partitions.len()));
        }
        if self.gamma.len() != kk || self.tau2.len() != kk || self.coreg.len() != kk {
            return bad(format!("gamma, tau2 and coreg need {kk} rows"));
        }
        let px = self.partitions[0].atoms.first().and_then(|a| a.first()).map_or(0, |b| b.len());
        let pz = self.gamma[0].len();
        for (m, p) in self.partitions.iter().enumerate() {
            if p.labels.len() != n {
                return bad(format!("partition {m} labels {} sites, config has {n}", p.labels.len()));
            }
            let used = p.labels.iter().max().map_or(0, |v| v + 1);
            if used != p.atoms.len() || (0..used).any(|c| !p.labels.contains(&c)) {
                return bad(format!("partition {m} labels must use every atom index 0..{}", p.atoms.len()));
            }
            if p.atoms.iter().any(|a| a.len() != kk || a.iter().any(|b| b.len() != px)) {
                return bad(format!("partition {m} atoms must be [cluster][component][{px}]"));
            }
        }
        let (times, partition_of) = regular_times(self.design.n_times, self.design.time_step, mm);
        let data = synthetic_design(n, kk, px, pz, times, partition_of, self.design.covariate_sd, rng)?;

        let tables = match config.dp_mode {
            DpMode::Joint => self
                .partitions
                .iter()
                .enumerate()
                .map(|(m, p)| {
                    let atoms = p.atoms.iter().map(|a| Atom { coefs: a.clone() }).collect();
                    ClusterTable::new(m, (0..kk).collect(), p.labels.clone(), atoms)
                })
                .collect(),
            DpMode::IndependentPerComponent => self
                .partitions
                .iter()
                .enumerate()
                .flat_map(|(m, p)| {
                    (0..kk).map(move |k| {
                        let atoms = p.atoms.iter().map(|a| Atom { coefs: vec![a[k].clone()] }).collect();
                        ClusterTable::new(m, vec![k], p.labels.clone(), atoms)
                    })
                })
                .collect(),
        };
        let gamma = Array4::from_shape_fn((n, mm, kk, pz), |(_, _, k, j)| self.gamma[k][j]);
        let lambda = match (&self.lambda, self.lambda_sd) {
            (Some(l), _) => {
                if l.len() != kk || l.iter().any(|rows| rows.len() != n || rows.iter().any(|v| v.len() != r)) {
                    return bad(format!("lambda must be [{kk}][{n}][{r}]"));
                }
                Array3::from_shape_fn((kk, n, r), |(k, i, f)| l[k][i][f])
            }
            (None, Some(sd)) => Array3::from_shape_fn((kk, n, r), |_| sd * rng.sample::<f64, _>(StandardNormal)),
            (None, None) => Array3::zeros((kk, n, r)),
        };
        let coreg = Array2::from_shape_fn((kk, kk), |(a, b)| self.coreg[a].get(b).copied().unwrap_or(0.0));
        let state = ParameterState {
            gamma,
            clusters: ClusterState { mode: config.dp_mode, n_components: kk, tables },
            lambda,
            coreg,
            tau2: self.tau2.clone(),
            nu: Array3::zeros((r, kk, data.n_times())),
        };
        // A zero noise variance is a legitimate truth for noise-free simulation.
        let problems: Vec<String> = state.invariant_violations().into_iter().filter(|p| !p.starts_with("tau2")).collect();
        if !problems.is_empty() || self.tau2.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return bad(format!("invalid truth: {} (tau2 must be finite and nonnegative)", problems.join("; ")));
        }
        Ok((data, state))
    }
}

/// Truth labels per partition, in table order of a joint-mode state.
pub fn truth_labels(truth: &ParameterState) -> Vec<Vec<usize>> {
    truth.clusters.tables.iter().map(|t| t.labels.clone()).collect()
}
