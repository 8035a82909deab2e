//! Dirichlet-process clustering of the regression coefficients.
//!
//! Labels are updated with a collapsed step: joining an existing cluster is
//! weighted by its size times the segment likelihood under the cluster's
//! atom; opening a new cluster is weighted by the concentration times the
//! segment likelihood with the coefficients integrated against the base
//! measure. All weights are kept in log space.

use std::f64::consts::PI;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use ndarray::Array3;
use rand::Rng;

use crate::config::{GaussianPrior, ModelConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gp::eta_field;
use crate::linalg::{log_det, spd_cholesky, CanonicalGaussian};
use crate::state::{Atom, ClusterTable, ParameterState};

/// Relative cluster probabilities for one label update: one entry per
/// existing cluster, then one for a new cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct UrnWeights {
    pub log_weights: Vec<f64>,
    pub normalized: Vec<f64>,
}

impl UrnWeights {
    pub fn from_log_weights(log_weights: Vec<f64>) -> Self {
        let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = log_weights.iter().map(|w| (w - max).exp()).collect();
        let total: f64 = exp.iter().sum();
        let normalized = exp.into_iter().map(|e| e / total).collect();
        UrnWeights { log_weights, normalized }
    }

    pub fn new_cluster_probability(&self) -> f64 {
        *self.normalized.last().expect("weights always include a new-cluster entry")
    }

    pub fn n_existing(&self) -> usize {
        self.normalized.len() - 1
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in self.normalized.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        // Rounding can leave `acc` a hair below 1.
        self.normalized.iter().rposition(|p| *p > 0.0).unwrap_or(0)
    }
}

/// Labels and atoms drawn from the Polya urn.
#[derive(Debug, Clone, PartialEq)]
pub struct UrnDraw<A> {
    pub labels: Vec<usize>,
    pub atoms: Vec<A>,
}

/// Sequential urn draw: site `i` (zero-based) opens a new atom with probability
/// `alpha / (alpha + i)`, otherwise copies the label of a uniformly chosen
/// earlier site.
pub fn urn_prior_sample<A, R, F>(n: usize, alpha: f64, mut base: F, rng: &mut R) -> UrnDraw<A>
where
    R: Rng + ?Sized,
    F: FnMut(&mut R) -> A,
{
    let mut labels = Vec::with_capacity(n);
    let mut atoms = Vec::new();
    for i in 0..n {
        let p_new = alpha / (alpha + i as f64);
        if i == 0 || rng.random::<f64>() < p_new {
            atoms.push(base(rng));
            labels.push(atoms.len() - 1);
        } else {
            let donor = rng.random_range(0..i);
            labels.push(labels[donor]);
        }
    }
    UrnDraw { labels, atoms }
}

/// A Gaussian base measure with cached precision quantities.
#[derive(Debug, Clone)]
pub struct BaseMeasure {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub precision: DMatrix<f64>,
    /// `V^{-1} m`.
    pub precision_mean: DVector<f64>,
    pub log_det_cov: f64,
}

impl BaseMeasure {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Domain("base-measure covariance is not positive definite".into()))?;
        let precision = chol.inverse();
        let precision_mean = chol.solve(&mean);
        let log_det_cov = log_det(&chol);
        Ok(BaseMeasure {
            mean,
            cov,
            precision,
            precision_mean,
            log_det_cov,
        })
    }

    pub fn from_prior(prior: &GaussianPrior, dim: usize) -> Result<Self> {
        Self::new(prior.mean_vector(dim), prior.covariance(dim))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DVector<f64>> {
        crate::linalg::sample_mvn(&self.mean, &self.cov, rng, "base_measure")
    }
}

/// Sufficient statistics of one site's segment for one component, with the
/// non-clustered mean already removed: `r = y - z'gamma - eta`.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentStats {
    pub n_obs: usize,
    pub xtx: DMatrix<f64>,
    pub xtr: DVector<f64>,
    pub rtr: f64,
}

impl SegmentStats {
    pub fn zeros(p: usize) -> Self {
        SegmentStats {
            n_obs: 0,
            xtx: DMatrix::zeros(p, p),
            xtr: DVector::zeros(p),
            rtr: 0.0,
        }
    }

    /// Accumulates `x[site, ., t]` against `y[site, component, t] - offset[site, component, t]`.
    pub fn from_segment(data: &Dataset, offset: &Array3<f64>, site: usize, component: usize, range: Range<usize>) -> Self {
        let p = data.p_x();
        let mut s = SegmentStats::zeros(p);
        for t in range {
            let r = data.y[[site, component, t]] - offset[[site, component, t]];
            for a in 0..p {
                let xa = data.x[[site, a, t]];
                s.xtr[a] += xa * r;
                for b in 0..=a {
                    s.xtx[(a, b)] += xa * data.x[[site, b, t]];
                }
            }
            s.rtr += r * r;
            s.n_obs += 1;
        }
        for a in 0..p {
            for b in 0..a {
                s.xtx[(b, a)] = s.xtx[(a, b)];
            }
        }
        s
    }

    pub fn accumulate(&mut self, other: &SegmentStats) {
        self.n_obs += other.n_obs;
        self.xtx += &other.xtx;
        self.xtr += &other.xtr;
        self.rtr += other.rtr;
    }

    /// `sum_t log N(r_t; x_t' beta, tau2)`.
    pub fn loglik(&self, beta: &[f64], tau2: f64) -> f64 {
        let b = DVector::from_column_slice(beta);
        let quad = self.rtr - 2.0 * b.dot(&self.xtr) + (&self.xtx * &b).dot(&b);
        -0.5 * (self.n_obs as f64 * (2.0 * PI * tau2).ln() + quad / tau2)
    }

    /// Conditional posterior of the coefficients given these statistics and
    /// the base measure.
    pub fn posterior(&self, tau2: f64, base: &BaseMeasure) -> CanonicalGaussian {
        CanonicalGaussian {
            precision: &base.precision + &self.xtx / tau2,
            linear: &base.precision_mean + &self.xtr / tau2,
        }
    }

    /// `log N(r; X m, tau2 I + X V X')` evaluated through the Woodbury and
    /// matrix-determinant identities in `O(p^3)` from the statistics.
    pub fn marginal_loglik(&self, tau2: f64, base: &BaseMeasure) -> Result<f64> {
        if self.n_obs == 0 {
            return Ok(0.0);
        }
        let m = &base.mean;
        // Centre on the prior mean: s = X'(r - X m), q = |r - X m|^2.
        let xtx_m = &self.xtx * m;
        let s = &self.xtr - &xtx_m;
        let q = self.rtr - 2.0 * m.dot(&self.xtr) + xtx_m.dot(m);
        let post_prec = &base.precision + &self.xtx / tau2;
        let chol = spd_cholesky(post_prec, "new_cluster_marginal")?;
        let solved = chol.solve(&s);
        let quad = q / tau2 - s.dot(&solved) / (tau2 * tau2);
        // log|tau2 I + X V X'| = n log tau2 + log|V| + log|V^{-1} + X'X / tau2|.
        let logdet = self.n_obs as f64 * tau2.ln() + base.log_det_cov + log_det(&chol);
        Ok(-0.5 * (self.n_obs as f64 * (2.0 * PI).ln() + logdet + quad))
    }
}

/// Everything the label step needs that stays fixed while labels move:
/// the non-clustered offsets `z'gamma + eta` and one base measure per component.
pub struct LabelContext {
    pub offset: Array3<f64>,
    pub bases: Vec<BaseMeasure>,
    pub segments: Vec<Range<usize>>,
    pub tau2: Vec<f64>,
    pub alpha: f64,
}

impl LabelContext {
    pub fn new(state: &ParameterState, data: &Dataset, config: &ModelConfig) -> Result<Self> {
        let eta = eta_field(&state.lambda, &state.coreg, &state.nu);
        let bases = config
            .priors
            .beta_base
            .iter()
            .map(|p| BaseMeasure::from_prior(p, data.p_x()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::with_parts(state, data, config, &eta, bases))
    }

    pub(crate) fn with_parts(
        state: &ParameterState,
        data: &Dataset,
        config: &ModelConfig,
        eta: &Array3<f64>,
        bases: Vec<BaseMeasure>,
    ) -> Self {
        let segments = data.segments(config.n_partitions);
        let (n, kk, t) = data.y.dim();
        let mut offset = eta.clone();
        for (m, range) in segments.iter().enumerate() {
            for i in 0..n {
                for k in 0..kk {
                    for s in range.clone() {
                        let zg: f64 = (0..data.p_z()).map(|j| data.z[[i, j, s]] * state.gamma[[i, m, k, j]]).sum();
                        offset[[i, k, s]] += zg;
                    }
                }
            }
        }
        debug_assert_eq!(offset.dim(), (n, kk, t));
        LabelContext {
            offset,
            bases,
            segments,
            tau2: state.tau2.clone(),
            alpha: config.dp_concentration,
        }
    }

    /// Per-slot statistics of `site` for the components carried by `table`.
    pub fn site_stats(&self, data: &Dataset, table: &ClusterTable, site: usize) -> Vec<SegmentStats> {
        let range = self.segments[table.partition].clone();
        table
            .components
            .iter()
            .map(|&k| SegmentStats::from_segment(data, &self.offset, site, k, range.clone()))
            .collect()
    }

    /// Weights for a site already detached from `table`.
    pub fn weights_detached(&self, table: &ClusterTable, stats: &[SegmentStats]) -> Result<UrnWeights> {
        let mut log_weights = Vec::with_capacity(table.n_clusters() + 1);
        for (c, atom) in table.atoms.iter().enumerate() {
            let mut w = (table.counts[c] as f64).ln();
            for (slot, &k) in table.components.iter().enumerate() {
                w += stats[slot].loglik(&atom.coefs[slot], self.tau2[k]);
            }
            log_weights.push(w);
        }
        let mut w_new = self.alpha.ln();
        for (slot, &k) in table.components.iter().enumerate() {
            w_new += stats[slot].marginal_loglik(self.tau2[k], &self.bases[k])?;
        }
        log_weights.push(w_new);
        Ok(UrnWeights::from_log_weights(log_weights))
    }

    /// Detach `site`, draw its new label and, for a new cluster, an atom from
    /// the single-site conditional posterior.
    pub fn resample_site<R: Rng + ?Sized>(
        &self,
        data: &Dataset,
        table: &mut ClusterTable,
        site: usize,
        rng: &mut R,
    ) -> Result<()> {
        let stats = self.site_stats(data, table, site);
        self.resample_site_with_stats(table, site, &stats, rng)
    }

    pub fn resample_site_with_stats<R: Rng + ?Sized>(
        &self,
        table: &mut ClusterTable,
        site: usize,
        stats: &[SegmentStats],
        rng: &mut R,
    ) -> Result<()> {
        table.remove_site(site);
        let weights = self.weights_detached(table, stats)?;
        let choice = weights.sample(rng);
        if choice < table.n_clusters() {
            table.assign(site, choice);
        } else {
            let coefs = table
                .components
                .iter()
                .enumerate()
                .map(|(slot, &k)| {
                    let draw = stats[slot].posterior(self.tau2[k], &self.bases[k]).sample(rng, "new_atom")?;
                    Ok(draw.iter().copied().collect())
                })
                .collect::<Result<Vec<Vec<f64>>>>()?;
            table.open_cluster(site, Atom { coefs });
        }
        Ok(())
    }
}

/// Log marginal likelihood of site `site`'s segment in `partition` for
/// `component` with the clustered coefficients integrated against the base measure.
pub fn new_cluster_marginal_loglik(
    site: usize,
    partition: usize,
    component: usize,
    state: &ParameterState,
    data: &Dataset,
    config: &ModelConfig,
) -> Result<f64> {
    let base = BaseMeasure::from_prior(&config.priors.beta_base[component], data.p_x())?;
    let ctx = LabelContext::new(state, data, config)?;
    let range = ctx.segments[partition].clone();
    let stats = SegmentStats::from_segment(data, &ctx.offset, site, component, range);
    stats.marginal_loglik(state.tau2[component], &base)
}

/// Dense form of the segment law with the coefficients integrated out:
/// mean `offset + X m`, covariance `tau2 I + X V X'`. Diagnostic use only.
#[derive(Debug, Clone)]
pub struct MarginalizedGaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

pub fn marginalized_gaussian(
    site: usize,
    partition: usize,
    component: usize,
    state: &ParameterState,
    data: &Dataset,
    config: &ModelConfig,
) -> Result<MarginalizedGaussian> {
    let p = data.p_x();
    let base = BaseMeasure::from_prior(&config.priors.beta_base[component], p)?;
    let ctx = LabelContext::new(state, data, config)?;
    let range = ctx.segments[partition].clone();
    let tm = range.len();
    let x = DMatrix::from_fn(tm, p, |r, c| data.x[[site, c, range.start + r]]);
    let offset = DVector::from_fn(tm, |r, _| ctx.offset[[site, component, range.start + r]]);
    let mean = offset + &x * &base.mean;
    let cov = &x * &base.cov * x.transpose() + DMatrix::identity(tm, tm) * state.tau2[component];
    Ok(MarginalizedGaussian { mean, cov })
}

/// Weights for re-labelling `site` in cluster table `table_index`, computed as
/// if the site were removed from its current cluster.
pub fn label_update_weights(
    state: &ParameterState,
    data: &Dataset,
    config: &ModelConfig,
    table_index: usize,
    site: usize,
) -> Result<UrnWeights> {
    let ctx = LabelContext::new(state, data, config)?;
    let mut table = state.clusters.tables[table_index].clone();
    let stats = ctx.site_stats(data, &table, site);
    table.remove_site(site);
    ctx.weights_detached(&table, &stats)
}

/// Redraws the label of `site` in table `table_index`.
pub fn resample_label<R: Rng + ?Sized>(
    state: &mut ParameterState,
    data: &Dataset,
    config: &ModelConfig,
    table_index: usize,
    site: usize,
    rng: &mut R,
) -> Result<()> {
    let ctx = LabelContext::new(state, data, config)?;
    let table = &mut state.clusters.tables[table_index];
    ctx.resample_site(data, table, site, rng)
}
