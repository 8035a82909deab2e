//! Full-conditional updates, one function per parameter block.
//!
//! Each block exposes its conditional law as a pure function (used by the
//! oracle tests) and an `update_*` function that draws from it for every
//! index of the block.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, Array3};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::config::ModelConfig;
use crate::data::Dataset;
use crate::dp::{BaseMeasure, LabelContext, SegmentStats};
use crate::error::{Error, Result};
use crate::gp::{ar1_step, eta_field, mixed_factors, Ar1Step};
use crate::linalg::CanonicalGaussian;
use crate::state::ParameterState;

/// Quantities fixed for the life of a chain.
#[derive(Debug, Clone)]
pub struct SamplerContext {
    pub config: ModelConfig,
    pub segments: Vec<Range<usize>>,
    pub gamma_priors: Vec<BaseMeasure>,
    pub beta_bases: Vec<BaseMeasure>,
    pub lambda_prior: BaseMeasure,
    /// `transitions[k][l][s]`: OU step of factor `(l, k)` from time `s` to `s + 1`.
    pub transitions: Vec<Vec<Vec<Ar1Step>>>,
}

impl SamplerContext {
    pub fn new(config: &ModelConfig, data: &Dataset) -> Result<Self> {
        let (px, pz, r) = (data.p_x(), data.p_z(), config.n_factors);
        let gamma_priors = config
            .priors
            .gamma
            .iter()
            .map(|p| BaseMeasure::from_prior(p, pz))
            .collect::<Result<Vec<_>>>()?;
        let beta_bases = config
            .priors
            .beta_base
            .iter()
            .map(|p| BaseMeasure::from_prior(p, px))
            .collect::<Result<Vec<_>>>()?;
        let lambda_prior = BaseMeasure::from_prior(&config.priors.lambda, r)?;
        let mut transitions = Vec::with_capacity(config.n_components);
        for k in 0..config.n_components {
            let mut per_factor = Vec::with_capacity(r);
            for l in 0..r {
                let steps = data
                    .times
                    .windows(2)
                    .map(|w| ar1_step(config.decay_rate(k, l), w[1] - w[0]))
                    .collect::<Result<Vec<_>>>()?;
                per_factor.push(steps);
            }
            transitions.push(per_factor);
        }
        Ok(SamplerContext {
            config: config.clone(),
            segments: data.segments(config.n_partitions),
            gamma_priors,
            beta_bases,
            lambda_prior,
            transitions,
        })
    }
}

/// Mean pieces of the current state: `x'beta`, `z'gamma` and `eta`, each `[site, component, time]`.
#[derive(Debug, Clone)]
pub struct Fields {
    pub xb: Array3<f64>,
    pub zg: Array3<f64>,
    pub eta: Array3<f64>,
}

impl Fields {
    pub fn compute(state: &ParameterState, data: &Dataset, ctx: &SamplerContext) -> Self {
        let (xb, zg) = regression_parts(state, data, &ctx.segments);
        let eta = eta_field(&state.lambda, &state.coreg, &state.nu);
        Fields { xb, zg, eta }
    }

    /// `y - x'beta - z'gamma - eta`.
    pub fn residual(&self, data: &Dataset) -> Array3<f64> {
        &data.y - &self.xb - &self.zg - &self.eta
    }
}

pub fn regression_parts(state: &ParameterState, data: &Dataset, segments: &[Range<usize>]) -> (Array3<f64>, Array3<f64>) {
    let (n, kk, t) = data.y.dim();
    let mut xb = Array3::zeros((n, kk, t));
    let mut zg = Array3::zeros((n, kk, t));
    for (m, range) in segments.iter().enumerate() {
        for i in 0..n {
            for k in 0..kk {
                let beta = state.clusters.beta(i, m, k);
                for s in range.clone() {
                    xb[[i, k, s]] = (0..data.p_x()).map(|j| data.x[[i, j, s]] * beta[j]).sum();
                    zg[[i, k, s]] = (0..data.p_z()).map(|j| data.z[[i, j, s]] * state.gamma[[i, m, k, j]]).sum();
                }
            }
        }
    }
    (xb, zg)
}

fn to_vec(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

// ---------------------------------------------------------------- gamma

/// Conditional of `gamma[i, m, k]` given `partial = y - x'beta - eta`.
pub fn gamma_conditional_from(
    partial: &Array3<f64>,
    state: &ParameterState,
    data: &Dataset,
    ctx: &SamplerContext,
    site: usize,
    partition: usize,
    component: usize,
) -> CanonicalGaussian {
    let pz = data.p_z();
    let prior = &ctx.gamma_priors[component];
    let tau2 = state.tau2[component];
    let mut ztz = DMatrix::zeros(pz, pz);
    let mut ztr = DVector::zeros(pz);
    for s in ctx.segments[partition].clone() {
        let r = partial[[site, component, s]];
        for a in 0..pz {
            let za = data.z[[site, a, s]];
            ztr[a] += za * r;
            for b in 0..pz {
                ztz[(a, b)] += za * data.z[[site, b, s]];
            }
        }
    }
    CanonicalGaussian {
        precision: &prior.precision + ztz / tau2,
        linear: &prior.precision_mean + ztr / tau2,
    }
}

pub fn gamma_conditional(
    state: &ParameterState,
    data: &Dataset,
    ctx: &SamplerContext,
    site: usize,
    partition: usize,
    component: usize,
) -> CanonicalGaussian {
    let f = Fields::compute(state, data, ctx);
    let partial = &data.y - &f.xb - &f.eta;
    gamma_conditional_from(&partial, state, data, ctx, site, partition, component)
}

pub fn update_gamma<R: Rng + ?Sized>(state: &mut ParameterState, data: &Dataset, ctx: &SamplerContext, rng: &mut R) -> Result<()> {
    let f = Fields::compute(state, data, ctx);
    let partial = &data.y - &f.xb - &f.eta;
    let (n, m_count, kk, _) = state.gamma.dim();
    for i in 0..n {
        for m in 0..m_count {
            for k in 0..kk {
                let cond = gamma_conditional_from(&partial, state, data, ctx, i, m, k);
                let draw = cond.sample(rng, "gamma")?;
                for (j, v) in draw.iter().enumerate() {
                    state.gamma[[i, m, k, j]] = *v;
                }
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- atoms

fn label_context(state: &ParameterState, data: &Dataset, ctx: &SamplerContext) -> LabelContext {
    let eta = eta_field(&state.lambda, &state.coreg, &state.nu);
    LabelContext::with_parts(state, data, &ctx.config, &eta, ctx.beta_bases.clone())
}

fn pooled_stats(
    lctx: &LabelContext,
    data: &Dataset,
    state: &ParameterState,
    table_index: usize,
    cluster: usize,
    component: usize,
) -> SegmentStats {
    let table = &state.clusters.tables[table_index];
    let range = lctx.segments[table.partition].clone();
    let mut pooled = SegmentStats::zeros(data.p_x());
    for i in table.members(cluster) {
        pooled.accumulate(&SegmentStats::from_segment(data, &lctx.offset, i, component, range.clone()));
    }
    pooled
}

/// Conditional of the atom of `cluster` in table `table_index` for `component`,
/// pooling every member site's segment.
pub fn atom_conditional(
    state: &ParameterState,
    data: &Dataset,
    ctx: &SamplerContext,
    table_index: usize,
    cluster: usize,
    component: usize,
) -> CanonicalGaussian {
    let lctx = label_context(state, data, ctx);
    pooled_stats(&lctx, data, state, table_index, cluster, component).posterior(state.tau2[component], &ctx.beta_bases[component])
}

pub fn update_beta_atoms<R: Rng + ?Sized>(state: &mut ParameterState, data: &Dataset, ctx: &SamplerContext, rng: &mut R) -> Result<()> {
    let lctx = label_context(state, data, ctx);
    for ti in 0..state.clusters.tables.len() {
        let components = state.clusters.tables[ti].components.clone();
        for c in 0..state.clusters.tables[ti].n_clusters() {
            for (slot, &k) in components.iter().enumerate() {
                let cond = pooled_stats(&lctx, data, state, ti, c, k).posterior(state.tau2[k], &ctx.beta_bases[k]);
                let draw = cond.sample(rng, "atoms")?;
                state.clusters.tables[ti].atoms[c].coefs[slot] = to_vec(&draw);
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- labels

/// One collapsed pass over every site of every cluster table, in site order.
pub fn update_labels<R: Rng + ?Sized>(state: &mut ParameterState, data: &Dataset, ctx: &SamplerContext, rng: &mut R) -> Result<()> {
    let lctx = label_context(state, data, ctx);
    let n = data.n_sites();
    for table in state.clusters.tables.iter_mut() {
        for i in 0..n {
            lctx.resample_site(data, table, i, rng)?;
        }
    }
    Ok(())
}

/// Label pass over a single table, leaving the others untouched.
pub fn update_labels_in_table<R: Rng + ?Sized>(
    state: &mut ParameterState,
    data: &Dataset,
    ctx: &SamplerContext,
    table_index: usize,
    rng: &mut R,
) -> Result<()> {
    let lctx = label_context(state, data, ctx);
    let table = &mut state.clusters.tables[table_index];
    for i in 0..data.n_sites() {
        lctx.resample_site(data, table, i, rng)?;
    }
    Ok(())
}

// ---------------------------------------------------------------- lambda

/// Conditional of loading row `Lambda[k, i, .]` given `omega` and `partial = y - x'beta - z'gamma`.
pub fn lambda_conditional_from(
    omega: &Array3<f64>,
    partial: &Array3<f64>,
    state: &ParameterState,
    ctx: &SamplerContext,
    site: usize,
    component: usize,
) -> CanonicalGaussian {
    let r = state.n_factors();
    let t = partial.dim().2;
    let tau2 = state.tau2[component];
    let mut gram = DMatrix::zeros(r, r);
    let mut lin = DVector::zeros(r);
    for s in 0..t {
        let res = partial[[site, component, s]];
        for a in 0..r {
            let wa = omega[[component, a, s]];
            lin[a] += wa * res;
            for b in 0..r {
                gram[(a, b)] += wa * omega[[component, b, s]];
            }
        }
    }
    CanonicalGaussian {
        precision: &ctx.lambda_prior.precision + gram / tau2,
        linear: &ctx.lambda_prior.precision_mean + lin / tau2,
    }
}

pub fn lambda_conditional(state: &ParameterState, data: &Dataset, ctx: &SamplerContext, site: usize, component: usize) -> CanonicalGaussian {
    let (xb, zg) = regression_parts(state, data, &ctx.segments);
    let partial = &data.y - &xb - &zg;
    let omega = mixed_factors(&state.coreg, &state.nu);
    lambda_conditional_from(&omega, &partial, state, ctx, site, component)
}

pub fn update_lambda<R: Rng + ?Sized>(state: &mut ParameterState, data: &Dataset, ctx: &SamplerContext, rng: &mut R) -> Result<()> {
    let (xb, zg) = regression_parts(state, data, &ctx.segments);
    let partial = &data.y - &xb - &zg;
    let omega = mixed_factors(&state.coreg, &state.nu);
    let (kk, n, r) = state.lambda.dim();
    let t = data.n_times();
    for k in 0..kk {
        // The Gram term is shared by all sites of a component.
        let mut gram = DMatrix::zeros(r, r);
        for s in 0..t {
            for a in 0..r {
                for b in 0..r {
                    gram[(a, b)] += omega[[k, a, s]] * omega[[k, b, s]];
                }
            }
        }
        let tau2 = state.tau2[k];
        let precision = &ctx.lambda_prior.precision + gram / tau2;
        for i in 0..n {
            let mut lin = DVector::zeros(r);
            for s in 0..t {
                let res = partial[[i, k, s]];
                for a in 0..r {
                    lin[a] += omega[[k, a, s]] * res;
                }
            }
            let cond = CanonicalGaussian {
                precision: precision.clone(),
                linear: &ctx.lambda_prior.precision_mean + lin / tau2,
            };
            let draw = cond.sample(rng, "lambda")?;
            for (l, v) in draw.iter().enumerate() {
                state.lambda[[k, i, l]] = *v;
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- coregionalization

/// `(mean, variance)` of `A[k, l]`, `k > l`, given every other entry and
/// `partial = y - x'beta - z'gamma`.
pub fn coreg_conditional_from(
    partial: &Array3<f64>,
    state: &ParameterState,
    ctx: &SamplerContext,
    k: usize,
    l: usize,
) -> (f64, f64) {
    let (kk, n, r) = state.lambda.dim();
    let t = partial.dim().2;
    let tau2 = state.tau2[k];
    let prior = &ctx.config.priors;
    let mut prec = 1.0 / prior.a_var;
    let mut lin = prior.a_mean / prior.a_var;
    let mut uu = 0.0;
    let mut ue = 0.0;
    for s in 0..t {
        for i in 0..n {
            let load = |j: usize| -> f64 { (0..r).map(|f| state.lambda[[k, i, f]] * state.nu[[f, j, s]]).sum() };
            let u = load(l);
            let mut e = partial[[i, k, s]];
            for j in 0..kk {
                if j != l {
                    e -= state.coreg[[k, j]] * load(j);
                }
            }
            uu += u * u;
            ue += u * e;
        }
    }
    prec += uu / tau2;
    lin += ue / tau2;
    (lin / prec, 1.0 / prec)
}

pub fn coreg_conditional(state: &ParameterState, data: &Dataset, ctx: &SamplerContext, k: usize, l: usize) -> (f64, f64) {
    let (xb, zg) = regression_parts(state, data, &ctx.segments);
    let partial = &data.y - &xb - &zg;
    coreg_conditional_from(&partial, state, ctx, k, l)
}

/// Draws every strictly-lower entry of `A` in row-major order; the diagonal
/// stays 1 and the upper triangle 0.
pub fn update_coreg<R: Rng + ?Sized>(state: &mut ParameterState, data: &Dataset, ctx: &SamplerContext, rng: &mut R) -> Result<()> {
    let kk = state.coreg.nrows();
    if kk < 2 {
        return Ok(());
    }
    let (xb, zg) = regression_parts(state, data, &ctx.segments);
    let partial = &data.y - &xb - &zg;
    for k in 1..kk {
        for l in 0..k {
            let (mean, var) = coreg_conditional_from(&partial, state, ctx, k, l);
            if !(var > 0.0 && mean.is_finite()) {
                return Err(Error::numerical("coreg", format!("degenerate conditional for A[{k},{l}]")));
            }
            let e: f64 = rng.sample(StandardNormal);
            state.coreg[[k, l]] = mean + var.sqrt() * e;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- tau2

/// Inverse-gamma `(shape, rate)` of `tau2[k]` given the full residual.
pub fn tau2_conditional_from(residual: &Array3<f64>, ctx: &SamplerContext, k: usize) -> (f64, f64) {
    let (n, _, t) = residual.dim();
    let mut ss = 0.0;
    for i in 0..n {
        for s in 0..t {
            let r = residual[[i, k, s]];
            ss += r * r;
        }
    }
    let p = &ctx.config.priors;
    (p.tau2_shape[k] + (t * n) as f64 / 2.0, p.tau2_rate[k] + 0.5 * ss)
}

pub fn tau2_conditional(state: &ParameterState, data: &Dataset, ctx: &SamplerContext, k: usize) -> (f64, f64) {
    let residual = Fields::compute(state, data, ctx).residual(data);
    tau2_conditional_from(&residual, ctx, k)
}

pub fn sample_inverse_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    let g = Gamma::new(shape, 1.0 / rate).map_err(|e| Error::numerical("tau2", format!("invalid gamma({shape}, {rate}): {e}")))?;
    Ok(1.0 / g.sample(rng))
}

pub fn update_tau2<R: Rng + ?Sized>(state: &mut ParameterState, data: &Dataset, ctx: &SamplerContext, rng: &mut R) -> Result<()> {
    let residual = Fields::compute(state, data, ctx).residual(data);
    for k in 0..state.tau2.len() {
        let (shape, rate) = tau2_conditional_from(&residual, ctx, k);
        let v = sample_inverse_gamma(shape, rate, rng)?;
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::numerical("tau2", format!("draw {v} for component {k}")));
        }
        state.tau2[k] = v;
    }
    Ok(())
}

// ---------------------------------------------------------------- factor paths

/// Per-component data terms of the factor update: `G[l] = Lambda_l' Lambda_l`
/// and `h[l, t, .] = Lambda_l' (y_l(t) - x'beta - z'gamma)`.
pub struct FactorDataTerms {
    pub gram: Vec<DMatrix<f64>>,
    pub proj: Array3<f64>,
}

impl FactorDataTerms {
    pub fn new(state: &ParameterState, partial: &Array3<f64>) -> Self {
        let (kk, n, r) = state.lambda.dim();
        let t = partial.dim().2;
        let gram = (0..kk)
            .map(|l| DMatrix::from_fn(r, r, |a, b| (0..n).map(|i| state.lambda[[l, i, a]] * state.lambda[[l, i, b]]).sum()))
            .collect();
        let mut proj = Array3::zeros((kk, t, r));
        for l in 0..kk {
            for s in 0..t {
                for f in 0..r {
                    proj[[l, s, f]] = (0..n).map(|i| state.lambda[[l, i, f]] * partial[[i, l, s]]).sum();
                }
            }
        }
        FactorDataTerms { gram, proj }
    }
}

/// Conditional of the r-vector `nu[., k, t]` given its time neighbours, the
/// other components' paths at `t`, and the data.
pub fn nu_conditional_from(terms: &FactorDataTerms, state: &ParameterState, ctx: &SamplerContext, k: usize, t: usize) -> CanonicalGaussian {
    let (r, kk, nt) = state.nu.dim();
    let a = &state.coreg;
    let mut out = CanonicalGaussian::zeros(r);
    for f in 0..r {
        let (mut prec, mut lin) = if t == 0 {
            (1.0, 0.0)
        } else {
            let step = ctx.transitions[k][f][t - 1];
            let v = step.guarded_variance();
            (1.0 / v, step.mean_multiplier * state.nu[[f, k, t - 1]] / v)
        };
        if t + 1 < nt {
            let step = ctx.transitions[k][f][t];
            let v = step.guarded_variance();
            let rho = step.mean_multiplier;
            prec += rho * rho / v;
            lin += rho * state.nu[[f, k, t + 1]] / v;
        }
        out.precision[(f, f)] = prec;
        out.linear[f] = lin;
    }
    for l in 0..kk {
        let alk = a[[l, k]];
        if alk == 0.0 {
            continue;
        }
        let w = alk / state.tau2[l];
        out.precision += &terms.gram[l] * (alk * w);
        let mut h = DVector::from_fn(r, |f, _| terms.proj[[l, t, f]]);
        for k2 in 0..kk {
            if k2 == k || a[[l, k2]] == 0.0 {
                continue;
            }
            let other = DVector::from_fn(r, |f, _| state.nu[[f, k2, t]]);
            h -= &terms.gram[l] * other * a[[l, k2]];
        }
        out.linear += h * w;
    }
    out
}

pub fn nu_conditional(state: &ParameterState, data: &Dataset, ctx: &SamplerContext, k: usize, t: usize) -> CanonicalGaussian {
    let (xb, zg) = regression_parts(state, data, &ctx.segments);
    let partial = &data.y - &xb - &zg;
    let terms = FactorDataTerms::new(state, &partial);
    nu_conditional_from(&terms, state, ctx, k, t)
}

/// Forward pass over time for each component, one r-vector at a time.
pub fn update_nu<R: Rng + ?Sized>(state: &mut ParameterState, data: &Dataset, ctx: &SamplerContext, rng: &mut R) -> Result<()> {
    let (xb, zg) = regression_parts(state, data, &ctx.segments);
    let partial = &data.y - &xb - &zg;
    let terms = FactorDataTerms::new(state, &partial);
    let (_, kk, nt) = state.nu.dim();
    for k in 0..kk {
        for t in 0..nt {
            let draw = nu_conditional_from(&terms, state, ctx, k, t).sample(rng, "nu")?;
            for (f, v) in draw.iter().enumerate() {
                state.nu[[f, k, t]] = *v;
            }
        }
    }
    Ok(())
}

/// Gaussian log-likelihood of the data given the full state.
pub fn data_loglik(state: &ParameterState, data: &Dataset, ctx: &SamplerContext) -> f64 {
    let residual = Fields::compute(state, data, ctx).residual(data);
    let (n, kk, t) = residual.dim();
    let mut total = 0.0;
    for k in 0..kk {
        let tau2 = state.tau2[k];
        let norm = (2.0 * std::f64::consts::PI * tau2).ln();
        for i in 0..n {
            for s in 0..t {
                let r = residual[[i, k, s]];
                total -= 0.5 * (norm + r * r / tau2);
            }
        }
    }
    total
}

/// Coregionalization matrix with unit diagonal and the prior mean below it.
pub fn initial_coreg(config: &ModelConfig) -> Array2<f64> {
    let kk = config.n_components;
    Array2::from_shape_fn((kk, kk), |(a, b)| match a.cmp(&b) {
        std::cmp::Ordering::Equal => 1.0,
        std::cmp::Ordering::Greater => config.priors.a_mean,
        std::cmp::Ordering::Less => 0.0,
    })
}
