//! Latent factor processes.
//!
//! Each factor path `nu[l, j, .]` is a unit-variance Ornstein-Uhlenbeck
//! process with rate `decay_rates[j][l]`. Factors are mixed across components
//! by the coregionalization matrix, `omega[k, l, t] = sum_j A[k, j] nu[l, j, t]`,
//! and loaded onto sites, `eta[i, k, t] = sum_l Lambda[k, i, l] omega[k, l, t]`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, Array3};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::ModelConfig;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::spd_cholesky;
use crate::state::ParameterState;

/// Floor applied to innovation variances before they are used as Gaussian variances.
pub const INNOVATION_FLOOR: f64 = 1e-15;

/// Transition of a unit-variance OU process across a gap:
/// `x(t + d) | x(t) ~ N(mean_multiplier * x(t), innovation_variance)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ar1Step {
    pub mean_multiplier: f64,
    pub innovation_variance: f64,
}

impl Ar1Step {
    /// Innovation variance floored at [`INNOVATION_FLOOR`].
    pub fn guarded_variance(&self) -> f64 {
        self.innovation_variance.max(INNOVATION_FLOOR)
    }
}

pub fn ar1_step(phi: f64, delta_t: f64) -> Result<Ar1Step> {
    if !(phi > 0.0 && phi.is_finite()) {
        return Err(Error::Domain(format!("decay rate must be positive, got {phi}")));
    }
    if !(delta_t >= 0.0) {
        return Err(Error::Domain(format!("time gap must be nonnegative, got {delta_t}")));
    }
    Ok(Ar1Step {
        mean_multiplier: (-phi * delta_t).exp(),
        innovation_variance: -(-2.0 * phi * delta_t).exp_m1(),
    })
}

fn log_normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * ((2.0 * PI * var).ln() + d * d / var)
}

/// Log density of a unit-variance OU path observed at `times`, accumulated
/// one transition at a time.
pub fn sequential_log_density(path: &[f64], times: &[f64], phi: f64) -> Result<f64> {
    if path.is_empty() || path.len() != times.len() {
        return Err(Error::Domain(format!(
            "path of length {} does not match {} times",
            path.len(),
            times.len()
        )));
    }
    let mut total = log_normal_pdf(path[0], 0.0, 1.0);
    for s in 1..path.len() {
        let gap = times[s] - times[s - 1];
        if !(gap > 0.0) {
            return Err(Error::Domain(format!("times must be strictly increasing at index {s}")));
        }
        let step = ar1_step(phi, gap)?;
        total += log_normal_pdf(path[s], step.mean_multiplier * path[s - 1], step.guarded_variance());
    }
    Ok(total)
}

/// Draws one OU path at `times` into `out`.
pub fn simulate_path<R: Rng + ?Sized>(phi: f64, times: &[f64], rng: &mut R, out: &mut [f64]) -> Result<()> {
    let mut prev = 0.0;
    for (s, slot) in out.iter_mut().enumerate() {
        let e: f64 = rng.sample(StandardNormal);
        let v = if s == 0 {
            e
        } else {
            let step = ar1_step(phi, times[s] - times[s - 1])?;
            step.mean_multiplier * prev + step.innovation_variance.sqrt() * e
        };
        *slot = v;
        prev = v;
    }
    Ok(())
}

/// Independent factor paths `[factor, component, time]`, path `(l, k)` with
/// rate `decay_rates[k][l]`.
pub fn simulate_factors<R: Rng + ?Sized>(config: &ModelConfig, times: &[f64], rng: &mut R) -> Result<Array3<f64>> {
    let (r, k) = (config.n_factors, config.n_components);
    let mut nu = Array3::zeros((r, k, times.len()));
    let mut buf = vec![0.0; times.len()];
    for l in 0..r {
        for j in 0..k {
            simulate_path(config.decay_rate(j, l), times, rng, &mut buf)?;
            for (t, v) in buf.iter().enumerate() {
                nu[[l, j, t]] = *v;
            }
        }
    }
    Ok(nu)
}

/// `omega[k, l, t] = sum_j A[k, j] nu[l, j, t]`.
pub fn mixed_factors(coreg: &Array2<f64>, nu: &Array3<f64>) -> Array3<f64> {
    let (r, kk, t) = nu.dim();
    let mut omega = Array3::zeros((kk, r, t));
    for k in 0..kk {
        for j in 0..kk {
            let a = coreg[[k, j]];
            if a == 0.0 {
                continue;
            }
            for l in 0..r {
                for s in 0..t {
                    omega[[k, l, s]] += a * nu[[l, j, s]];
                }
            }
        }
    }
    omega
}

/// The full residual field `eta[i, k, t]`.
pub fn eta_field(lambda: &Array3<f64>, coreg: &Array2<f64>, nu: &Array3<f64>) -> Array3<f64> {
    let omega = mixed_factors(coreg, nu);
    let (kk, n, r) = lambda.dim();
    let t = nu.dim().2;
    let mut eta = Array3::zeros((n, kk, t));
    for k in 0..kk {
        for i in 0..n {
            for l in 0..r {
                let w = lambda[[k, i, l]];
                if w == 0.0 {
                    continue;
                }
                for s in 0..t {
                    eta[[i, k, s]] += w * omega[[k, l, s]];
                }
            }
        }
    }
    eta
}

/// `eta_i^(k)(t) = sum_l Lambda[k, i, l] * sum_j A[k, j] nu[l, j, t]`.
pub fn assemble_eta(
    lambda: &Array3<f64>,
    coreg: &Array2<f64>,
    nu: &Array3<f64>,
    site: usize,
    component: usize,
    time_index: usize,
) -> Result<f64> {
    let (kk, n, r) = lambda.dim();
    let (nr, nk, nt) = nu.dim();
    if site >= n || component >= kk || time_index >= nt {
        return Err(Error::Domain(format!(
            "index (site {site}, component {component}, time {time_index}) out of range ({n}, {kk}, {nt})"
        )));
    }
    if nr != r || nk != kk || coreg.dim() != (kk, kk) {
        return Err(Error::Domain("lambda, coreg and nu shapes disagree".into()));
    }
    Ok((0..r)
        .map(|l| {
            let omega: f64 = (0..kk).map(|j| coreg[[component, j]] * nu[[l, j, time_index]]).sum();
            lambda[[component, site, l]] * omega
        })
        .sum())
}

/// Indices and times of a covariance evaluation `cov(eta_i^(k)(t), eta_j^(l)(t'))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceQuery {
    pub site_i: usize,
    pub site_j: usize,
    pub comp_k: usize,
    pub comp_l: usize,
    pub t: f64,
    pub t_prime: f64,
}

impl CovarianceQuery {
    pub fn swapped(&self) -> Self {
        CovarianceQuery {
            site_i: self.site_j,
            site_j: self.site_i,
            comp_k: self.comp_l,
            comp_l: self.comp_k,
            t: self.t_prime,
            t_prime: self.t,
        }
    }
}

/// Cross-covariance of the factor residuals,
/// `sum_l sum_j Lambda[k,i,l] Lambda[k',i',l] A[k,j] A[k',j] exp(-phi[j][l] |t' - t|)`.
///
/// When the rates depend on the mixing component only this factorises as
/// `(Lambda_i^(k))' Lambda_i'^(k') sum_j A[k,j] A[k',j] exp(-phi_j |t' - t|)`.
pub fn cross_covariance(query: &CovarianceQuery, lambda: &Array3<f64>, coreg: &Array2<f64>, decay_rates: &[Vec<f64>]) -> f64 {
    let lag = (query.t_prime - query.t).abs();
    let (kk, _, r) = lambda.dim();
    let (k1, k2, i1, i2) = (query.comp_k, query.comp_l, query.site_i, query.site_j);
    let mut total = 0.0;
    for j in 0..kk {
        let a = coreg[[k1, j]] * coreg[[k2, j]];
        if a == 0.0 {
            continue;
        }
        for l in 0..r {
            total += a * lambda[[k1, i1, l]] * lambda[[k2, i2, l]] * (-decay_rates[j][l] * lag).exp();
        }
    }
    total
}

/// Joint normal law of the stacked observation vectors `(Y(t), Y(t'))`,
/// each ordered site-major (`index = i * K + k`).
#[derive(Debug, Clone)]
pub struct JointGaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// Length of each half (`n * K`).
    pub half: usize,
}

impl JointGaussian {
    /// Law of `Y(t') | Y(t) = y_first`:
    /// mean `m' + C' S^{-1} (y - m)`, covariance `S' - C' S^{-1} C`.
    pub fn conditional_second(&self, y_first: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let h = self.half;
        let s11 = self.cov.view((0, 0), (h, h)).into_owned();
        let s12 = self.cov.view((0, h), (h, h)).into_owned();
        let s22 = self.cov.view((h, h), (h, h)).into_owned();
        let m1 = self.mean.rows(0, h).into_owned();
        let m2 = self.mean.rows(h, h).into_owned();
        let chol = spd_cholesky(s11, "joint_gaussian")?;
        let w = chol.solve(&(y_first - m1));
        let mean = m2 + s12.transpose() * w;
        let cov = s22 - s12.transpose() * chol.solve(&s12);
        Ok((mean, cov))
    }
}

/// Joint Gaussian of `(Y(t), Y(t'))` at time indices `t_index`, `t_prime_index`
/// given everything but the factor paths.
pub fn joint_gaussian(
    state: &ParameterState,
    data: &Dataset,
    config: &ModelConfig,
    t_index: usize,
    t_prime_index: usize,
) -> JointGaussian {
    let n = data.n_sites();
    let kk = data.n_components();
    let h = n * kk;
    let times = [data.times[t_index], data.times[t_prime_index]];
    let indices = [t_index, t_prime_index];
    let mut mean = DVector::zeros(2 * h);
    for (half, &ti) in indices.iter().enumerate() {
        let m = data.partition_of[ti];
        for i in 0..n {
            for k in 0..kk {
                let beta = state.clusters.beta(i, m, k);
                let xb: f64 = (0..data.p_x()).map(|j| data.x[[i, j, ti]] * beta[j]).sum();
                let zg: f64 = (0..data.p_z()).map(|j| data.z[[i, j, ti]] * state.gamma[[i, m, k, j]]).sum();
                mean[half * h + i * kk + k] = xb + zg;
            }
        }
    }
    let mut cov = DMatrix::zeros(2 * h, 2 * h);
    for a in 0..2 {
        for b in 0..2 {
            for i in 0..n {
                for k in 0..kk {
                    for i2 in 0..n {
                        for k2 in 0..kk {
                            let q = CovarianceQuery {
                                site_i: i,
                                site_j: i2,
                                comp_k: k,
                                comp_l: k2,
                                t: times[a],
                                t_prime: times[b],
                            };
                            let mut v = cross_covariance(&q, &state.lambda, &state.coreg, &config.decay_rates);
                            if a == b && i == i2 && k == k2 {
                                v += state.tau2[k];
                            }
                            cov[(a * h + i * kk + k, b * h + i2 * kk + k2)] = v;
                        }
                    }
                }
            }
        }
    }
    JointGaussian { mean, cov, half: h }
}
