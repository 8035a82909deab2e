//! Builders and dense reference computations shared by the integration tests.
//!
//! The oracles work in covariance form (Schur complements of joint Gaussians)
//! so they share no arithmetic with the sampler's precision-form updates.
#![allow(dead_code)]

use fdclust::pipeline::synthetic::{fill_responses, regular_times, sample_prior_state, synthetic_design};
use fdclust::{Dataset, DpMode, GaussianPrior, McmcSchedule, ModelConfig, ParameterState, PriorSpec};
use nalgebra::{DMatrix, DVector};
use ndarray::Array3;
use rand::Rng;

pub const PHI_GRID: [f64; 3] = [1.0 / 24.0, 1.0 / 3.0, 1.0];

pub fn config(n: usize, k: usize, r: usize, m: usize, mode: DpMode) -> ModelConfig {
    let rates: Vec<f64> = [1.0 / 24.0, 1.0 / 3.0, 1.0, 2.0][..r].to_vec();
    ModelConfig {
        n_sites: n,
        n_components: k,
        n_factors: r,
        n_partitions: m,
        decay_rates: vec![rates; k],
        dp_concentration: 1.0,
        dp_mode: mode,
        priors: PriorSpec::isotropic(k, 4.0, 1.0, 1.0, 1.0, (5.0, 4.0)),
        mcmc: McmcSchedule { n_iterations: 10, burn_in: 0, thin: 1, rng_seed: 11, n_chains: 1, retain_factor_paths: true },
    }
}

/// Prior draw of every parameter plus responses simulated from it.
pub fn synthetic<R: Rng>(cfg: &ModelConfig, n_times: usize, px: usize, pz: usize, rng: &mut R) -> (Dataset, ParameterState) {
    let (times, partition_of) = regular_times(n_times, 1.0, cfg.n_partitions);
    let mut data = synthetic_design(cfg.n_sites, cfg.n_components, px, pz, times, partition_of, 1.0, rng).unwrap();
    let state = sample_prior_state(cfg, &data, rng).unwrap();
    fill_responses(cfg, &state, &mut data, rng);
    (data, state)
}

/// Irregular increasing times starting at zero with gaps in `(0.05, 5)` hours.
pub fn irregular_times<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut t = 0.0;
    (0..n)
        .map(|_| {
            let now = t;
            t += rng.random_range(0.05..5.0);
            now
        })
        .collect()
}

pub fn exp_correlation(times: &[f64], phi: f64) -> DMatrix<f64> {
    DMatrix::from_fn(times.len(), times.len(), |a, b| (-phi * (times[a] - times[b]).abs()).exp())
}

pub fn mvn_logpdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let chol = cov.clone().cholesky().expect("oracle covariance is positive definite");
    let d = x - mean;
    let sol = chol.solve(&d);
    let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    -0.5 * (x.len() as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + d.dot(&sol))
}

/// Posterior of `b ~ N(m0, v0)` after observing `y = h b + e`, `e ~ N(0, noise)`,
/// by conditioning the joint Gaussian of `(b, y)`.
pub fn condition(m0: &DVector<f64>, v0: &DMatrix<f64>, h: &DMatrix<f64>, y: &DVector<f64>, noise: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let s = h * v0 * h.transpose() + noise;
    let cross = v0 * h.transpose();
    let s_inv = s.try_inverse().expect("innovation covariance invertible");
    let gain = &cross * s_inv;
    let mean = m0 + &gain * (y - h * m0);
    let cov = v0 - &gain * cross.transpose();
    (mean, cov)
}

pub fn prior_moments(prior: &GaussianPrior, dim: usize) -> (DVector<f64>, DMatrix<f64>) {
    (prior.mean_vector(dim), prior.covariance(dim))
}

/// `eta[i, k, t] = sum_l Lambda[k, i, l] sum_j A[k, j] nu[l, j, t]`, by direct summation.
pub fn eta_direct(state: &ParameterState) -> Array3<f64> {
    let (kk, n, r) = state.lambda.dim();
    let t = state.nu.dim().2;
    Array3::from_shape_fn((n, kk, t), |(i, k, s)| {
        let mut v = 0.0;
        for l in 0..r {
            for j in 0..kk {
                v += state.lambda[[k, i, l]] * state.coreg[[k, j]] * state.nu[[l, j, s]];
            }
        }
        v
    })
}

pub fn xb_direct(state: &ParameterState, data: &Dataset) -> Array3<f64> {
    let (n, kk, t) = data.y.dim();
    Array3::from_shape_fn((n, kk, t), |(i, k, s)| {
        let beta = state.clusters.beta(i, data.partition_of[s], k);
        (0..data.p_x()).map(|j| data.x[[i, j, s]] * beta[j]).sum()
    })
}

pub fn zg_direct(state: &ParameterState, data: &Dataset) -> Array3<f64> {
    let (n, kk, t) = data.y.dim();
    Array3::from_shape_fn((n, kk, t), |(i, k, s)| {
        (0..data.p_z()).map(|j| data.z[[i, j, s]] * state.gamma[[i, data.partition_of[s], k, j]]).sum()
    })
}

pub fn times_in(data: &Dataset, m: usize) -> Vec<usize> {
    (0..data.n_times()).filter(|&s| data.partition_of[s] == m).collect()
}

/// Dense conditional of `gamma[i, m, k]`.
pub fn gamma_oracle(cfg: &ModelConfig, state: &ParameterState, data: &Dataset, i: usize, m: usize, k: usize) -> (DVector<f64>, DMatrix<f64>) {
    let partial = &data.y - &xb_direct(state, data) - &eta_direct(state);
    let ts = times_in(data, m);
    let pz = data.p_z();
    let h = DMatrix::from_fn(ts.len(), pz, |r, c| data.z[[i, c, ts[r]]]);
    let y = DVector::from_fn(ts.len(), |r, _| partial[[i, k, ts[r]]]);
    let (m0, v0) = prior_moments(&cfg.priors.gamma[k], pz);
    condition(&m0, &v0, &h, &y, &(DMatrix::identity(ts.len(), ts.len()) * state.tau2[k]))
}

/// Dense conditional of atom `cluster` of table `ti` for component `k`, stacking every member's segment.
pub fn atom_oracle(cfg: &ModelConfig, state: &ParameterState, data: &Dataset, ti: usize, cluster: usize, k: usize) -> (DVector<f64>, DMatrix<f64>) {
    let table = &state.clusters.tables[ti];
    let partial = &data.y - &zg_direct(state, data) - &eta_direct(state);
    let ts = times_in(data, table.partition);
    let members: Vec<usize> = (0..table.labels.len()).filter(|&i| table.labels[i] == cluster).collect();
    let rows: Vec<(usize, usize)> = members.iter().flat_map(|&i| ts.iter().map(move |&s| (i, s))).collect();
    let px = data.p_x();
    let h = DMatrix::from_fn(rows.len(), px, |r, c| data.x[[rows[r].0, c, rows[r].1]]);
    let y = DVector::from_fn(rows.len(), |r, _| partial[[rows[r].0, k, rows[r].1]]);
    let (m0, v0) = prior_moments(&cfg.priors.beta_base[k], px);
    condition(&m0, &v0, &h, &y, &(DMatrix::identity(rows.len(), rows.len()) * state.tau2[k]))
}

/// Dense conditional of loading row `Lambda[k, i, .]`.
pub fn lambda_oracle(cfg: &ModelConfig, state: &ParameterState, data: &Dataset, i: usize, k: usize) -> (DVector<f64>, DMatrix<f64>) {
    let partial = &data.y - &xb_direct(state, data) - &zg_direct(state, data);
    let (kk, _, r) = state.lambda.dim();
    let t = data.n_times();
    let h = DMatrix::from_fn(t, r, |s, l| (0..kk).map(|j| state.coreg[[k, j]] * state.nu[[l, j, s]]).sum());
    let y = DVector::from_fn(t, |s, _| partial[[i, k, s]]);
    let (m0, v0) = prior_moments(&cfg.priors.lambda, r);
    condition(&m0, &v0, &h, &y, &(DMatrix::identity(t, t) * state.tau2[k]))
}

/// Dense conditional of `A[k, l]`, `k > l`.
pub fn coreg_oracle(cfg: &ModelConfig, state: &ParameterState, data: &Dataset, k: usize, l: usize) -> (f64, f64) {
    let partial = &data.y - &xb_direct(state, data) - &zg_direct(state, data);
    let (kk, n, r) = state.lambda.dim();
    let t = data.n_times();
    let load = |i: usize, j: usize, s: usize| -> f64 { (0..r).map(|f| state.lambda[[k, i, f]] * state.nu[[f, j, s]]).sum() };
    let rows: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..t).map(move |s| (i, s))).collect();
    let h = DMatrix::from_fn(rows.len(), 1, |q, _| load(rows[q].0, l, rows[q].1));
    let y = DVector::from_fn(rows.len(), |q, _| {
        let (i, s) = rows[q];
        partial[[i, k, s]] - (0..kk).filter(|&j| j != l).map(|j| state.coreg[[k, j]] * load(i, j, s)).sum::<f64>()
    });
    let m0 = DVector::from_element(1, cfg.priors.a_mean);
    let v0 = DMatrix::from_element(1, 1, cfg.priors.a_var);
    let (m, v) = condition(&m0, &v0, &h, &y, &(DMatrix::identity(rows.len(), rows.len()) * state.tau2[k]));
    (m[0], v[(0, 0)])
}

/// Inverse-gamma `(shape, rate)` of `tau2[k]`.
pub fn tau2_oracle(cfg: &ModelConfig, state: &ParameterState, data: &Dataset, k: usize) -> (f64, f64) {
    let resid = &data.y - &xb_direct(state, data) - &zg_direct(state, data) - &eta_direct(state);
    let (n, _, t) = resid.dim();
    let ss: f64 = (0..n).flat_map(|i| (0..t).map(move |s| (i, s))).map(|(i, s)| resid[[i, k, s]].powi(2)).sum();
    (cfg.priors.tau2_shape[k] + (n * t) as f64 / 2.0, cfg.priors.tau2_rate[k] + ss / 2.0)
}

/// Dense conditional of the r-vector `nu[., k, t]`: each factor path's
/// prior conditional from its full correlation matrix, then the time-`t`
/// observations of every response.
pub fn nu_oracle(cfg: &ModelConfig, state: &ParameterState, data: &Dataset, k: usize, t: usize) -> (DVector<f64>, DMatrix<f64>) {
    let (r, kk, nt) = state.nu.dim();
    let n = data.n_sites();
    let mut m0 = DVector::zeros(r);
    let mut v0 = DMatrix::zeros(r, r);
    for f in 0..r {
        let cov = exp_correlation(&data.times, cfg.decay_rates[k][f]);
        let others: Vec<usize> = (0..nt).filter(|&s| s != t).collect();
        if others.is_empty() {
            v0[(f, f)] = 1.0;
            continue;
        }
        let c_oo = DMatrix::from_fn(others.len(), others.len(), |a, b| cov[(others[a], others[b])]);
        let c_to = DMatrix::from_fn(1, others.len(), |_, b| cov[(t, others[b])]);
        let x_o = DVector::from_fn(others.len(), |a, _| state.nu[[f, k, others[a]]]);
        let inv = c_oo.try_inverse().unwrap();
        m0[f] = (&c_to * &inv * x_o)[0];
        v0[(f, f)] = 1.0 - (&c_to * &inv * c_to.transpose())[(0, 0)];
    }
    let partial = &data.y - &xb_direct(state, data) - &zg_direct(state, data);
    let rows: Vec<(usize, usize)> = (0..kk).flat_map(|l| (0..n).map(move |i| (l, i))).collect();
    let h = DMatrix::from_fn(rows.len(), r, |q, f| {
        let (l, i) = rows[q];
        state.coreg[[l, k]] * state.lambda[[l, i, f]]
    });
    let y = DVector::from_fn(rows.len(), |q, _| {
        let (l, i) = rows[q];
        let mut v = partial[[i, l, t]];
        for k2 in (0..kk).filter(|&k2| k2 != k) {
            for f in 0..r {
                v -= state.coreg[[l, k2]] * state.lambda[[l, i, f]] * state.nu[[f, k2, t]];
            }
        }
        v
    });
    let noise = DMatrix::from_fn(rows.len(), rows.len(), |a, b| if a == b { state.tau2[rows[a].0] } else { 0.0 });
    condition(&m0, &v0, &h, &y, &noise)
}

/// Log marginal of site `i`'s segment in partition `m` for component `k`
/// with the clustered coefficients integrated against the base measure.
pub fn dense_new_cluster_marginal(cfg: &ModelConfig, state: &ParameterState, data: &Dataset, i: usize, m: usize, k: usize) -> f64 {
    let offset = &zg_direct(state, data) + &eta_direct(state);
    let ts = times_in(data, m);
    let px = data.p_x();
    let x = DMatrix::from_fn(ts.len(), px, |r, c| data.x[[i, c, ts[r]]]);
    let (m0, v0) = prior_moments(&cfg.priors.beta_base[k], px);
    let mean = DVector::from_fn(ts.len(), |r, _| offset[[i, k, ts[r]]]) + &x * m0;
    let cov = &x * v0 * x.transpose() + DMatrix::identity(ts.len(), ts.len()) * state.tau2[k];
    let y = DVector::from_fn(ts.len(), |r, _| data.y[[i, k, ts[r]]]);
    mvn_logpdf(&y, &mean, &cov)
}

pub fn max_abs_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax()
}

pub fn max_abs_diff_mat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}
