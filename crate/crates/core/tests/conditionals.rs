mod common;

use common::*;
use fdclust::gibbs::blocks::{
    atom_conditional, coreg_conditional, gamma_conditional, lambda_conditional, nu_conditional, tau2_conditional,
};
use fdclust::gibbs::SamplerContext;
use fdclust::linalg::CanonicalGaussian;
use fdclust::DpMode;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-10;

fn assert_matches(what: &str, got: &CanonicalGaussian, want: &(DVector<f64>, DMatrix<f64>)) {
    let mean = got.mean("test").unwrap();
    let cov = got.covariance("test").unwrap();
    let dm = max_abs_diff(&mean, &want.0);
    let dc = max_abs_diff_mat(&cov, &want.1);
    assert!(dm < TOL && dc < TOL, "{what}: mean diff {dm:e}, cov diff {dc:e}");
}

fn instances() -> Vec<(fdclust::ModelConfig, fdclust::Dataset, fdclust::ParameterState)> {
    let mut out = Vec::new();
    for (seed, mode) in [(1, DpMode::Joint), (2, DpMode::IndependentPerComponent), (3, DpMode::Joint)] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = config(3, 2, 2, 2, mode);
        let (data, state) = synthetic(&cfg, 9, 2, 3, &mut rng);
        out.push((cfg, data, state));
    }
    out
}

#[test]
fn gamma_matches_dense_regression() {
    for (cfg, data, state) in instances() {
        let ctx = SamplerContext::new(&cfg, &data).unwrap();
        for i in 0..3 {
            for m in 0..2 {
                for k in 0..2 {
                    let got = gamma_conditional(&state, &data, &ctx, i, m, k);
                    assert_matches("gamma", &got, &gamma_oracle(&cfg, &state, &data, i, m, k));
                }
            }
        }
    }
}

#[test]
fn atoms_match_pooled_dense_regression() {
    for (cfg, data, state) in instances() {
        let ctx = SamplerContext::new(&cfg, &data).unwrap();
        for (ti, table) in state.clusters.tables.iter().enumerate() {
            for c in 0..table.n_clusters() {
                for &k in &table.components {
                    let got = atom_conditional(&state, &data, &ctx, ti, c, k);
                    assert_matches("atom", &got, &atom_oracle(&cfg, &state, &data, ti, c, k));
                }
            }
        }
    }
}

#[test]
fn loadings_match_dense_regression() {
    for (cfg, data, state) in instances() {
        let ctx = SamplerContext::new(&cfg, &data).unwrap();
        for i in 0..3 {
            for k in 0..2 {
                let got = lambda_conditional(&state, &data, &ctx, i, k);
                assert_matches("lambda", &got, &lambda_oracle(&cfg, &state, &data, i, k));
            }
        }
    }
}

#[test]
fn coregionalization_entry_matches_dense_regression() {
    for seed in 10..13 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = config(3, 3, 2, 1, DpMode::Joint);
        let (data, state) = synthetic(&cfg, 8, 1, 2, &mut rng);
        let ctx = SamplerContext::new(&cfg, &data).unwrap();
        for (k, l) in [(1, 0), (2, 0), (2, 1)] {
            let (m, v) = coreg_conditional(&state, &data, &ctx, k, l);
            let (mo, vo) = coreg_oracle(&cfg, &state, &data, k, l);
            assert!((m - mo).abs() < TOL && (v - vo).abs() < TOL, "A[{k},{l}]: ({m}, {v}) vs ({mo}, {vo})");
        }
    }
}

#[test]
fn noise_variance_shape_and_rate_are_exact() {
    for (cfg, data, state) in instances() {
        let ctx = SamplerContext::new(&cfg, &data).unwrap();
        for k in 0..2 {
            let (shape, rate) = tau2_conditional(&state, &data, &ctx, k);
            let (so, ro) = tau2_oracle(&cfg, &state, &data, k);
            assert_eq!(shape, so);
            assert!((rate - ro).abs() <= 1e-12 * ro, "rate {rate} vs {ro}");
        }
    }
}

#[test]
fn factor_slices_match_dense_conditional_at_every_time() {
    for seed in 20..23 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = config(3, 2, 3, 1, DpMode::Joint);
        let (mut data, state) = synthetic(&cfg, 7, 1, 1, &mut rng);
        data.times = irregular_times(7, &mut rng);
        let ctx = SamplerContext::new(&cfg, &data).unwrap();
        for k in 0..2 {
            for t in 0..7 {
                let got = nu_conditional(&state, &data, &ctx, k, t);
                assert_matches(&format!("nu k={k} t={t}"), &got, &nu_oracle(&cfg, &state, &data, k, t));
            }
        }
    }
}

#[test]
fn single_time_point_factor_uses_stationary_prior() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = config(2, 2, 2, 1, DpMode::Joint);
    let (data, state) = synthetic(&cfg, 1, 1, 1, &mut rng);
    let ctx = SamplerContext::new(&cfg, &data).unwrap();
    for k in 0..2 {
        assert_matches("nu single", &nu_conditional(&state, &data, &ctx, k, 0), &nu_oracle(&cfg, &state, &data, k, 0));
    }
}
