mod common;

use common::*;
use fdclust::dp::{label_update_weights, new_cluster_marginal_loglik, resample_label, LabelContext};
use fdclust::gibbs::{Sampler, SamplerContext};
use fdclust::gp::{ar1_step, cross_covariance, sequential_log_density, CovarianceQuery};
use fdclust::io::{read_state, write_state};
use fdclust::pipeline::{build_dataset, explore_monthly_ols, ingest_str, TransformSpec, Variable};
use fdclust::posterior::{cluster_count_series, cooccurrence, factor_norms, modal_partition, Interval};
use fdclust::{Atom, ClusterTable, DpMode, ParameterState};
use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, Array3};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mode_strategy() -> impl Strategy<Value = DpMode> {
    prop_oneof![Just(DpMode::Joint), Just(DpMode::IndependentPerComponent)]
}

/// Relabels every table of `state` by a seeded permutation of its clusters.
fn permute_clusters(state: &ParameterState, seed: u64) -> ParameterState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = state.clone();
    for table in out.clusters.tables.iter_mut() {
        let mut perm: Vec<usize> = (0..table.n_clusters()).collect();
        perm.shuffle(&mut rng);
        let mut atoms = table.atoms.clone();
        for (old, &new) in perm.iter().enumerate() {
            atoms[new] = table.atoms[old].clone();
        }
        let labels = table.labels.iter().map(|&l| perm[l]).collect();
        *table = ClusterTable::new(table.partition, table.components.clone(), labels, atoms);
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ou_step_is_stationary(phi in 1e-4f64..10.0, gap in 0.0f64..500.0) {
        let s = ar1_step(phi, gap).unwrap();
        prop_assert!((s.mean_multiplier.powi(2) + s.innovation_variance - 1.0).abs() < 1e-12);
        prop_assert!(s.guarded_variance() >= 1e-15);
    }

    #[test]
    fn sequential_density_equals_dense(seed in any::<u64>(), t in 1usize..40, which in 0usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phi = PHI_GRID[which];
        let times = irregular_times(t, &mut rng);
        let path: Vec<f64> = (0..t).map(|_| rng.random_range(-2.5..2.5)).collect();
        let seq = sequential_log_density(&path, &times, phi).unwrap();
        let dense = mvn_logpdf(&DVector::from_vec(path), &DVector::zeros(t), &exp_correlation(&times, phi));
        prop_assert!((seq - dense).abs() < 1e-8, "{} vs {}", seq, dense);
    }

    #[test]
    fn cross_covariance_is_symmetric_and_psd(seed in any::<u64>(), n_times in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, kk, r) = (3, 2, 2);
        let lambda = Array3::from_shape_fn((kk, n, r), |_| rng.random_range(-1.5..1.5));
        let mut coreg = Array2::eye(kk);
        coreg[[1, 0]] = rng.random_range(-2.0..2.0);
        let rates = vec![vec![1.0 / 24.0, 1.0 / 3.0], vec![0.2, 1.0]];
        let times = irregular_times(n_times, &mut rng);
        let idx: Vec<(usize, usize, f64)> =
            times.iter().flat_map(|&t| (0..n).flat_map(move |i| (0..kk).map(move |k| (i, k, t)))).collect();
        let cov = DMatrix::from_fn(idx.len(), idx.len(), |a, b| {
            let q = CovarianceQuery { site_i: idx[a].0, comp_k: idx[a].1, t: idx[a].2, site_j: idx[b].0, comp_l: idx[b].1, t_prime: idx[b].2 };
            let v = cross_covariance(&q, &lambda, &coreg, &rates);
            let w = cross_covariance(&q.swapped(), &lambda, &coreg, &rates);
            assert!((v - w).abs() <= 1e-12 * v.abs().max(1.0), "{v} vs {w}");
            v
        });
        prop_assert!(max_abs_diff_mat(&cov, &cov.transpose()) <= 1e-12 * cov.amax().max(1.0));
        let eig = cov.clone().symmetric_eigen().eigenvalues;
        let scale = cov.amax().max(1.0);
        prop_assert!(eig.iter().all(|&e| e > -1e-10 * scale), "{:?}", eig);
    }

    #[test]
    fn state_round_trip_is_bit_exact(seed in any::<u64>(), mode in mode_strategy(), m in 1usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = config(4, 2, 2, m, mode);
        let (_, state) = synthetic(&cfg, 6, 2, 3, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        write_state(dir.path(), &state).unwrap();
        prop_assert_eq!(read_state(dir.path()).unwrap(), state);
    }

    #[test]
    fn prior_and_swept_states_satisfy_invariants(seed in any::<u64>(), mode in mode_strategy()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = config(4, 2, 2, 2, mode);
        let (data, state) = synthetic(&cfg, 10, 2, 2, &mut rng);
        prop_assert!(state.invariant_violations().is_empty());
        let mut sampler = Sampler::with_state(&cfg, &data, 0, state).unwrap();
        for _ in 0..3 {
            sampler.sweep().unwrap();
            prop_assert!(sampler.state().invariant_violations().is_empty(), "{:?}", sampler.state().invariant_violations());
        }
    }

    #[test]
    fn joint_mode_sites_sharing_a_label_share_every_component(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = config(5, 3, 1, 2, DpMode::Joint);
        let (data, state) = synthetic(&cfg, 8, 2, 1, &mut rng);
        let mut sampler = Sampler::with_state(&cfg, &data, 0, state).unwrap();
        sampler.sweep().unwrap();
        let s = sampler.state();
        for m in 0..2 {
            let labels = &s.clusters.tables[m].labels;
            for i in 0..5 {
                for j in 0..5 {
                    if labels[i] == labels[j] {
                        for k in 0..3 {
                            prop_assert_eq!(s.clusters.beta(i, m, k), s.clusters.beta(j, m, k));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn urn_weights_follow_cluster_permutations(seed in any::<u64>(), perm_seed in any::<u64>(), site in 0usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cfg = config(5, 2, 1, 1, DpMode::Joint);
        cfg.dp_concentration = 3.0;
        let (data, state) = synthetic(&cfg, 12, 2, 1, &mut rng);
        let ctx = LabelContext::new(&state, &data, &cfg).unwrap();
        let table = &state.clusters.tables[0];
        let stats = ctx.site_stats(&data, table, site);
        let w = ctx.weights_detached(table, &stats).unwrap();

        let mut prng = ChaCha8Rng::seed_from_u64(perm_seed);
        let mut perm: Vec<usize> = (0..table.n_clusters()).collect();
        perm.shuffle(&mut prng);
        let mut atoms = table.atoms.clone();
        for (old, &new) in perm.iter().enumerate() {
            atoms[new] = table.atoms[old].clone();
        }
        let permuted = ClusterTable::new(0, table.components.clone(), table.labels.iter().map(|&l| perm[l]).collect(), atoms);
        let wp = ctx.weights_detached(&permuted, &stats).unwrap();
        for (old, &new) in perm.iter().enumerate() {
            prop_assert!((w.normalized[old] - wp.normalized[new]).abs() < 1e-14);
        }
        prop_assert!((w.new_cluster_probability() - wp.new_cluster_probability()).abs() < 1e-14);
    }

    #[test]
    fn new_cluster_probability_increases_with_alpha(seed in any::<u64>(), site in 0usize..4, a in 0.01f64..5.0, factor in 1.01f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cfg = config(4, 2, 1, 1, DpMode::Joint);
        let (data, state) = synthetic(&cfg, 6, 1, 1, &mut rng);
        cfg.dp_concentration = a;
        let low = label_update_weights(&state, &data, &cfg, 0, site).unwrap().new_cluster_probability();
        cfg.dp_concentration = a * factor;
        let high = label_update_weights(&state, &data, &cfg, 0, site).unwrap().new_cluster_probability();
        prop_assert!(high > low || (low == 1.0 && high == 1.0), "{} then {}", low, high);
    }

    #[test]
    fn woodbury_marginal_matches_dense(seed in any::<u64>(), t in 2usize..40, px in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = config(2, 2, 1, 1, DpMode::Joint);
        let (data, state) = synthetic(&cfg, t, px, 1, &mut rng);
        for i in 0..2 {
            for k in 0..2 {
                let w = new_cluster_marginal_loglik(i, 0, k, &state, &data, &cfg).unwrap();
                let d = dense_new_cluster_marginal(&cfg, &state, &data, i, 0, k);
                prop_assert!((w - d).abs() <= 1e-6 * d.abs().max(1.0), "{} vs {}", w, d);
            }
        }
    }

    #[test]
    fn summaries_ignore_cluster_relabeling(seed in any::<u64>(), perm_seed in any::<u64>(), mode in mode_strategy()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = config(6, 2, 2, 2, mode);
        let draws: Vec<ParameterState> = (0..5).map(|_| synthetic(&cfg, 4, 1, 1, &mut rng).1).collect();
        let relabeled: Vec<ParameterState> = draws.iter().enumerate().map(|(d, s)| permute_clusters(s, perm_seed ^ d as u64)).collect();
        prop_assert_eq!(cluster_count_series(&draws).unwrap(), cluster_count_series(&relabeled).unwrap());
        prop_assert_eq!(cooccurrence(&draws).unwrap(), cooccurrence(&relabeled).unwrap());
        for ti in 0..draws[0].clusters.tables.len() {
            prop_assert_eq!(modal_partition(&draws, ti).unwrap(), modal_partition(&relabeled, ti).unwrap());
        }
    }

    #[test]
    fn cooccurrence_and_factor_shares_are_well_formed(seed in any::<u64>(), mode in mode_strategy()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = config(5, 2, 3, 2, mode);
        let draws: Vec<ParameterState> = (0..4).map(|_| synthetic(&cfg, 4, 1, 1, &mut rng).1).collect();
        let co = cooccurrence(&draws).unwrap();
        for m in co.per_table.iter().chain(co.averages.iter().map(|(_, m)| m)) {
            for i in 0..5 {
                prop_assert_eq!(m[[i, i]], 1.0);
                for j in 0..5 {
                    prop_assert_eq!(m[[i, j]], m[[j, i]]);
                    prop_assert!((0.0..=1.0).contains(&m[[i, j]]));
                }
            }
        }
        let shares = factor_norms(&draws).unwrap();
        for row in shares.rows() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn intervals_ignore_draw_order(values in prop::collection::vec(-1e3f64..1e3, 1..60), seed in any::<u64>()) {
        let mut shuffled = values.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let a = Interval::from_samples(&values);
        let b = Interval::from_samples(&shuffled);
        prop_assert_eq!((a.lower, a.upper), (b.lower, b.upper));
        prop_assert!((a.mean - b.mean).abs() <= 1e-9 * a.mean.abs().max(1.0));
        prop_assert!(a.lower <= a.upper);
    }
}

/// Long-format rows for two stations over the first `hours` hours of 2017.
fn raw_rows(seed: u64, hours: usize) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for station in ["AJM", "MER"] {
        for h in 0..hours {
            let ts = format!("2017-{:02}-{:02}T{:02}:00:00", 1 + h / (31 * 24), 1 + (h / 24) % 31, h % 24);
            for (var, lo, hi) in [("ozone", 1.0, 120.0), ("pm10", 2.0, 200.0), ("temperature", 5.0, 30.0), ("relative_humidity", 10.0, 95.0)] {
                rows.push(format!("{station},{ts},{var},{:?}", rng.random_range(lo..hi)));
            }
        }
    }
    rows
}

fn table_text(rows: &[String]) -> String {
    let mut text = String::from("station,timestamp,variable,value\n");
    for r in rows {
        text += r;
        text.push('\n');
    }
    text
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn monthly_ols_ignores_input_row_order(seed in any::<u64>(), shuffle_seed in any::<u64>()) {
        let rows = raw_rows(seed, 31 * 24 + 48);
        let mut shuffled = rows.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
        let spec = TransformSpec::default();
        let a = build_dataset(&ingest_str(&table_text(&rows), b',').unwrap(), &spec, None).unwrap();
        let b = build_dataset(&ingest_str(&table_text(&shuffled), b',').unwrap(), &spec, None).unwrap();
        prop_assert_eq!(explore_monthly_ols(&a), explore_monthly_ols(&b));
    }

    #[test]
    fn transforms_invert_to_raw_values(seed in any::<u64>()) {
        let rows = raw_rows(seed, 72);
        let raw = ingest_str(&table_text(&rows), b',').unwrap();
        let data = build_dataset(&raw, &TransformSpec::default(), None).unwrap();
        let grid = raw.hourly_grid();
        for (i, station) in raw.stations.iter().enumerate() {
            for (s, at) in grid.iter().enumerate() {
                for (k, var) in [Variable::Ozone, Variable::Pm10].into_iter().enumerate() {
                    let want = raw.get(station, *at, var).unwrap().value;
                    let got = data.transform_log[k].inverse(data.y[[i, k, s]]);
                    prop_assert!((got - want).abs() <= 1e-10 * want.abs().max(1.0), "{} vs {}", got, want);
                }
            }
        }
    }
}

#[test]
fn labels_stay_consistent_over_many_random_updates() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for mode in [DpMode::Joint, DpMode::IndependentPerComponent] {
        let mut cfg = config(6, 2, 1, 2, mode);
        cfg.dp_concentration = 2.0;
        let (data, mut state) = synthetic(&cfg, 10, 2, 1, &mut rng);
        let n_tables = state.clusters.tables.len();
        for _ in 0..10_000 {
            let ti = rng.random_range(0..n_tables);
            let site = rng.random_range(0..6);
            resample_label(&mut state, &data, &cfg, ti, site, &mut rng).unwrap();
            assert!(state.invariant_violations().is_empty(), "{:?}", state.invariant_violations());
        }
    }
}

#[test]
fn new_cluster_atoms_come_from_the_single_site_posterior() {
    // With one site, a fresh cluster is always opened and its atom is the only
    // thing drawn, so its moments must match the single-site posterior.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = config(1, 1, 1, 1, DpMode::Joint);
    let (data, mut state) = synthetic(&cfg, 15, 2, 1, &mut rng);
    let (want_mean, want_cov) = atom_oracle(&cfg, &state, &data, 0, 0, 0);
    let n = 40_000;
    let mut sum = DVector::zeros(2);
    let mut sq = DMatrix::zeros(2, 2);
    for _ in 0..n {
        resample_label(&mut state, &data, &cfg, 0, 0, &mut rng).unwrap();
        let b = DVector::from_vec(state.clusters.tables[0].atoms[0].coefs[0].clone());
        sq += &b * b.transpose();
        sum += b;
    }
    let mean = &sum / n as f64;
    let cov = &sq / n as f64 - &mean * mean.transpose();
    for j in 0..2 {
        let se = (want_cov[(j, j)] / n as f64).sqrt();
        assert!((mean[j] - want_mean[j]).abs() < 5.0 * se, "mean {j}: {} vs {}", mean[j], want_mean[j]);
        assert!((cov[(j, j)] / want_cov[(j, j)] - 1.0).abs() < 0.05);
    }
}

#[test]
fn factor_update_without_loadings_keeps_the_stationary_law() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cfg = config(2, 1, 2, 1, DpMode::Joint);
    let (data, mut state) = synthetic(&cfg, 12, 1, 1, &mut rng);
    state.lambda.fill(0.0);
    let ctx = SamplerContext::new(&cfg, &data).unwrap();
    let sweeps = 40_000;
    let lag = 3;
    let (mut s1, mut s2, mut cross) = ([0.0; 2], [0.0; 2], [0.0; 2]);
    for _ in 0..sweeps {
        fdclust::gibbs::blocks::update_nu(&mut state, &data, &ctx, &mut rng).unwrap();
        for f in 0..2 {
            let v0 = state.nu[[f, 0, 4]];
            s1[f] += v0;
            s2[f] += v0 * v0;
            cross[f] += v0 * state.nu[[f, 0, 4 + lag]];
        }
    }
    for f in 0..2 {
        let n = sweeps as f64;
        let mean = s1[f] / n;
        let var = s2[f] / n - mean * mean;
        let corr = cross[f] / n;
        let want = (-cfg.decay_rates[0][f] * lag as f64).exp();
        // Successive sweeps are correlated, so allow generous Monte-Carlo slack.
        assert!(mean.abs() < 0.06, "factor {f} mean {mean}");
        assert!((var - 1.0).abs() < 0.08, "factor {f} variance {var}");
        assert!((corr - want).abs() < 0.08, "factor {f} lag-{lag} covariance {corr} vs {want}");
    }
}

#[test]
fn single_atom_tables_are_built_consistently() {
    let t = ClusterTable::new(0, vec![0, 1], vec![0, 0, 0], vec![Atom { coefs: vec![vec![1.0], vec![2.0]] }]);
    assert_eq!(t.counts, vec![3]);
    assert!(t.check().is_ok());
}

#[test]
fn eta_autocorrelation_reaches_five_percent_at_the_effective_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let n_times = 1_000_000;
    let times: Vec<f64> = (0..n_times).map(|s| s as f64).collect();
    for (phi, range) in PHI_GRID.into_iter().zip([72usize, 9, 3]) {
        let mut path = vec![0.0; n_times];
        fdclust::gp::simulate_path(phi, &times, &mut rng, &mut path).unwrap();
        let nu = Array3::from_shape_vec((1, 1, n_times), path).unwrap();
        let eta = fdclust::gp::eta_field(&Array3::ones((1, 1, 1)), &Array2::eye(1), &nu);
        let series: Vec<f64> = eta.iter().copied().collect();
        let mean = series.iter().sum::<f64>() / n_times as f64;
        let var = series.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
        let lagged: f64 = series.windows(range + 1).map(|w| (w[0] - mean) * (w[range] - mean)).sum();
        let acf = lagged / var;
        assert!((acf - 0.05).abs() < 0.02, "phi {phi}: autocorrelation {acf} at lag {range}");
    }
}
