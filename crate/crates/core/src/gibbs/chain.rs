//! Chain driver: initialization, sweeps, retention and checkpoints.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array3, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::blocks::{self, SamplerContext};
use crate::config::{validate_config, DpMode, ModelConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gp::simulate_factors;
use crate::linalg::CanonicalGaussian;
use crate::state::{Atom, ClusterState, ClusterTable, ParameterState};

/// Block names in sweep order.
pub const BLOCKS: [&str; 7] = ["labels", "atoms", "gamma", "lambda", "coreg", "tau2", "nu"];

/// Per-sweep diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub iteration: usize,
    pub log_likelihood: f64,
    /// Occupied clusters per table, in table order.
    pub cluster_counts: Vec<usize>,
}

/// Wall-clock seconds spent in each block, indexed like [`BLOCKS`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BlockTimings {
    pub seconds: [f64; 7],
    pub sweeps: usize,
}

impl BlockTimings {
    pub fn total(&self) -> f64 {
        self.seconds.iter().sum()
    }

    pub fn per_sweep(&self) -> f64 {
        if self.sweeps == 0 {
            0.0
        } else {
            self.total() / self.sweeps as f64
        }
    }
}

/// Deterministic output of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    pub chain: usize,
    pub rng_seed: u64,
    /// 1-based sweep index of each retained draw.
    pub draw_iterations: Vec<usize>,
    pub draws: Vec<ParameterState>,
    pub reports: Vec<SweepReport>,
    pub final_state: ParameterState,
}

/// Everything needed to continue a chain bit-for-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub chain: usize,
    pub iteration: usize,
    pub rng_word_pos: u128,
    pub state: ParameterState,
}

/// Generator of chain `chain`: one ChaCha stream per chain under the root seed.
pub fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

/// Fails with every violated input invariant at once.
pub fn ensure_runnable(config: &ModelConfig, data: &Dataset) -> Result<()> {
    let violations = validate_config(config, data);
    if violations.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(violations))
    }
}

/// Starting point: every site in its own cluster with penalized
/// least-squares coefficients, `tau2` at the residual mean square, zero
/// loadings and factor paths drawn from their prior.
pub fn initial_state(config: &ModelConfig, data: &Dataset, rng: &mut ChaCha8Rng) -> Result<ParameterState> {
    let ctx = SamplerContext::new(config, data)?;
    let (n, kk, r, mm) = (data.n_sites(), data.n_components(), config.n_factors, config.n_partitions);
    let (px, pz) = (data.p_x(), data.p_z());
    let mut gamma = Array4::zeros((n, mm, kk, pz));
    // fits[m][i][k] = beta
    let mut fits = vec![vec![vec![vec![0.0; px]; kk]; n]; mm];
    let mut ss = vec![0.0; kk];
    let mut count = vec![0usize; kk];
    for (m, range) in ctx.segments.iter().enumerate() {
        for i in 0..n {
            for k in 0..kk {
                let p = px + pz;
                let mut prec = DMatrix::zeros(p, p);
                let mut lin = DVector::zeros(p);
                let bb = &ctx.beta_bases[k];
                let gb = &ctx.gamma_priors[k];
                prec.view_mut((0, 0), (px, px)).copy_from(&bb.precision);
                prec.view_mut((px, px), (pz, pz)).copy_from(&gb.precision);
                lin.rows_mut(0, px).copy_from(&bb.precision_mean);
                lin.rows_mut(px, pz).copy_from(&gb.precision_mean);
                let row = |s: usize, a: usize| if a < px { data.x[[i, a, s]] } else { data.z[[i, a - px, s]] };
                for s in range.clone() {
                    let y = data.y[[i, k, s]];
                    for a in 0..p {
                        lin[a] += row(s, a) * y;
                        for b in 0..p {
                            prec[(a, b)] += row(s, a) * row(s, b);
                        }
                    }
                }
                let coef = CanonicalGaussian { precision: prec, linear: lin }.mean("init")?;
                for s in range.clone() {
                    let fit: f64 = (0..p).map(|a| row(s, a) * coef[a]).sum();
                    let e = data.y[[i, k, s]] - fit;
                    ss[k] += e * e;
                    count[k] += 1;
                }
                fits[m][i][k] = coef.rows(0, px).iter().copied().collect();
                for j in 0..pz {
                    gamma[[i, m, k, j]] = coef[px + j];
                }
            }
        }
    }
    let tau2 = (0..kk).map(|k| if count[k] > 0 { (ss[k] / count[k] as f64).max(1e-6) } else { 1.0 }).collect();

    let singletons: Vec<usize> = (0..n).collect();
    let tables = match config.dp_mode {
        DpMode::Joint => (0..mm)
            .map(|m| {
                let atoms = (0..n).map(|i| Atom { coefs: fits[m][i].clone() }).collect();
                ClusterTable::new(m, (0..kk).collect(), singletons.clone(), atoms)
            })
            .collect(),
        DpMode::IndependentPerComponent => (0..mm)
            .flat_map(|m| (0..kk).map(move |k| (m, k)))
            .map(|(m, k)| {
                let atoms = (0..n).map(|i| Atom { coefs: vec![fits[m][i][k].clone()] }).collect();
                ClusterTable::new(m, vec![k], singletons.clone(), atoms)
            })
            .collect(),
    };
    Ok(ParameterState {
        gamma,
        clusters: ClusterState { mode: config.dp_mode, n_components: kk, tables },
        lambda: Array3::zeros((kk, n, r)),
        coreg: blocks::initial_coreg(config),
        tau2,
        nu: simulate_factors(config, &data.times, rng)?,
    })
}

/// A running chain over a borrowed dataset.
pub struct Sampler<'a> {
    data: &'a Dataset,
    ctx: SamplerContext,
    state: ParameterState,
    rng: ChaCha8Rng,
    chain: usize,
    iteration: usize,
    timings: BlockTimings,
}

impl<'a> Sampler<'a> {
    /// Validates the inputs and initializes chain `chain`.
    pub fn new(config: &ModelConfig, data: &'a Dataset, chain: usize) -> Result<Self> {
        ensure_runnable(config, data)?;
        let mut rng = chain_rng(config.mcmc.rng_seed, chain);
        let state = initial_state(config, data, &mut rng)?;
        Self::from_parts(config, data, chain, 0, state, rng)
    }

    /// Starts from an explicit state (used by simulation studies).
    pub fn with_state(config: &ModelConfig, data: &'a Dataset, chain: usize, state: ParameterState) -> Result<Self> {
        ensure_runnable(config, data)?;
        let rng = chain_rng(config.mcmc.rng_seed, chain);
        Self::from_parts(config, data, chain, 0, state, rng)
    }

    pub fn resume(config: &ModelConfig, data: &'a Dataset, checkpoint: Checkpoint) -> Result<Self> {
        ensure_runnable(config, data)?;
        let mut rng = chain_rng(config.mcmc.rng_seed, checkpoint.chain);
        rng.set_word_pos(checkpoint.rng_word_pos);
        Self::from_parts(config, data, checkpoint.chain, checkpoint.iteration, checkpoint.state, rng)
    }

    fn from_parts(
        config: &ModelConfig,
        data: &'a Dataset,
        chain: usize,
        iteration: usize,
        state: ParameterState,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        let ctx = SamplerContext::new(config, data)?;
        let problems = state.invariant_violations();
        if !problems.is_empty() {
            return Err(Error::Config(format!("starting state is inconsistent: {}", problems.join("; "))));
        }
        Ok(Sampler { data, ctx, state, rng, chain, iteration, timings: BlockTimings::default() })
    }

    pub fn state(&self) -> &ParameterState {
        &self.state
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn chain(&self) -> usize {
        self.chain
    }

    pub fn config(&self) -> &ModelConfig {
        &self.ctx.config
    }

    pub fn timings(&self) -> &BlockTimings {
        &self.timings
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            chain: self.chain,
            iteration: self.iteration,
            rng_word_pos: self.rng.get_word_pos(),
            state: self.state.clone(),
        }
    }

    /// One full sweep over every block.
    pub fn sweep(&mut self) -> Result<SweepReport> {
        let it = self.iteration + 1;
        for (b, name) in BLOCKS.iter().enumerate() {
            let start = Instant::now();
            let (st, data, ctx, rng) = (&mut self.state, self.data, &self.ctx, &mut self.rng);
            let res = match *name {
                "labels" => blocks::update_labels(st, data, ctx, rng),
                "atoms" => blocks::update_beta_atoms(st, data, ctx, rng),
                "gamma" => blocks::update_gamma(st, data, ctx, rng),
                "lambda" => blocks::update_lambda(st, data, ctx, rng),
                "coreg" => blocks::update_coreg(st, data, ctx, rng),
                "tau2" => blocks::update_tau2(st, data, ctx, rng),
                _ => blocks::update_nu(st, data, ctx, rng),
            };
            res.map_err(|e| e.at_iteration(it))?;
            self.timings.seconds[b] += start.elapsed().as_secs_f64();
        }
        self.timings.sweeps += 1;
        self.iteration = it;
        Ok(SweepReport {
            iteration: it,
            log_likelihood: blocks::data_loglik(&self.state, self.data, &self.ctx),
            cluster_counts: self.state.clusters.tables.iter().map(|t| t.n_clusters()).collect(),
        })
    }

    /// The current state as stored in a retained draw.
    pub fn retained_state(&self) -> ParameterState {
        let mut s = self.state.clone();
        if !self.ctx.config.mcmc.retain_factor_paths {
            let (r, kk, _) = s.nu.dim();
            s.nu = Array3::zeros((r, kk, 0));
        }
        s
    }

    /// Sweeps until `target` iterations are done, calling `visit` after each.
    pub fn run_until<F>(&mut self, target: usize, mut visit: F) -> Result<()>
    where
        F: FnMut(&Self, &SweepReport) -> Result<()>,
    {
        while self.iteration < target {
            let report = self.sweep()?;
            visit(self, &report)?;
        }
        Ok(())
    }
}

/// A finished chain with its timing profile.
#[derive(Debug, Clone)]
pub struct ChainRun {
    pub output: ChainOutput,
    pub timings: BlockTimings,
}

pub fn run_chain(config: &ModelConfig, data: &Dataset, chain: usize) -> Result<ChainRun> {
    let sampler = Sampler::new(config, data, chain)?;
    drive(sampler)
}

/// Runs a sampler to the end of its schedule, keeping the retained draws.
pub fn drive(mut sampler: Sampler<'_>) -> Result<ChainRun> {
    let schedule = sampler.config().mcmc.clone();
    let mut draws = Vec::with_capacity(schedule.n_retained());
    let mut draw_iterations = Vec::with_capacity(schedule.n_retained());
    let mut reports = Vec::with_capacity(schedule.n_iterations);
    sampler.run_until(schedule.n_iterations, |s, report| {
        if schedule.is_retained(report.iteration) {
            draws.push(s.retained_state());
            draw_iterations.push(report.iteration);
        }
        reports.push(report.clone());
        Ok(())
    })?;
    Ok(ChainRun {
        output: ChainOutput {
            chain: sampler.chain(),
            rng_seed: schedule.rng_seed,
            draw_iterations,
            draws,
            reports,
            final_state: sampler.state().clone(),
        },
        timings: sampler.timings().clone(),
    })
}

/// All chains of the schedule, in parallel, ordered by chain index.
pub fn run_chains(config: &ModelConfig, data: &Dataset) -> Result<Vec<ChainRun>> {
    ensure_runnable(config, data)?;
    (0..config.mcmc.n_chains).into_par_iter().map(|c| run_chain(config, data, c)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::tests::small_config;
    use crate::data::tests::tiny_dataset;

    fn pair() -> (ModelConfig, Dataset) {
        let mut cfg = small_config(3, 2, 1, 2);
        cfg.mcmc.n_iterations = 8;
        cfg.mcmc.burn_in = 2;
        cfg.mcmc.thin = 3;
        (cfg, tiny_dataset(3, 2, 1, 2, vec![0, 0, 0, 1, 1]))
    }

    #[test]
    fn same_seed_same_chain() {
        let (cfg, data) = pair();
        let a = run_chain(&cfg, &data, 0).unwrap().output;
        let b = run_chain(&cfg, &data, 0).unwrap().output;
        assert_eq!(a, b);
        assert_eq!(a.draw_iterations, vec![5, 8]);
        let c = run_chain(&cfg, &data, 1).unwrap().output;
        assert_ne!(a.final_state, c.final_state);
    }

    #[test]
    fn resume_matches_uninterrupted() {
        let (cfg, data) = pair();
        let full = run_chain(&cfg, &data, 0).unwrap().output.final_state;
        let mut s = Sampler::new(&cfg, &data, 0).unwrap();
        s.run_until(3, |_, _| Ok(())).unwrap();
        let cp = s.checkpoint();
        let mut resumed = Sampler::resume(&cfg, &data, cp).unwrap();
        resumed.run_until(8, |_, _| Ok(())).unwrap();
        assert_eq!(resumed.state(), &full);
    }

    #[test]
    fn factor_paths_dropped_from_draws_when_requested() {
        let (mut cfg, data) = pair();
        cfg.mcmc.retain_factor_paths = false;
        let out = run_chain(&cfg, &data, 0).unwrap().output;
        assert!(out.draws.iter().all(|d| d.nu.dim().2 == 0));
        assert_eq!(out.final_state.nu.dim().2, 5);
    }

    #[test]
    fn invalid_input_reports_all_violations() {
        let (cfg, mut data) = pair();
        data.y[[0, 0, 0]] = f64::NAN;
        data.partition_of = vec![0, 1, 0, 1, 1];
        match Sampler::new(&cfg, &data, 0) {
            Err(Error::Validation(v)) => assert!(v.len() >= 2),
            other => panic!("expected validation error, got {:?}", other.err()),
        }
    }
}
