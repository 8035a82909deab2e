//! `fdclust fit`: one directory per chain with retained draws, sweep
//! diagnostics and a checkpoint to resume from.
//!
//! ```text
//! <out>/config.echo
//! <out>/manifest.toml
//! <out>/sites.csv
//! <out>/chain<j>/states/*.csv      retained draws
//! <out>/chain<j>/sweeps.csv        one row per sweep
//! <out>/chain<j>/last_state/       checkpoint
//! <out>/chain<j>/final_state/      written when the schedule completes
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use fdclust::gibbs::{ensure_runnable, BlockTimings, Sampler, BLOCKS};
use fdclust::io::{self, read_checkpoint, truncate_by_first_column, truncate_draws, write_checkpoint, DrawWriter};
use fdclust::{Dataset, DpMode, Error, ModelConfig, Result};
use rayon::prelude::*;

use crate::manifest::{create_dir, io_err, Manifest};
use crate::{Cli, FitArgs};

const CHECKPOINT_INTERVAL: Duration = Duration::from_secs(30);

pub fn load_config(path: &Path, seed: Option<u64>) -> Result<ModelConfig> {
    let mut config = ModelConfig::load(path)?;
    if let Some(s) = seed {
        config.mcmc.rng_seed = s;
    }
    config.ensure_valid()?;
    Ok(config)
}

pub fn run(cli: &Cli, args: &FitArgs, argv: &[String]) -> Result<()> {
    let config = load_config(&args.config, cli.seed)?;
    let data = io::read_dataset(&args.data)?;
    ensure_runnable(&config, &data)?;
    let out = &cli.out;
    let mut manifest = Manifest::start(argv, Some(config.mcmc.rng_seed), Some(&args.config), &[&args.data])?;
    let echo = config.to_toml_string()?;
    let echo_path = out.join("config.echo");
    if args.resume {
        let previous = fs::read_to_string(&echo_path).map_err(|e| io_err(&echo_path, e))?;
        if previous != echo {
            return Err(Error::Config(format!("{} differs from the configuration given; refusing to resume", echo_path.display())));
        }
    } else {
        create_dir(out)?;
        fs::write(&echo_path, &echo).map_err(|e| io_err(&echo_path, e))?;
        let sites = args.data.join("sites.csv");
        fs::copy(&sites, out.join("sites.csv")).map_err(|e| io_err(&sites, e))?;
    }
    manifest.write(out)?;

    let start = Instant::now();
    let results: Vec<Result<ChainStatus>> = (0..config.mcmc.n_chains)
        .into_par_iter()
        .map(|c| fit_chain(&config, &data, c, out, args.resume, args.stop_after))
        .collect();

    manifest.timings.insert("wall_seconds".into(), start.elapsed().as_secs_f64());
    let mut first_error = None;
    for (c, r) in results.into_iter().enumerate() {
        match r {
            Ok(status) => {
                for (b, name) in BLOCKS.iter().enumerate() {
                    manifest.timings.insert(format!("chain{c}.{name}_seconds"), status.timings.seconds[b]);
                }
                manifest.timings.insert(format!("chain{c}.seconds_per_sweep"), status.timings.per_sweep());
                println!(
                    "chain {c}: {} of {} sweeps done, {} draws retained",
                    status.iteration, config.mcmc.n_iterations, status.n_draws
                );
            }
            Err(e) => {
                eprintln!("chain {c} failed: {e}");
                first_error.get_or_insert(e);
            }
        }
    }
    manifest.write(out)?;
    first_error.map_or(Ok(()), Err)
}

pub struct ChainStatus {
    pub iteration: usize,
    pub n_draws: usize,
    pub timings: BlockTimings,
}

fn sweeps_header(config: &ModelConfig) -> String {
    let mut cols = vec!["iteration".to_string(), "log_likelihood".to_string()];
    for m in 0..config.n_partitions {
        match config.dp_mode {
            DpMode::Joint => cols.push(format!("clusters_m{m}")),
            DpMode::IndependentPerComponent => cols.extend((0..config.n_components).map(|k| format!("clusters_m{m}_k{k}"))),
        }
    }
    cols.join(",") + "\n"
}

fn retained_through(config: &ModelConfig, iteration: usize) -> usize {
    (1..=iteration).filter(|i| config.mcmc.is_retained(*i)).count()
}

fn replace_checkpoint(dir: &Path, sampler: &Sampler<'_>) -> Result<()> {
    let tmp = dir.with_extension("tmp");
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| io_err(&tmp, e))?;
    }
    write_checkpoint(&tmp, &sampler.checkpoint())?;
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::rename(&tmp, dir).map_err(|e| io_err(dir, e))
}

pub fn fit_chain(
    config: &ModelConfig,
    data: &Dataset,
    chain: usize,
    out: &Path,
    resume: bool,
    stop_after: Option<usize>,
) -> Result<ChainStatus> {
    let dir = out.join(format!("chain{chain}"));
    let states = dir.join("states");
    let cp_dir = dir.join("last_state");
    let sweeps_path = dir.join("sweeps.csv");

    let (mut sampler, mut n_draws) = if resume && cp_dir.join("checkpoint.csv").exists() {
        let cp = read_checkpoint(&cp_dir)?;
        let kept = retained_through(config, cp.iteration);
        if states.join("dims.csv").exists() {
            truncate_draws(&states, kept)?;
        }
        truncate_by_first_column(&sweeps_path, cp.iteration + 1)?;
        (Sampler::resume(config, data, cp)?, kept)
    } else {
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        }
        create_dir(&dir)?;
        fs::write(&sweeps_path, sweeps_header(config)).map_err(|e| io_err(&sweeps_path, e))?;
        (Sampler::new(config, data, chain)?, 0)
    };

    let mut draws = if n_draws > 0 { Some(DrawWriter::append(&states)?) } else { None };
    let file = fs::OpenOptions::new().append(true).open(&sweeps_path).map_err(|e| io_err(&sweeps_path, e))?;
    let mut sweeps = std::io::BufWriter::new(file);
    let target = stop_after.map_or(config.mcmc.n_iterations, |s| s.min(config.mcmc.n_iterations));
    let mut last_checkpoint = Instant::now();

    let outcome = sampler.run_until(target, |s, report| {
        let mut row = format!("{},{:?}", report.iteration, report.log_likelihood);
        for c in &report.cluster_counts {
            row += &format!(",{c}");
        }
        writeln!(sweeps, "{row}").map_err(|e| io_err(&sweeps_path, e))?;
        if config.mcmc.is_retained(report.iteration) {
            let state = s.retained_state();
            let w = match draws.as_mut() {
                Some(w) => w,
                None => draws.insert(DrawWriter::create(&states, &state)?),
            };
            w.write(n_draws, &state)?;
            n_draws += 1;
            if last_checkpoint.elapsed() >= CHECKPOINT_INTERVAL {
                w.flush()?;
                sweeps.flush().map_err(|e| io_err(&sweeps_path, e))?;
                replace_checkpoint(&cp_dir, s)?;
                last_checkpoint = Instant::now();
            }
        }
        Ok(())
    });

    if let Some(w) = draws.as_mut() {
        w.flush()?;
    }
    sweeps.flush().map_err(|e| io_err(&sweeps_path, e))?;
    outcome?;
    replace_checkpoint(&cp_dir, &sampler)?;
    if sampler.iteration() == config.mcmc.n_iterations {
        io::write_state(&dir.join("final_state"), sampler.state())?;
    }
    Ok(ChainStatus { iteration: sampler.iteration(), n_draws, timings: sampler.timings().clone() })
}
