//! `simulate`, `ingest`, `sweep` and `explore`.

use std::fs;
use std::time::Instant;

use fdclust::io::{self, fmt_f64, write_csv};
use fdclust::pipeline::{self, GapPolicy, TransformSpec, TruthSpec};
use fdclust::sensitivity::{pivot, run_sweep, SweepCell, SweepSpec};
use fdclust::{DpMode, Error, Result};

use crate::fit::load_config;
use crate::manifest::{create_dir, io_err, Manifest};
use crate::{Cli, ExploreArgs, GapPolicyArg, IngestArgs, SimulateArgs, SweepArgs};

pub fn simulate(cli: &Cli, args: &SimulateArgs, argv: &[String]) -> Result<()> {
    let config = load_config(&args.config, cli.seed)?;
    let truth_spec = TruthSpec::load(&args.truth)?;
    let seed = config.mcmc.rng_seed;
    let mut manifest = Manifest::start(argv, Some(seed), Some(&args.config), &[&args.truth])?;
    let start = Instant::now();
    let mut rng = fdclust::gibbs::chain_rng(seed, 0);
    let (design, truth) = truth_spec.realize(&config, &mut rng)?;
    let (data, truth) = pipeline::simulate_dataset(&config, &truth, &design, &mut rng)?;
    create_dir(&cli.out)?;
    io::write_dataset(&cli.out.join("dataset"), &data)?;
    io::write_state(&cli.out.join("truth"), &truth)?;
    manifest.timings.insert("wall_seconds".into(), start.elapsed().as_secs_f64());
    manifest.write(&cli.out)?;
    println!(
        "simulated {} sites, {} components, {} times into {}",
        data.n_sites(),
        data.n_components(),
        data.n_times(),
        cli.out.display()
    );
    Ok(())
}

pub fn ingest(cli: &Cli, args: &IngestArgs, argv: &[String]) -> Result<()> {
    let delimiter = u8::try_from(args.delimiter)
        .map_err(|_| Error::Config(format!("delimiter {:?} is not a single byte", args.delimiter)))?;
    let spec = match &args.transforms {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            toml::from_str::<TransformSpec>(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => TransformSpec::default(),
    };
    let mut inputs = vec![args.input.as_path()];
    inputs.extend(args.coords.as_deref());
    inputs.extend(args.transforms.as_deref());
    let mut manifest = Manifest::start(argv, None, None, &inputs)?;
    let start = Instant::now();

    let raw = pipeline::ingest(&args.input, delimiter)?;
    let coords = args.coords.as_deref().map(pipeline::read_coords).transpose()?;
    let policy = match args.gap_policy {
        GapPolicyArg::Fail => GapPolicy::Fail,
        GapPolicyArg::NearestStation => GapPolicy::NearestStation,
    };
    let table = match (&coords, policy) {
        (Some(c), _) => pipeline::fill_gaps(&raw, c, policy)?,
        (None, GapPolicy::Fail) => pipeline::fill_gaps(&raw, &Default::default(), policy)?,
        (None, GapPolicy::NearestStation) => {
            return Err(Error::Config("--gap-policy nearest-station needs --coords".into()));
        }
    };
    let data = pipeline::build_dataset(&table, &spec, coords.as_ref())?;
    create_dir(&cli.out)?;
    io::write_dataset(&cli.out.join("dataset"), &data)?;
    manifest.timings.insert("wall_seconds".into(), start.elapsed().as_secs_f64());
    manifest.write(&cli.out)?;
    println!(
        "{} stations, {} hourly times, {} partitions, {} imputed cells",
        data.n_sites(),
        data.n_times(),
        data.partition_of.last().map_or(0, |m| m + 1),
        table.n_imputed()
    );
    Ok(())
}

fn cell_columns(cell: &SweepCell) -> Vec<String> {
    let opt = |v: Option<f64>| v.map_or(String::new(), fmt_f64);
    vec![
        opt(cell.alpha),
        opt(cell.tau2_prior.map(|p| p.0)),
        opt(cell.tau2_prior.map(|p| p.1)),
        opt(cell.base_variance),
        cell.dp_mode.map_or(String::new(), |m| mode_name(m).to_string()),
    ]
}

fn mode_name(mode: DpMode) -> &'static str {
    match mode {
        DpMode::Joint => "joint",
        DpMode::IndependentPerComponent => "independent-per-component",
    }
}

pub fn sweep(cli: &Cli, args: &SweepArgs, argv: &[String]) -> Result<()> {
    let base = load_config(&args.config, cli.seed)?;
    let spec = SweepSpec::load(&args.spec)?;
    for cell in spec.cells() {
        cell.apply(&base).ensure_valid()?;
    }
    let data = io::read_dataset(&args.data)?;
    fdclust::gibbs::ensure_runnable(&base, &data)?;
    let mut manifest = Manifest::start(argv, Some(base.mcmc.rng_seed), Some(&args.config), &[&args.data, &args.spec])?;
    let start = Instant::now();
    let results = run_sweep(&base, &data, &spec, args.parallel);
    create_dir(&cli.out)?;

    let rows = results.iter().map(|r| {
        let mut row = cell_columns(&r.cell);
        row.push(r.grand_mean.map_or(String::new(), fmt_f64));
        row.push(r.table_means.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(";"));
        row.push(r.error.clone().unwrap_or_default());
        row
    });
    write_csv(
        &cli.out.join("sweep_cells.csv"),
        &["alpha", "tau2_shape", "tau2_rate", "base_variance", "dp_mode", "grand_mean", "table_means", "error"],
        rows,
    )?;

    let table = pivot(&results);
    let mut header: Vec<String> = ["tau2_shape", "tau2_rate", "base_variance", "dp_mode"].map(String::from).to_vec();
    header.extend(table.alphas.iter().map(|a| format!("alpha={}", a.map_or("base".into(), fmt_f64))));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = table.rows.iter().map(|(cell, vals)| {
        let mut row = cell_columns(cell)[1..].to_vec();
        row.extend(vals.iter().map(|v| v.map_or(String::new(), fmt_f64)));
        row
    });
    write_csv(&cli.out.join("pivot.csv"), &header_refs, rows)?;

    manifest.timings.insert("wall_seconds".into(), start.elapsed().as_secs_f64());
    manifest.write(&cli.out)?;
    let failed = results.iter().filter(|r| r.error.is_some()).count();
    println!("{} cells fitted, {failed} failed", results.len());
    for r in results.iter().filter(|r| r.error.is_some()) {
        eprintln!("cell {:?}: {}", r.cell, r.error.as_deref().unwrap_or_default());
    }
    Ok(())
}

pub fn explore(cli: &Cli, args: &ExploreArgs, argv: &[String]) -> Result<()> {
    let mut manifest = Manifest::start(argv, None, None, &[&args.data])?;
    let start = Instant::now();
    let data = io::read_dataset(&args.data)?;
    create_dir(&cli.out)?;

    let fits = pipeline::explore_monthly_ols(&data);
    let p = 1 + data.p_x();
    let mut header = vec!["site".to_string(), "partition".into(), "component".into(), "n_obs".into(), "rank".into()];
    header.push("intercept".into());
    header.extend((0..data.p_x()).map(|j| {
        data.covariate_log.get(j).map_or(format!("x{j}"), |c| c.name.clone())
    }));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = fits.iter().map(|f| {
        let mut row = vec![
            data.site_names[f.site].clone(),
            f.partition.to_string(),
            f.component.to_string(),
            f.n_obs.to_string(),
            f.rank.to_string(),
        ];
        match &f.coefs {
            Some(c) => row.extend(c.iter().map(|v| fmt_f64(*v))),
            None => row.extend(std::iter::repeat_n(String::new(), p)),
        }
        row
    });
    write_csv(&cli.out.join("ols.csv"), &header_refs, rows)?;
    let deficient = fits.iter().filter(|f| f.rank_deficient()).count();

    let averages = |rows: Vec<(usize, usize, usize, f64)>| {
        rows.into_iter().map(|(i, k, b, v)| vec![data.site_names[i].clone(), k.to_string(), b.to_string(), fmt_f64(v)])
    };
    write_csv(
        &cli.out.join("daily.csv"),
        &["site", "component", "day", "mean"],
        averages(pipeline::daily_averages(&data, args.original_scale)),
    )?;
    write_csv(
        &cli.out.join("hourly.csv"),
        &["site", "component", "hour", "mean"],
        averages(pipeline::hour_of_day_averages(&data, args.original_scale)),
    )?;
    manifest.timings.insert("wall_seconds".into(), start.elapsed().as_secs_f64());
    manifest.write(&cli.out)?;
    println!("{} monthly fits, {deficient} rank deficient", fits.len());
    Ok(())
}
