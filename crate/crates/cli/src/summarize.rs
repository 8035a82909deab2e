//! `fdclust summarize`: posterior summaries of a finished run, pooled over chains.

use std::fs;
use std::path::Path;
use std::time::Instant;

use fdclust::io::{self, fmt_f64, read_csv, write_csv};
use fdclust::pipeline::synthetic::truth_labels;
use fdclust::posterior::{
    adjusted_rand_index, cluster_count_series, lambda_gram_vs_distance, Interval, PosteriorSummary, TableKey,
};
use fdclust::{Error, ModelConfig, ParameterState, Result};
use ndarray::Array2;

use crate::manifest::{create_dir, io_err, Manifest};
use crate::{Cli, SummarizeArgs};

fn key_columns(key: &TableKey) -> Vec<String> {
    vec![key.partition.to_string(), key.component.map_or("all".into(), |k| k.to_string())]
}

fn interval_columns(iv: &Interval) -> Vec<String> {
    vec![fmt_f64(iv.mean), fmt_f64(iv.lower), fmt_f64(iv.upper)]
}

fn write_matrix(path: &Path, names: &[String], m: &Array2<f64>) -> Result<()> {
    let mut header = vec!["site"];
    header.extend(names.iter().map(String::as_str));
    let rows = (0..m.nrows()).map(|i| {
        let mut row = vec![names[i].clone()];
        row.extend(m.row(i).iter().map(|v| fmt_f64(*v)));
        row
    });
    write_csv(path, &header, rows)
}

struct Sites {
    names: Vec<String>,
    coords: Option<Vec<[f64; 2]>>,
}

fn read_sites(path: &Path) -> Result<Sites> {
    let rows = read_csv(path, &["i", "name", "x", "y"])?;
    let names = rows.iter().map(|r| r[1].to_string()).collect();
    let parse = |s: &str| s.parse::<f64>().ok();
    let coords = rows.iter().map(|r| Some([parse(&r[2])?, parse(&r[3])?])).collect::<Option<Vec<_>>>();
    Ok(Sites { names, coords: coords.filter(|c| !c.is_empty()) })
}

pub fn run(cli: &Cli, args: &SummarizeArgs, argv: &[String]) -> Result<()> {
    let echo_path = args.run.join("config.echo");
    let echo = fs::read_to_string(&echo_path).map_err(|e| io_err(&echo_path, e))?;
    let config = ModelConfig::from_toml_str(&echo)?;
    let mut inputs = vec![args.run.as_path()];
    inputs.extend(args.truth.as_deref());
    let mut manifest = Manifest::start(argv, None, Some(&echo_path), &inputs)?;
    let start = Instant::now();

    let missing: Vec<String> = (0..config.mcmc.n_chains)
        .filter(|c| !args.run.join(format!("chain{c}/states/dims.csv")).exists())
        .map(|c| format!("chain{c}"))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Domain(format!(
            "{}: no retained draws for {}; was the fit completed?",
            args.run.display(),
            missing.join(", ")
        )));
    }
    let per_chain: Vec<Vec<ParameterState>> = (0..config.mcmc.n_chains)
        .map(|c| io::read_draws(&args.run.join(format!("chain{c}/states"))))
        .collect::<Result<_>>()?;
    let draws: Vec<ParameterState> = per_chain.iter().flatten().cloned().collect();
    let summary = PosteriorSummary::from_draws(&draws)?;
    let sites = read_sites(&args.run.join("sites.csv"))?;
    let names = &sites.names;
    let out = &cli.out;
    create_dir(out)?;

    write_csv(
        &out.join("cluster_counts.csv"),
        &["partition", "component", "mean", "median"],
        summary.cluster_counts.tables.iter().map(|t| {
            let mut row = key_columns(&t.key);
            row.extend([fmt_f64(t.mean), fmt_f64(t.median)]);
            row
        }),
    )?;
    let mut chain_rows = Vec::new();
    for (c, chain_draws) in per_chain.iter().enumerate() {
        let series = cluster_count_series(chain_draws)?;
        for t in &series.tables {
            let mut row = vec![c.to_string()];
            row.extend(key_columns(&t.key));
            row.extend([fmt_f64(t.mean), fmt_f64(t.median)]);
            chain_rows.push(row);
        }
    }
    write_csv(&out.join("cluster_counts_by_chain.csv"), &["chain", "partition", "component", "mean", "median"], chain_rows)?;

    write_csv(
        &out.join("overview.csv"),
        &["quantity", "value"],
        [
            vec!["n_draws".into(), summary.n_draws.to_string()],
            vec!["n_chains".into(), per_chain.len().to_string()],
            vec!["grand_mean_clusters".into(), fmt_f64(summary.cluster_counts.grand_mean)],
        ],
    )?;

    let mut co_rows = Vec::new();
    for (key, m) in summary.cooccurrence.keys.iter().zip(&summary.cooccurrence.per_table) {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                let mut row = key_columns(key);
                row.extend([names[i].clone(), names[j].clone(), fmt_f64(m[[i, j]])]);
                co_rows.push(row);
            }
        }
    }
    write_csv(&out.join("cooccurrence.csv"), &["partition", "component", "site_i", "site_j", "frequency"], co_rows)?;
    for (group, m) in &summary.cooccurrence.averages {
        let file = match group {
            None => "cooccurrence_average.csv".to_string(),
            Some(k) => format!("cooccurrence_average_k{k}.csv"),
        };
        write_matrix(&out.join(file), names, m)?;
    }

    let mut modal_rows = Vec::new();
    for (key, labels) in summary.cooccurrence.keys.iter().zip(&summary.modal_partitions) {
        for (i, c) in labels.iter().enumerate() {
            let mut row = key_columns(key);
            row.extend([names[i].clone(), c.to_string()]);
            modal_rows.push(row);
        }
    }
    write_csv(&out.join("modal_partition.csv"), &["partition", "component", "site", "cluster"], modal_rows)?;

    write_csv(
        &out.join("coef_summaries.csv"),
        &["partition", "table_component", "cluster", "n_members", "component", "predictor", "mean", "lower", "upper"],
        summary.coef_summaries.iter().map(|s| {
            let mut row = key_columns(&s.key);
            row.extend([s.cluster.to_string(), s.n_members.to_string(), s.component.to_string(), s.predictor.to_string()]);
            row.extend(interval_columns(&s.interval));
            row
        }),
    )?;
    write_csv(
        &out.join("coreg_summary.csv"),
        &["k", "l", "mean", "lower", "upper"],
        summary.coreg_summary.iter().map(|(k, l, iv)| {
            let mut row = vec![k.to_string(), l.to_string()];
            row.extend(interval_columns(iv));
            row
        }),
    )?;
    write_csv(
        &out.join("tau2_summary.csv"),
        &["component", "mean", "lower", "upper"],
        summary.tau2_summary.iter().enumerate().map(|(k, iv)| {
            let mut row = vec![k.to_string()];
            row.extend(interval_columns(iv));
            row
        }),
    )?;
    let fnorm = &summary.factor_norms;
    write_csv(
        &out.join("factor_norms.csv"),
        &["component", "factor", "share"],
        (0..fnorm.nrows()).flat_map(|k| (0..fnorm.ncols()).map(move |l| vec![k.to_string(), l.to_string(), fmt_f64(fnorm[[k, l]])])),
    )?;
    for (k, g) in summary.lambda_gram.iter().enumerate() {
        write_matrix(&out.join(format!("lambda_gram_k{k}.csv")), names, g)?;
    }

    if let Some(truth_dir) = &args.truth {
        let truth = io::read_state(truth_dir)?;
        let truth_parts = truth_labels(&truth);
        let mut rows = Vec::new();
        for (key, labels) in summary.cooccurrence.keys.iter().zip(&summary.modal_partitions) {
            let reference = truth_parts.get(key.partition).ok_or_else(|| {
                Error::Domain(format!("truth has {} partitions, run has partition {}", truth_parts.len(), key.partition))
            })?;
            if reference.len() != labels.len() {
                return Err(Error::Domain(format!("truth has {} sites, run has {}", reference.len(), labels.len())));
            }
            let mut row = key_columns(key);
            row.push(fmt_f64(adjusted_rand_index(labels, reference)));
            rows.push(row);
        }
        write_csv(&out.join("ari.csv"), &["partition", "component", "ari"], rows)?;
    }

    if args.figure_data {
        write_figure_data(out, args, &config, &per_chain, &draws, &sites)?;
    }

    manifest.timings.insert("wall_seconds".into(), start.elapsed().as_secs_f64());
    manifest.write(out)?;
    println!(
        "{} draws from {} chains; mean cluster count {:.3}",
        summary.n_draws,
        per_chain.len(),
        summary.cluster_counts.grand_mean
    );
    Ok(())
}

/// Series behind the usual plots: cluster counts by draw, sweep traces,
/// and loading similarity against distance.
fn write_figure_data(
    out: &Path,
    args: &SummarizeArgs,
    config: &ModelConfig,
    per_chain: &[Vec<ParameterState>],
    draws: &[ParameterState],
    sites: &Sites,
) -> Result<()> {
    let mut rows = Vec::new();
    for (c, chain_draws) in per_chain.iter().enumerate() {
        for (d, state) in chain_draws.iter().enumerate() {
            for table in &state.clusters.tables {
                let component = match config.dp_mode {
                    fdclust::DpMode::Joint => "all".to_string(),
                    fdclust::DpMode::IndependentPerComponent => table.components[0].to_string(),
                };
                rows.push(vec![
                    c.to_string(),
                    d.to_string(),
                    table.partition.to_string(),
                    component,
                    table.n_clusters().to_string(),
                ]);
            }
        }
    }
    write_csv(&out.join("figure_cluster_counts.csv"), &["chain", "draw", "partition", "component", "clusters"], rows)?;

    for c in 0..per_chain.len() {
        let src = args.run.join(format!("chain{c}/sweeps.csv"));
        let dst = out.join(format!("figure_trace_chain{c}.csv"));
        fs::copy(&src, &dst).map_err(|e| io_err(&src, e))?;
    }

    if let Some(coords) = &sites.coords {
        let pairs = lambda_gram_vs_distance(draws, Some(coords))?;
        write_csv(
            &out.join("figure_gram_distance.csv"),
            &["component", "site_i", "site_j", "distance", "gram"],
            pairs.iter().map(|p| {
                vec![
                    p.component.to_string(),
                    sites.names[p.site_i].clone(),
                    sites.names[p.site_j].clone(),
                    fmt_f64(p.distance),
                    fmt_f64(p.gram),
                ]
            }),
        )?;
    }
    Ok(())
}
