//! Label-invariant summaries of retained draws.
//!
//! Every function takes the pooled draws of one or more chains. Nothing here
//! depends on the identity of cluster labels within a draw: clusterings are
//! compared through co-occurrence, and cluster-level coefficients are
//! reported for the clusters of a modal partition by averaging the
//! site-level coefficients of its members.

use ndarray::Array2;

use crate::config::DpMode;
use crate::error::{Error, Result};
use crate::state::ParameterState;

fn nonempty(draws: &[ParameterState]) -> Result<&ParameterState> {
    draws.first().ok_or_else(|| Error::Domain("no retained draws to summarize".into()))
}

/// Equal-tail sample quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Posterior mean and central 95% interval of a scalar.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn from_samples(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Interval {
            mean: v.iter().sum::<f64>() / v.len() as f64,
            lower: quantile(&v, 0.025),
            upper: quantile(&v, 0.975),
        }
    }
}

/// Which Dirichlet process a table summary refers to: the partition and,
/// in independent mode, the component.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TableKey {
    pub partition: usize,
    pub component: Option<usize>,
}

fn table_keys(state: &ParameterState) -> Vec<TableKey> {
    state
        .clusters
        .tables
        .iter()
        .map(|t| TableKey {
            partition: t.partition,
            component: match state.clusters.mode {
                DpMode::Joint => None,
                DpMode::IndependentPerComponent => Some(t.components[0]),
            },
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableCounts {
    pub key: TableKey,
    pub mean: f64,
    pub median: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterCountSeries {
    pub tables: Vec<TableCounts>,
    /// Mean over every table and draw.
    pub grand_mean: f64,
}

pub fn cluster_count_series(draws: &[ParameterState]) -> Result<ClusterCountSeries> {
    let first = nonempty(draws)?;
    let keys = table_keys(first);
    let mut total = 0.0;
    let tables = keys
        .into_iter()
        .enumerate()
        .map(|(ti, key)| {
            let mut counts: Vec<f64> = draws.iter().map(|d| d.clusters.tables[ti].n_clusters() as f64).collect();
            total += counts.iter().sum::<f64>();
            counts.sort_by(f64::total_cmp);
            TableCounts {
                key,
                mean: counts.iter().sum::<f64>() / counts.len() as f64,
                median: quantile(&counts, 0.5),
            }
        })
        .collect::<Vec<_>>();
    let grand_mean = total / (draws.len() * tables.len().max(1)) as f64;
    Ok(ClusterCountSeries { tables, grand_mean })
}

/// Share-a-label frequencies for one table.
pub fn cooccurrence_table(draws: &[ParameterState], table_index: usize) -> Result<Array2<f64>> {
    let n = nonempty(draws)?.n_sites();
    let mut acc = Array2::<f64>::zeros((n, n));
    for d in draws {
        let labels = &d.clusters.tables[table_index].labels;
        for i in 0..n {
            for j in 0..n {
                if labels[i] == labels[j] {
                    acc[[i, j]] += 1.0;
                }
            }
        }
    }
    acc /= draws.len() as f64;
    Ok(acc)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cooccurrence {
    pub keys: Vec<TableKey>,
    pub per_table: Vec<Array2<f64>>,
    /// Average over partitions; one matrix per component in independent
    /// mode, a single matrix in joint mode.
    pub averages: Vec<(Option<usize>, Array2<f64>)>,
}

pub fn cooccurrence(draws: &[ParameterState]) -> Result<Cooccurrence> {
    let keys = table_keys(nonempty(draws)?);
    let per_table = (0..keys.len()).map(|ti| cooccurrence_table(draws, ti)).collect::<Result<Vec<_>>>()?;
    let mut groups: Vec<Option<usize>> = keys.iter().map(|k| k.component).collect();
    groups.dedup();
    groups.sort();
    groups.dedup();
    let averages = groups
        .into_iter()
        .map(|g| {
            let members: Vec<&Array2<f64>> = keys.iter().zip(&per_table).filter(|(k, _)| k.component == g).map(|(_, m)| m).collect();
            let mut avg = members[0].clone();
            for m in &members[1..] {
                avg += *m;
            }
            avg /= members.len() as f64;
            (g, avg)
        })
        .collect();
    Ok(Cooccurrence { keys, per_table, averages })
}

/// Relabels a partition by order of first appearance.
pub fn canonical_labels(labels: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect()
}

/// The retained partition closest to the co-occurrence matrix, i.e. the draw
/// minimizing `sum_{i<j} |1[c_i = c_j] - p_ij|`. Ties go to the earliest draw.
pub fn modal_partition(draws: &[ParameterState], table_index: usize) -> Result<Vec<usize>> {
    let p = cooccurrence_table(draws, table_index)?;
    let n = p.nrows();
    let mut best: Option<(f64, usize)> = None;
    for (d, state) in draws.iter().enumerate() {
        let labels = &state.clusters.tables[table_index].labels;
        let mut loss = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let same = if labels[i] == labels[j] { 1.0 } else { 0.0 };
                loss += (same - p[[i, j]]).abs();
            }
        }
        if best.is_none_or(|(b, _)| loss < b) {
            best = Some((loss, d));
        }
    }
    let (_, d) = best.expect("nonempty draws");
    Ok(canonical_labels(&draws[d].clusters.tables[table_index].labels))
}

/// Adjusted Rand index between two partitions of the same sites.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "partitions must cover the same sites");
    let n = a.len();
    let a = canonical_labels(a);
    let b = canonical_labels(b);
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0u64; kb]; ka];
    for (x, y) in a.iter().zip(&b) {
        table[*x][*y] += 1;
    }
    let c2 = |v: u64| (v * v.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.iter().flatten().map(|&v| c2(v)).sum();
    let rows: f64 = table.iter().map(|r| c2(r.iter().sum())).sum();
    let cols: f64 = (0..kb).map(|j| c2(table.iter().map(|r| r[j]).sum())).sum();
    let total = c2(n as u64);
    let expected = rows * cols / total;
    let max = 0.5 * (rows + cols);
    if max == expected {
        // Both partitions trivial (all singletons or one block) and identical in structure.
        return if a == b { 1.0 } else { 0.0 };
    }
    (index - expected) / (max - expected)
}

/// Relative Euclidean column norms of the posterior-mean loadings, `[component, factor]`.
/// Rows sum to one; a zero matrix gives equal shares.
pub fn factor_norms(draws: &[ParameterState]) -> Result<Array2<f64>> {
    let mean = mean_lambda(draws)?;
    let (kk, n, r) = mean.dim();
    let mut out = Array2::zeros((kk, r));
    for k in 0..kk {
        let norms: Vec<f64> = (0..r).map(|l| (0..n).map(|i| mean[[k, i, l]].powi(2)).sum::<f64>().sqrt()).collect();
        let total: f64 = norms.iter().sum();
        for l in 0..r {
            out[[k, l]] = if total > 0.0 { norms[l] / total } else { 1.0 / r as f64 };
        }
    }
    Ok(out)
}

fn mean_lambda(draws: &[ParameterState]) -> Result<ndarray::Array3<f64>> {
    let mut acc = nonempty(draws)?.lambda.clone();
    for d in &draws[1..] {
        acc += &d.lambda;
    }
    acc /= draws.len() as f64;
    Ok(acc)
}

/// Posterior-mean `Lambda^(k) Lambda^(k)'`, one `n x n` matrix per component.
pub fn lambda_gram(draws: &[ParameterState]) -> Result<Vec<Array2<f64>>> {
    let first = nonempty(draws)?;
    let (kk, n, r) = first.lambda.dim();
    let mut out = vec![Array2::<f64>::zeros((n, n)); kk];
    for d in draws {
        for (k, g) in out.iter_mut().enumerate() {
            for i in 0..n {
                for j in 0..n {
                    g[[i, j]] += (0..r).map(|l| d.lambda[[k, i, l]] * d.lambda[[k, j, l]]).sum::<f64>();
                }
            }
        }
    }
    for g in out.iter_mut() {
        *g /= draws.len() as f64;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GramPair {
    pub component: usize,
    pub site_i: usize,
    pub site_j: usize,
    pub distance: f64,
    pub gram: f64,
}

/// Off-diagonal posterior-mean gram entries (`i < j`) paired with inter-site distances.
pub fn lambda_gram_vs_distance(draws: &[ParameterState], coords: Option<&[[f64; 2]]>) -> Result<Vec<GramPair>> {
    let coords = coords.ok_or_else(|| Error::Domain("site coordinates are required for distance diagnostics".into()))?;
    let grams = lambda_gram(draws)?;
    let n = coords.len();
    if grams.first().is_some_and(|g| g.nrows() != n) {
        return Err(Error::Domain(format!("{} coordinates for {} sites", n, grams[0].nrows())));
    }
    let mut out = Vec::new();
    for (k, g) in grams.iter().enumerate() {
        for i in 0..n {
            for j in (i + 1)..n {
                let (dx, dy) = (coords[i][0] - coords[j][0], coords[i][1] - coords[j][1]);
                out.push(GramPair {
                    component: k,
                    site_i: i,
                    site_j: j,
                    distance: dx.hypot(dy),
                    gram: g[[i, j]],
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoefSummary {
    pub key: TableKey,
    /// Cluster index within the modal partition.
    pub cluster: usize,
    pub n_members: usize,
    pub component: usize,
    pub predictor: usize,
    pub interval: Interval,
}

/// Clustered-coefficient summaries for each cluster of each table's modal partition.
pub fn coef_summaries(draws: &[ParameterState]) -> Result<Vec<CoefSummary>> {
    let first = nonempty(draws)?;
    let keys = table_keys(first);
    let mut out = Vec::new();
    for (ti, key) in keys.iter().enumerate() {
        let modal = modal_partition(draws, ti)?;
        let n_clusters = modal.iter().max().map_or(0, |m| m + 1);
        let components = first.clusters.tables[ti].components.clone();
        let px = first.clusters.tables[ti].atoms[0].coefs[0].len();
        for c in 0..n_clusters {
            let members: Vec<usize> = (0..modal.len()).filter(|&i| modal[i] == c).collect();
            for &k in &components {
                for j in 0..px {
                    let values: Vec<f64> = draws
                        .iter()
                        .map(|d| {
                            members.iter().map(|&i| d.clusters.beta(i, key.partition, k)[j]).sum::<f64>() / members.len() as f64
                        })
                        .collect();
                    out.push(CoefSummary {
                        key: *key,
                        cluster: c,
                        n_members: members.len(),
                        component: k,
                        predictor: j,
                        interval: Interval::from_samples(&values),
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Summaries of each strictly-lower coregionalization entry `(k, l, interval)`.
pub fn coreg_summary(draws: &[ParameterState]) -> Result<Vec<(usize, usize, Interval)>> {
    let kk = nonempty(draws)?.coreg.nrows();
    let mut out = Vec::new();
    for k in 1..kk {
        for l in 0..k {
            let v: Vec<f64> = draws.iter().map(|d| d.coreg[[k, l]]).collect();
            out.push((k, l, Interval::from_samples(&v)));
        }
    }
    Ok(out)
}

pub fn tau2_summary(draws: &[ParameterState]) -> Result<Vec<Interval>> {
    let kk = nonempty(draws)?.tau2.len();
    Ok((0..kk)
        .map(|k| Interval::from_samples(&draws.iter().map(|d| d.tau2[k]).collect::<Vec<_>>()))
        .collect())
}

/// Everything the summarize step reports.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub n_draws: usize,
    pub cluster_counts: ClusterCountSeries,
    pub cooccurrence: Cooccurrence,
    pub modal_partitions: Vec<Vec<usize>>,
    pub coef_summaries: Vec<CoefSummary>,
    pub lambda_gram: Vec<Array2<f64>>,
    pub factor_norms: Array2<f64>,
    pub coreg_summary: Vec<(usize, usize, Interval)>,
    pub tau2_summary: Vec<Interval>,
}

impl PosteriorSummary {
    pub fn from_draws(draws: &[ParameterState]) -> Result<Self> {
        let first = nonempty(draws)?;
        Ok(PosteriorSummary {
            n_draws: draws.len(),
            cluster_counts: cluster_count_series(draws)?,
            cooccurrence: cooccurrence(draws)?,
            modal_partitions: (0..first.clusters.tables.len())
                .map(|ti| modal_partition(draws, ti))
                .collect::<Result<Vec<_>>>()?,
            coef_summaries: coef_summaries(draws)?,
            lambda_gram: lambda_gram(draws)?,
            factor_norms: factor_norms(draws)?,
            coreg_summary: coreg_summary(draws)?,
            tau2_summary: tau2_summary(draws)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::{Atom, ClusterState, ClusterTable};
    use ndarray::{Array3, Array4};

    pub(crate) fn labelled_state(labels: Vec<usize>) -> ParameterState {
        let n = labels.len();
        let n_atoms = labels.iter().max().unwrap() + 1;
        let atoms = (0..n_atoms).map(|c| Atom { coefs: vec![vec![c as f64]] }).collect();
        ParameterState {
            gamma: Array4::zeros((n, 1, 1, 1)),
            clusters: ClusterState {
                mode: DpMode::Joint,
                n_components: 1,
                tables: vec![ClusterTable::new(0, vec![0], labels, atoms)],
            },
            lambda: Array3::zeros((1, n, 2)),
            coreg: Array2::eye(1),
            tau2: vec![1.0],
            nu: Array3::zeros((2, 1, 0)),
        }
    }

    #[test]
    fn counts_mean_and_median() {
        let draws = vec![labelled_state(vec![0, 1, 2, 2, 2]), labelled_state(vec![0, 1, 2, 3, 4])];
        let s = cluster_count_series(&draws).unwrap();
        assert_eq!(s.tables[0].mean, 4.0);
        assert_eq!(s.tables[0].median, 4.0);
        assert_eq!(s.grand_mean, 4.0);
        assert!(cluster_count_series(&[]).is_err());
    }

    #[test]
    fn cooccurrence_is_label_invariant() {
        let a = vec![labelled_state(vec![0, 0, 1]), labelled_state(vec![0, 1, 1])];
        let b = vec![labelled_state(vec![1, 1, 0]), labelled_state(vec![1, 0, 0])];
        let ca = cooccurrence_table(&a, 0).unwrap();
        assert_eq!(ca, cooccurrence_table(&b, 0).unwrap());
        assert_eq!(ca[[0, 1]], 0.5);
        assert_eq!(ca[[0, 2]], 0.0);
        assert!((0..3).all(|i| ca[[i, i]] == 1.0));
    }

    #[test]
    fn modal_partition_prefers_consensus() {
        let draws = vec![
            labelled_state(vec![0, 0, 1, 1]),
            labelled_state(vec![1, 1, 0, 0]),
            labelled_state(vec![0, 1, 2, 3]),
        ];
        assert_eq!(modal_partition(&draws, 0).unwrap(), vec![0, 0, 1, 1]);
    }

    #[test]
    fn ari_reference_values() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[5, 5, 2, 2]), 1.0);
        // All-ones contingency table: index 0, expected 2/3, max 2.
        let v = adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]);
        assert!((v + 0.5).abs() < 1e-12, "{v}");
    }

    #[test]
    fn factor_shares() {
        let mut s = labelled_state(vec![0, 0]);
        s.lambda[[0, 0, 0]] = 3.0;
        s.lambda[[0, 1, 1]] = 4.0;
        let f = factor_norms(&[s]).unwrap();
        assert!((f[[0, 0]] - 3.0 / 7.0).abs() < 1e-15);
        assert!((f[[0, 1]] - 4.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn gram_pairs_need_coordinates() {
        let s = labelled_state(vec![0, 0]);
        assert!(lambda_gram_vs_distance(&[s.clone()], None).is_err());
        let pairs = lambda_gram_vs_distance(&[s], Some(&[[0.0, 0.0], [3.0, 4.0]])).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].distance, 5.0);
    }

    #[test]
    fn constant_draws_collapse_intervals() {
        let i = Interval::from_samples(&[2.5; 7]);
        assert_eq!((i.mean, i.lower, i.upper), (2.5, 2.5, 2.5));
    }
}
