//! Exploratory summaries computed before any model fit.

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;

/// Least-squares fit of one station-month-component on an intercept and the
/// clustered covariates. `coefs` is `None` when the design is rank deficient.
#[derive(Debug, Clone, PartialEq)]
pub struct OlsRow {
    pub site: usize,
    pub partition: usize,
    pub component: usize,
    pub n_obs: usize,
    pub rank: usize,
    /// Intercept first, then one slope per covariate.
    pub coefs: Option<Vec<f64>>,
}

impl OlsRow {
    pub fn rank_deficient(&self) -> bool {
        self.coefs.is_none()
    }
}

/// Relative singular-value threshold below which a direction counts as absent.
const RANK_TOL: f64 = 1e-10;

pub fn ols(design: &DMatrix<f64>, response: &DVector<f64>) -> (usize, Option<DVector<f64>>) {
    let p = design.ncols();
    if design.nrows() < p {
        return (design.nrows(), None);
    }
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let rank = svd.singular_values.iter().filter(|s| **s > RANK_TOL * smax.max(f64::MIN_POSITIVE)).count();
    if rank < p {
        return (rank, None);
    }
    (rank, svd.solve(response, 0.0).ok())
}

/// One row per (site, partition, component), ordered in that nesting.
pub fn explore_monthly_ols(data: &Dataset) -> Vec<OlsRow> {
    let (n, kk, _) = data.y.dim();
    let px = data.p_x();
    let segments = data.segments(data.partition_of.iter().max().map_or(0, |m| m + 1));
    let mut out = Vec::with_capacity(n * kk * segments.len());
    for i in 0..n {
        for (m, range) in segments.iter().enumerate() {
            let rows: Vec<usize> = range.clone().collect();
            let design = DMatrix::from_fn(rows.len(), px + 1, |r, c| if c == 0 { 1.0 } else { data.x[[i, c - 1, rows[r]]] });
            for k in 0..kk {
                let resp = DVector::from_fn(rows.len(), |r, _| data.y[[i, k, rows[r]]]);
                let (rank, fit) = ols(&design, &resp);
                out.push(OlsRow {
                    site: i,
                    partition: m,
                    component: k,
                    n_obs: rows.len(),
                    rank,
                    coefs: fit.map(|b| b.iter().copied().collect()),
                });
            }
        }
    }
    out
}

/// `(site, component, bucket, mean)` rows.
pub type AverageRow = (usize, usize, usize, f64);

fn bucket_means(data: &Dataset, original_scale: bool, bucket: impl Fn(f64) -> usize) -> Vec<AverageRow> {
    let (n, kk, t) = data.y.dim();
    let n_buckets = data.times.iter().map(|v| bucket(*v)).max().map_or(0, |b| b + 1);
    let mut out = Vec::new();
    for i in 0..n {
        for k in 0..kk {
            let mut sum = vec![0.0; n_buckets];
            let mut cnt = vec![0usize; n_buckets];
            for s in 0..t {
                let v = data.y[[i, k, s]];
                let v = if original_scale { data.transform_log.get(k).map_or(v, |tr| tr.inverse(v)) } else { v };
                let b = bucket(data.times[s]);
                sum[b] += v;
                cnt[b] += 1;
            }
            for b in 0..n_buckets {
                if cnt[b] > 0 {
                    out.push((i, k, b, sum[b] / cnt[b] as f64));
                }
            }
        }
    }
    out
}

/// Means per day, counting days from the first midnight.
pub fn daily_averages(data: &Dataset, original_scale: bool) -> Vec<AverageRow> {
    bucket_means(data, original_scale, |t| (t / 24.0).floor().max(0.0) as usize)
}

/// Means per hour of the day, 0 to 23.
pub fn hour_of_day_averages(data: &Dataset, original_scale: bool) -> Vec<AverageRow> {
    bucket_means(data, original_scale, |t| (t.rem_euclid(24.0)).floor() as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tests::tiny_dataset;

    #[test]
    fn exact_linear_data_recovered() {
        let mut d = tiny_dataset(1, 1, 2, 1, vec![0; 12]);
        for s in 0..12 {
            d.y[[0, 0, s]] = 2.0 + 3.0 * d.x[[0, 0, s]] - d.x[[0, 1, s]];
        }
        let rows = explore_monthly_ols(&d);
        let c = rows[0].coefs.as_ref().unwrap();
        assert!((c[0] - 2.0).abs() < 1e-10 && (c[1] - 3.0).abs() < 1e-10 && (c[2] + 1.0).abs() < 1e-10, "{c:?}");
    }

    #[test]
    fn constant_covariate_flagged() {
        let mut d = tiny_dataset(1, 1, 1, 1, vec![0, 0, 0, 0, 1, 1, 1]);
        for s in 0..4 {
            d.x[[0, 0, s]] = 7.0;
        }
        let rows = explore_monthly_ols(&d);
        assert_eq!(rows.len(), 2);
        assert!(rows[0].rank_deficient());
        assert!(!rows[1].rank_deficient());
    }

    #[test]
    fn hour_of_day_of_constant_series() {
        let mut d = tiny_dataset(2, 1, 1, 1, vec![0; 50]);
        d.y.fill(3.5);
        let rows = hour_of_day_averages(&d, false);
        assert_eq!(rows.len(), 2 * 24);
        assert!(rows.iter().all(|r| r.3 == 3.5));
        assert_eq!(daily_averages(&d, false).len(), 2 * 3);
    }
}
