//! From a complete measurement table to the model-scale [`Dataset`].

use std::collections::BTreeMap;
use std::f64::consts::PI;

use chrono::{Datelike, NaiveDateTime};
use ndarray::Array3;
use serde::{Deserialize, Serialize};

use super::raw::{RawTable, Variable};
use crate::data::{ComponentTransform, Dataset, TransformKind};
use crate::error::{Error, Result};

/// How one response is mapped to the model scale. Missing constants are
/// estimated as the pooled mean and standard deviation of the transformed values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseSpec {
    pub variable: Variable,
    pub kind: TransformKind,
    #[serde(default)]
    pub center: Option<f64>,
    #[serde(default)]
    pub scale: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformSpec {
    pub responses: Vec<ResponseSpec>,
    /// Clustered covariates, in column order of `x`.
    pub covariates: Vec<Variable>,
    /// Center and scale the covariates with pooled moments.
    #[serde(default = "yes")]
    pub scale_covariates: bool,
}

fn yes() -> bool {
    true
}

impl Default for TransformSpec {
    /// Ozone on the square-root scale and PM10 on the log scale, with
    /// temperature and relative humidity as clustered covariates.
    fn default() -> Self {
        TransformSpec {
            responses: vec![
                ResponseSpec { variable: Variable::Ozone, kind: TransformKind::Sqrt, center: None, scale: None },
                ResponseSpec { variable: Variable::Pm10, kind: TransformKind::Log, center: None, scale: None },
            ],
            covariates: vec![Variable::Temperature, Variable::RelativeHumidity],
            scale_covariates: true,
        }
    }
}

/// Intercept plus a 24-hour sine/cosine pair at hour `t`.
pub fn harmonic_design(t: f64) -> [f64; 3] {
    let w = 2.0 * PI * t / 24.0;
    [1.0, w.sin(), w.cos()]
}

/// Zero-based calendar-month index of every timestamp, in order of first appearance.
pub fn monthly_partition(times: &[NaiveDateTime]) -> Vec<usize> {
    let mut seen: BTreeMap<(i32, u32), usize> = BTreeMap::new();
    let mut order = Vec::new();
    for t in times {
        let key = (t.year(), t.month());
        if !seen.contains_key(&key) {
            seen.insert(key, seen.len());
        }
        order.push(seen[&key]);
    }
    order
}

fn pooled_moments(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

/// Builds the dataset on the full hourly grid of `table`, which must have no holes.
///
/// Times are hours since midnight of the first day; partitions are calendar months.
pub fn build_dataset(table: &RawTable, spec: &TransformSpec, coords: Option<&BTreeMap<String, [f64; 2]>>) -> Result<Dataset> {
    let grid = table.hourly_grid();
    if grid.is_empty() {
        return Err(Error::Schema("table has no measurements".into()));
    }
    let n = table.stations.len();
    let t_len = grid.len();
    let value = |s: usize, t: usize, v: Variable| -> Result<f64> {
        table
            .cells
            .get(&(s, grid[t], v))
            .map(|c| c.value)
            .ok_or_else(|| Error::Gap(format!("station {} has no {v} at {}; fill gaps first", table.stations[s], grid[t])))
    };

    let mut transform_log = Vec::new();
    let mut y = Array3::zeros((n, spec.responses.len(), t_len));
    for (k, r) in spec.responses.iter().enumerate() {
        let raw = ComponentTransform { name: r.variable.name().into(), kind: r.kind, center: 0.0, scale: 1.0 };
        let mut g = Vec::with_capacity(n * t_len);
        let mut offending = Vec::new();
        for s in 0..n {
            for t in 0..t_len {
                let v = value(s, t, r.variable)?;
                match raw.forward(v) {
                    Some(x) => g.push(x),
                    None => offending.push(format!("({}, {}, {v})", table.stations[s], grid[t])),
                }
            }
        }
        if !offending.is_empty() {
            let shown: Vec<_> = offending.iter().take(20).cloned().collect();
            return Err(Error::Domain(format!(
                "{} {} value(s) outside the domain of the {} transform: {}",
                offending.len(),
                r.variable,
                r.kind.name(),
                shown.join(", ")
            )));
        }
        let (m, sd) = pooled_moments(&g);
        let tr = ComponentTransform {
            name: r.variable.name().into(),
            kind: r.kind,
            center: r.center.unwrap_or(m),
            scale: r.scale.unwrap_or(if sd > 0.0 { sd } else { 1.0 }),
        };
        for s in 0..n {
            for t in 0..t_len {
                y[[s, k, t]] = (g[s * t_len + t] - tr.center) / tr.scale;
            }
        }
        transform_log.push(tr);
    }

    let mut covariate_log = Vec::new();
    let mut x = Array3::zeros((n, spec.covariates.len(), t_len));
    for (j, &v) in spec.covariates.iter().enumerate() {
        let mut vals = Vec::with_capacity(n * t_len);
        for s in 0..n {
            for t in 0..t_len {
                vals.push(value(s, t, v)?);
            }
        }
        let tr = if spec.scale_covariates {
            let (m, sd) = pooled_moments(&vals);
            ComponentTransform { name: v.name().into(), kind: TransformKind::None, center: m, scale: if sd > 0.0 { sd } else { 1.0 } }
        } else {
            ComponentTransform::identity(v.name())
        };
        for s in 0..n {
            for t in 0..t_len {
                x[[s, j, t]] = (vals[s * t_len + t] - tr.center) / tr.scale;
            }
        }
        covariate_log.push(tr);
    }

    let origin = grid[0].date().and_hms_opt(0, 0, 0).expect("midnight exists");
    let times: Vec<f64> = grid.iter().map(|t| (*t - origin).num_seconds() as f64 / 3600.0).collect();
    let z = Array3::from_shape_fn((n, 3, t_len), |(_, j, t)| harmonic_design(times[t])[j]);

    let site_coords = coords.and_then(|c| table.stations.iter().map(|s| c.get(s).copied()).collect::<Option<Vec<_>>>());

    Ok(Dataset {
        partition_of: monthly_partition(&grid),
        times,
        y,
        x,
        z,
        site_names: table.stations.clone(),
        site_coords,
        transform_log,
        covariate_log,
    })
}
