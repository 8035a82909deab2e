//! The in-memory dataset handed to the sampler.

use std::ops::Range;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::config::{Violation, ViolationKind};

/// Transform applied to a raw response before centering and scaling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformKind {
    Sqrt,
    Log,
    None,
}

impl TransformKind {
    pub fn name(&self) -> &'static str {
        match self {
            TransformKind::Sqrt => "sqrt",
            TransformKind::Log => "log",
            TransformKind::None => "none",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sqrt" => Some(TransformKind::Sqrt),
            "log" => Some(TransformKind::Log),
            "none" => Some(TransformKind::None),
            _ => None,
        }
    }
}

/// Record of how one variable was mapped onto the model scale:
/// `(g(value) - center) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentTransform {
    pub name: String,
    pub kind: TransformKind,
    pub center: f64,
    pub scale: f64,
}

impl ComponentTransform {
    pub fn identity(name: impl Into<String>) -> Self {
        ComponentTransform {
            name: name.into(),
            kind: TransformKind::None,
            center: 0.0,
            scale: 1.0,
        }
    }

    /// Transform a raw value; `None` outside the domain of the transform.
    pub fn forward(&self, value: f64) -> Option<f64> {
        let g = match self.kind {
            TransformKind::Sqrt if value >= 0.0 => value.sqrt(),
            TransformKind::Log if value > 0.0 => value.ln(),
            TransformKind::None => value,
            _ => return None,
        };
        Some((g - self.center) / self.scale)
    }

    pub fn inverse(&self, value: f64) -> f64 {
        let g = value * self.scale + self.center;
        match self.kind {
            TransformKind::Sqrt => g * g,
            TransformKind::Log => g.exp(),
            TransformKind::None => g,
        }
    }
}

/// Observed responses and covariate paths.
///
/// Arrays are indexed `[site, component or predictor, time index]`. Partition
/// indices are zero-based and must be nondecreasing in time.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Observation times in hours.
    pub times: Vec<f64>,
    pub y: Array3<f64>,
    /// Covariates whose coefficients are clustered.
    pub x: Array3<f64>,
    /// Covariates with site-specific coefficients, intercept included.
    pub z: Array3<f64>,
    pub partition_of: Vec<usize>,
    pub site_names: Vec<String>,
    /// Planar coordinates, used only by post-hoc distance diagnostics.
    pub site_coords: Option<Vec<[f64; 2]>>,
    /// One record per response component.
    pub transform_log: Vec<ComponentTransform>,
    /// One record per clustered covariate.
    pub covariate_log: Vec<ComponentTransform>,
}

impl Dataset {
    pub fn n_sites(&self) -> usize {
        self.y.dim().0
    }

    pub fn n_components(&self) -> usize {
        self.y.dim().1
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn p_x(&self) -> usize {
        self.x.dim().1
    }

    pub fn p_z(&self) -> usize {
        self.z.dim().1
    }

    /// Time-index range of each partition. Empty partitions get empty ranges.
    pub fn segments(&self, n_partitions: usize) -> Vec<Range<usize>> {
        let mut out = vec![0..0; n_partitions];
        let mut start = 0;
        while start < self.partition_of.len() {
            let m = self.partition_of[start];
            let mut end = start + 1;
            while end < self.partition_of.len() && self.partition_of[end] == m {
                end += 1;
            }
            if m < n_partitions {
                out[m] = start..end;
            }
            start = end;
        }
        // Empty partitions sit at the boundary of their neighbours.
        let mut cursor = 0;
        for r in out.iter_mut() {
            if r.start == r.end {
                *r = cursor..cursor;
            } else {
                cursor = r.end;
            }
        }
        out
    }

    /// Invariants that involve the data alone.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let (n, _, t) = self.y.dim();
        if t != self.times.len() {
            out.push(Violation::new(
                ViolationKind::Dimension,
                format!("y has {t} time points but times has {}", self.times.len()),
            ));
        }
        for (name, arr) in [("x", &self.x), ("z", &self.z)] {
            let (an, _, at) = arr.dim();
            if an != n || at != t {
                out.push(Violation::new(
                    ViolationKind::Dimension,
                    format!("{name} has shape ({an}, _, {at}), expected ({n}, _, {t})"),
                ));
            }
        }
        if self.partition_of.len() != self.times.len() {
            out.push(Violation::new(
                ViolationKind::Dimension,
                format!("partition_of has {} entries, expected {}", self.partition_of.len(), self.times.len()),
            ));
        }
        if self.times.iter().any(|v| !v.is_finite()) {
            out.push(Violation::new(ViolationKind::NonFinite, "times contain non-finite values"));
        } else if self.times.windows(2).any(|w| w[1] <= w[0]) {
            out.push(Violation::new(ViolationKind::TimeOrder, "times must be strictly increasing"));
        }
        if self.partition_of.windows(2).any(|w| w[1] < w[0]) {
            out.push(Violation::new(
                ViolationKind::NonContiguousPartition,
                format!("partition_of must be nondecreasing in time (contiguous partitions), got {:?}", preview(&self.partition_of)),
            ));
        }
        for (name, arr) in [("y", &self.y), ("x", &self.x), ("z", &self.z)] {
            let bad = arr.iter().filter(|v| !v.is_finite()).count();
            if bad > 0 {
                out.push(Violation::new(
                    ViolationKind::MissingValue,
                    format!("{name} has {bad} missing or non-finite entries"),
                ));
            }
        }
        if self.site_names.len() != n {
            out.push(Violation::new(
                ViolationKind::Dimension,
                format!("{} site names for {n} sites", self.site_names.len()),
            ));
        }
        if let Some(c) = &self.site_coords {
            if c.len() != n {
                out.push(Violation::new(
                    ViolationKind::Dimension,
                    format!("{} site coordinates for {n} sites", c.len()),
                ));
            }
        }
        out
    }
}

fn preview(v: &[usize]) -> Vec<usize> {
    v.iter().copied().take(12).collect()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::config::{tests::small_config, validate_config};

    pub(crate) fn tiny_dataset(n: usize, k: usize, px: usize, pz: usize, partition_of: Vec<usize>) -> Dataset {
        let t = partition_of.len();
        Dataset {
            times: (0..t).map(|v| v as f64).collect(),
            y: Array3::from_shape_fn((n, k, t), |(i, kk, tt)| (i + kk + tt) as f64 * 0.1),
            x: Array3::from_shape_fn((n, px, t), |(i, j, tt)| ((i * 7 + j * 3 + tt) as f64).sin()),
            z: Array3::from_shape_fn((n, pz, t), |(_, j, tt)| if j == 0 { 1.0 } else { (tt as f64 * 0.3).cos() }),
            partition_of,
            site_names: (0..n).map(|i| format!("s{i}")).collect(),
            site_coords: None,
            transform_log: (0..k).map(|kk| ComponentTransform::identity(format!("y{kk}"))).collect(),
            covariate_log: (0..px).map(|j| ComponentTransform::identity(format!("x{j}"))).collect(),
        }
    }

    #[test]
    fn consistent_pair_has_no_violations() {
        let cfg = small_config(3, 2, 3, 2);
        let data = tiny_dataset(3, 2, 2, 3, vec![0, 0, 1, 1]);
        assert!(validate_config(&cfg, &data).is_empty());
    }

    #[test]
    fn non_contiguous_partition_flagged_once() {
        let cfg = small_config(2, 1, 1, 2);
        let data = tiny_dataset(2, 1, 1, 1, vec![0, 1, 0]);
        let v = validate_config(&cfg, &data);
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!(v[0].kind, ViolationKind::NonContiguousPartition);
    }

    #[test]
    fn missing_values_flagged() {
        let cfg = small_config(2, 1, 1, 1);
        let mut data = tiny_dataset(2, 1, 1, 1, vec![0, 0, 0]);
        data.y[[1, 0, 2]] = f64::NAN;
        let v = validate_config(&cfg, &data);
        assert!(v.iter().any(|v| v.kind == ViolationKind::MissingValue));
    }

    #[test]
    fn segments_cover_times() {
        let data = tiny_dataset(1, 1, 1, 1, vec![0, 0, 2, 2, 2]);
        assert_eq!(data.segments(3), vec![0..2, 2..2, 2..5]);
    }

    #[test]
    fn transform_inverse() {
        let tr = ComponentTransform {
            name: "ozone".into(),
            kind: TransformKind::Sqrt,
            center: 2.0,
            scale: 0.5,
        };
        assert_eq!(tr.forward(16.0), Some(4.0));
        assert!((tr.inverse(4.0) - 16.0).abs() < 1e-12);
        assert_eq!(tr.forward(-1.0), None);
    }
}
