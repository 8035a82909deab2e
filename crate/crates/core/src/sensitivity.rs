//! Grids of fits over prior settings.
//!
//! A sweep takes a base configuration and varies the concentration, the
//! noise-variance prior, the scale of the clustering base measure and the
//! Dirichlet-process mode. Every combination is one cell; a failing cell is
//! recorded and the grid carries on.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{DpMode, GaussianPrior, ModelConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gibbs::run_chains;
use crate::posterior::cluster_count_series;

/// Lists to cross. An empty list keeps the base configuration's value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default)]
    pub alphas: Vec<f64>,
    /// Inverse-gamma `(shape, rate)` pairs applied to every component.
    #[serde(default)]
    pub tau2_priors: Vec<(f64, f64)>,
    /// Isotropic base-measure variances applied to every component.
    #[serde(default)]
    pub base_variances: Vec<f64>,
    #[serde(default)]
    pub dp_modes: Vec<DpMode>,
}

impl SweepSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Cells in row-major order: mode, base variance, noise prior, concentration.
    pub fn cells(&self) -> Vec<SweepCell> {
        fn opt<T: Copy>(v: &[T]) -> Vec<Option<T>> {
            if v.is_empty() {
                vec![None]
            } else {
                v.iter().copied().map(Some).collect()
            }
        }
        let mut out = Vec::new();
        for dp_mode in opt(&self.dp_modes) {
            for base_variance in opt(&self.base_variances) {
                for tau2_prior in opt(&self.tau2_priors) {
                    for alpha in opt(&self.alphas) {
                        out.push(SweepCell { alpha, tau2_prior, base_variance, dp_mode });
                    }
                }
            }
        }
        out
    }
}

/// One grid point; `None` fields keep the base configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepCell {
    pub alpha: Option<f64>,
    pub tau2_prior: Option<(f64, f64)>,
    pub base_variance: Option<f64>,
    pub dp_mode: Option<DpMode>,
}

impl SweepCell {
    pub fn apply(&self, base: &ModelConfig) -> ModelConfig {
        let mut c = base.clone();
        if let Some(a) = self.alpha {
            c.dp_concentration = a;
        }
        if let Some((shape, rate)) = self.tau2_prior {
            c.priors.tau2_shape = vec![shape; c.n_components];
            c.priors.tau2_rate = vec![rate; c.n_components];
        }
        if let Some(v) = self.base_variance {
            c.priors.beta_base = c
                .priors
                .beta_base
                .iter()
                .map(|p| match p {
                    GaussianPrior::Isotropic { mean, .. } => GaussianPrior::Isotropic { mean: *mean, variance: v },
                    GaussianPrior::Full { mean, cov } => GaussianPrior::Full {
                        mean: mean.clone(),
                        cov: (0..cov.len()).map(|a| (0..cov.len()).map(|b| if a == b { v } else { 0.0 }).collect()).collect(),
                    },
                })
                .collect();
        }
        if let Some(m) = self.dp_mode {
            c.dp_mode = m;
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub cell: SweepCell,
    /// Mean occupied clusters over tables, draws and chains.
    pub grand_mean: Option<f64>,
    /// Per-table mean counts, pooled over chains.
    pub table_means: Vec<f64>,
    pub error: Option<String>,
}

pub fn run_cell(base: &ModelConfig, data: &Dataset, cell: SweepCell) -> CellResult {
    let config = cell.apply(base);
    let fit = run_chains(&config, data).and_then(|runs| {
        let draws: Vec<_> = runs.into_iter().flat_map(|r| r.output.draws).collect();
        cluster_count_series(&draws)
    });
    match fit {
        Ok(series) => CellResult {
            cell,
            grand_mean: Some(series.grand_mean),
            table_means: series.tables.iter().map(|t| t.mean).collect(),
            error: None,
        },
        Err(e) => CellResult { cell, grand_mean: None, table_means: Vec::new(), error: Some(e.to_string()) },
    }
}

/// Fits every cell, sequentially unless `parallel`.
pub fn run_sweep(base: &ModelConfig, data: &Dataset, spec: &SweepSpec, parallel: bool) -> Vec<CellResult> {
    let cells = spec.cells();
    if parallel {
        cells.into_par_iter().map(|c| run_cell(base, data, c)).collect()
    } else {
        cells.into_iter().map(|c| run_cell(base, data, c)).collect()
    }
}

/// Grand means laid out with one row per (mode, base variance, noise prior)
/// and one column per concentration. Missing or failed cells are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct PivotTable {
    pub alphas: Vec<Option<f64>>,
    pub rows: Vec<(SweepCell, Vec<Option<f64>>)>,
}

pub fn pivot(results: &[CellResult]) -> PivotTable {
    let mut alphas: Vec<Option<f64>> = Vec::new();
    for r in results {
        if !alphas.contains(&r.cell.alpha) {
            alphas.push(r.cell.alpha);
        }
    }
    let mut rows: Vec<(SweepCell, Vec<Option<f64>>)> = Vec::new();
    for r in results {
        let key = SweepCell { alpha: None, ..r.cell };
        let col = alphas.iter().position(|a| *a == r.cell.alpha).expect("alpha collected above");
        match rows.iter_mut().find(|(k, _)| *k == key) {
            Some((_, vals)) => vals[col] = r.grand_mean,
            None => {
                let mut vals = vec![None; alphas.len()];
                vals[col] = r.grand_mean;
                rows.push((key, vals));
            }
        }
    }
    PivotTable { alphas, rows }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::tests::small_config;
    use crate::data::tests::tiny_dataset;

    #[test]
    fn full_grid_parses() {
        let spec = SweepSpec::from_toml_str(
            "alphas = [0.001, 0.1, 1.0, 10.0, 1000.0]\n\
             tau2_priors = [[1.0, 1.0], [101.0, 10.0]]\n\
             base_variances = [1000.0, 1.0, 0.001]\n\
             dp_modes = [\"joint\", \"independent-per-component\"]\n",
        )
        .unwrap();
        assert_eq!(spec.cells().len(), 5 * 2 * 3 * 2);
        assert!(SweepSpec::from_toml_str("alpha = [1.0]").is_err());
    }

    #[test]
    fn empty_spec_is_single_base_cell() {
        let cells = SweepSpec::default().cells();
        assert_eq!(cells.len(), 1);
        let cfg = small_config(2, 1, 1, 1);
        assert_eq!(cells[0].apply(&cfg), cfg);
    }

    #[test]
    fn failing_cell_is_recorded() {
        let mut cfg = small_config(3, 1, 1, 1);
        cfg.mcmc.n_iterations = 3;
        cfg.mcmc.burn_in = 1;
        cfg.mcmc.thin = 1;
        let data = tiny_dataset(3, 1, 1, 1, vec![0; 6]);
        let spec = SweepSpec { alphas: vec![1.0, -1.0], ..Default::default() };
        let res = run_sweep(&cfg, &data, &spec, false);
        assert!(res[0].error.is_none() && res[0].grand_mean.is_some());
        assert!(res[1].error.is_some());
        let p = pivot(&res);
        assert_eq!(p.rows.len(), 1);
        assert_eq!(p.rows[0].1[1], None);
    }
}
