//! One full draw of the model parameters.

use ndarray::{Array2, Array3, Array4};

use crate::config::DpMode;

/// A distinct coefficient value shared by every site carrying its label.
/// Holds one `p_x` vector per component driven by the owning table.
#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub coefs: Vec<Vec<f64>>,
}

/// Sentinel label for a site temporarily removed from its table.
pub const DETACHED: usize = usize::MAX;

/// Labels, atoms and occupancy counts of one Dirichlet process, i.e. one
/// partition (joint mode) or one (partition, component) pair (independent mode).
///
/// Cluster indices are dense: labels take values `0..atoms.len()` and every
/// atom has at least one member.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterTable {
    pub partition: usize,
    /// Components whose coefficients this table's atoms carry, in atom order.
    pub components: Vec<usize>,
    pub labels: Vec<usize>,
    pub atoms: Vec<Atom>,
    pub counts: Vec<usize>,
}

impl ClusterTable {
    pub fn new(partition: usize, components: Vec<usize>, labels: Vec<usize>, atoms: Vec<Atom>) -> Self {
        let mut counts = vec![0; atoms.len()];
        for &l in &labels {
            if l < counts.len() {
                counts[l] += 1;
            }
        }
        ClusterTable {
            partition,
            components,
            labels,
            atoms,
            counts,
        }
    }

    pub fn n_clusters(&self) -> usize {
        self.atoms.len()
    }

    pub fn n_sites(&self) -> usize {
        self.labels.len()
    }

    /// Position of `component` within this table's atom layout.
    pub fn component_slot(&self, component: usize) -> Option<usize> {
        self.components.iter().position(|&c| c == component)
    }

    pub fn members(&self, cluster: usize) -> impl Iterator<Item = usize> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter(move |(_, &l)| l == cluster)
            .map(|(i, _)| i)
    }

    /// Detaches `site`. If its cluster empties, the atom is dropped and higher
    /// labels shift down by one. Returns the dropped cluster index, if any.
    pub fn remove_site(&mut self, site: usize) -> Option<usize> {
        let c = self.labels[site];
        debug_assert_ne!(c, DETACHED);
        self.labels[site] = DETACHED;
        self.counts[c] -= 1;
        if self.counts[c] > 0 {
            return None;
        }
        self.atoms.remove(c);
        self.counts.remove(c);
        for l in self.labels.iter_mut() {
            if *l != DETACHED && *l > c {
                *l -= 1;
            }
        }
        Some(c)
    }

    pub fn assign(&mut self, site: usize, cluster: usize) {
        debug_assert_eq!(self.labels[site], DETACHED);
        self.labels[site] = cluster;
        self.counts[cluster] += 1;
    }

    /// Opens a new cluster holding only `site`.
    pub fn open_cluster(&mut self, site: usize, atom: Atom) -> usize {
        self.atoms.push(atom);
        self.counts.push(0);
        let c = self.atoms.len() - 1;
        self.assign(site, c);
        c
    }

    /// Label/atom/count consistency; returns a description of the first failure.
    pub fn check(&self) -> Result<(), String> {
        let k = self.components.len();
        if self.counts.len() != self.atoms.len() {
            return Err(format!("{} counts for {} atoms", self.counts.len(), self.atoms.len()));
        }
        let mut tally = vec![0usize; self.atoms.len()];
        for (i, &l) in self.labels.iter().enumerate() {
            if l >= self.atoms.len() {
                return Err(format!("site {i} has label {l} but only {} atoms exist", self.atoms.len()));
            }
            tally[l] += 1;
        }
        if tally != self.counts {
            return Err(format!("counts {:?} disagree with labels (tally {:?})", self.counts, tally));
        }
        if let Some(c) = tally.iter().position(|&t| t == 0) {
            return Err(format!("atom {c} has no members"));
        }
        if self.counts.iter().sum::<usize>() != self.labels.len() {
            return Err("counts do not sum to the number of sites".into());
        }
        if self.atoms.iter().any(|a| a.coefs.len() != k) {
            return Err("atom does not carry one vector per table component".into());
        }
        Ok(())
    }
}

/// All Dirichlet-process tables of a state.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterState {
    pub mode: DpMode,
    pub n_components: usize,
    /// Joint mode: `tables[m]`. Independent mode: `tables[m * K + k]`.
    pub tables: Vec<ClusterTable>,
}

impl ClusterState {
    pub fn table_index(&self, partition: usize, component: usize) -> usize {
        match self.mode {
            DpMode::Joint => partition,
            DpMode::IndependentPerComponent => partition * self.n_components + component,
        }
    }

    pub fn table(&self, partition: usize, component: usize) -> &ClusterTable {
        &self.tables[self.table_index(partition, component)]
    }

    /// Clustered coefficients of `site` in `partition` for `component`.
    pub fn beta(&self, site: usize, partition: usize, component: usize) -> &[f64] {
        let table = self.table(partition, component);
        let slot = match self.mode {
            DpMode::Joint => component,
            DpMode::IndependentPerComponent => 0,
        };
        &table.atoms[table.labels[site]].coefs[slot]
    }

    /// Number of partitions covered.
    pub fn n_partitions(&self) -> usize {
        match self.mode {
            DpMode::Joint => self.tables.len(),
            DpMode::IndependentPerComponent => self.tables.len() / self.n_components.max(1),
        }
    }
}

/// One full parameter draw.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterState {
    /// `[site, partition, component, predictor]`.
    pub gamma: Array4<f64>,
    pub clusters: ClusterState,
    /// `[component, site, factor]`.
    pub lambda: Array3<f64>,
    /// Lower triangular with unit diagonal, `[component, component]`.
    pub coreg: Array2<f64>,
    pub tau2: Vec<f64>,
    /// `[factor, component, time]`. May have zero time points in retained
    /// draws when factor paths are not kept.
    pub nu: Array3<f64>,
}

impl ParameterState {
    pub fn n_sites(&self) -> usize {
        self.gamma.dim().0
    }

    pub fn n_partitions(&self) -> usize {
        self.gamma.dim().1
    }

    pub fn n_components(&self) -> usize {
        self.gamma.dim().2
    }

    pub fn n_factors(&self) -> usize {
        self.lambda.dim().2
    }

    /// Every violated structural invariant, as human-readable messages.
    pub fn invariant_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let k = self.coreg.nrows();
        if self.coreg.ncols() != k {
            out.push("coregionalization matrix is not square".into());
        }
        for a in 0..k {
            for b in 0..self.coreg.ncols() {
                let v = self.coreg[[a, b]];
                if a == b && v != 1.0 {
                    out.push(format!("coreg[{a},{a}] = {v}, expected exactly 1"));
                }
                if b > a && v != 0.0 {
                    out.push(format!("coreg[{a},{b}] = {v} above the diagonal"));
                }
                if !v.is_finite() {
                    out.push(format!("coreg[{a},{b}] is not finite"));
                }
            }
        }
        for (kk, t) in self.tau2.iter().enumerate() {
            if !(*t > 0.0 && t.is_finite()) {
                out.push(format!("tau2[{kk}] = {t} is not strictly positive"));
            }
        }
        for (ti, table) in self.clusters.tables.iter().enumerate() {
            if let Err(e) = table.check() {
                out.push(format!("cluster table {ti}: {e}"));
            }
            if table.n_sites() != self.n_sites() {
                out.push(format!("cluster table {ti} labels {} sites", table.n_sites()));
            }
        }
        out
    }
}
