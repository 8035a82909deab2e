//! CSV layout for parameter states, retained draws, checkpoints and datasets.
//!
//! Every table is long-format with a header row; floats are written with
//! their shortest round-tripping representation so a read after a write is
//! bit-exact. Indices are 0-based.
//!
//! A state directory holds `dims.csv`, `gamma.csv`, `labels.csv`,
//! `atoms.csv`, `lambda.csv`, `coreg.csv`, `tau2.csv` and `nu.csv`. A draws
//! directory has the same files with a leading `draw` column.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3, Array4};

use crate::config::DpMode;
use crate::data::{ComponentTransform, Dataset, TransformKind};
use crate::error::{Error, Result};
use crate::gibbs::Checkpoint;
use crate::state::{Atom, ClusterState, ClusterTable, ParameterState};

pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn parse_f64(s: &str, file: &str) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::Schema(format!("{file}: `{s}` is not a number")))
}

fn parse_usize(s: &str, file: &str) -> Result<usize> {
    s.trim().parse().map_err(|_| Error::Schema(format!("{file}: `{s}` is not an index")))
}

/// Writes a header and rows to `path`.
pub fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads a CSV whose header must equal `header`, returning the raw rows.
pub fn read_csv(path: &Path, header: &[&str]) -> Result<Vec<csv::StringRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, e.to_string())),
        _ => Error::Csv(e),
    })?;
    let got: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if got != header {
        return Err(Error::Schema(format!("{}: expected columns {:?}, found {:?}", path.display(), header, got)));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(Error::Schema(format!("{}: row with {} fields", path.display(), rec.len())));
        }
        rows.push(rec);
    }
    Ok(rows)
}

// ---------------------------------------------------------------- states

/// Shape information shared by every draw in a directory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateDims {
    pub n_sites: usize,
    pub n_partitions: usize,
    pub n_components: usize,
    pub n_factors: usize,
    pub p_x: usize,
    pub p_z: usize,
    pub n_times: usize,
    pub mode: DpMode,
}

impl StateDims {
    pub fn of(state: &ParameterState) -> Self {
        let p_x = state
            .clusters
            .tables
            .first()
            .and_then(|t| t.atoms.first())
            .and_then(|a| a.coefs.first())
            .map_or(0, |c| c.len());
        StateDims {
            n_sites: state.n_sites(),
            n_partitions: state.n_partitions(),
            n_components: state.n_components(),
            n_factors: state.n_factors(),
            p_x,
            p_z: state.gamma.dim().3,
            n_times: state.nu.dim().2,
            mode: state.clusters.mode,
        }
    }

    fn rows(&self) -> Vec<Vec<String>> {
        let mode = match self.mode {
            DpMode::Joint => "joint",
            DpMode::IndependentPerComponent => "independent-per-component",
        };
        [
            ("n_sites", self.n_sites.to_string()),
            ("n_partitions", self.n_partitions.to_string()),
            ("n_components", self.n_components.to_string()),
            ("n_factors", self.n_factors.to_string()),
            ("p_x", self.p_x.to_string()),
            ("p_z", self.p_z.to_string()),
            ("n_times", self.n_times.to_string()),
            ("dp_mode", mode.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| vec![k.to_string(), v])
        .collect()
    }

    fn read(dir: &Path) -> Result<Self> {
        let rows = read_csv(&dir.join("dims.csv"), &["key", "value"])?;
        let map: BTreeMap<String, String> = rows.iter().map(|r| (r[0].to_string(), r[1].to_string())).collect();
        let get = |k: &str| -> Result<usize> {
            let v = map.get(k).ok_or_else(|| Error::Schema(format!("dims.csv: missing `{k}`")))?;
            parse_usize(v, "dims.csv")
        };
        let mode = match map.get("dp_mode").map(String::as_str) {
            Some("joint") => DpMode::Joint,
            Some("independent-per-component") => DpMode::IndependentPerComponent,
            other => return Err(Error::Schema(format!("dims.csv: unknown dp_mode {other:?}"))),
        };
        Ok(StateDims {
            n_sites: get("n_sites")?,
            n_partitions: get("n_partitions")?,
            n_components: get("n_components")?,
            n_factors: get("n_factors")?,
            p_x: get("p_x")?,
            p_z: get("p_z")?,
            n_times: get("n_times")?,
            mode,
        })
    }
}

const GAMMA: &[&str] = &["i", "m", "k", "j", "value"];
const LABELS: &[&str] = &["m", "group", "i", "label"];
const ATOMS: &[&str] = &["m", "group", "c", "k", "j", "value"];
const LAMBDA: &[&str] = &["k", "i", "j", "value"];
const COREG: &[&str] = &["k", "l", "value"];
const TAU2: &[&str] = &["k", "value"];
const NU: &[&str] = &["j", "k", "t", "value"];
const STATE_FILES: [(&str, &[&str]); 7] = [
    ("gamma.csv", GAMMA),
    ("labels.csv", LABELS),
    ("atoms.csv", ATOMS),
    ("lambda.csv", LAMBDA),
    ("coreg.csv", COREG),
    ("tau2.csv", TAU2),
    ("nu.csv", NU),
];

fn group_name(mode: DpMode, table: &ClusterTable) -> String {
    match mode {
        DpMode::Joint => "all".into(),
        DpMode::IndependentPerComponent => table.components[0].to_string(),
    }
}

/// Rows of every state file, in `STATE_FILES` order.
fn state_rows(s: &ParameterState) -> [Vec<Vec<String>>; 7] {
    let mut gamma = Vec::new();
    for ((i, m, k, j), v) in s.gamma.indexed_iter() {
        gamma.push(vec![i.to_string(), m.to_string(), k.to_string(), j.to_string(), fmt_f64(*v)]);
    }
    let mut labels = Vec::new();
    let mut atoms = Vec::new();
    for table in &s.clusters.tables {
        let g = group_name(s.clusters.mode, table);
        let m = table.partition.to_string();
        for (i, l) in table.labels.iter().enumerate() {
            labels.push(vec![m.clone(), g.clone(), i.to_string(), l.to_string()]);
        }
        for (c, atom) in table.atoms.iter().enumerate() {
            for (slot, coefs) in atom.coefs.iter().enumerate() {
                for (j, v) in coefs.iter().enumerate() {
                    atoms.push(vec![
                        m.clone(),
                        g.clone(),
                        c.to_string(),
                        table.components[slot].to_string(),
                        j.to_string(),
                        fmt_f64(*v),
                    ]);
                }
            }
        }
    }
    let lambda = s
        .lambda
        .indexed_iter()
        .map(|((k, i, j), v)| vec![k.to_string(), i.to_string(), j.to_string(), fmt_f64(*v)])
        .collect();
    let coreg = s
        .coreg
        .indexed_iter()
        .map(|((k, l), v)| vec![k.to_string(), l.to_string(), fmt_f64(*v)])
        .collect();
    let tau2 = s.tau2.iter().enumerate().map(|(k, v)| vec![k.to_string(), fmt_f64(*v)]).collect();
    let nu = s
        .nu
        .indexed_iter()
        .map(|((j, k, t), v)| vec![j.to_string(), k.to_string(), t.to_string(), fmt_f64(*v)])
        .collect();
    [gamma, labels, atoms, lambda, coreg, tau2, nu]
}

pub fn write_state(dir: &Path, state: &ParameterState) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_csv(&dir.join("dims.csv"), &["key", "value"], StateDims::of(state).rows())?;
    for ((file, header), rows) in STATE_FILES.iter().zip(state_rows(state)) {
        write_csv(&dir.join(file), header, rows)?;
    }
    Ok(())
}

/// Writes retained draws; `draw` numbers the rows 0, 1, ...
pub fn write_draws(dir: &Path, draws: &[ParameterState]) -> Result<()> {
    let Some(first) = draws.first() else {
        return Err(Error::Domain("no draws to write".into()));
    };
    let mut w = DrawWriter::create(dir, first)?;
    for (d, state) in draws.iter().enumerate() {
        w.write(d, state)?;
    }
    w.flush()
}

/// Appends draws to a draws directory one at a time.
pub struct DrawWriter {
    dir: std::path::PathBuf,
    writers: Vec<csv::Writer<fs::File>>,
}

impl DrawWriter {
    /// Starts a fresh directory shaped like `template`.
    pub fn create(dir: &Path, template: &ParameterState) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_csv(&dir.join("dims.csv"), &["key", "value"], StateDims::of(template).rows())?;
        let mut writers = Vec::new();
        for (file, header) in STATE_FILES {
            let mut w = csv::Writer::from_path(dir.join(file))?;
            let mut h = vec!["draw"];
            h.extend_from_slice(header);
            w.write_record(&h)?;
            writers.push(w);
        }
        Ok(DrawWriter { dir: dir.to_path_buf(), writers })
    }

    /// Continues an existing directory.
    pub fn append(dir: &Path) -> Result<Self> {
        let mut writers = Vec::new();
        for (file, _) in STATE_FILES {
            let path = dir.join(file);
            let f = fs::OpenOptions::new().append(true).open(&path).map_err(|e| Error::io(&path, e))?;
            writers.push(csv::WriterBuilder::new().has_headers(false).from_writer(f));
        }
        Ok(DrawWriter { dir: dir.to_path_buf(), writers })
    }

    pub fn write(&mut self, draw: usize, state: &ParameterState) -> Result<()> {
        let tag = draw.to_string();
        for (w, rows) in self.writers.iter_mut().zip(state_rows(state)) {
            for mut row in rows {
                row.insert(0, tag.clone());
                w.write_record(&row)?;
            }
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        for (w, (file, _)) in self.writers.iter_mut().zip(STATE_FILES) {
            w.flush().map_err(|e| Error::io(self.dir.join(file), e))?;
        }
        Ok(())
    }
}

/// Drops every row whose first column, read as an integer, is `>= keep`.
/// Used to discard output written after the checkpoint a run resumes from.
pub fn truncate_by_first_column(path: &Path, keep: usize) -> Result<()> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = String::with_capacity(text.len());
    for (i, line) in text.lines().enumerate() {
        let first = line.split(',').next().unwrap_or("");
        if i == 0 || first.parse::<usize>().is_ok_and(|v| v < keep) {
            out.push_str(line);
            out.push('\n');
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Keeps the first `keep` draws of a draws directory.
pub fn truncate_draws(dir: &Path, keep: usize) -> Result<()> {
    for (file, _) in STATE_FILES {
        truncate_by_first_column(&dir.join(file), keep)?;
    }
    Ok(())
}

/// Accumulates the parsed rows of one state.
struct StateBuilder {
    dims: StateDims,
    gamma: Array4<f64>,
    labels: BTreeMap<(usize, Option<usize>), Vec<Option<usize>>>,
    atoms: BTreeMap<(usize, Option<usize>), BTreeMap<usize, Vec<Vec<f64>>>>,
    lambda: Array3<f64>,
    coreg: Array2<f64>,
    tau2: Vec<f64>,
    nu: Array3<f64>,
}

impl StateBuilder {
    fn new(dims: StateDims) -> Self {
        StateBuilder {
            dims,
            gamma: Array4::from_elem((dims.n_sites, dims.n_partitions, dims.n_components, dims.p_z), f64::NAN),
            labels: BTreeMap::new(),
            atoms: BTreeMap::new(),
            lambda: Array3::from_elem((dims.n_components, dims.n_sites, dims.n_factors), f64::NAN),
            coreg: Array2::from_elem((dims.n_components, dims.n_components), f64::NAN),
            tau2: vec![f64::NAN; dims.n_components],
            nu: Array3::from_elem((dims.n_factors, dims.n_components, dims.n_times), f64::NAN),
        }
    }

    fn group(&self, s: &str, file: &str) -> Result<Option<usize>> {
        match (self.dims.mode, s) {
            (DpMode::Joint, "all") => Ok(None),
            (DpMode::IndependentPerComponent, g) => {
                let k = parse_usize(g, file)?;
                if k >= self.dims.n_components {
                    return Err(Error::Schema(format!("{file}: group {k} out of range")));
                }
                Ok(Some(k))
            }
            _ => Err(Error::Schema(format!("{file}: group `{s}` does not match the dp_mode"))),
        }
    }

    fn put(&mut self, file: usize, f: &[&str]) -> Result<()> {
        let name = STATE_FILES[file].0;
        let u = |i: usize| parse_usize(f[i], name);
        let oob = || Error::Schema(format!("{name}: index out of range in {f:?}"));
        match file {
            0 => *self.gamma.get_mut([u(0)?, u(1)?, u(2)?, u(3)?]).ok_or_else(oob)? = parse_f64(f[4], name)?,
            1 => {
                let (m, g, i, l) = (u(0)?, self.group(f[1], name)?, u(2)?, u(3)?);
                if m >= self.dims.n_partitions || i >= self.dims.n_sites {
                    return Err(oob());
                }
                self.labels.entry((m, g)).or_insert_with(|| vec![None; self.dims.n_sites])[i] = Some(l);
            }
            2 => {
                let (m, g, c, k, j) = (u(0)?, self.group(f[1], name)?, u(2)?, u(3)?, u(4)?);
                let slots = if g.is_some() { 1 } else { self.dims.n_components };
                let slot = if g.is_some() { 0 } else { k };
                if m >= self.dims.n_partitions || slot >= slots || j >= self.dims.p_x || g.is_some_and(|g| g != k) {
                    return Err(oob());
                }
                let px = self.dims.p_x;
                let coefs = self
                    .atoms
                    .entry((m, g))
                    .or_default()
                    .entry(c)
                    .or_insert_with(|| vec![vec![f64::NAN; px]; slots]);
                coefs[slot][j] = parse_f64(f[5], name)?;
            }
            3 => *self.lambda.get_mut([u(0)?, u(1)?, u(2)?]).ok_or_else(oob)? = parse_f64(f[3], name)?,
            4 => *self.coreg.get_mut([u(0)?, u(1)?]).ok_or_else(oob)? = parse_f64(f[2], name)?,
            5 => *self.tau2.get_mut(u(0)?).ok_or_else(oob)? = parse_f64(f[1], name)?,
            _ => *self.nu.get_mut([u(0)?, u(1)?, u(2)?]).ok_or_else(oob)? = parse_f64(f[3], name)?,
        }
        Ok(())
    }

    fn finish(self) -> Result<ParameterState> {
        let d = self.dims;
        let keys: Vec<(usize, Option<usize>)> = match d.mode {
            DpMode::Joint => (0..d.n_partitions).map(|m| (m, None)).collect(),
            DpMode::IndependentPerComponent => (0..d.n_partitions)
                .flat_map(|m| (0..d.n_components).map(move |k| (m, Some(k))))
                .collect(),
        };
        let mut tables = Vec::with_capacity(keys.len());
        let mut labels = self.labels;
        let mut atoms = self.atoms;
        for key in keys {
            let ls = labels
                .remove(&key)
                .ok_or_else(|| Error::Schema(format!("labels.csv: no labels for partition {} group {:?}", key.0, key.1)))?;
            let ls = ls
                .into_iter()
                .enumerate()
                .map(|(i, l)| l.ok_or_else(|| Error::Schema(format!("labels.csv: site {i} missing in partition {}", key.0))))
                .collect::<Result<Vec<_>>>()?;
            let amap = atoms.remove(&key).unwrap_or_default();
            let n_atoms = amap.len();
            if amap.keys().copied().ne(0..n_atoms) {
                return Err(Error::Schema(format!("atoms.csv: cluster indices of partition {} are not 0..{n_atoms}", key.0)));
            }
            let atom_vec: Vec<Atom> = amap.into_values().map(|coefs| Atom { coefs }).collect();
            let components = match key.1 {
                None => (0..d.n_components).collect(),
                Some(k) => vec![k],
            };
            tables.push(ClusterTable::new(key.0, components, ls, atom_vec));
        }
        let state = ParameterState {
            gamma: self.gamma,
            clusters: ClusterState { mode: d.mode, n_components: d.n_components, tables },
            lambda: self.lambda,
            coreg: self.coreg,
            tau2: self.tau2,
            nu: self.nu,
        };
        let any_nan = state.gamma.iter().chain(state.lambda.iter()).chain(state.nu.iter()).any(|v| v.is_nan())
            || state.tau2.iter().any(|v| v.is_nan())
            || state.clusters.tables.iter().flat_map(|t| &t.atoms).flat_map(|a| a.coefs.iter().flatten()).any(|v| v.is_nan());
        if any_nan {
            return Err(Error::Schema("state files do not cover every parameter entry".into()));
        }
        let problems = state.invariant_violations();
        if !problems.is_empty() {
            return Err(Error::Schema(format!("state is inconsistent: {}", problems.join("; "))));
        }
        Ok(state)
    }
}

pub fn read_state(dir: &Path) -> Result<ParameterState> {
    let mut b = StateBuilder::new(StateDims::read(dir)?);
    for (idx, (file, header)) in STATE_FILES.iter().enumerate() {
        for rec in read_csv(&dir.join(file), header)? {
            let fields: Vec<&str> = rec.iter().collect();
            b.put(idx, &fields)?;
        }
    }
    b.finish()
}

pub fn read_draws(dir: &Path) -> Result<Vec<ParameterState>> {
    let dims = StateDims::read(dir)?;
    let mut builders: BTreeMap<usize, StateBuilder> = BTreeMap::new();
    for (idx, (file, header)) in STATE_FILES.iter().enumerate() {
        let mut h = vec!["draw"];
        h.extend_from_slice(header);
        for rec in read_csv(&dir.join(file), &h)? {
            let draw = parse_usize(&rec[0], file)?;
            let fields: Vec<&str> = rec.iter().skip(1).collect();
            builders.entry(draw).or_insert_with(|| StateBuilder::new(dims)).put(idx, &fields)?;
        }
    }
    if builders.keys().copied().ne(0..builders.len()) {
        return Err(Error::Schema("draw indices are not contiguous from 0".into()));
    }
    builders.into_values().map(StateBuilder::finish).collect()
}

// ---------------------------------------------------------------- checkpoints

pub fn write_checkpoint(dir: &Path, cp: &Checkpoint) -> Result<()> {
    write_state(&dir.join("state"), &cp.state)?;
    write_csv(
        &dir.join("checkpoint.csv"),
        &["chain", "iteration", "rng_word_pos"],
        [vec![cp.chain.to_string(), cp.iteration.to_string(), cp.rng_word_pos.to_string()]],
    )
}

pub fn read_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let rows = read_csv(&dir.join("checkpoint.csv"), &["chain", "iteration", "rng_word_pos"])?;
    let [row] = rows.as_slice() else {
        return Err(Error::Schema("checkpoint.csv must hold exactly one row".into()));
    };
    let word_pos = row[2]
        .trim()
        .parse::<u128>()
        .map_err(|_| Error::Schema(format!("checkpoint.csv: bad generator position `{}`", &row[2])))?;
    Ok(Checkpoint {
        chain: parse_usize(&row[0], "checkpoint.csv")?,
        iteration: parse_usize(&row[1], "checkpoint.csv")?,
        rng_word_pos: word_pos,
        state: read_state(&dir.join("state"))?,
    })
}

// ---------------------------------------------------------------- datasets

const TIMES: &[&str] = &["t", "time", "partition"];
const CUBE: &[&str] = &["i", "j", "t", "value"];
const SITES: &[&str] = &["i", "name", "x", "y"];
const TRANSFORMS: &[&str] = &["role", "index", "name", "kind", "center", "scale"];

fn cube_rows(a: &Array3<f64>) -> impl Iterator<Item = Vec<String>> + '_ {
    a.indexed_iter()
        .map(|((i, j, t), v)| vec![i.to_string(), j.to_string(), t.to_string(), fmt_f64(*v)])
}

pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_csv(
        &dir.join("times.csv"),
        TIMES,
        data.times
            .iter()
            .zip(&data.partition_of)
            .enumerate()
            .map(|(t, (v, m))| vec![t.to_string(), fmt_f64(*v), m.to_string()]),
    )?;
    write_csv(&dir.join("y.csv"), CUBE, cube_rows(&data.y))?;
    write_csv(&dir.join("x.csv"), CUBE, cube_rows(&data.x))?;
    write_csv(&dir.join("z.csv"), CUBE, cube_rows(&data.z))?;
    write_csv(
        &dir.join("sites.csv"),
        SITES,
        data.site_names.iter().enumerate().map(|(i, name)| {
            let (x, y) = match &data.site_coords {
                Some(c) => (fmt_f64(c[i][0]), fmt_f64(c[i][1])),
                None => (String::new(), String::new()),
            };
            vec![i.to_string(), name.clone(), x, y]
        }),
    )?;
    let tf = |role: &str, i: usize, t: &ComponentTransform| {
        vec![
            role.to_string(),
            i.to_string(),
            t.name.clone(),
            t.kind.name().to_string(),
            fmt_f64(t.center),
            fmt_f64(t.scale),
        ]
    };
    let rows: Vec<Vec<String>> = data
        .transform_log
        .iter()
        .enumerate()
        .map(|(i, t)| tf("response", i, t))
        .chain(data.covariate_log.iter().enumerate().map(|(i, t)| tf("covariate", i, t)))
        .collect();
    write_csv(&dir.join("transforms.csv"), TRANSFORMS, rows)
}

fn read_cube(path: &Path, shape: (usize, usize, usize)) -> Result<Array3<f64>> {
    let name = path.display().to_string();
    let rows = read_csv(path, CUBE)?;
    let mut a = Array3::from_elem(shape, f64::NAN);
    let mut seen = 0usize;
    for r in rows {
        let idx = [parse_usize(&r[0], &name)?, parse_usize(&r[1], &name)?, parse_usize(&r[2], &name)?];
        let slot = a.get_mut(idx).ok_or_else(|| Error::Schema(format!("{name}: index {idx:?} out of range")))?;
        *slot = parse_f64(&r[3], &name)?;
        seen += 1;
    }
    if seen != shape.0 * shape.1 * shape.2 {
        return Err(Error::Schema(format!("{name}: expected {} cells, found {seen}", shape.0 * shape.1 * shape.2)));
    }
    Ok(a)
}

fn max_index(path: &Path, col: usize) -> Result<usize> {
    let name = path.display().to_string();
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    let mut best = None;
    for rec in r.records() {
        let v = parse_usize(&rec?[col], &name)?;
        best = Some(best.map_or(v, |b: usize| b.max(v)));
    }
    Ok(best.map_or(0, |b| b + 1))
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let times_rows = read_csv(&dir.join("times.csv"), TIMES)?;
    let mut times = Vec::with_capacity(times_rows.len());
    let mut partition_of = Vec::with_capacity(times_rows.len());
    for (t, r) in times_rows.iter().enumerate() {
        if parse_usize(&r[0], "times.csv")? != t {
            return Err(Error::Schema("times.csv: rows must be ordered by t from 0".into()));
        }
        times.push(parse_f64(&r[1], "times.csv")?);
        partition_of.push(parse_usize(&r[2], "times.csv")?);
    }
    let site_rows = read_csv(&dir.join("sites.csv"), SITES)?;
    let n = site_rows.len();
    let site_names = site_rows.iter().map(|r| r[1].to_string()).collect();
    let site_coords = if site_rows.iter().all(|r| !r[2].is_empty() && !r[3].is_empty()) && n > 0 {
        Some(
            site_rows
                .iter()
                .map(|r| Ok([parse_f64(&r[2], "sites.csv")?, parse_f64(&r[3], "sites.csv")?]))
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    let t = times.len();
    let k = max_index(&dir.join("y.csv"), 1)?;
    let px = max_index(&dir.join("x.csv"), 1)?;
    let pz = max_index(&dir.join("z.csv"), 1)?;
    let mut transform_log = Vec::new();
    let mut covariate_log = Vec::new();
    for r in read_csv(&dir.join("transforms.csv"), TRANSFORMS)? {
        let kind = TransformKind::parse(&r[3]).ok_or_else(|| Error::Schema(format!("transforms.csv: unknown kind `{}`", &r[3])))?;
        let tr = ComponentTransform {
            name: r[2].to_string(),
            kind,
            center: parse_f64(&r[4], "transforms.csv")?,
            scale: parse_f64(&r[5], "transforms.csv")?,
        };
        match &r[0] {
            "response" => transform_log.push(tr),
            "covariate" => covariate_log.push(tr),
            other => return Err(Error::Schema(format!("transforms.csv: unknown role `{other}`"))),
        }
    }
    Ok(Dataset {
        times,
        y: read_cube(&dir.join("y.csv"), (n, k, t))?,
        x: read_cube(&dir.join("x.csv"), (n, px, t))?,
        z: read_cube(&dir.join("z.csv"), (n, pz, t))?,
        partition_of,
        site_names,
        site_coords,
        transform_log,
        covariate_log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::tests::small_config;
    use crate::data::tests::tiny_dataset;
    use crate::gibbs::run_chain;

    #[test]
    fn state_round_trip_is_exact() {
        for mode in [DpMode::Joint, DpMode::IndependentPerComponent] {
            let mut cfg = small_config(3, 2, 2, 2);
            cfg.dp_mode = mode;
            cfg.mcmc.n_iterations = 4;
            cfg.mcmc.burn_in = 1;
            cfg.mcmc.thin = 1;
            let data = tiny_dataset(3, 2, 2, 2, vec![0, 0, 1, 1, 1]);
            let out = run_chain(&cfg, &data, 0).unwrap().output;
            let dir = tempfile::tempdir().unwrap();
            write_state(dir.path(), &out.final_state).unwrap();
            assert_eq!(read_state(dir.path()).unwrap(), out.final_state);
            let ddir = dir.path().join("draws");
            write_draws(&ddir, &out.draws).unwrap();
            assert_eq!(read_draws(&ddir).unwrap(), out.draws);
            truncate_draws(&ddir, 1).unwrap();
            let mut w = DrawWriter::append(&ddir).unwrap();
            w.write(1, &out.draws[1]).unwrap();
            w.flush().unwrap();
            assert_eq!(read_draws(&ddir).unwrap(), out.draws[..2]);
        }
    }

    #[test]
    fn dataset_round_trip_is_exact() {
        let mut data = tiny_dataset(2, 2, 1, 3, vec![0, 0, 1]);
        data.site_coords = Some(vec![[0.5, -1.0], [2.0, 1e-9]]);
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &data).unwrap();
        assert_eq!(read_dataset(dir.path()).unwrap(), data);
    }

    #[test]
    fn missing_entries_rejected() {
        let data = tiny_dataset(2, 1, 1, 1, vec![0, 0]);
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &data).unwrap();
        let y = fs::read_to_string(dir.path().join("y.csv")).unwrap();
        let trimmed: Vec<&str> = y.lines().take(y.lines().count() - 1).collect();
        fs::write(dir.path().join("y.csv"), trimmed.join("\n")).unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(Error::Schema(_))));
    }
}
