//! Long-format measurement tables and the gap-filling utility.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::{NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Measured quantities the pipeline understands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variable {
    Ozone,
    Pm10,
    Temperature,
    RelativeHumidity,
}

impl Variable {
    pub const ALL: [Variable; 4] = [Variable::Ozone, Variable::Pm10, Variable::Temperature, Variable::RelativeHumidity];

    pub fn name(&self) -> &'static str {
        match self {
            Variable::Ozone => "ozone",
            Variable::Pm10 => "pm10",
            Variable::Temperature => "temperature",
            Variable::RelativeHumidity => "relative_humidity",
        }
    }
}

impl fmt::Display for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variable {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let key = s.trim().to_ascii_lowercase();
        match key.as_str() {
            "ozone" | "o3" => Ok(Variable::Ozone),
            "pm10" => Ok(Variable::Pm10),
            "temperature" | "tmp" => Ok(Variable::Temperature),
            "relative_humidity" | "rh" => Ok(Variable::RelativeHumidity),
            _ => Err(format!("unknown variable `{s}`")),
        }
    }
}

/// Parses an ISO-8601 timestamp at hour resolution or finer.
pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    const FORMATS: [&str; 6] = [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
        "%Y-%m-%dT%H",
        "%Y-%m-%d %H",
    ];
    FORMATS.iter().find_map(|f| NaiveDateTime::parse_from_str(s, f).ok()).or_else(|| {
        // chrono cannot parse a bare hour field; pad it.
        NaiveDateTime::parse_from_str(&format!("{s}:00"), "%Y-%m-%dT%H:%M")
            .or_else(|_| NaiveDateTime::parse_from_str(&format!("{s}:00"), "%Y-%m-%d %H:%M"))
            .ok()
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub value: f64,
    /// Donor station index when the value was filled in.
    pub imputed_from: Option<usize>,
}

pub type Key = (usize, NaiveDateTime, Variable);

/// Validated measurements keyed by (station index, hour, variable).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawTable {
    /// Station identifiers, sorted.
    pub stations: Vec<String>,
    pub cells: BTreeMap<Key, Cell>,
}

impl RawTable {
    pub fn get(&self, station: &str, at: NaiveDateTime, var: Variable) -> Option<Cell> {
        let s = self.stations.binary_search_by(|x| x.as_str().cmp(station)).ok()?;
        self.cells.get(&(s, at, var)).copied()
    }

    pub fn variables(&self) -> BTreeSet<Variable> {
        self.cells.keys().map(|k| k.2).collect()
    }

    /// Every hour from the first to the last timestamp present.
    pub fn hourly_grid(&self) -> Vec<NaiveDateTime> {
        let (Some(first), Some(last)) = (self.cells.keys().map(|k| k.1).min(), self.cells.keys().map(|k| k.1).max()) else {
            return Vec::new();
        };
        let mut out = Vec::new();
        let mut t = first;
        while t <= last {
            out.push(t);
            t += chrono::Duration::hours(1);
        }
        out
    }

    pub fn n_imputed(&self) -> usize {
        self.cells.values().filter(|c| c.imputed_from.is_some()).count()
    }
}

const REQUIRED: [&str; 4] = ["station", "timestamp", "variable", "value"];

/// Reads a long-format table with header `station,timestamp,variable,value`.
pub fn ingest(path: &Path, delimiter: u8) -> Result<RawTable> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ingest_str(&text, delimiter)
}

pub fn ingest_str(text: &str, delimiter: u8) -> Result<RawTable> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(true)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_ascii_lowercase()).collect();
    if header.iter().all(|h| h.is_empty()) {
        return Err(Error::Schema("input is empty; expected header station,timestamp,variable,value".into()));
    }
    let mut cols = [0usize; 4];
    let mut missing = Vec::new();
    for (slot, name) in REQUIRED.iter().enumerate() {
        match header.iter().position(|h| h == name) {
            Some(p) => cols[slot] = p,
            None => missing.push(*name),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Schema(format!("missing required columns: {}", missing.join(", "))));
    }

    let mut rows = Vec::new();
    let mut bad_lines = Vec::new();
    let mut off_grid = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let field = |c: usize| rec.get(cols[c]).map(str::trim);
        let parsed = (|| {
            let station = field(0).filter(|s| !s.is_empty())?.to_string();
            let ts = parse_timestamp(field(1)?)?;
            let var: Variable = field(2)?.parse().ok()?;
            let value: f64 = field(3)?.parse().ok()?;
            Some((station, ts, var, value))
        })();
        match parsed {
            Some((_, ts, ..)) if ts.minute() != 0 || ts.second() != 0 || ts.nanosecond() != 0 => off_grid.push(line),
            Some(row) => rows.push((line, row)),
            None => bad_lines.push(line),
        }
    }
    if !bad_lines.is_empty() {
        return Err(Error::Parse { lines: bad_lines, message: "expected station, ISO-8601 timestamp, known variable, numeric value".into() });
    }
    if !off_grid.is_empty() {
        return Err(Error::Parse { lines: off_grid, message: "timestamps must fall on the hour".into() });
    }
    if rows.is_empty() {
        return Err(Error::Schema("input has a header but no measurements".into()));
    }

    let stations: Vec<String> = rows.iter().map(|(_, r)| r.0.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let mut cells = BTreeMap::new();
    for (line, (station, ts, var, value)) in rows {
        let s = stations.binary_search(&station).expect("collected above");
        if cells.insert((s, ts, var), Cell { value, imputed_from: None }).is_some() {
            return Err(Error::Duplicate(format!("({station}, {ts}, {var}) repeated at line {line}")));
        }
    }
    Ok(RawTable { stations, cells })
}

/// Station coordinates in planar kilometres, from a `station,x,y` file.
pub fn read_coords(path: &Path) -> Result<BTreeMap<String, [f64; 2]>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    read_coords_str(&text)
}

pub fn read_coords_str(text: &str) -> Result<BTreeMap<String, [f64; 2]>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_ascii_lowercase()).collect();
    if header != ["station", "x", "y"] {
        return Err(Error::Schema(format!("coordinate file must have header station,x,y; found {header:?}")));
    }
    let mut out = BTreeMap::new();
    let mut bad = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        match (rec[1].trim().parse::<f64>(), rec[2].trim().parse::<f64>()) {
            (Ok(x), Ok(y)) => {
                if out.insert(rec[0].trim().to_string(), [x, y]).is_some() {
                    return Err(Error::Duplicate(format!("station {} at line {line}", rec[0].trim())));
                }
            }
            _ => bad.push(line),
        }
    }
    if !bad.is_empty() {
        return Err(Error::Parse { lines: bad, message: "coordinates must be numeric".into() });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GapPolicy {
    NearestStation,
    Fail,
}

/// Completes the station x hour x variable grid. Under
/// [`GapPolicy::NearestStation`] each hole takes the observed value of the
/// closest station with data at that hour, ties broken by station order.
pub fn fill_gaps(table: &RawTable, coords: &BTreeMap<String, [f64; 2]>, policy: GapPolicy) -> Result<RawTable> {
    let grid = table.hourly_grid();
    let vars = table.variables();
    let ns = table.stations.len();
    let mut out = table.clone();
    let mut xy = Vec::with_capacity(ns);
    if policy == GapPolicy::NearestStation {
        for s in &table.stations {
            xy.push(*coords.get(s).ok_or_else(|| Error::Gap(format!("no coordinates for station {s}")))?);
        }
    }
    for &t in &grid {
        for &v in &vars {
            for s in 0..ns {
                if table.cells.contains_key(&(s, t, v)) {
                    continue;
                }
                let donors: Vec<usize> = (0..ns).filter(|&d| table.cells.contains_key(&(d, t, v))).collect();
                if donors.is_empty() {
                    return Err(Error::Gap(format!("no station has {v} at {t}")));
                }
                if policy == GapPolicy::Fail {
                    return Err(Error::Gap(format!("station {} has no {v} at {t}", table.stations[s])));
                }
                let dist = |d: usize| (xy[d][0] - xy[s][0]).hypot(xy[d][1] - xy[s][1]);
                let donor = donors
                    .into_iter()
                    .min_by(|a, b| dist(*a).total_cmp(&dist(*b)).then(a.cmp(b)))
                    .expect("nonempty");
                let value = table.cells[&(donor, t, v)].value;
                out.cells.insert((s, t, v), Cell { value, imputed_from: Some(donor) });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "station,timestamp,variable,value\n\
        A,2017-01-01T00:00:00,ozone,16\n\
        A,2017-01-01T01:00:00,ozone,9\n\
        B,2017-01-01T00:00:00,ozone,4\n\
        C,2017-01-01T00:00:00,ozone,25\n\
        C,2017-01-01T01:00:00,ozone,1\n";

    fn coords() -> BTreeMap<String, [f64; 2]> {
        read_coords_str("station,x,y\nA,0,0\nB,1,0\nC,0,2\n").unwrap()
    }

    #[test]
    fn ingest_valid_table() {
        let t = ingest_str(SAMPLE, b',').unwrap();
        assert_eq!(t.stations, vec!["A", "B", "C"]);
        assert_eq!(t.cells.len(), 5);
        assert_eq!(t.hourly_grid().len(), 2);
    }

    #[test]
    fn ingest_errors() {
        assert!(matches!(ingest_str("", b','), Err(Error::Schema(_))));
        assert!(matches!(ingest_str("station,time,variable,value\n", b','), Err(Error::Schema(_))));
        let dup = format!("{SAMPLE}A,2017-01-01T00:00:00,ozone,3\n");
        match ingest_str(&dup, b',') {
            Err(Error::Duplicate(m)) => assert!(m.contains("A") && m.contains("ozone"), "{m}"),
            other => panic!("{other:?}"),
        }
        let bad = format!("{SAMPLE}A,yesterday,ozone,3\nB,2017-01-01T01:00:00,ozone,x\n");
        match ingest_str(&bad, b',') {
            Err(Error::Parse { lines, .. }) => assert_eq!(lines, vec![7, 8]),
            other => panic!("{other:?}"),
        }
        let off = format!("{SAMPLE}B,2017-01-01T01:30:00,ozone,3\n");
        assert!(matches!(ingest_str(&off, b','), Err(Error::Parse { .. })));
    }

    #[test]
    fn semicolon_delimiter() {
        let t = ingest_str(&SAMPLE.replace(',', ";"), b';').unwrap();
        assert_eq!(t.cells.len(), 5);
    }

    #[test]
    fn nearest_station_fills_gap() {
        let t = ingest_str(SAMPLE, b',').unwrap();
        let filled = fill_gaps(&t, &coords(), GapPolicy::NearestStation).unwrap();
        let at = parse_timestamp("2017-01-01T01:00:00").unwrap();
        // B is 1 from A and sqrt(5) from C.
        let c = filled.get("B", at, Variable::Ozone).unwrap();
        assert_eq!(c.value, 9.0);
        assert_eq!(c.imputed_from, Some(0));
        assert!(fill_gaps(&t, &coords(), GapPolicy::Fail).is_err());
    }

    #[test]
    fn complete_table_unchanged() {
        let t = ingest_str(&format!("{SAMPLE}B,2017-01-01T01:00:00,ozone,2\n"), b',').unwrap();
        assert_eq!(fill_gaps(&t, &coords(), GapPolicy::Fail).unwrap(), t);
        assert_eq!(fill_gaps(&t, &coords(), GapPolicy::NearestStation).unwrap(), t);
    }

    #[test]
    fn hour_missing_everywhere_is_an_error() {
        let text = "station,timestamp,variable,value\nA,2017-01-01T00:00:00,ozone,1\nA,2017-01-01T02:00:00,ozone,1\n";
        let t = ingest_str(text, b',').unwrap();
        for p in [GapPolicy::Fail, GapPolicy::NearestStation] {
            assert!(matches!(fill_gaps(&t, &coords(), p), Err(Error::Gap(_))));
        }
    }
}
