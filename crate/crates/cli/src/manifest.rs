//! Run manifests: what was run, on which inputs, and how long it took.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use fdclust::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Digest of a file, or of every file under a directory in path order.
pub fn digest_path(path: &Path) -> Result<String> {
    if path.is_dir() {
        let mut files = Vec::new();
        collect_files(path, &mut files)?;
        files.sort();
        let mut h = Sha256::new();
        for f in files {
            let rel = f.strip_prefix(path).unwrap_or(&f);
            h.update(rel.to_string_lossy().as_bytes());
            h.update([0]);
            h.update(fs::read(&f).map_err(|e| io_err(&f, e))?);
        }
        Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
    } else {
        Ok(sha256_hex(&fs::read(path).map_err(|e| io_err(path, e))?))
    }
}

fn collect_files(dir: &Path, out: &mut Vec<std::path::PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| io_err(dir, e))? {
        let p = entry.map_err(|e| io_err(dir, e))?.path();
        if p.is_dir() {
            collect_files(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

pub fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source: e }
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: Vec<String>,
    pub software_version: String,
    pub seed: Option<u64>,
    pub config_sha256: Option<String>,
    pub inputs: BTreeMap<String, String>,
    /// Wall-clock measurements; the only nondeterministic part of a run directory.
    pub timings: BTreeMap<String, f64>,
}

impl Manifest {
    /// Records the command line and input digests; call before any computation.
    pub fn start(argv: &[String], seed: Option<u64>, config: Option<&Path>, inputs: &[&Path]) -> Result<Self> {
        let mut digests = BTreeMap::new();
        for p in inputs {
            digests.insert(p.display().to_string(), digest_path(p)?);
        }
        Ok(Manifest {
            command: argv.to_vec(),
            software_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config_sha256: config.map(digest_path).transpose()?,
            inputs: digests,
            timings: BTreeMap::new(),
        })
    }

    pub fn write(&self, out: &Path) -> Result<()> {
        fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
        let text = toml::to_string(self).map_err(|e| Error::Config(e.to_string()))?;
        let path = out.join("manifest.toml");
        fs::write(&path, text).map_err(|e| io_err(&path, e))
    }
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))
}
