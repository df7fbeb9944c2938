//! Artifact writing and input parsing shared by the subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use exo_core::geometry::MechanismGeometry;
use exo_core::{Error, Result};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn geometry_hash(g: &MechanismGeometry) -> String {
    Sha256::digest(g.canonical_string().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// Everything a subcommand needs to emit reproducible artifacts.
pub struct Sink {
    pub dir: PathBuf,
    pub seed: u64,
    pub geometry_hash: String,
    pub written: Vec<PathBuf>,
}

impl Sink {
    pub fn new(dir: &Path, seed: u64, geom: &MechanismGeometry) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::Config(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Sink { dir: dir.to_path_buf(), seed, geometry_hash: geometry_hash(geom), written: Vec::new() })
    }

    fn path(&self, name: &str) -> Result<PathBuf> {
        // Artifact names are fixed by the subcommands; reject anything that
        // could escape the output directory.
        if name.contains('/') || name.contains('\\') || name.starts_with('.') {
            return Err(Error::Config(format!("bad artifact name {name:?}")));
        }
        Ok(self.dir.join(name))
    }

    fn header(&self, command: &str, params: &Value) -> Value {
        json!({
            "tool": "exoctl",
            "version": VERSION,
            "command": command,
            "geometry_sha256": self.geometry_hash,
            "seed": self.seed,
            "params": params,
        })
    }

    fn save(&mut self, name: &str, text: String) -> Result<()> {
        let p = self.path(name)?;
        fs::write(&p, text).map_err(|e| Error::Config(format!("cannot write {}: {e}", p.display())))?;
        self.written.push(p);
        Ok(())
    }

    pub fn csv(&mut self, name: &str, command: &str, params: &Value, columns: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut s = String::new();
        s.push_str(&format!("# exoctl {VERSION} {command}\n"));
        s.push_str(&format!("# geometry_sha256 {}\n", self.geometry_hash));
        s.push_str(&format!("# seed {}\n", self.seed));
        s.push_str(&format!("# params {params}\n"));
        s.push_str(&columns.join(","));
        s.push('\n');
        for r in rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        self.save(name, s)
    }

    /// JSON document with a `header` object merged into `body`.
    pub fn json(&mut self, name: &str, command: &str, params: &Value, body: Value) -> Result<()> {
        let mut doc = serde_json::Map::new();
        doc.insert("header".into(), self.header(command, params));
        match body {
            Value::Object(m) => doc.extend(m),
            other => {
                doc.insert("result".into(), other);
            }
        }
        let text = serde_json::to_string_pretty(&Value::Object(doc)).expect("serializable") + "\n";
        self.save(name, text)
    }
}

pub fn num(v: f64) -> String {
    format!("{v}")
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))
}

/// Numeric CSV with a header row. Lines starting with `#` are skipped.
/// Returns the requested columns per data row.
pub fn read_columns(path: &Path, wanted: &[&str]) -> Result<Vec<Vec<f64>>> {
    let text = read_text(path)?;
    parse_columns(&text, wanted)
}

pub fn parse_columns(text: &str, wanted: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| Error::Parse { row: 0, reason: e.to_string() })?.clone();
    let idx: Vec<usize> = wanted
        .iter()
        .map(|w| {
            headers
                .iter()
                .position(|h| h == *w)
                .ok_or_else(|| Error::Parse { row: 0, reason: format!("missing column {w}") })
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::Parse { row, reason: e.to_string() })?;
        let vals = idx
            .iter()
            .zip(wanted)
            .map(|(&k, name)| {
                let cell = rec.get(k).unwrap_or("");
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Parse { row, reason: format!("{name}: not a number: {cell:?}") })
            })
            .collect::<Result<Vec<f64>>>()?;
        out.push(vals);
    }
    Ok(out)
}

/// "a,b" as two numbers.
pub fn parse_pair(s: &str, field: &str) -> Result<(f64, f64)> {
    let bad = || Error::InvalidField { field: field.into(), reason: format!("expected two numbers 'a,b', got {s:?}") };
    let mut it = s.split(',').map(|p| p.trim().parse::<f64>());
    match (it.next(), it.next(), it.next()) {
        (Some(Ok(a)), Some(Ok(b)), None) if a.is_finite() && b.is_finite() => Ok((a, b)),
        _ => Err(bad()),
    }
}
