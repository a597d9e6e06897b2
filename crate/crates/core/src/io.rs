//! Files: numeric CSV, pretty JSON, run manifests, and append-only
//! JSON-lines with resume.
//!
//! Floats are written in Rust's shortest round-trip form, so a value read
//! back is bit-identical to the one written.

use std::collections::BTreeSet;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{validate_dataset, Dataset, PointSet};

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Option<Vec<String>>,
    pub rows: Vec<Vec<f64>>,
}

fn parse_err(path: &Path, line: u64, msg: impl std::fmt::Display) -> Error {
    Error::Parse(format!("{}:{line}: {msg}", path.display()))
}

/// Reads a numeric CSV. A first record with any non-numeric field is taken
/// as a header.
pub fn read_csv(path: &Path) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut header = None;
    let mut rows = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(path, k as u64 + 1, e))?;
        let line = rec.position().map_or(k as u64 + 1, |p| p.line());
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(v) => {
                let width = header.as_ref().map(Vec::len).or(rows.first().map(Vec::len));
                if let Some(w) = width.filter(|w| *w != v.len()) {
                    return Err(parse_err(path, line, format!("expected {w} fields, found {}", v.len())));
                }
                rows.push(v)
            }
            Err(_) if k == 0 => header = Some(rec.iter().map(str::to_string).collect()),
            Err(e) => return Err(parse_err(path, line, e)),
        }
    }
    Ok(Table { header, rows })
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    validate_dataset(&read_csv(path)?.rows)
}

pub fn write_csv(path: &Path, header: Option<&[&str]>, rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.to_string()))?;
    if let Some(h) = header {
        w.write_record(h).map_err(|e| Error::Io(e.to_string()))?;
    }
    for r in rows {
        w.write_record(r.iter().map(|v| v.to_string()))
            .map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_points(path: &Path, points: &PointSet, prefix: &str) -> Result<()> {
    let names: Vec<String> = (0..points.dim()).map(|c| format!("{prefix}{c}")).collect();
    let header: Vec<&str> = names.iter().map(String::as_str).collect();
    write_csv(path, Some(&header), points.rows().map(<[f64]>::to_vec))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

/// Written first into every output directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub threads: usize,
    /// The resolved configuration, sufficient to rerun.
    pub config: serde_json::Value,
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl Manifest {
    pub fn new<C: Serialize>(command: &str, threads: usize, config: &C) -> Result<Self> {
        Ok(Self {
            tool: "tsne-eq".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            threads,
            config: serde_json::to_value(config)?,
            extra: serde_json::Map::new(),
        })
    }

    pub fn with(mut self, key: &str, value: impl Serialize) -> Result<Self> {
        self.extra.insert(key.into(), serde_json::to_value(value)?);
        Ok(self)
    }

    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_json(&dir.join(MANIFEST_FILE), self)
    }
}

/// Appends one compact JSON object per line.
pub struct JsonLines {
    file: BufWriter<File>,
}

impl JsonLines {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self {
            file: BufWriter::new(File::create(path)?),
        })
    }

    /// Opens for appending after dropping any torn last line, and returns
    /// the `key` field of every complete record already present.
    pub fn resume(path: &Path) -> Result<(Self, BTreeSet<String>)> {
        let mut keys = BTreeSet::new();
        if path.exists() {
            let mut good = Vec::new();
            for line in BufReader::new(File::open(path)?).lines() {
                let line = line?;
                if let Ok(v) = serde_json::from_str::<serde_json::Value>(&line) {
                    if let Some(k) = v.get("key").and_then(|k| k.as_str()) {
                        if keys.insert(k.to_string()) {
                            good.push(line);
                        }
                    }
                }
            }
            let mut f = BufWriter::new(File::create(path)?);
            for l in &good {
                writeln!(f, "{l}")?;
            }
            f.flush()?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok((
            Self {
                file: BufWriter::new(file),
            },
            keys,
        ))
    }

    pub fn append<T: Serialize>(&mut self, record: &T) -> Result<()> {
        serde_json::to_writer(&mut self.file, record)?;
        self.file.write_all(b"\n")?;
        self.file.flush()?;
        Ok(())
    }
}

pub fn read_json_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (k, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| parse_err(path, k as u64 + 1, e))?);
    }
    Ok(out)
}
