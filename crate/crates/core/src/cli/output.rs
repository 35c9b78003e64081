//! Number formatting, atomic file writes and run manifests.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::Result;

/// Nine significant digits in scientific notation.
pub fn fmt9(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.8e}")
    } else {
        x.to_string()
    }
}

/// Rounds to nine significant digits (non-finite values pass through).
pub fn round9(x: f64) -> f64 {
    if x.is_finite() {
        fmt9(x).parse().unwrap_or(x)
    } else {
        x
    }
}

/// Writes through a temporary sibling and renames into place.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp"));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(contents.as_bytes())?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Delimited table; floats are formatted with [`fmt9`].
pub struct Table {
    text: String,
}

pub enum Cell {
    Num(f64),
    Int(u64),
    Text(String),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        let mut text = header.iter().map(|h| h.as_ref()).collect::<Vec<_>>().join(",");
        text.push('\n');
        Table { text }
    }

    pub fn row(&mut self, cells: Vec<Cell>) {
        let line: Vec<String> = cells
            .into_iter()
            .map(|c| match c {
                Cell::Num(v) => fmt9(v),
                Cell::Int(v) => v.to_string(),
                Cell::Text(s) => s,
            })
            .collect();
        self.text.push_str(&line.join(","));
        self.text.push('\n');
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }
}

/// Rounds every float in a JSON value to nine significant digits.
pub fn round_json(v: serde_json::Value) -> serde_json::Value {
    use serde_json::Value;
    match v {
        Value::Number(n) if n.is_f64() => n
            .as_f64()
            .and_then(|x| serde_json::Number::from_f64(round9(x)))
            .map(Value::Number)
            .unwrap_or(Value::Null),
        Value::Array(a) => Value::Array(a.into_iter().map(round_json).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, round_json(v))).collect()),
        other => other,
    }
}

/// One JSON object per line.
pub fn json_lines<T: Serialize>(records: &[T]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        let v = round_json(serde_json::to_value(r)?);
        writeln!(out, "{}", serde_json::to_string(&v)?).expect("writing to a String");
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub config: Vec<(&'static str, String)>,
    pub seed: u64,
    pub dataset_ids: Vec<String>,
    pub artifact_version: String,
    pub duration_seconds: f64,
}

impl RunManifest {
    /// `key = value` text that `--config` reads back.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "command = {}", self.command);
        let _ = writeln!(s, "artifact_version = {}", self.artifact_version);
        let _ = writeln!(s, "duration_seconds = {:.3}", self.duration_seconds);
        let _ = writeln!(s, "dataset_ids = {}", self.dataset_ids.join(","));
        for (k, v) in &self.config {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn path(&self, out: &Path) -> PathBuf {
        out.join(format!("{}.manifest", self.command))
    }

    pub fn write(&self, out: &Path) -> Result<PathBuf> {
        let p = self.path(out);
        write_atomic(&p, &self.render())?;
        Ok(p)
    }
}
