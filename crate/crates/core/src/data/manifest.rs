//! Flat `key = value` files: dataset manifests and run configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::delimited::{load_delimited, TargetColumn};
use super::dna::{binding_surrogate, load_dna_table};
use super::split::{OodRule, SplitSizes, SplitSpec};
use super::Dataset;
use crate::error::{Error, Result};

/// Parses `key = value` lines. `#` starts a comment; blank lines are skipped.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", i + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

pub fn read_key_values(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    parse_key_values(&text)
}

pub fn parse_ood_rule(s: &str) -> Result<OodRule> {
    let s = s.trim();
    if s == "none" {
        return Ok(OodRule::None);
    }
    let (kind, arg) = s
        .split_once(':')
        .ok_or_else(|| Error::Config(format!("OOD rule {s:?}: expected top_y:<q>, gc:<t> or none")))?;
    let v: f64 = arg.trim().parse().map_err(|_| Error::Config(format!("OOD rule {s:?}: bad number")))?;
    match kind.trim() {
        "top_y" => Ok(OodRule::TopYFraction(v)),
        "gc" => Ok(OodRule::GcContent(v)),
        other => Err(Error::Config(format!("unknown OOD rule {other:?}"))),
    }
}

pub fn format_ood_rule(rule: &OodRule) -> String {
    match rule {
        OodRule::TopYFraction(q) => format!("top_y:{q}"),
        OodRule::GcContent(t) => format!("gc:{t}"),
        OodRule::None => "none".into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Delimited {
        path: PathBuf,
        target: String,
        delimiter: u8,
    },
    DnaTable {
        path: PathBuf,
        sequence_column: String,
        target: String,
        delimiter: u8,
    },
    BindingSurrogate {
        seed: u64,
        noise_std: f64,
    },
}

/// Where a dataset comes from and how to split it.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub name: String,
    pub source: DatasetSource,
    pub split: SplitSpec,
}

fn get<'a>(kv: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str> {
    kv.get(key)
        .map(String::as_str)
        .ok_or_else(|| Error::Config(format!("dataset manifest is missing {key:?}")))
}

fn num<T: std::str::FromStr>(kv: &BTreeMap<String, String>, key: &str) -> Result<Option<T>> {
    kv.get(key)
        .map(|v| v.parse::<T>().map_err(|_| Error::Config(format!("{key} = {v:?} is not a number"))))
        .transpose()
}

fn delimiter(kv: &BTreeMap<String, String>) -> Result<u8> {
    match kv.get("delimiter").map(String::as_str) {
        None | Some(",") => Ok(b','),
        Some("tab") | Some("\\t") => Ok(b'\t'),
        Some(s) if s.len() == 1 => Ok(s.as_bytes()[0]),
        Some(s) => Err(Error::Config(format!("delimiter {s:?} must be one character"))),
    }
}

impl DatasetManifest {
    /// Reads a manifest; relative paths resolve against its directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let kv = read_key_values(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_key_values(&kv, base)
    }

    pub fn from_key_values(kv: &BTreeMap<String, String>, base: &Path) -> Result<Self> {
        let kind = kv.get("kind").map(String::as_str).unwrap_or("delimited");
        let resolve = |p: &str| {
            let p = PathBuf::from(p);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        let source = match kind {
            "delimited" => DatasetSource::Delimited {
                path: resolve(get(kv, "path")?),
                target: get(kv, "target")?.to_string(),
                delimiter: delimiter(kv)?,
            },
            "dna" => DatasetSource::DnaTable {
                path: resolve(get(kv, "path")?),
                sequence_column: get(kv, "sequence_column")?.to_string(),
                target: get(kv, "target")?.to_string(),
                delimiter: delimiter(kv)?,
            },
            "binding_surrogate" => DatasetSource::BindingSurrogate {
                seed: num(kv, "surrogate_seed")?.unwrap_or(0),
                noise_std: num(kv, "noise_std")?.unwrap_or(0.02),
            },
            other => return Err(Error::Config(format!("unknown dataset kind {other:?}"))),
        };
        let sizes = match (num::<usize>(kv, "train_count")?, num::<usize>(kv, "val_count")?) {
            (Some(train), Some(val)) => SplitSizes::Counts { train, val },
            _ => SplitSizes::Fractions {
                train: num(kv, "train_fraction")?.unwrap_or(0.4),
                val: num(kv, "val_fraction")?.unwrap_or(0.1),
            },
        };
        let ood_rule = parse_ood_rule(kv.get("ood_rule").map(String::as_str).unwrap_or("top_y:0.05"))?;
        let name = kv.get("name").cloned().unwrap_or_else(|| match &source {
            DatasetSource::Delimited { path, .. } | DatasetSource::DnaTable { path, .. } => {
                path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
            }
            DatasetSource::BindingSurrogate { seed, .. } => format!("binding-surrogate-{seed}"),
        });
        Ok(DatasetManifest {
            name,
            source,
            split: SplitSpec {
                ood_rule,
                sizes,
                seed: num(kv, "seed")?.unwrap_or(0),
            },
        })
    }

    pub fn load(&self) -> Result<Dataset> {
        let mut d = match &self.source {
            DatasetSource::Delimited { path, target, delimiter } => {
                load_delimited(path, TargetColumn::from(target.as_str()), *delimiter)?
            }
            DatasetSource::DnaTable {
                path,
                sequence_column,
                target,
                delimiter,
            } => load_dna_table(path, sequence_column, target, *delimiter)?,
            DatasetSource::BindingSurrogate { seed, noise_std } => binding_surrogate(*seed, *noise_std)?,
        };
        d.name = self.name.clone();
        Ok(d)
    }
}
