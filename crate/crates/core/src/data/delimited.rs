//! Delimited-text ingestion.

use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};

/// Names the target either by header name or by zero-based column index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TargetColumn {
    Name(String),
    Index(usize),
}

impl From<&str> for TargetColumn {
    fn from(s: &str) -> Self {
        match s.parse::<usize>() {
            Ok(i) => TargetColumn::Index(i),
            Err(_) => TargetColumn::Name(s.to_string()),
        }
    }
}

/// Loads a numeric table, splitting out the target column.
///
/// A first row containing any non-numeric cell is taken as a header. Blank
/// lines are skipped; ragged rows and non-numeric cells are errors that name
/// the (one-based) line.
pub fn load_delimited(path: &Path, target: impl Into<TargetColumn>, delimiter: u8) -> Result<Dataset> {
    let target = target.into();
    let err = |message: String| Error::Parse {
        path: path.to_path_buf(),
        message,
    };
    let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let mut header: Option<Vec<String>> = None;
    let mut width: Option<usize> = None;
    let mut target_idx: Option<usize> = None;
    let mut features = Vec::new();
    let mut targets = Vec::new();

    for rec in rdr.records() {
        let rec = rec.map_err(|e| err(e.to_string()))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.iter().all(|c| c.is_empty()) {
            continue;
        }
        let cells: Vec<&str> = rec.iter().collect();
        if width.is_none() {
            width = Some(cells.len());
            let numeric = cells.iter().all(|c| c.parse::<f64>().is_ok());
            if !numeric {
                header = Some(cells.iter().map(|c| c.to_string()).collect());
            }
            let idx = match &target {
                TargetColumn::Index(i) => *i,
                TargetColumn::Name(n) => header
                    .as_ref()
                    .and_then(|h| h.iter().position(|c| c == n))
                    .ok_or_else(|| err(format!("target column {n:?} not found in header")))?,
            };
            if idx >= cells.len() || cells.len() < 2 {
                return Err(err(format!("target column {idx} out of range for {} columns", cells.len())));
            }
            target_idx = Some(idx);
            if header.is_some() {
                continue;
            }
        }
        let (w, ti) = (width.unwrap_or(0), target_idx.unwrap_or(0));
        if cells.len() != w {
            return Err(err(format!("line {line}: expected {w} cells, found {}", cells.len())));
        }
        let mut row = Vec::with_capacity(w - 1);
        let mut y = 0.0;
        for (j, c) in cells.iter().enumerate() {
            let v: f64 = c
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| err(format!("line {line}: non-numeric cell {c:?} in column {j}")))?;
            if j == ti {
                y = v;
            } else {
                row.push(v);
            }
        }
        features.push(row);
        targets.push(y);
    }
    if features.is_empty() {
        return Err(Error::EmptyDataset(path.display().to_string()));
    }
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Dataset::from_rows(name, features, targets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn two_row_file() {
        let f = file("x,y\n0,1\n1,2\n");
        let d = load_delimited(f.path(), "y", b',').unwrap();
        assert_eq!(d.features, vec![vec![0.0], vec![1.0]]);
        assert_eq!(d.targets, vec![1.0, 2.0]);
    }

    #[test]
    fn blank_lines_ignored_and_headerless_index() {
        let f = file("0;5;1\n\n1;6;2\n\n");
        let d = load_delimited(f.path(), "0", b';').unwrap();
        assert_eq!(d.targets, vec![0.0, 1.0]);
        assert_eq!(d.features, vec![vec![5.0, 1.0], vec![6.0, 2.0]]);
    }

    #[test]
    fn error_cases() {
        assert!(matches!(load_delimited(file("x,y\n").path(), "y", b','), Err(Error::EmptyDataset(_))));
        assert!(matches!(load_delimited(file("x,y\n0,1\n1\n").path(), "y", b','), Err(Error::Parse { .. })));
        let e = load_delimited(file("x,y\n0,1\n1,abc\n").path(), "y", b',').unwrap_err();
        assert!(e.to_string().contains("line 3"), "{e}");
        assert!(load_delimited(file("x,y\n0,1\n").path(), "z", b',').is_err());
        assert!(load_delimited(Path::new("/nonexistent/file.csv"), "y", b',').is_err());
    }
}
