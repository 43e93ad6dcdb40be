//! CSV input and output, metadata headers and stdout tables.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Shortest representation that parses back to the same `f64`.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

/// Headerless numeric CSV; lines starting with `#` are skipped.
pub fn read_matrix_csv(path: &Path) -> Result<Vec<Vec<f64>>, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let row = record
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| CliError::Config(format!("{}: row {}: not a number: {s:?}", path.display(), r + 1)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    Ok(rows)
}

/// Provenance written as `#` lines at the top of every output file.
#[derive(Debug, Clone)]
pub struct OutputMeta {
    pub config_sha256: String,
    pub seed: u64,
    pub timestamp: bool,
    pub extra: Vec<(String, String)>,
}

impl OutputMeta {
    pub fn header_lines(&self) -> Vec<String> {
        let mut lines = vec![
            format!("config_sha256={}", self.config_sha256),
            format!("rng={}", l0rcd::RNG_ALGORITHM),
            format!("seed={}", self.seed),
            "threshold_tie=zero".to_string(),
        ];
        lines.extend(self.extra.iter().map(|(k, v)| format!("{k}={v}")));
        if self.timestamp {
            lines.push(format!("generated={}", humantime::format_rfc3339_seconds(std::time::SystemTime::now())));
        }
        lines
    }
}

/// A named CSV table.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(headers: impl IntoIterator<Item = S>) -> Self {
        Self {
            headers: headers.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self, meta: &OutputMeta) -> Result<Vec<u8>, CliError> {
        let mut out = Vec::new();
        for line in meta.header_lines() {
            out.extend_from_slice(format!("# {line}\n").as_bytes());
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.headers)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.into_inner().map_err(|e| CliError::Io(e.to_string()))
    }

    /// Left-aligned columns separated by two spaces.
    pub fn render(&self) -> String {
        let mut widths: Vec<usize> = self.headers.iter().map(|h| h.chars().count()).collect();
        for row in &self.rows {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let line = |cells: &[String]| {
            let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
            padded.join("  ").trim_end().to_string()
        };
        let mut s = line(&self.headers);
        s.push('\n');
        for row in &self.rows {
            s.push_str(&line(row));
            s.push('\n');
        }
        s
    }
}

/// Writes named tables into the output directory.
#[derive(Debug, Clone)]
pub struct OutputDir {
    pub dir: PathBuf,
    pub meta: OutputMeta,
}

impl OutputDir {
    pub fn new(dir: PathBuf, meta: OutputMeta) -> Result<Self, CliError> {
        fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self { dir, meta })
    }

    pub fn write(&self, name: &str, table: &Table) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        fs::write(&path, table.to_csv(&self.meta)?)
            .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> OutputMeta {
        OutputMeta {
            config_sha256: "abc".into(),
            seed: 1,
            timestamp: false,
            extra: vec![],
        }
    }

    #[test]
    fn csv_has_header_comments_and_quotes() {
        let mut t = Table::new(["name", "value"]);
        t.push(vec!["a,b".into(), num(0.1)]);
        let text = String::from_utf8(t.to_csv(&meta()).unwrap()).unwrap();
        assert!(text.starts_with("# config_sha256=abc\n# rng="));
        assert!(text.ends_with("name,value\n\"a,b\",0.1\n"));
    }

    #[test]
    fn numbers_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-17, 625.0] {
            assert_eq!(num(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn render_aligns_columns() {
        let mut t = Table::new(["x", "long header"]);
        t.push(vec!["12345".into(), "1".into()]);
        assert_eq!(t.render(), "x      long header\n12345  1\n");
    }

    #[test]
    fn matrix_csv_round_trip() {
        let dir = std::env::temp_dir().join(format!("l0rcd-io-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("a.csv");
        fs::write(&path, "# comment\n1, 2\n3,4.5\n").unwrap();
        assert_eq!(read_matrix_csv(&path).unwrap(), vec![vec![1.0, 2.0], vec![3.0, 4.5]]);
        fs::write(&path, "1,x\n").unwrap();
        assert!(matches!(read_matrix_csv(&path), Err(CliError::Config(_))));
        assert!(matches!(read_matrix_csv(&dir.join("missing.csv")), Err(CliError::Config(_))));
        fs::remove_dir_all(&dir).unwrap();
    }
}
