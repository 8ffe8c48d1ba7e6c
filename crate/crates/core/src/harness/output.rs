//! Result tables and their CSV form. Every file starts with the resolved
//! configuration as `# key = value` lines.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::config::ExperimentConfig;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    /// File stem, e.g. `fig6a_ntx200`.
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: impl Into<String>, header: &[&str]) -> Self {
        Table {
            name: name.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Rows whose column `key` equals `value`.
    pub fn find<'a>(&'a self, key: &str, value: &'a str) -> impl Iterator<Item = &'a Vec<String>> + 'a {
        let c = self.column(key);
        self.rows.iter().filter(move |r| c.is_some_and(|c| r[c] == value))
    }

    /// The echo leaves out `output_path` so that a file's bytes do not depend
    /// on where it was written.
    pub fn write_csv<W: Write>(&self, mut w: W, cfg: &ExperimentConfig) -> Result<()> {
        for line in cfg.to_text().lines().filter(|l| !l.starts_with("output_path")) {
            writeln!(w, "# {line}")?;
        }
        writeln!(w, "{}", self.header.iter().map(|s| quote(s)).collect::<Vec<_>>().join(","))?;
        for r in &self.rows {
            writeln!(w, "{}", r.iter().map(|s| quote(s)).collect::<Vec<_>>().join(","))?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self, cfg: &ExperimentConfig) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf, cfg).expect("writing to memory");
        String::from_utf8(buf).expect("utf-8")
    }
}

/// RFC 4180 quoting for fields containing separators, quotes or newlines.
fn quote(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Fixed-precision float formatting so that output bytes depend only on
/// values.
pub fn fmt_f(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:.6e}")
    }
}

/// Writes every table under `dir`, returning the paths.
pub fn write_tables(dir: &Path, tables: &[Table], cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut out = Vec::with_capacity(tables.len());
    for t in tables {
        let path = dir.join(format!("{}.csv", t.name));
        let file = fs::File::create(&path)?;
        let mut w = std::io::BufWriter::new(file);
        t.write_csv(&mut w, cfg)?;
        w.flush()?;
        out.push(path);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_config_echo_and_quoting() {
        let mut t = Table::new("x", &["a", "b"]);
        t.push(vec!["1".into(), "say \"hi\", bye".into()]);
        let s = t.to_csv_string(&ExperimentConfig::default());
        assert!(s.starts_with("# n_tx = 200\n"));
        assert!(s.contains("master_seed = 1"));
        assert!(s.ends_with("a,b\n1,\"say \"\"hi\"\", bye\"\n"));
    }

    #[test]
    fn files_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let t = Table::new("only", &["v"]);
        let paths = write_tables(dir.path(), &[t], &ExperimentConfig::default()).unwrap();
        assert!(paths[0].ends_with("only.csv"));
        assert!(fs::read_to_string(&paths[0]).unwrap().ends_with("v\n"));
    }

    #[test]
    fn float_format_is_stable() {
        assert_eq!(fmt_f(0.0125), "1.250000e-2");
        assert_eq!(fmt_f(f64::NAN), "nan");
    }
}
