//! Numeric CSV tables.
//!
//! Layout: a `# <name> v<version>` line, optional `# key=value` metadata
//! lines, a header row, then comma-separated rows with LF endings. Floats are
//! written in Rust's shortest round-trip form, so equal values give equal bytes.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const TABLE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub meta: Vec<(String, String)>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            meta: Vec::new(),
            rows: Vec::new(),
        }
    }

    pub fn with_meta(mut self, meta: Vec<(String, String)>) -> Self {
        self.meta.extend(meta);
        self
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let mut head = format!("# {} v{}\n", self.name, TABLE_VERSION);
        for (k, v) in &self.meta {
            head.push_str(&format!("# {k}={v}\n"));
        }
        out.write_all(head.as_bytes())
            .map_err(|e| Error::Format(format!("writing table {}: {e}", self.name)))?;
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush()
            .map_err(|e| Error::Format(format!("writing table {}: {e}", self.name)))?;
        Ok(())
    }

    pub fn write_path(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("tables are ASCII")
    }

    /// Reads a table written by [`Table::write_to`].
    pub fn read_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let first = lines.next().ok_or_else(|| Error::Format("empty table".into()))?;
        let name = first
            .strip_prefix("# ")
            .and_then(|s| s.rsplit_once(" v"))
            .map(|(n, _)| n.to_string())
            .ok_or_else(|| Error::Format("missing table banner".into()))?;
        let mut meta = Vec::new();
        let mut rest = Vec::new();
        for line in lines {
            if let Some(m) = line.strip_prefix("# ") {
                let (k, v) = m.split_once('=').unwrap_or((m, ""));
                meta.push((k.to_string(), v.to_string()));
            } else {
                rest.push(line);
            }
        }
        let body = rest.join("\n");
        let mut r = csv::ReaderBuilder::new().from_reader(body.as_bytes());
        let columns = r.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|f| f.parse::<f64>().map_err(|e| Error::Format(format!("bad number {f:?}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Ok(Self {
            name,
            columns,
            meta,
            rows,
        })
    }
}
