//! CSV artifacts: header row, LF line endings, shortest round-trip decimals.

use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};

/// Formats a float so that parsing the text gives back the same bits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push_floats(&mut self, row: &[f64]) {
        self.rows.push(row.iter().map(|&v| fmt_f64(v)).collect());
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .flexible(false)
            .from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        Ok(w.into_inner().map_err(|e| e.into_error())?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
        f.write_all(&bytes)
            .with_context(|| format!("cannot write {}", path.display()))
    }
}

/// `t,x1..xn`, one row per sample.
pub fn trajectory_table(t: &[f64], x: &[Vec<f64>], dim: usize) -> Table {
    let mut table = Table::new(std::iter::once("t".to_string()).chain((1..=dim).map(|i| format!("x{i}"))));
    for (ti, xi) in t.iter().zip(x) {
        let mut row = vec![*ti];
        row.extend_from_slice(xi);
        table.push_floats(&row);
    }
    table
}
