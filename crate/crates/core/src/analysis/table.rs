//! Typed CSV tables: header row, RFC 4180 quoting, `\n` line endings, floats
//! at 17 significant digits.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Float,
    Int,
    Bool,
    Text,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Float(f64),
    Int(i64),
    Bool(bool),
    Text(String),
}

impl Cell {
    fn kind(&self) -> Kind {
        match self {
            Cell::Float(_) => Kind::Float,
            Cell::Int(_) => Kind::Int,
            Cell::Bool(_) => Kind::Bool,
            Cell::Text(_) => Kind::Text,
        }
    }

    fn render(&self) -> String {
        match self {
            Cell::Float(v) => format_float(*v),
            Cell::Int(v) => v.to_string(),
            Cell::Bool(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::Int(v)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
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

/// `v` with 17 significant digits, e.g. `-2.6997450123456789e0`.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{v:.16e}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schema {
    pub columns: Vec<(String, Kind)>,
}

impl Schema {
    pub fn new(columns: &[(&str, Kind)]) -> Self {
        Schema {
            columns: columns.iter().map(|(n, k)| (n.to_string(), *k)).collect(),
        }
    }

    pub fn names(&self) -> Vec<&str> {
        self.columns.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn check(&self, row: &[Cell]) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(Error::DimensionMismatch {
                expected: self.columns.len(),
                got: row.len(),
            });
        }
        for ((name, kind), cell) in self.columns.iter().zip(row) {
            if cell.kind() != *kind {
                return Err(Error::param(
                    "row",
                    format!("column `{name}` expects {kind:?}, got {:?}", cell.kind()),
                ));
            }
        }
        Ok(())
    }
}

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .quote_style(csv::QuoteStyle::Necessary)
        .has_headers(false)
        .from_writer(w)
}

fn with_path(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(format!("writing {}", path.display()), io),
        other => Error::Format {
            path: path.to_path_buf(),
            reason: format!("{other:?}"),
        },
    }
}

/// Render a whole table to a string.
pub fn render_table(schema: &Schema, rows: &[Vec<Cell>]) -> Result<String> {
    let mut w = writer(Vec::new());
    w.write_record(schema.names())?;
    for row in rows {
        schema.check(row)?;
        w.write_record(row.iter().map(Cell::render))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::io("flushing table", e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("cells are utf-8"))
}

/// Write `rows` under a header to `path`, replacing any existing file.
pub fn emit_table(schema: &Schema, rows: &[Vec<Cell>], path: &Path) -> Result<()> {
    let text = render_table(schema, rows)?;
    std::fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Appends rows to a CSV file one at a time, flushing after each, so an
/// interrupted run keeps every completed row.
pub struct TableWriter {
    schema: Schema,
    inner: csv::Writer<File>,
    path: std::path::PathBuf,
}

impl TableWriter {
    /// Create (truncate) `path` and write the header.
    pub fn create(schema: Schema, path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        let mut inner = writer(file);
        inner.write_record(schema.names()).map_err(|e| with_path(path, e))?;
        inner
            .flush()
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        Ok(TableWriter {
            schema,
            inner,
            path: path.to_path_buf(),
        })
    }

    /// Open an existing table for appending after checking its header.
    /// Returns the writer and the number of complete data rows present.
    pub fn resume(schema: Schema, path: &Path) -> Result<(Self, usize)> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| with_path(path, e))?;
        let header = reader.headers().map_err(|e| with_path(path, e))?.clone();
        if header.iter().ne(schema.names()) {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: "header does not match the table schema".into(),
            });
        }
        let rows = reader.records().take_while(|r| r.is_ok()).count();
        let file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
        Ok((
            TableWriter {
                schema,
                inner: writer(file),
                path: path.to_path_buf(),
            },
            rows,
        ))
    }

    pub fn push(&mut self, row: &[Cell]) -> Result<()> {
        self.schema.check(row)?;
        self.inner
            .write_record(row.iter().map(Cell::render))
            .map_err(|e| with_path(&self.path, e))?;
        self.inner
            .flush()
            .map_err(|e| Error::io(format!("writing {}", self.path.display()), e))
    }
}
