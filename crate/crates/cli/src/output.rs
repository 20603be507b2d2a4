use std::io::Write;
use std::path::{Path, PathBuf};

use lorenz_tz::export::{fmt17, VERSION};
use serde_json::{json, Value};

use crate::{CliError, Format};

/// A CSV table with preformatted cells.
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn push_nums(&mut self, row: &[f64]) {
        self.rows.push(row.iter().map(|v| num(*v)).collect());
    }
}

pub fn num(v: f64) -> String {
    fmt17(v)
}

/// Renders `table` (CSV) or `result` (JSON), each carrying the version and
/// the resolved configuration.
pub fn render(format: Format, echo: &Value, table: &Table, result: Value) -> String {
    match format {
        Format::Csv => {
            let mut s = format!("# lorenz-tz {VERSION}\n# config {echo}\n{}\n", table.header.join(","));
            for r in &table.rows {
                s.push_str(&r.join(","));
                s.push('\n');
            }
            s
        }
        Format::Json => {
            let doc = json!({ "version": VERSION, "config": echo, "result": result });
            serde_json::to_string_pretty(&doc).expect("output serializes") + "\n"
        }
    }
}

pub fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(CliError::Io)
}

pub struct Sink {
    path: Option<PathBuf>,
    pub format: Format,
}

impl Sink {
    pub fn new(path: Option<PathBuf>, format: Format) -> Self {
        Self { path, format }
    }

    pub fn emit(&self, echo: &Value, table: &Table, result: Value) -> Result<(), CliError> {
        let text = render(self.format, echo, table, result);
        match &self.path {
            Some(p) => write_file(p, &text),
            None => {
                std::io::stdout().lock().write_all(text.as_bytes())?;
                Ok(())
            }
        }
    }
}
