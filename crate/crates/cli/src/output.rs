//! Rendering of command results as text, CSV or JSON.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::json;

use crate::config::{Format, Resolved};

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Num(f64),
    Text(String),
}

impl Cell {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Int(i) => Some(*i as f64),
            Cell::Num(x) => Some(*x),
            Cell::Text(_) => None,
        }
    }

    fn render(&self, precision: usize) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Num(x) if x.is_nan() => "nan".into(),
            Cell::Num(x) => format!("{x:.precision$}"),
            Cell::Text(s) => s.clone(),
        }
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: impl Into<String>, columns: &[&'static str]) -> Self {
        Self {
            name: name.into(),
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<&Cell>> {
        let j = self.columns.iter().position(|c| *c == name)?;
        Some(self.rows.iter().map(|r| &r[j]).collect())
    }
}

/// Result of one command.
#[derive(Debug, Clone)]
pub struct Document {
    pub command: &'static str,
    pub tables: Vec<Table>,
    /// Full-precision result for JSON output.
    pub json: serde_json::Value,
    /// Non-fatal remarks, printed to stderr and included in JSON.
    pub warnings: Vec<String>,
    /// Set when the command completed but its checks failed.
    pub failed: Option<String>,
}

impl Document {
    pub fn new(command: &'static str, json: impl Serialize) -> Self {
        Self {
            command,
            tables: Vec::new(),
            json: serde_json::to_value(json).expect("result serializes"),
            warnings: Vec::new(),
            failed: None,
        }
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }
}

fn header(run: &Resolved, command: &str) -> Vec<String> {
    vec![
        format!("# dtfn {} {command} config={}", env!("CARGO_PKG_VERSION"), run.hash),
        format!(
            "# source={} distortion={:?}",
            run.source.describe(),
            run.config.distortion
        ),
    ]
}

pub fn render_json(run: &Resolved, doc: &Document) -> String {
    let v = json!({
        "tool": "dtfn",
        "version": env!("CARGO_PKG_VERSION"),
        "command": doc.command,
        "config_hash": run.hash,
        "config": run.config,
        "warnings": doc.warnings,
        "result": doc.json,
    });
    let mut s = serde_json::to_string_pretty(&v).expect("json");
    s.push('\n');
    s
}

fn render_csv_table(t: &Table, precision: usize) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&t.columns).expect("in-memory write");
    for r in &t.rows {
        w.write_record(r.iter().map(|c| c.render(precision)))
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}

fn render_text_table(t: &Table, precision: usize) -> String {
    let cells: Vec<Vec<String>> = t
        .rows
        .iter()
        .map(|r| r.iter().map(|c| c.render(precision)).collect())
        .collect();
    let widths: Vec<usize> = (0..t.columns.len())
        .map(|j| {
            cells
                .iter()
                .map(|r| r[j].len())
                .chain([t.columns[j].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut s = format!("[{}]\n", t.name);
    let line = |items: Vec<&str>| {
        items
            .iter()
            .zip(&widths)
            .map(|(x, w)| format!("{x:>w$}"))
            .collect::<Vec<_>>()
            .join("  ")
    };
    s += &line(t.columns.clone());
    s.push('\n');
    for r in &cells {
        s += &line(r.iter().map(String::as_str).collect());
        s.push('\n');
    }
    s
}

/// Render to a single string.
pub fn render(run: &Resolved, doc: &Document, format: Format) -> String {
    let p = run.config.precision;
    match format {
        Format::Json => render_json(run, doc),
        Format::Csv => {
            let mut out = header(run, doc.command).join("\n") + "\n";
            for (i, t) in doc.tables.iter().enumerate() {
                if i > 0 {
                    out.push('\n');
                }
                if doc.tables.len() > 1 {
                    out += &format!("# table={}\n", t.name);
                }
                out += &render_csv_table(t, p);
            }
            out
        }
        Format::Text => {
            let mut out = header(run, doc.command).join("\n") + "\n";
            for t in &doc.tables {
                out.push('\n');
                out += &render_text_table(t, p);
            }
            out
        }
    }
}

/// Write to `--out` or stdout. CSV output of several tables to a directory
/// path writes one file per table.
pub fn emit(run: &Resolved, doc: &Document) -> anyhow::Result<()> {
    let format = run.config.format;
    for w in &doc.warnings {
        eprintln!("warning: {w}");
    }
    match &run.config.out {
        Some(path) if format == Format::Csv && doc.tables.len() > 1 && !has_extension(path) => {
            fs::create_dir_all(path)?;
            for t in &doc.tables {
                let body = header(run, doc.command).join("\n") + "\n" + &render_csv_table(t, run.config.precision);
                fs::write(path.join(format!("{}.csv", t.name)), body)?;
            }
        }
        Some(path) => fs::write(path, render(run, doc, format))?,
        None => std::io::stdout()
            .lock()
            .write_all(render(run, doc, format).as_bytes())?,
    }
    Ok(())
}

fn has_extension(path: &Path) -> bool {
    path.extension().is_some()
}
