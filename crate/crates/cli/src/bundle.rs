//! Result bundles and their CSV/JSON renderings.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::scenario::Command;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Bool(bool),
    Int(i64),
    Num(f64),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Bool(b) => b.to_string(),
            Cell::Int(i) => i.to_string(),
            Cell::Num(v) => format!("{v:e}"),
            Cell::Text(s) => s.clone(),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        if v.is_finite() {
            Cell::Num(v)
        } else {
            // JSON has no non-finite numbers.
            Cell::Text(v.to_string())
        }
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
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

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Table { name: name.into(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width must match the header of {}", self.name);
        self.rows.push(row);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    /// Ran and every check it makes held.
    Pass,
    /// Ran, but a check failed.
    Fail,
    /// A precondition or numerical error stopped the command.
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandResult {
    pub command: Command,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub summary: BTreeMap<String, Cell>,
    pub tables: Vec<Table>,
}

impl CommandResult {
    pub fn new(command: Command) -> Self {
        CommandResult { command, status: Status::Pass, error: None, summary: BTreeMap::new(), tables: Vec::new() }
    }

    pub fn failed(command: Command, error: String) -> Self {
        CommandResult { status: Status::Error, error: Some(error), ..CommandResult::new(command) }
    }

    pub fn note(&mut self, key: &str, value: impl Into<Cell>) {
        self.summary.insert(key.into(), value.into());
    }

    /// Records a named check and downgrades the status when it fails.
    pub fn check(&mut self, key: &str, ok: bool) {
        self.note(key, ok);
        if !ok && self.status == Status::Pass {
            self.status = Status::Fail;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bundle {
    pub scenario: String,
    pub seed: u64,
    pub results: Vec<CommandResult>,
}

impl Bundle {
    pub fn new(scenario: &str, seed: u64) -> Self {
        Bundle { scenario: scenario.into(), seed, results: Vec::new() }
    }

    pub fn all_passed(&self) -> bool {
        self.results.iter().all(|r| r.status == Status::Pass)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bundles are always serializable")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Bundle> {
        serde_json::from_str(text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

fn write_csv(path: &Path, table: &Table) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(&table.columns)?;
    for row in &table.rows {
        w.write_record(row.iter().map(Cell::render))?;
    }
    w.flush()
}

/// Writes `bundle.json` or one `<command>-<table>.csv` per table, plus a
/// `summary.csv` with one row per command. Returns the written paths.
pub fn emit_report(bundle: &Bundle, format: Format, dir: &Path) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    match format {
        Format::Json => {
            let path = dir.join("bundle.json");
            fs::write(&path, bundle.to_json() + "\n")?;
            written.push(path);
        }
        Format::Csv => {
            let mut summary = Table::new("summary", &["command", "status", "key", "value"]);
            for r in &bundle.results {
                let status = serde_json::to_value(r.status).expect("status").as_str().unwrap_or_default().to_string();
                summary.push(vec![
                    r.command.name().into(),
                    status.clone().into(),
                    "error".into(),
                    r.error.clone().unwrap_or_default().into(),
                ]);
                for (k, v) in &r.summary {
                    summary.push(vec![r.command.name().into(), status.clone().into(), k.as_str().into(), v.clone()]);
                }
                for t in &r.tables {
                    let path = dir.join(format!("{}-{}.csv", r.command.name(), t.name));
                    write_csv(&path, t)?;
                    written.push(path);
                }
            }
            let path = dir.join("summary.csv");
            write_csv(&path, &summary)?;
            written.push(path);
        }
    }
    Ok(written)
}
