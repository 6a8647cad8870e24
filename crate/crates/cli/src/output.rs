//! Report envelope, JSON and CSV writers.

use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::CliError;

/// Verdict of a command, when it has one.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Status {
    pub label: String,
    pub passed: bool,
}

impl Status {
    pub fn new(label: impl Into<String>, passed: bool) -> Self {
        Status { label: label.into(), passed }
    }

    pub fn pass_fail(passed: bool) -> Self {
        Status::new(if passed { "PASS" } else { "FAIL" }, passed)
    }
}

/// A CSV trace: header plus rows of numbers.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Table { name: name.into(), header: header.iter().map(|h| h.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String, CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| CliError::Io(format!("csv {}: {e}", self.name));
        w.write_record(&self.header).map_err(io)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| format!("{v:.16e}"))).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Io(format!("csv {}: {e}", self.name)))?;
        Ok(String::from_utf8(bytes).expect("csv writes UTF-8"))
    }
}

/// What a command produced, before it is wrapped and written.
#[derive(Debug)]
pub struct Outcome {
    pub status: Option<Status>,
    pub result: Value,
    pub tables: Vec<Table>,
}

impl Outcome {
    pub fn new<T: Serialize>(result: &T, status: Option<Status>) -> Result<Self, CliError> {
        let result = serde_json::to_value(result).map_err(|e| CliError::Io(format!("serializing report: {e}")))?;
        Ok(Outcome { status, result, tables: Vec::new() })
    }

    pub fn with_table(mut self, t: Table) -> Self {
        self.tables.push(t);
        self
    }
}

#[derive(Debug, Serialize)]
pub struct Envelope<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    /// SHA-256 of the config file bytes, hex encoded.
    pub config_hash: &'a str,
    pub seed: u64,
    pub verdict: Option<&'a Status>,
    pub result: &'a Value,
}

pub fn render(envelope: &Envelope<'_>) -> Result<String, CliError> {
    gje_core::report::to_json_string(envelope).map_err(|e| CliError::Io(format!("serializing report: {e}")))
}

/// Writes `<command>.json` and `<command>-<table>.csv` into `dir`.
pub fn write_all(dir: &Path, command: &str, json: &str, tables: &[Table]) -> Result<(), CliError> {
    let io = |p: &Path, e: std::io::Error| CliError::Io(format!("{}: {e}", p.display()));
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let path = dir.join(format!("{command}.json"));
    std::fs::write(&path, json).map_err(|e| io(&path, e))?;
    for t in tables {
        let path = dir.join(format!("{command}-{}.csv", t.name));
        std::fs::write(&path, t.to_csv()?).map_err(|e| io(&path, e))?;
    }
    Ok(())
}
