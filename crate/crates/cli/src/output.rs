//! CSV and JSON writers.
//!
//! Floats are written in shortest round-trip form. Missing values are empty
//! CSV fields and JSON `null`.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Map, Value};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const SCHEMA_VERSION: u32 = 1;

pub const BULK_HEADER: [&str; 10] = [
    "lambda", "mu", "t", "q", "theory_W", "theory_W_rho", "mc_mean", "mc_ci_low", "mc_ci_high",
    "n_samples",
];
pub const SPIKE_BULK_HEADER: [&str; 10] = [
    "mu", "lambda", "t", "q", "theory_W", "theory_W_rho", "mc_mean", "mc_ci_low", "mc_ci_high",
    "n_samples",
];
pub const TRAJECTORY_HEADER: [&str; 5] = ["t", "lambda1", "mu1", "edge_full", "edge_minor"];

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    F(Option<f64>),
    U(usize),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::F(Some(v))
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        Cell::F(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::U(v)
    }
}

pub fn fmt_f64(v: f64) -> String {
    // Debug formatting is the shortest string that parses back to `v`.
    format!("{v:?}")
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::F(Some(v)) => fmt_f64(*v),
            Cell::F(None) => String::new(),
            Cell::U(v) => v.to_string(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::F(Some(v)) if v.is_finite() => Value::from(*v),
            Cell::F(_) => Value::Null,
            Cell::U(v) => Value::from(*v),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(header: &[&'static str]) -> Self {
        Self {
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> io::Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::csv))?;
        }
        w.into_inner().map_err(|e| io::Error::other(e.to_string()))
    }

    /// Rows as JSON objects keyed by column name.
    pub fn to_json_rows(&self) -> Value {
        Value::Array(
            self.rows
                .iter()
                .map(|row| {
                    let obj: Map<String, Value> = self
                        .header
                        .iter()
                        .zip(row)
                        .map(|(h, c)| (h.to_string(), c.json()))
                        .collect();
                    Value::Object(obj)
                })
                .collect(),
        )
    }
}

/// Top-level JSON document shared by every subcommand.
#[derive(Debug, Clone, Serialize)]
pub struct Document {
    pub config: Value,
    pub estimates: Value,
    pub theory: Value,
    pub coverage: Option<f64>,
    pub wall_time_s: Option<f64>,
    pub tool_version: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<Value>,
}

/// Config echo: the serialized parameters plus the command name and schema
/// version.
pub fn config_echo<T: Serialize>(command: &str, params: &T) -> Value {
    let mut obj = match serde_json::to_value(params).expect("parameters serialize") {
        Value::Object(m) => m,
        other => {
            let mut m = Map::new();
            m.insert("params".into(), other);
            m
        }
    };
    obj.insert("command".into(), Value::from(command));
    obj.insert("schema_version".into(), Value::from(SCHEMA_VERSION));
    Value::Object(obj)
}

pub fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report types serialize")
}

fn json_bytes(v: &impl Serialize) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("document serializes");
    out.push(b'\n');
    out
}

fn write_bytes(out: Option<&Path>, bytes: &[u8]) -> io::Result<()> {
    match out {
        Some(path) => fs::write(path, bytes),
        None => {
            let mut stdout = io::stdout().lock();
            stdout.write_all(bytes)?;
            stdout.flush()
        }
    }
}

fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

/// Writes `table` as CSV (with a `<out>.meta.json` sidecar holding the rest of
/// the document when writing to a file) or the whole document as JSON.
pub fn emit(format: Format, out: Option<&Path>, table: &Table, doc: &Document) -> io::Result<()> {
    match format {
        Format::Json => write_bytes(out, &json_bytes(doc)),
        Format::Csv => {
            write_bytes(out, &table.to_csv()?)?;
            if let Some(path) = out {
                let meta = Document {
                    estimates: Value::Null,
                    theory: Value::Null,
                    ..doc.clone()
                };
                fs::write(sidecar_path(path), json_bytes(&meta))?;
            }
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_in_shortest_form() {
        for v in [0.1, 1.0, 0.125, 1e-7, 2.0f64.sqrt(), -3.5e21, 0.07777777777777778] {
            let s = fmt_f64(v);
            assert_eq!(s.parse::<f64>().unwrap(), v);
        }
        assert_eq!(fmt_f64(0.125), "0.125");
    }

    #[test]
    fn csv_header_and_missing_values() {
        let mut t = Table::new(&BULK_HEADER);
        t.push(vec![
            0.5.into(),
            0.0.into(),
            1.0.into(),
            0.5.into(),
            Some(2.0).into(),
            None.into(),
            Cell::F(None),
            Cell::F(None),
            Cell::F(None),
            0usize.into(),
        ]);
        let text = String::from_utf8(t.to_csv().unwrap()).unwrap();
        assert_eq!(
            text,
            "lambda,mu,t,q,theory_W,theory_W_rho,mc_mean,mc_ci_low,mc_ci_high,n_samples\n0.5,0.0,1.0,0.5,2.0,,,,,0\n"
        );
    }

    #[test]
    fn sidecar_name() {
        assert_eq!(sidecar_path(Path::new("a/b.csv")), PathBuf::from("a/b.csv.meta.json"));
    }
}
