//! Report emission. `report.json` holds the config echo, metrics and tables,
//! and a separate `timings` object; `report.csv` holds the tables in long
//! form (`table,row,column,value`). Everything but `timings` depends only on
//! the config and seed.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::Format;
use crate::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct Table {
    pub columns: Vec<String>,
    /// Row label followed by one value per column.
    pub rows: Vec<(String, Vec<Value>)>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, label: impl Into<String>, values: Vec<Value>) {
        debug_assert_eq!(values.len(), self.columns.len());
        self.rows.push((label.into(), values));
    }
}

#[derive(Debug, Clone)]
pub struct Report {
    pub command: String,
    pub config: Value,
    pub metrics: BTreeMap<String, Value>,
    pub tables: BTreeMap<String, Table>,
    pub timings: BTreeMap<String, f64>,
}

impl Report {
    pub fn new(command: &str, config: &impl Serialize) -> Self {
        Self {
            command: command.to_string(),
            config: serde_json::to_value(config).expect("config serialises"),
            metrics: BTreeMap::new(),
            tables: BTreeMap::new(),
            timings: BTreeMap::new(),
        }
    }

    pub fn metric(&mut self, key: &str, value: impl Serialize) {
        self.metrics
            .insert(key.to_string(), serde_json::to_value(value).expect("metric serialises"));
    }

    pub fn table(&mut self, name: &str, table: Table) {
        self.tables.insert(name.to_string(), table);
    }

    pub fn time(&mut self, stage: &str, seconds: f64) {
        *self.timings.entry(stage.to_string()).or_default() += seconds;
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        let doc = json!({
            "command": self.command,
            "config": self.config,
            "metrics": self.metrics,
            "tables": self.tables,
            "timings": self.timings,
        });
        let text = serde_json::to_string_pretty(&doc).expect("report serialises") + "\n";
        write_file(&dir.join("report.json"), &text)?;

        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["table", "row", "column", "value"]).map_err(csv_err)?;
        for (name, table) in &self.tables {
            for (label, values) in &table.rows {
                for (col, v) in table.columns.iter().zip(values) {
                    w.write_record([name.as_str(), label.as_str(), col.as_str(), &cell(v)])
                        .map_err(csv_err)?;
                }
            }
        }
        let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
        write_file(&dir.join("report.csv"), &String::from_utf8_lossy(&bytes))
    }
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Io(e.to_string())
}

fn cell(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        other => other.to_string(),
    }
}

pub fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Row-major nested arrays.
pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Writes `m` as `<stem>.csv` or `<stem>.json`.
pub fn write_matrix(dir: &Path, stem: &str, m: &DMatrix<f64>, format: Format) -> Result<(), CliError> {
    match format {
        Format::Csv => cobe::multiblock::write_matrix(dir.join(format!("{stem}.csv")), m).map_err(CliError::from),
        Format::Json => {
            let doc = json!({ "rows": m.nrows(), "cols": m.ncols(), "data": matrix_rows(m) });
            write_file(&dir.join(format!("{stem}.json")), &(doc.to_string() + "\n"))
        }
    }
}

/// Mean and sample standard deviation; the deviation is absent for one value.
pub fn mean_std(xs: &[f64]) -> (f64, Option<f64>) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, None);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Some(var.sqrt()))
}
