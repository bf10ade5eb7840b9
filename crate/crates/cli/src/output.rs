use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::config::{Config, Format};
use crate::CliError;

pub const SCHEMA: &str = "polylab-result/1";

/// A numeric table. The first column is the abscissa and is non-decreasing.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Table {
        Table { columns: columns.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub schema: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config: Config,
    pub params: Value,
    pub seeds: Vec<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
    pub data: Value,
    pub table: Table,
}

fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:?}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

impl Report {
    pub fn to_json(&self) -> Result<String, CliError> {
        // through Value so keys are always sorted and re-emission is stable
        let v = serde_json::to_value(self).map_err(|e| CliError::Numerical(format!("serialization: {e}")))?;
        json_string(&v)
    }

    pub fn to_csv(&self) -> Result<String, CliError> {
        let mut s = String::new();
        let cfg = serde_json::to_string(&self.config).map_err(|e| CliError::Numerical(e.to_string()))?;
        let params = serde_json::to_string(&self.params).map_err(|e| CliError::Numerical(e.to_string()))?;
        s.push_str(&format!("# {} {} {} config={cfg} params={params}\n", self.schema, self.version, self.command));
        s.push_str(&self.table.columns.join(","));
        s.push('\n');
        for r in &self.table.rows {
            let cells: Vec<String> = r.iter().map(|&x| num(x)).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        Ok(s)
    }

    pub fn to_plot(&self) -> String {
        let mut s = format!("# {}\n", self.table.columns.join(" "));
        for r in &self.table.rows {
            let cells: Vec<String> = r.iter().map(|&x| num(x)).collect();
            s.push_str(&cells.join(" "));
            s.push('\n');
        }
        s
    }

    pub fn render(&self, format: Format) -> Result<String, CliError> {
        match format {
            Format::Json => self.to_json(),
            Format::Csv => self.to_csv(),
        }
    }
}

pub fn json_string(v: &Value) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| CliError::Numerical(format!("serialization: {e}")))?;
    s.push('\n');
    Ok(s)
}

/// Writes `text` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, text: &str) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(text.as_bytes()).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

pub fn emit(text: &str, out: Option<&Path>) -> Result<(), CliError> {
    match out {
        Some(p) => write_atomic(p, text),
        None => {
            let mut so = std::io::stdout().lock();
            so.write_all(text.as_bytes()).map_err(|e| CliError::Io(e.to_string()))?;
            so.flush().map_err(|e| CliError::Io(e.to_string()))
        }
    }
}
