//! Plot-ready tables in CSV or JSON.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::pde::{CostField, HeatField};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::Config(format!(
                "unknown format {other:?}; expected csv or json"
            ))),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.extension())
    }
}

/// Writes `rows` to `<dir>/<stem>.<ext>` and returns the file name. Rows
/// must serialize to flat objects; the CSV header is the key set of the
/// first row and nested values are written as JSON text.
pub fn write_table<T: Serialize>(
    dir: &Path,
    stem: &str,
    rows: &[T],
    format: Format,
) -> Result<String> {
    let name = format!("{stem}.{}", format.extension());
    let path = dir.join(&name);
    match format {
        Format::Csv => {
            let values: Vec<Value> = rows
                .iter()
                .map(serde_json::to_value)
                .collect::<std::result::Result<_, _>>()?;
            let header: Vec<String> = match values.first() {
                Some(Value::Object(m)) => m.keys().cloned().collect(),
                Some(_) => {
                    return Err(Error::Config(format!("{stem}: table rows must be objects")))
                }
                None => Vec::new(),
            };
            let csv_err = |e: csv::Error| Error::Config(format!("{}: {e}", path.display()));
            let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
            if !header.is_empty() {
                w.write_record(&header).map_err(csv_err)?;
            }
            for v in &values {
                let record: Vec<String> = header
                    .iter()
                    .map(|k| cell(v.get(k).unwrap_or(&Value::Null)))
                    .collect();
                w.write_record(&record).map_err(csv_err)?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
        }
        Format::Json => write_json(&path, rows)?,
    }
    Ok(name)
}

fn cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FieldRow {
    pub t: f64,
    pub y: f64,
    pub u: f64,
    pub q: f64,
    pub dq_dy: f64,
    pub dq_dx: Option<f64>,
}

/// Samples every `stride_t`-th level and `stride_y`-th node (the last level
/// is always included).
pub fn field_rows(
    heat: &HeatField,
    cost: &CostField,
    stride_t: usize,
    stride_y: usize,
) -> Vec<FieldRow> {
    let g = heat.grid;
    let mut levels: Vec<usize> = (0..g.n_t).step_by(stride_t.max(1)).collect();
    if levels.last() != Some(&(g.n_t - 1)) {
        levels.push(g.n_t - 1);
    }
    let mut rows = Vec::new();
    for k in levels {
        for i in (0..g.n_y).step_by(stride_y.max(1)) {
            rows.push(FieldRow {
                t: g.t(k),
                y: g.y(i),
                u: heat.u[[k, i]],
                q: cost.q[[k, i]],
                dq_dy: cost.dq_dy[[k, i]],
                dq_dx: cost.dq_dx.as_ref().map(|d| d[[k, i]]),
            });
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Row {
        a: f64,
        b: &'static str,
    }

    #[test]
    fn tables_in_both_formats() {
        let dir = tempfile::tempdir().unwrap();
        let rows = [Row { a: 1.5, b: "x" }, Row { a: -2.0, b: "y" }];
        let name = write_table(dir.path(), "t", &rows, Format::Csv).unwrap();
        assert_eq!(name, "t.csv");
        let text = std::fs::read_to_string(dir.path().join(name)).unwrap();
        assert_eq!(text, "a,b\n1.5,x\n-2.0,y\n");
        let name = write_table(dir.path(), "t", &rows, Format::Json).unwrap();
        let v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join(name)).unwrap()).unwrap();
        assert_eq!(v[1]["b"], "y");
        assert!("xml".parse::<Format>().is_err());
    }
}
