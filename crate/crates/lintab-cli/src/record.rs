//! Machine-readable experiment artifacts.
//!
//! Every record-producing command assembles one [`ExperimentRecord`]: the
//! experiment name, a timestamp, the fully resolved configuration (no
//! hidden defaults), an environment note, and a list of metric rows. The
//! record is written twice — pretty JSON for programs, CSV for plotting —
//! and both forms round-trip through ordinary parsers.

use crate::error::{CliError, CliResult};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// One metric row. Keys become CSV columns (sorted, so column order is
/// stable across runs).
pub type Row = BTreeMap<String, Value>;

/// Execution context worth echoing next to the metrics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Environment {
    pub threads: usize,
    pub precision: String,
    pub version: String,
}

/// A complete experiment artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub experiment: String,
    /// UTC, RFC 3339.
    pub timestamp: String,
    /// The resolved configuration that produced the rows.
    pub config: Value,
    pub environment: Environment,
    pub rows: Vec<Row>,
}

impl ExperimentRecord {
    pub fn new(
        experiment: impl Into<String>,
        config: impl Serialize,
        environment: Environment,
    ) -> CliResult<ExperimentRecord> {
        let config = serde_json::to_value(config)
            .map_err(|e| CliError::runtime(format!("config did not serialize: {e}")))?;
        let timestamp = time::OffsetDateTime::now_utc()
            .format(&time::format_description::well_known::Rfc3339)
            .map_err(|e| CliError::runtime(format!("timestamp formatting failed: {e}")))?;
        Ok(ExperimentRecord {
            experiment: experiment.into(),
            timestamp,
            config,
            environment,
            rows: Vec::new(),
        })
    }

    /// Write `<base>.json` and `<base>.csv`; returns both paths.
    pub fn write(&self, base: &Path) -> CliResult<(PathBuf, PathBuf)> {
        let json_path = base.with_extension("json");
        let csv_path = base.with_extension("csv");
        if let Some(dir) = base.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)
                    .map_err(|e| CliError::runtime(format!("creating {}: {e}", dir.display())))?;
            }
        }
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::runtime(format!("record did not serialize: {e}")))?;
        std::fs::write(&json_path, json)
            .map_err(|e| CliError::runtime(format!("writing {}: {e}", json_path.display())))?;
        std::fs::write(&csv_path, self.to_csv()?)
            .map_err(|e| CliError::runtime(format!("writing {}: {e}", csv_path.display())))?;
        Ok((json_path, csv_path))
    }

    /// The rows as CSV text. Columns are the sorted union of row keys;
    /// missing cells are empty.
    pub fn to_csv(&self) -> CliResult<String> {
        let mut columns: Vec<&str> = Vec::new();
        for row in &self.rows {
            for key in row.keys() {
                if !columns.contains(&key.as_str()) {
                    columns.push(key);
                }
            }
        }
        columns.sort_unstable();
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer
            .write_record(&columns)
            .map_err(|e| CliError::runtime(format!("csv header: {e}")))?;
        for row in &self.rows {
            let cells: Vec<String> = columns
                .iter()
                .map(|&c| match row.get(c) {
                    None | Some(Value::Null) => String::new(),
                    Some(Value::String(s)) => s.clone(),
                    Some(other) => other.to_string(),
                })
                .collect();
            writer
                .write_record(&cells)
                .map_err(|e| CliError::runtime(format!("csv row: {e}")))?;
        }
        let bytes = writer
            .into_inner()
            .map_err(|e| CliError::runtime(format!("csv flush: {e}")))?;
        String::from_utf8(bytes).map_err(|e| CliError::runtime(format!("csv utf-8: {e}")))
    }
}

/// JSON number from an `f64` (`null` if not finite, which CSV renders as
/// an empty cell).
pub fn num(v: f64) -> Value {
    serde_json::Number::from_f64(v).map_or(Value::Null, Value::Number)
}

/// JSON number from an unsigned integer.
pub fn uint(v: u64) -> Value {
    Value::Number(serde_json::Number::from(v))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_record() -> ExperimentRecord {
        let env = Environment {
            threads: 1,
            precision: "f64".into(),
            version: "test".into(),
        };
        let mut record =
            ExperimentRecord::new("demo", serde_json::json!({"seed": 7}), env).unwrap();
        let mut row = Row::new();
        row.insert("n".into(), uint(512));
        row.insert("seconds".into(), num(0.125));
        row.insert("variant".into(), Value::String("linear_blocked".into()));
        record.rows.push(row);
        let mut row = Row::new();
        row.insert("n".into(), uint(1024));
        row.insert("seconds".into(), num(0.25));
        row.insert("note".into(), Value::String("clamped".into()));
        record.rows.push(row);
        record
    }

    #[test]
    fn json_round_trips_losslessly() {
        let record = sample_record();
        let text = serde_json::to_string_pretty(&record).unwrap();
        let back: ExperimentRecord = serde_json::from_str(&text).unwrap();
        assert_eq!(back.rows, record.rows);
        assert_eq!(back.config, record.config);
        assert_eq!(back.experiment, record.experiment);
    }

    #[test]
    fn csv_round_trips_through_a_parser() {
        let record = sample_record();
        let text = record.to_csv().unwrap();
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let headers: Vec<String> = reader
            .headers()
            .unwrap()
            .iter()
            .map(str::to_string)
            .collect();
        // Sorted union of keys across rows.
        assert_eq!(headers, vec!["n", "note", "seconds", "variant"]);
        let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), 2);
        // Numeric cells parse back to the exact same values.
        assert_eq!(rows[0].get(0).unwrap().parse::<u64>().unwrap(), 512);
        assert_eq!(rows[0].get(2).unwrap().parse::<f64>().unwrap(), 0.125);
        // Missing cells are empty, not "null".
        assert_eq!(rows[0].get(1).unwrap(), "");
        assert_eq!(rows[1].get(1).unwrap(), "clamped");
    }
}
