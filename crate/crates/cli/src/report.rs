//! Machine-readable run reports.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use cocycle_core::LabError;
use serde::Serialize;
use serde_json::Value;

use crate::config::Format;

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ErrorInfo {
    pub name: String,
    pub message: String,
}

impl From<&LabError> for ErrorInfo {
    fn from(e: &LabError) -> Self {
        Self {
            name: e.name().into(),
            message: e.to_string(),
        }
    }
}

/// Serialized with its fields in declaration order.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Report {
    pub experiment: String,
    pub config_digest: String,
    pub seed: u64,
    pub tolerances: BTreeMap<String, Value>,
    pub summary: BTreeMap<String, Value>,
    pub samples: Option<String>,
    pub error: Option<ErrorInfo>,
}

/// JSON value of a float; non-finite values become the strings `inf`, `-inf`, `NaN`.
pub fn float(v: f64) -> Value {
    if v.is_finite() {
        Value::from(v)
    } else {
        Value::from(v.to_string())
    }
}

impl Report {
    pub fn new(experiment: &str, config_digest: String, seed: u64) -> Self {
        Self {
            experiment: experiment.into(),
            config_digest,
            seed,
            tolerances: BTreeMap::new(),
            summary: BTreeMap::new(),
            samples: None,
            error: None,
        }
    }

    pub fn tolerance(&mut self, key: &str, v: f64) {
        self.tolerances.insert(key.into(), float(v));
    }

    pub fn put(&mut self, key: &str, v: f64) {
        self.summary.insert(key.into(), float(v));
    }

    pub fn put_int(&mut self, key: &str, v: usize) {
        self.summary.insert(key.into(), Value::from(v));
    }

    pub fn put_bool(&mut self, key: &str, v: bool) {
        self.summary.insert(key.into(), Value::from(v));
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Two-column `field,value` rendering with nested maps flattened to dotted keys.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["field", "value"])?;
        let text = |v: &Value| match v {
            Value::String(s) => s.clone(),
            other => other.to_string(),
        };
        w.write_record(["experiment", &self.experiment])?;
        w.write_record(["config_digest", &self.config_digest])?;
        w.write_record(["seed", &self.seed.to_string()])?;
        for (k, v) in &self.tolerances {
            w.write_record([format!("tolerances.{k}"), text(v)])?;
        }
        for (k, v) in &self.summary {
            w.write_record([format!("summary.{k}"), text(v)])?;
        }
        w.write_record(["samples", self.samples.as_deref().unwrap_or("")])?;
        if let Some(e) = &self.error {
            w.write_record(["error.name", &e.name])?;
            w.write_record(["error.message", &e.message])?;
        }
        Ok(String::from_utf8(w.into_inner()?)?)
    }

    /// Writes `<dir>/<experiment>.<format>` and returns its path.
    pub fn emit(&self, dir: &Path, format: Format) -> Result<PathBuf> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(format!("{}.{}", self.experiment, format.name()));
        let body = match format {
            Format::Json => self.to_json()?,
            Format::Csv => self.to_csv()?,
        };
        fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

/// A CSV table of per-sample values.
pub struct SampleTable {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl SampleTable {
    pub fn new(header: &[&'static str]) -> Self {
        Self {
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush().with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}
