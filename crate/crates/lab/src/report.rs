//! Experiment outcomes, CSV tables and the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use cascade_core::grid::{write_cfd1, WaveField};
use serde::Serialize;

/// One pass/fail comparison with its pinned threshold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    /// Human-readable acceptance rule, e.g. `"1.0 ± 0.15"`.
    pub rule: String,
    pub passed: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, value: f64, rule: impl Into<String>, passed: bool) -> Self {
        Check {
            name: name.into(),
            value,
            rule: rule.into(),
            passed: passed && value.is_finite(),
        }
    }

    pub fn within(name: impl Into<String>, value: f64, target: f64, tol: f64) -> Self {
        Self::new(
            name,
            value,
            format!("{target} ± {tol}"),
            (value - target).abs() <= tol,
        )
    }

    pub fn below(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self::new(name, value, format!("< {limit:e}"), value < limit)
    }

    pub fn above(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self::new(name, value, format!("> {limit:e}"), value > limit)
    }

    /// A boolean property; `value` is 1 when it holds.
    pub fn holds(name: impl Into<String>, ok: bool, rule: impl Into<String>) -> Self {
        Self::new(name, if ok { 1.0 } else { 0.0 }, rule, ok)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Table {
            name: name.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    /// CSV text; every row starts with the config hash.
    pub fn csv(&self, config_hash: &str) -> String {
        let mut out = format!("config_hash,{}\n", self.header.join(","));
        for r in &self.rows {
            out.push_str(config_hash);
            out.push(',');
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }
}

/// Formats a float for CSV output (shortest round-trip form).
pub fn num(v: f64) -> String {
    format!("{v:e}")
}

#[derive(Debug, Clone, Serialize)]
pub struct Outcome {
    pub experiment: String,
    pub config_hash: String,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub key_numbers: BTreeMap<String, f64>,
    pub notes: Vec<String>,
    #[serde(skip)]
    pub tables: Vec<Table>,
    #[serde(skip)]
    pub fields: Vec<(String, WaveField)>,
    /// Extra structured data (JSON) written next to the tables.
    pub details: serde_json::Value,
}

impl Outcome {
    pub fn new(experiment: &str, config_hash: &str) -> Self {
        Outcome {
            experiment: experiment.into(),
            config_hash: config_hash.into(),
            passed: false,
            checks: Vec::new(),
            key_numbers: BTreeMap::new(),
            notes: Vec::new(),
            tables: Vec::new(),
            fields: Vec::new(),
            details: serde_json::Value::Null,
        }
    }

    pub fn check(&mut self, c: Check) {
        self.checks.push(c);
    }

    pub fn key(&mut self, name: &str, value: f64) {
        self.key_numbers.insert(name.into(), value);
    }

    pub fn finish(mut self) -> Self {
        self.passed = !self.checks.is_empty() && self.checks.iter().all(|c| c.passed);
        self
    }

    pub fn find(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Writes tables, the JSON report and (optionally) field dumps under
    /// `dir`; returns the artifact paths in write order.
    pub fn write(&self, dir: &Path, dump_fields: bool) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut paths = Vec::new();
        for t in &self.tables {
            let path = dir.join(format!("{}_{}.csv", self.experiment, t.name));
            write_atomic(&path, t.csv(&self.config_hash).as_bytes())?;
            paths.push(path);
        }
        let path = dir.join(format!("{}_report.json", self.experiment));
        write_atomic(&path, serde_json::to_string_pretty(self)?.as_bytes())?;
        paths.push(path);
        if dump_fields {
            for (name, field) in &self.fields {
                let mut buf = Vec::new();
                write_cfd1(field, &mut buf)?;
                let path = dir.join(format!("{}_{name}.cfd", self.experiment));
                write_atomic(&path, &buf)?;
                paths.push(path);
            }
        }
        Ok(paths)
    }
}

/// Write through a temporary sibling and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming onto {}", path.display()))?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct ManifestEntry {
    pub config: String,
    pub experiment: Option<String>,
    pub passed: bool,
    pub key_numbers: BTreeMap<String, f64>,
    pub artifacts: Vec<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn all_passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_rows_carry_the_hash() {
        let mut t = Table::new("demo", &["a", "b"]);
        t.push(vec![num(1.5), num(2e-3)]);
        assert_eq!(t.csv("abc"), "config_hash,a,b\nabc,1.5e0,2e-3\n");
    }

    #[test]
    fn outcome_needs_checks_and_all_of_them() {
        assert!(!Outcome::new("x", "h").finish().passed);
        let mut o = Outcome::new("x", "h");
        o.check(Check::below("small", 0.01, 0.1));
        assert!(o.clone().finish().passed);
        o.check(Check::within("slope", 1.3, 1.0, 0.15));
        assert!(!o.finish().passed);
        assert!(!Check::below("nan", f64::NAN, 1.0).passed);
    }
}
