use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Column {
    pub name: String,
    pub unit: String,
}

impl Column {
    pub fn new(name: impl Into<String>, unit: impl Into<String>) -> Self {
        Self { name: name.into(), unit: unit.into() }
    }

    /// Header cell, `name [unit]`.
    pub fn header(&self) -> String {
        format!("{} [{}]", self.name, self.unit)
    }
}

/// Rectangular numeric table with provenance metadata.
///
/// The CSV form is deterministic: it holds the scenario name, seed, config
/// hash and any notes as `#` comment lines, then the header and rows. Wall
/// time is kept in [`runtime_s`](Self::runtime_s) but never written to the
/// CSV, so identical inputs give byte-identical files.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub scenario: String,
    pub columns: Vec<Column>,
    pub rows: Vec<Vec<f64>>,
    pub seed: u64,
    pub config_hash: String,
    pub notes: Vec<String>,
    pub runtime_s: f64,
}

impl ResultTable {
    pub fn new(scenario: &str, columns: Vec<Column>, seed: u64, config_hash: &str) -> Self {
        Self {
            scenario: scenario.to_string(),
            columns,
            rows: Vec::new(),
            seed,
            config_hash: config_hash.to_string(),
            notes: Vec::new(),
            runtime_s: 0.0,
        }
    }

    pub fn push_row(&mut self, row: Vec<f64>) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(Error::input(format!(
                "row has {} values, table has {} columns",
                row.len(),
                self.columns.len()
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    /// Values of the named column. Panics on unknown names.
    pub fn column(&self, name: &str) -> Vec<f64> {
        let i = self.column_index(name).unwrap_or_else(|| panic!("no column named {name}"));
        self.rows.iter().map(|r| r[i]).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# scenario: {}", self.scenario);
        let _ = writeln!(s, "# seed: {}", self.seed);
        let _ = writeln!(s, "# config_sha256: {}", self.config_hash);
        for n in &self.notes {
            let _ = writeln!(s, "# {n}");
        }
        let header: Vec<String> = self.columns.iter().map(Column::header).collect();
        s.push_str(&header.join(","));
        s.push('\n');
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(|v| format!("{v:e}")).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }

    /// Parses the output of [`to_csv`](Self::to_csv).
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut t = ResultTable::new("", Vec::new(), 0, "");
        let mut header_seen = false;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                let meta = meta.trim();
                if let Some(v) = meta.strip_prefix("scenario:") {
                    t.scenario = v.trim().to_string();
                } else if let Some(v) = meta.strip_prefix("seed:") {
                    t.seed = v.trim().parse().map_err(|_| Error::Parse(format!("line {}: bad seed", lineno + 1)))?;
                } else if let Some(v) = meta.strip_prefix("config_sha256:") {
                    t.config_hash = v.trim().to_string();
                } else {
                    t.notes.push(meta.to_string());
                }
                continue;
            }
            if !header_seen {
                t.columns = line
                    .split(',')
                    .map(|cell| {
                        let cell = cell.trim();
                        match cell.rsplit_once(" [") {
                            Some((n, u)) => Column::new(n, u.trim_end_matches(']')),
                            None => Column::new(cell, "1"),
                        }
                    })
                    .collect();
                header_seen = true;
                continue;
            }
            let row = line
                .split(',')
                .map(|c| c.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
            t.push_row(row).map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
        }
        if !header_seen {
            return Err(Error::Parse("table has no header row".into()));
        }
        Ok(t)
    }
}
