use std::path::Path;

use super::stats::confidence_interval;
use crate::error::{Error, Result};

pub const CI_LEVEL: f64 = 0.95;

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Int(i64),
    Float(f64),
    Text(&'static str),
}

impl Value {
    fn render(&self) -> String {
        match self {
            Value::Int(v) => v.to_string(),
            Value::Float(v) => format_float(*v),
            Value::Text(t) => (*t).to_string(),
        }
    }

    fn number(&self) -> Option<f64> {
        match self {
            Value::Int(v) => Some(*v as f64),
            Value::Float(v) => Some(*v),
            Value::Text(_) => None,
        }
    }
}

/// 17 significant digits, enough to read back the same `f64`.
pub fn format_float(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{x:.16e}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Role {
    /// Identifies the row (episode, gradient step, grid cell); equal across trials.
    Key,
    /// Averaged across trials.
    Metric,
    /// Text column summarized by the fraction of trials in each listed level.
    Category(&'static [&'static str]),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Column {
    pub name: &'static str,
    pub role: Role,
}

impl Column {
    pub const fn key(name: &'static str) -> Self {
        Self { name, role: Role::Key }
    }

    pub const fn metric(name: &'static str) -> Self {
        Self { name, role: Role::Metric }
    }

    pub const fn category(name: &'static str, levels: &'static [&'static str]) -> Self {
        Self {
            name,
            role: Role::Category(levels),
        }
    }
}

/// Records of one trial with a fixed column layout.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSeries {
    pub columns: &'static [Column],
    pub rows: Vec<Vec<Value>>,
}

impl MetricSeries {
    pub fn new(columns: &'static [Column]) -> Self {
        Self {
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn header(&self) -> Vec<&'static str> {
        self.columns.iter().map(|c| c.name).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_rows(path, &self.header(), self.rows.iter().map(|r| r.iter().map(Value::render).collect()))
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    /// Numeric values of column `name`.
    pub fn numbers(&self, name: &str) -> Vec<f64> {
        match self.column(name) {
            Some(k) => self.rows.iter().filter_map(|r| r[k].number()).collect(),
            None => Vec::new(),
        }
    }
}

/// Per-row mean and confidence half-width across trials.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub trials: usize,
}

impl Aggregate {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let header: Vec<&str> = self.header.iter().map(String::as_str).collect();
        write_rows(path, &header, self.rows.iter().map(|r| r.iter().map(|v| format_float(*v)).collect()))
    }
}

/// Averages trials row by row. Key columns are copied; every metric column `m` becomes
/// `m_mean` and `m_ci`, every category level `l` of column `c` becomes `c_l_mean` and
/// `c_l_ci` over 0/1 indicators. Half-widths are NaN for a single trial.
pub fn aggregate(trials: &[MetricSeries]) -> Result<Aggregate> {
    let first = trials
        .first()
        .ok_or_else(|| Error::Config("nothing to aggregate".into()))?;
    for t in trials {
        if t.columns != first.columns || t.rows.len() != first.rows.len() {
            return Err(Error::Config("trials have different layouts".into()));
        }
    }
    let mut header = Vec::new();
    for c in first.columns {
        match c.role {
            Role::Key => header.push(c.name.to_string()),
            Role::Metric => {
                header.push(format!("{}_mean", c.name));
                header.push(format!("{}_ci", c.name));
            }
            Role::Category(levels) => {
                for l in levels {
                    header.push(format!("{}_{l}_mean", c.name));
                    header.push(format!("{}_{l}_ci", c.name));
                }
            }
        }
    }

    let summarize = |samples: &[f64], out: &mut Vec<f64>| -> Result<()> {
        if samples.len() < 2 {
            out.push(samples.iter().sum::<f64>() / samples.len() as f64);
            out.push(f64::NAN);
        } else if samples.iter().any(|v| !v.is_finite()) {
            out.push(f64::NAN);
            out.push(f64::NAN);
        } else {
            let (m, h) = confidence_interval(samples, CI_LEVEL)?;
            out.push(m);
            out.push(h);
        }
        Ok(())
    };

    let mut rows = Vec::with_capacity(first.rows.len());
    for r in 0..first.rows.len() {
        let mut out = Vec::with_capacity(header.len());
        for (k, c) in first.columns.iter().enumerate() {
            match c.role {
                Role::Key => {
                    let key = &first.rows[r][k];
                    if trials.iter().any(|t| &t.rows[r][k] != key) {
                        return Err(Error::Config(format!("trials disagree on {} at row {r}", c.name)));
                    }
                    out.push(key.number().unwrap_or(f64::NAN));
                }
                Role::Metric => {
                    let samples: Vec<f64> = trials
                        .iter()
                        .map(|t| t.rows[r][k].number().unwrap_or(f64::NAN))
                        .collect();
                    summarize(&samples, &mut out)?;
                }
                Role::Category(levels) => {
                    for l in levels {
                        let samples: Vec<f64> = trials
                            .iter()
                            .map(|t| f64::from(u8::from(t.rows[r][k] == Value::Text(l))))
                            .collect();
                        summarize(&samples, &mut out)?;
                    }
                }
            }
        }
        rows.push(out);
    }
    Ok(Aggregate {
        header,
        rows,
        trials: trials.len(),
    })
}

fn write_rows(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
