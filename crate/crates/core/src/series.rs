//! Recorded observables: CSV body plus a JSON metadata sidecar.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TimeSeries {
    pub columns: Vec<String>,
    pub steps: Vec<u64>,
    pub times: Vec<f64>,
    /// One row per sample, aligned with `columns`.
    pub rows: Vec<Vec<f64>>,
    pub metadata: serde_json::Value,
}

impl TimeSeries {
    pub fn new(columns: Vec<String>) -> Self {
        TimeSeries { columns, metadata: serde_json::json!({}), ..Default::default() }
    }

    pub fn push(&mut self, step: u64, t: f64, values: Vec<f64>) {
        assert_eq!(values.len(), self.columns.len(), "row width");
        self.steps.push(step);
        self.times.push(t);
        self.rows.push(values);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let i = self.index(name).ok_or_else(|| Error::Analysis(format!("no column {name}")))?;
        Ok(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,t");
        for c in &self.columns {
            s.push(',');
            s.push_str(c);
        }
        s.push('\n');
        for ((step, t), row) in self.steps.iter().zip(&self.times).zip(&self.rows) {
            let _ = write!(s, "{step},{t:.11e}");
            for v in row {
                let _ = write!(s, ",{v:.11e}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Parse("empty CSV".into()))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 2 || cols[0] != "step" || cols[1] != "t" {
            return Err(Error::Parse("CSV header must start with step,t".into()));
        }
        let mut ts = TimeSeries::new(cols[2..].iter().map(|c| c.to_string()).collect());
        for (n, line) in lines.enumerate() {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != cols.len() {
                return Err(Error::Parse(format!("row {} has {} fields", n + 1, f.len())));
            }
            let bad = |e: &dyn std::fmt::Display| Error::Parse(format!("row {}: {e}", n + 1));
            let step = f[0].parse::<u64>().map_err(|e| bad(&e))?;
            let t = f[1].parse::<f64>().map_err(|e| bad(&e))?;
            let vals = f[2..].iter().map(|v| v.parse::<f64>().map_err(|e| bad(&e))).collect::<Result<Vec<_>>>()?;
            ts.push(step, t, vals);
        }
        Ok(ts)
    }

    /// Writes `<stem>.csv` and `<stem>.json` in `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{stem}.csv")), self.to_csv())?;
        let meta = serde_json::to_string_pretty(&self.metadata).map_err(|e| Error::Parse(e.to_string()))?;
        std::fs::write(dir.join(format!("{stem}.json")), meta)?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }

    /// Largest absolute difference per shared column over aligned samples.
    pub fn max_deviation(&self, other: &TimeSeries, columns: &[&str]) -> Result<Vec<f64>> {
        if self.len() != other.len() || self.times.iter().zip(&other.times).any(|(a, b)| (a - b).abs() > 1e-9 * (1.0 + a.abs())) {
            return Err(Error::Analysis("time grids differ".into()));
        }
        columns
            .iter()
            .map(|c| {
                let (a, b) = (self.column(c)?, other.column(c)?);
                Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let mut ts = TimeSeries::new(vec!["G_0".into(), "nd_0".into()]);
        ts.push(0, 0.0, vec![1.0, 0.0]);
        ts.push(5, 1.25, vec![0.123456789012345, 1e-20]);
        let back = TimeSeries::from_csv(&ts.to_csv()).unwrap();
        assert_eq!(back.columns, ts.columns);
        assert_eq!(back.steps, ts.steps);
        assert!((back.rows[1][0] - 0.123456789012345).abs() < 1e-12);
    }

    #[test]
    fn header_only() {
        let ts = TimeSeries::new(vec![]);
        assert_eq!(ts.to_csv(), "step,t\n");
    }

    #[test]
    fn misaligned_grids() {
        let mut a = TimeSeries::new(vec!["x".into()]);
        a.push(0, 0.0, vec![0.0]);
        let mut b = a.clone();
        b.times[0] = 1.0;
        assert!(a.max_deviation(&b, &["x"]).is_err());
    }
}
