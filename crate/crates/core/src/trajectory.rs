//! Named, time-indexed series recorded along a training or dynamics run.

use crate::error::{Error, Result};

/// Columns of equal length. The first column is the time index and must be
/// nondecreasing.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
}

impl TrajectoryLog {
    /// `names[0]` is the time column.
    pub fn new<S: AsRef<str>>(names: &[S]) -> Self {
        assert!(!names.is_empty(), "a trajectory log needs a time column");
        Self {
            names: names.iter().map(|s| s.as_ref().to_string()).collect(),
            columns: vec![Vec::new(); names.len()],
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.columns[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Append one row. Panics on a width mismatch or a time value that goes
    /// backwards, both of which are programming errors.
    pub fn push(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.names.len(), "row width");
        if let Some(last) = self.columns[0].last() {
            assert!(row[0] >= *last, "time index must be nondecreasing");
        }
        for (col, v) in self.columns.iter_mut().zip(row) {
            col.push(*v);
        }
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.columns[i].as_slice())
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    pub fn time(&self) -> &[f64] {
        &self.columns[0]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }

    pub fn last_row(&self) -> Option<Vec<f64>> {
        (!self.is_empty()).then(|| self.row(self.len() - 1))
    }

    /// Value of `name` in the last row.
    pub fn last(&self, name: &str) -> Result<f64> {
        self.column(name)?
            .last()
            .copied()
            .ok_or(Error::EmptyLog)
    }

    /// Index and value of the smallest entry of `name`.
    pub fn argmin(&self, name: &str) -> Result<(usize, f64)> {
        self.column(name)?
            .iter()
            .copied()
            .enumerate()
            .fold(None, |best: Option<(usize, f64)>, (i, v)| match best {
                Some((_, b)) if b <= v => best,
                _ => Some((i, v)),
            })
            .ok_or(Error::EmptyLog)
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.names.join(",");
        out.push('\n');
        for i in 0..self.len() {
            let row: Vec<String> = self.columns.iter().map(|c| c[i].to_string()).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or(Error::EmptyLog)?;
        let names: Vec<&str> = header.split(',').collect();
        let mut log = Self::new(&names);
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let row: Vec<f64> = line
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<core::result::Result<_, _>>()
                .map_err(|e| Error::Parse(e.to_string()))?;
            if row.len() != names.len() {
                return Err(Error::Parse(format!("expected {} fields", names.len())));
            }
            if log.time().last().is_some_and(|t| row[0] < *t) {
                return Err(Error::Parse("time column decreases".into()));
            }
            log.push(&row);
        }
        Ok(log)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn push_and_query() {
        let mut log = TrajectoryLog::new(&["t", "loss"]);
        assert!(log.is_empty());
        assert!(matches!(log.last("loss"), Err(Error::EmptyLog)));
        log.push(&[0.0, 3.0]);
        log.push(&[1.0, 1.0]);
        log.push(&[2.0, 2.0]);
        assert_eq!(log.len(), 3);
        assert_eq!(log.column("loss").unwrap(), &[3.0, 1.0, 2.0]);
        assert_eq!(log.argmin("loss").unwrap(), (1, 1.0));
        assert_eq!(log.last("t").unwrap(), 2.0);
        assert!(matches!(log.column("kl"), Err(Error::MissingColumn(_))));
    }

    #[test]
    #[should_panic(expected = "nondecreasing")]
    fn rejects_time_going_backwards() {
        let mut log = TrajectoryLog::new(&["t"]);
        log.push(&[1.0]);
        log.push(&[0.5]);
    }

    #[test]
    fn csv_round_trip() {
        let mut log = TrajectoryLog::new(&["t", "a", "b"]);
        log.push(&[0.0, 0.1, -2.0]);
        log.push(&[0.5, 1e-300, 4.0]);
        let csv = log.to_csv();
        assert!(csv.starts_with("t,a,b\n0,0.1,-2\n"));
        assert_eq!(TrajectoryLog::from_csv(&csv).unwrap(), log);
    }
}
