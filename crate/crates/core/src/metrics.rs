//! Average accuracy and forgetting over a lower-triangular accuracy matrix.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("matrix has {have} rows, {need} required")]
    IncompleteMatrix { have: usize, need: usize },
    #[error("row {row} must have {expected} entries, got {got}")]
    BadRow {
        row: usize,
        expected: usize,
        got: usize,
    },
    #[error("accuracy {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("empty list")]
    EmptyList,
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// `rows[n][i]`: accuracy on task `i` after training task `n` (0-based, `i ≤ n`).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalMatrix {
    rows: Vec<Vec<f64>>,
}

impl EvalMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut m = Self::new();
        for r in rows {
            m.push_row(r)?;
        }
        Ok(m)
    }

    /// The next row must have exactly one more entry than the last.
    pub fn push_row(&mut self, row: Vec<f64>) -> Result<()> {
        let expected = self.rows.len() + 1;
        if row.len() != expected {
            return Err(MetricsError::BadRow {
                row: self.rows.len(),
                expected,
                got: row.len(),
            });
        }
        if let Some(&bad) = row.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(MetricsError::OutOfRange(bad));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, n: usize, i: usize) -> Option<f64> {
        self.rows.get(n).and_then(|r| r.get(i)).copied()
    }

    /// One line per row, comma separated, shortest round-trip formatting.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|a| format!("{a}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

fn need(m: &EvalMatrix, t: usize) -> Result<()> {
    if t == 0 || m.rows.len() < t {
        return Err(MetricsError::IncompleteMatrix {
            have: m.rows.len(),
            need: t.max(1),
        });
    }
    Ok(())
}

/// Mean of row `t` (1-based task count).
pub fn average_accuracy(m: &EvalMatrix, t: usize) -> Result<f64> {
    need(m, t)?;
    let row = &m.rows[t - 1];
    Ok(row.iter().sum::<f64>() / t as f64)
}

/// Mean over the first `t − 1` tasks of the largest drop from any earlier
/// row to row `t`. Zero when `t = 1`; negative values are kept.
pub fn forgetting(m: &EvalMatrix, t: usize) -> Result<f64> {
    need(m, t)?;
    if t == 1 {
        return Ok(0.0);
    }
    let last = &m.rows[t - 1];
    let total: f64 = (0..t - 1)
        .map(|i| {
            (i..t - 1)
                .map(|k| m.rows[k][i] - last[i])
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .sum();
    Ok(total / (t - 1) as f64)
}

pub fn scenario_average(avg_accs: &[f64]) -> Result<f64> {
    if avg_accs.is_empty() {
        return Err(MetricsError::EmptyList);
    }
    Ok(avg_accs.iter().sum::<f64>() / avg_accs.len() as f64)
}
