//! Evaluation summaries and their CSV forms.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::vpt::TrainableCount;

/// `confusion[true][predicted]` counts.
pub fn confusion_matrix(pred: &[usize], labels: &[usize], classes: usize) -> Result<Vec<Vec<usize>>> {
    let mut m = vec![vec![0; classes]; classes];
    for (&p, &y) in pred.iter().zip(labels) {
        if y >= classes || p >= classes {
            return Err(Error::LabelOutOfRange { label: y.max(p), classes });
        }
        m[y][p] += 1;
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub method: String,
    pub accuracy: f64,
    pub per_class: Vec<f64>,
    pub confusion: Vec<Vec<usize>>,
    pub trainable: TrainableCount,
}

impl MetricsReport {
    pub fn new(method: impl Into<String>, pred: &[usize], labels: &[usize], classes: usize, trainable: TrainableCount) -> Result<Self> {
        let confusion = confusion_matrix(pred, labels, classes)?;
        let total: usize = confusion.iter().flatten().sum();
        let correct: usize = (0..classes).map(|k| confusion[k][k]).sum();
        let per_class = confusion
            .iter()
            .enumerate()
            .map(|(k, row)| {
                let n: usize = row.iter().sum();
                if n == 0 { 0.0 } else { row[k] as f64 / n as f64 }
            })
            .collect();
        let accuracy = if total == 0 { 0.0 } else { correct as f64 / total as f64 };
        Ok(Self { method: method.into(), accuracy, per_class, confusion, trainable })
    }

    pub fn total(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }

    pub fn correct(&self) -> usize {
        (0..self.confusion.len()).map(|k| self.confusion[k][k]).sum()
    }

    /// `metric,value` rows; contains nothing time-dependent, so repeated
    /// evaluations produce identical bytes.
    pub fn metrics_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        let t = &self.trainable;
        let _ = writeln!(s, "method,{}", self.method);
        let _ = writeln!(s, "accuracy,{}", self.accuracy);
        let _ = writeln!(s, "correct,{}", self.correct());
        let _ = writeln!(s, "total,{}", self.total());
        for (k, a) in self.per_class.iter().enumerate() {
            let _ = writeln!(s, "class_{k}_accuracy,{a}");
        }
        let _ = writeln!(s, "trainable_params,{}", t.trainable());
        let _ = writeln!(s, "prompt_params,{}", t.prompt);
        let _ = writeln!(s, "head_params,{}", t.head);
        let _ = writeln!(s, "tuned_params,{}", t.tuned());
        let _ = writeln!(s, "model_params,{}", t.model_total);
        let _ = writeln!(s, "tuned_fraction,{}", t.fraction());
        s
    }

    /// Header `true\predicted,0,1,…`, one row per true class.
    pub fn confusion_csv(&self) -> String {
        let k = self.confusion.len();
        let mut s = String::from("true\\predicted");
        for c in 0..k {
            let _ = write!(s, ",{c}");
        }
        s.push('\n');
        for (i, row) in self.confusion.iter().enumerate() {
            let _ = write!(s, "{i}");
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }
}

/// Reads a `metric,value` file into a map.
pub fn parse_metric_rows(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .skip(1)
        .filter_map(|l| l.split_once(','))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

/// Reads a confusion CSV back into counts.
pub fn parse_confusion(text: &str) -> Option<Vec<Vec<usize>>> {
    text.lines().skip(1).map(|l| l.split(',').skip(1).map(|v| v.parse().ok()).collect()).collect()
}

/// `0.322%`-style rendering of a fraction with three significant digits.
pub fn format_percent(fraction: f64) -> String {
    let pct = fraction * 100.0;
    if pct >= 100.0 - 1e-9 {
        return "100%".into();
    }
    if pct == 0.0 {
        return "0%".into();
    }
    let decimals = (2 - pct.abs().log10().floor() as i32).max(0) as usize;
    format!("{pct:.decimals$}%")
}
