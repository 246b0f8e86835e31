//! Tabular AP / AOS summaries.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// One line of the results table: a metric at one IoU threshold for one
/// class, per difficulty level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub class: String,
    /// `AP3D`, `APBEV` or `AOS`.
    pub metric: String,
    pub iou: f64,
    /// Values in the order of the configured difficulties.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalTable {
    pub difficulties: Vec<String>,
    pub rows: Vec<EvalRow>,
}

impl EvalTable {
    /// `class,metric,iou,<difficulty…>` with six decimals.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,metric,iou");
        for d in &self.difficulties {
            out.push(',');
            out.push_str(d);
        }
        out.push('\n');
        for r in &self.rows {
            write!(out, "{},{},{:.2}", r.class, r.metric, r.iou).unwrap();
            for v in &r.values {
                write!(out, ",{v:.6}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn get(&self, class: &str, metric: &str, iou: f64) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.class == class && r.metric == metric && r.iou == iou)
    }
}
