//! Text, CSV and JSON renderings of result grids.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::report::{ExperimentReport, Method};
use crate::distill::SchedulerKind;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableLayout {
    /// NMSE and encoder complexity per compression ratio and method.
    Table1,
    /// NMSE and final codeword MSE per mimic-explore split.
    Table2,
    /// NMSE and both codeword MSEs per distillation scheduler.
    Table3,
}

impl std::str::FromStr for TableLayout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table1" => Ok(TableLayout::Table1),
            "table2" => Ok(TableLayout::Table2),
            "table3" => Ok(TableLayout::Table3),
            other => Err(Error::config("layout", format!("unknown table layout `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Text(String),
    Num { value: f64, decimals: usize },
    Missing,
}

impl Cell {
    fn num(value: Option<f64>, decimals: usize) -> Cell {
        value.map_or(Cell::Missing, |value| Cell::Num { value, decimals })
    }

    /// Text-table form; missing values print as an em dash.
    pub fn text(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Num { value, .. } if *value == f64::NEG_INFINITY => "-inf".into(),
            Cell::Num { value, decimals } => format!("{value:.decimals$}"),
            Cell::Missing => "\u{2014}".into(),
        }
    }

    /// CSV form; negative infinity becomes an empty field.
    pub fn csv(&self) -> String {
        match self {
            Cell::Num { value, .. } if !value.is_finite() => String::new(),
            other => other.text(),
        }
    }

    fn json(&self) -> Option<serde_json::Value> {
        match self {
            Cell::Text(s) => Some(s.clone().into()),
            Cell::Num { value, decimals } if value.is_finite() => {
                let rounded: f64 = format!("{value:.decimals$}").parse().expect("formatted float parses");
                Some(rounded.into())
            }
            Cell::Num { .. } => Some(serde_json::Value::Null),
            Cell::Missing => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedTable {
    pub layout: TableLayout,
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    /// Cells that had no backing report.
    pub missing: usize,
}

impl RenderedTable {
    pub fn text(&self) -> String {
        let texts: Vec<Vec<String>> = self.rows.iter().map(|r| r.iter().map(Cell::text).collect()).collect();
        let widths: Vec<usize> = (0..self.header.len())
            .map(|c| {
                texts.iter().map(|r| r[c].chars().count()).chain([self.header[c].chars().count()]).max().unwrap_or(0)
            })
            .collect();
        let line = |cells: &[String]| {
            let parts: Vec<String> = cells.iter().zip(&widths).map(|(s, &w)| format!("{s:>w$}")).collect();
            parts.join("  ").trim_end().to_string() + "\n"
        };
        let mut out = line(&self.header);
        let rule: usize = widths.iter().sum::<usize>() + 2 * widths.len().saturating_sub(1);
        out.push_str(&"-".repeat(rule));
        out.push('\n');
        for r in &texts {
            out.push_str(&line(r));
        }
        out
    }

    pub fn csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory csv");
        for r in &self.rows {
            w.write_record(r.iter().map(Cell::csv)).expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
    }

    /// One object per row, keyed by header; missing cells are omitted.
    pub fn json(&self) -> serde_json::Value {
        let rows = self
            .rows
            .iter()
            .map(|r| {
                let obj: serde_json::Map<String, serde_json::Value> = self
                    .header
                    .iter()
                    .zip(r)
                    .filter_map(|(h, c)| c.json().map(|v| (h.clone(), v)))
                    .collect();
                serde_json::Value::Object(obj)
            })
            .collect();
        serde_json::json!({ "layout": self.layout, "rows": serde_json::Value::Array(rows) })
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = xs.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Mean NMSE in dB over `reports` for one scenario; negative infinity only
/// when every run was exact.
fn mean_db(reports: &[&ExperimentReport], scenario: &str) -> Option<f64> {
    mean(reports.iter().filter_map(|r| r.nmse.get(scenario)).map(|n| n.db))
}

fn mean_opt(reports: &[&ExperimentReport], f: impl Fn(&ExperimentReport) -> Option<f64>) -> Option<f64> {
    mean(reports.iter().filter_map(|r| f(r)))
}

fn ratio_label(m: usize, real_len: usize) -> String {
    if m > 0 && real_len % m == 0 {
        format!("1/{}", real_len / m)
    } else {
        format!("{m}/{real_len}")
    }
}

/// Renders `reports` in the requested layout. Reports landing in the same
/// row (typically different seeds) are averaged.
pub fn render_table(reports: &[ExperimentReport], layout: TableLayout) -> RenderedTable {
    let scenarios: Vec<String> =
        reports.iter().flat_map(|r| r.nmse.keys().cloned()).collect::<BTreeSet<_>>().into_iter().collect();
    let mut header: Vec<String> = Vec::new();
    let mut rows: Vec<Vec<Cell>> = Vec::new();
    match layout {
        TableLayout::Table1 => {
            header.extend(["eta", "method", "mul", "params"].map(String::from));
            header.extend(scenarios.iter().map(|s| format!("NMSE {s}")));
            let mut groups: BTreeMap<(std::cmp::Reverse<usize>, Method), Vec<&ExperimentReport>> = BTreeMap::new();
            for r in reports {
                groups.entry((std::cmp::Reverse(r.codeword_size), r.method)).or_default().push(r);
            }
            for ((std::cmp::Reverse(m), method), rs) in groups {
                let real_len = rs[0].dims.real_len();
                let (muls, params) = rs[0].complexity.in_thousands();
                let mut row = vec![
                    Cell::Text(ratio_label(m, real_len)),
                    Cell::Text(method.label().into()),
                    Cell::Text(format!("{muls}K")),
                    Cell::Text(format!("{params}K")),
                ];
                row.extend(scenarios.iter().map(|s| Cell::num(mean_db(&rs, s), 2)));
                rows.push(row);
            }
        }
        TableLayout::Table2 => {
            header.push("Mimic-Explore".into());
            for s in &scenarios {
                header.push(format!("NMSE {s}"));
                header.push(format!("MSE_cm_end {s}"));
            }
            let mut groups: BTreeMap<(usize, usize), Vec<&ExperimentReport>> = BTreeMap::new();
            for r in reports.iter().filter(|r| matches!(r.method, Method::Plain | Method::CodewordMimic)) {
                let t_cm = if r.method == Method::CodewordMimic { r.plan.mimic_epochs } else { 0 };
                groups.entry((t_cm, r.plan.epochs)).or_default().push(r);
            }
            for ((t_cm, total), rs) in groups {
                let mut row = vec![Cell::Text(format!("{t_cm}-{}", total - t_cm))];
                for s in &scenarios {
                    let in_s: Vec<&ExperimentReport> = rs.iter().copied().filter(|r| r.nmse.contains_key(s)).collect();
                    row.push(Cell::num(mean_db(&in_s, s), 2));
                    row.push(Cell::num(mean_opt(&in_s, |r| r.mse_cm_end), 3));
                }
                rows.push(row);
            }
        }
        TableLayout::Table3 => {
            header.push("Scheduler".into());
            for s in &scenarios {
                header.push(format!("NMSE {s}"));
                header.push(format!("MSE_cm_mid {s}"));
                header.push(format!("MSE_cm_end {s}"));
            }
            for kind in SchedulerKind::ALL {
                let rs: Vec<&ExperimentReport> = reports
                    .iter()
                    .filter(|r| r.method == Method::CodewordMimic && r.plan.alpha_scheduler == kind)
                    .collect();
                if rs.is_empty() {
                    continue;
                }
                let mut row = vec![Cell::Text(kind.label().into())];
                for s in &scenarios {
                    let in_s: Vec<&ExperimentReport> = rs.iter().copied().filter(|r| r.nmse.contains_key(s)).collect();
                    row.push(Cell::num(mean_db(&in_s, s), 2));
                    row.push(Cell::num(mean_opt(&in_s, |r| r.mse_cm_mid), 3));
                    row.push(Cell::num(mean_opt(&in_s, |r| r.mse_cm_end), 3));
                }
                rows.push(row);
            }
        }
    }
    let missing = rows.iter().flatten().filter(|c| **c == Cell::Missing).count();
    if missing > 0 {
        log::warn!("{missing} table cells have no data");
    }
    RenderedTable { layout, header, rows, missing }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table(values: &[(f64, usize)]) -> RenderedTable {
        let header: Vec<String> = (0..values.len() + 1).map(|i| format!("c{i}")).collect();
        let mut row = vec![Cell::Text("row".into())];
        row.extend(values.iter().map(|&(value, decimals)| Cell::Num { value, decimals }));
        RenderedTable { layout: TableLayout::Table2, header, rows: vec![row], missing: 0 }
    }

    #[test]
    fn missing_and_infinite_cells() {
        assert_eq!(Cell::Missing.text(), "\u{2014}");
        let inf = Cell::Num { value: f64::NEG_INFINITY, decimals: 2 };
        assert_eq!(inf.text(), "-inf");
        assert_eq!(inf.csv(), "");
        assert_eq!(inf.json(), Some(serde_json::Value::Null));
        assert_eq!(Cell::Missing.json(), None);
    }

    #[test]
    fn unknown_layout_is_a_config_error() {
        assert!(matches!("table4".parse::<TableLayout>(), Err(Error::Config { .. })));
    }

    proptest! {
        #[test]
        fn csv_and_text_carry_the_same_values(
            values in proptest::collection::vec((-40.0f64..40.0, 2usize..4), 1..6),
        ) {
            let t = table(&values);
            let text = t.text();
            let text_cells: Vec<&str> = text.lines().nth(2).unwrap().split_whitespace().collect();
            let csv_text = t.csv();
            let mut reader = csv::Reader::from_reader(csv_text.as_bytes());
            let record = reader.records().next().unwrap().unwrap();
            let csv_cells: Vec<&str> = record.iter().collect();
            prop_assert_eq!(&text_cells, &csv_cells);
            for (cell, (v, d)) in csv_cells[1..].iter().zip(&values) {
                let parsed: f64 = cell.parse().unwrap();
                prop_assert!((parsed - v).abs() <= 0.5 * 10f64.powi(-(*d as i32)) + 1e-12);
            }
        }
    }
}
