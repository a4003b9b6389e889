//! Results table and its CSV / markdown renderings.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    /// Stage-1 model with private features zeroed.
    Zero,
    Sda,
    /// Average of every source head.
    AEns,
    /// Average of the k farthest sources' heads.
    LEns,
    /// Average of the k closest sources' heads.
    TEns,
    Toe,
}

impl Method {
    pub const ALL: [Method; 6] = [Method::Zero, Method::Sda, Method::AEns, Method::LEns, Method::TEns, Method::Toe];

    pub fn label(self) -> &'static str {
        match self {
            Method::Zero => "ZERO",
            Method::Sda => "SDA",
            Method::AEns => "A-Ens",
            Method::LEns => "L-Ens",
            Method::TEns => "T-Ens",
            Method::Toe => "TOE",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(Error::Config(format!("unknown report format '{other}' (expected csv or markdown)"))),
        }
    }
}

/// One row per target domain; cells are accuracies in `[0, 1]`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub methods: Vec<Method>,
    pub rows: Vec<ResultRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub target: String,
    pub cells: Vec<f64>,
}

impl ResultsTable {
    pub fn new(methods: Vec<Method>) -> Self {
        ResultsTable { methods, rows: Vec::new() }
    }

    pub fn push_row(&mut self, target: impl Into<String>, cells: Vec<f64>) -> Result<()> {
        ensure!(
            cells.len() == self.methods.len(),
            "{} cells for {} methods",
            cells.len(),
            self.methods.len()
        );
        self.rows.push(ResultRow {
            target: target.into(),
            cells,
        });
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty() || self.methods.is_empty()
    }

    pub fn get(&self, target: &str, method: Method) -> Option<f64> {
        let col = self.methods.iter().position(|&m| m == method)?;
        self.rows.iter().find(|r| r.target == target).map(|r| r.cells[col])
    }

    /// Column means over the target rows.
    pub fn averages(&self) -> Vec<f64> {
        let n = self.rows.len() as f64;
        (0..self.methods.len())
            .map(|c| self.rows.iter().map(|r| r.cells[c]).sum::<f64>() / n)
            .collect()
    }

    pub fn average_of(&self, method: Method) -> Option<f64> {
        let col = self.methods.iter().position(|&m| m == method)?;
        (!self.rows.is_empty()).then(|| self.averages()[col])
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("results serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let table: ResultsTable =
            serde_json::from_str(text).map_err(|e| Error::Validation(format!("malformed results table: {e}")))?;
        for r in &table.rows {
            ensure!(r.cells.len() == table.methods.len(), "row '{}' has the wrong number of cells", r.target);
        }
        Ok(table)
    }

    /// Accuracies as percentages with one decimal; the last row is the average.
    pub fn render(&self, format: ReportFormat) -> Result<String> {
        ensure!(!self.is_empty(), "cannot report an empty results table");
        let mut rows: Vec<(&str, &[f64])> = self.rows.iter().map(|r| (r.target.as_str(), r.cells.as_slice())).collect();
        let avg = self.averages();
        rows.push(("average", &avg));
        let pct = |x: f64| format!("{:.1}", 100.0 * x);
        let mut out = String::new();
        match format {
            ReportFormat::Csv => {
                let header: Vec<&str> = self.methods.iter().map(|m| m.label()).collect();
                let _ = writeln!(out, "target,{}", header.join(","));
                for (name, cells) in rows {
                    let cells: Vec<String> = cells.iter().map(|&x| pct(x)).collect();
                    let _ = writeln!(out, "{name},{}", cells.join(","));
                }
            }
            ReportFormat::Markdown => {
                let header: Vec<&str> = self.methods.iter().map(|m| m.label()).collect();
                let _ = writeln!(out, "| target | {} |", header.join(" | "));
                let _ = writeln!(out, "|---|{}", "---:|".repeat(self.methods.len()));
                for (name, cells) in rows {
                    // Ties are compared at display precision so equal-looking cells are all flagged.
                    let shown: Vec<String> = cells.iter().map(|&x| pct(x)).collect();
                    let best = cells.iter().map(|&x| (1000.0 * x).round() as i64).max().unwrap_or(0);
                    let marked: Vec<String> = cells
                        .iter()
                        .zip(&shown)
                        .map(|(&x, s)| if (1000.0 * x).round() as i64 == best { format!("**{s}**") } else { s.clone() })
                        .collect();
                    let _ = writeln!(out, "| {name} | {} |", marked.join(" | "));
                }
            }
        }
        Ok(out)
    }
}

/// Writes the table to `path` in the given format.
pub fn emit_report(table: &ResultsTable, format: ReportFormat, path: &Path) -> Result<()> {
    let body = table.render(format)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_by_two() -> ResultsTable {
        let mut t = ResultsTable::new(vec![Method::Zero, Method::Sda]);
        t.push_row("books", vec![0.80, 0.85]).unwrap();
        t.push_row("dvd", vec![0.78, 0.76]).unwrap();
        t
    }

    #[test]
    fn csv_has_header_rows_and_average() {
        let csv = two_by_two().render(ReportFormat::Csv).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines, ["target,ZERO,SDA", "books,80.0,85.0", "dvd,78.0,76.0", "average,79.0,80.5"]);
    }

    #[test]
    fn markdown_flags_row_maximum() {
        let md = two_by_two().render(ReportFormat::Markdown).unwrap();
        assert!(md.contains("| books | 80.0 | **85.0** |"), "{md}");
        assert!(md.contains("| dvd | **78.0** | 76.0 |"), "{md}");
        assert!(md.contains("| average | 79.0 | **80.5** |"), "{md}");
    }

    #[test]
    fn empty_table_is_validation_error() {
        let t = ResultsTable::new(vec![Method::Zero]);
        assert!(matches!(t.render(ReportFormat::Csv), Err(Error::Validation(_))));
    }

    #[test]
    fn json_round_trip_and_emit() {
        let t = two_by_two();
        assert_eq!(ResultsTable::from_json(&t.to_json()).unwrap(), t);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/report.md");
        emit_report(&t, ReportFormat::Markdown, &path).unwrap();
        assert!(std::fs::read_to_string(path).unwrap().starts_with("| target |"));
    }

    proptest! {
        #[test]
        fn average_row_is_column_mean(cells in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 3), 1..8)) {
            let mut t = ResultsTable::new(vec![Method::Zero, Method::AEns, Method::Toe]);
            for (i, row) in cells.iter().enumerate() {
                t.push_row(format!("d{i}"), row.clone()).unwrap();
            }
            let avg = t.averages();
            for c in 0..3 {
                let mean = cells.iter().map(|r| r[c]).sum::<f64>() / cells.len() as f64;
                prop_assert!((avg[c] - mean).abs() <= 1e-9);
            }
        }
    }
}
