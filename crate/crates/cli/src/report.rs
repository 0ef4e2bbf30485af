//! Sweep reports and their CSV form.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// One sweep cell for one seed. Metrics are empty when the cell failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub seed: u64,
    pub observed: usize,
    pub patterns: usize,
    pub lambda: f64,
    pub rmse_kpa: Option<f64>,
    pub max_error_kpa: Option<f64>,
    pub evaluations: usize,
    pub wall_time_s: f64,
    /// `ok`, or `failed: <reason>`.
    pub status: String,
}

impl ReportRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<ReportRow>,
}

pub const CSV_HEADER: [&str; 9] = [
    "seed",
    "observed",
    "patterns",
    "lambda",
    "rmse_kpa",
    "max_error_kpa",
    "evaluations",
    "wall_time_s",
    "status",
];

impl SweepReport {
    pub fn write_csv<W: Write>(&self, w: W) -> CliResult<()> {
        let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        out.write_record(CSV_HEADER)?;
        for row in &self.rows {
            out.serialize(row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn read_csv<R: Read>(r: R) -> CliResult<Self> {
        let mut reader = csv::Reader::from_reader(r);
        let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        if header != CSV_HEADER {
            return Err(CliError::Config(format!("unexpected report header {header:?}")));
        }
        let rows = reader.deserialize().collect::<Result<Vec<ReportRow>, _>>()?;
        Ok(Self { rows })
    }

    /// Median RMSE over the successful rows matching `pick`.
    pub fn median_rmse(&self, pick: impl Fn(&ReportRow) -> bool) -> Option<f64> {
        let mut v: Vec<f64> = self.rows.iter().filter(|r| pick(r)).filter_map(|r| r.rmse_kpa).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let n = v.len();
        Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
    }
}

pub fn report_csv(report: &SweepReport, path: impl AsRef<Path>) -> CliResult<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    report.write_csv(std::io::BufWriter::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(seed: u64, rmse: Option<f64>) -> ReportRow {
        ReportRow {
            seed,
            observed: 15,
            patterns: 2,
            lambda: 0.01,
            rmse_kpa: rmse,
            max_error_kpa: rmse.map(|r| 3.0 * r),
            evaluations: 1000 + seed as usize,
            wall_time_s: 0.25,
            status: if rmse.is_some() { "ok".into() } else { "failed: singular".into() },
        }
    }

    #[test]
    fn empty_report_is_header_only() {
        let text = SweepReport::default().to_csv_string();
        assert_eq!(text, format!("{}\n", CSV_HEADER.join(",")));
        assert!(SweepReport::read_csv(text.as_bytes()).unwrap().rows.is_empty());
    }

    #[test]
    fn round_trip_keeps_values() {
        let report = SweepReport {
            rows: (0..24).map(|s| row(s, (s % 5 != 0).then(|| 1.0 / (s as f64 + 3.0)))).collect(),
        };
        let text = report.to_csv_string();
        assert_eq!(text.lines().count(), 25);
        let back = SweepReport::read_csv(text.as_bytes()).unwrap();
        assert_eq!(back, report);
        let sum = |r: &SweepReport| r.rows.iter().filter_map(|r| r.rmse_kpa).sum::<f64>();
        assert_eq!(sum(&back), sum(&report));
    }

    #[test]
    fn medians() {
        let report = SweepReport {
            rows: vec![row(0, Some(3.0)), row(1, Some(1.0)), row(2, None), row(3, Some(2.0)), row(4, Some(10.0))],
        };
        assert_eq!(report.median_rmse(|_| true), Some(2.5));
        assert_eq!(report.median_rmse(|r| r.seed < 2), Some(2.0));
        assert_eq!(report.median_rmse(|r| r.seed == 2), None);
    }
}
