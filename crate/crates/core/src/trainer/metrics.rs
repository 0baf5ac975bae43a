use std::fs::{File, OpenOptions};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const METRICS_COLUMNS: [&str; 7] = [
    "iteration",
    "env_steps",
    "return_mean",
    "return_std",
    "regression_loss",
    "residual_abs_mean",
    "grad_variance",
];

/// One row per training iteration.
///
/// `regression_loss` is the mean squared composite error per buffered
/// trajectory (normalized units) on the last regression pass; it is empty
/// for runs without a reward model. `grad_variance` is the mean over policy
/// parameters of the across-trajectory variance of per-trajectory gradient
/// samples of the estimator in use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iteration: u64,
    pub env_steps: u64,
    pub return_mean: f64,
    pub return_std: f64,
    pub regression_loss: Option<f64>,
    pub residual_abs_mean: f64,
    pub grad_variance: f64,
}

/// Append-only CSV writer; every row is flushed so partial runs stay readable.
pub struct MetricsSink {
    writer: csv::Writer<File>,
}

impl MetricsSink {
    pub fn create(path: &Path) -> Result<Self> {
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
        writer.write_record(METRICS_COLUMNS)?;
        writer.flush()?;
        Ok(Self { writer })
    }

    /// Opens an existing metrics file for appending after checking its header.
    pub fn append_to(path: &Path) -> Result<Self> {
        let header = read(path)?;
        drop(header);
        let file = OpenOptions::new().append(true).open(path)?;
        let writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        Ok(Self { writer })
    }

    pub fn append(&mut self, row: &MetricsRow) -> Result<()> {
        self.writer.serialize(row)?;
        self.writer.flush()?;
        Ok(())
    }
}

pub fn read(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != METRICS_COLUMNS {
        return Err(Error::InvalidArgument(format!("{}: unexpected metrics columns {header:?}", path.display())));
    }
    reader.deserialize().map(|r| r.map_err(Error::from)).collect()
}

impl MetricsRow {
    pub fn read_csv(path: &Path) -> Result<Vec<MetricsRow>> {
        read(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_with_fixed_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let rows = vec![
            MetricsRow {
                iteration: 0,
                env_steps: 2048,
                return_mean: 0.25,
                return_std: 0.5,
                regression_loss: Some(1.5e-3),
                residual_abs_mean: 0.1,
                grad_variance: 3.0,
            },
            MetricsRow {
                iteration: 1,
                env_steps: 4100,
                return_mean: -1.0,
                return_std: 0.0,
                regression_loss: None,
                residual_abs_mean: 0.0,
                grad_variance: 0.0,
            },
        ];
        let mut sink = MetricsSink::create(&path).unwrap();
        sink.append(&rows[0]).unwrap();
        drop(sink);
        let mut sink = MetricsSink::append_to(&path).unwrap();
        sink.append(&rows[1]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), METRICS_COLUMNS.join(","));
        assert_eq!(MetricsRow::read_csv(&path).unwrap(), rows);
    }
}
