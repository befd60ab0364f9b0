//! Per-evaluation CSV rows.
//!
//! Columns, in order: `arm, seed, step, alive_ratio, test_accuracy, train_loss,
//! rescued_count, optimizer_steps, wall_time, status`. `train_loss` is empty at
//! step 0 and whenever no update ran. `status` is `ok`, or `error: <message>`
//! on the single row written when a run fails. `wall_time` (seconds) is the
//! only column outside the determinism guarantee.

use std::fs::{self, File};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::HarnessError;

pub const COLUMNS: [&str; 10] = [
    "arm",
    "seed",
    "step",
    "alive_ratio",
    "test_accuracy",
    "train_loss",
    "rescued_count",
    "optimizer_steps",
    "wall_time",
    "status",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub arm: String,
    pub seed: u64,
    pub step: usize,
    pub alive_ratio: f64,
    pub test_accuracy: Option<f64>,
    pub train_loss: Option<f64>,
    pub rescued_count: usize,
    pub optimizer_steps: u64,
    pub wall_time: f64,
    pub status: String,
}

impl ExperimentRecord {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

/// Appends records to a CSV file, flushing after every row.
pub struct RecordWriter {
    inner: csv::Writer<File>,
    path: std::path::PathBuf,
}

impl RecordWriter {
    pub fn create(path: &Path) -> Result<Self, HarnessError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(HarnessError::io(dir))?;
        }
        let file = File::create(path).map_err(HarnessError::io(path))?;
        let mut inner = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        inner.write_record(COLUMNS).map_err(HarnessError::csv(path))?;
        inner.flush().map_err(HarnessError::io(path))?;
        Ok(Self {
            inner,
            path: path.to_path_buf(),
        })
    }

    pub fn append(&mut self, record: &ExperimentRecord) -> Result<(), HarnessError> {
        self.inner
            .serialize(record)
            .map_err(HarnessError::csv(&self.path))?;
        self.inner.flush().map_err(HarnessError::io(&self.path))
    }
}

pub fn read_records(path: &Path) -> Result<Vec<ExperimentRecord>, HarnessError> {
    let mut reader = csv::Reader::from_path(path).map_err(HarnessError::csv(path))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(HarnessError::csv(path))?
        .iter()
        .map(str::to_string)
        .collect();
    if header != COLUMNS {
        return Err(HarnessError::Usage(format!(
            "{}: unexpected CSV header {header:?}",
            path.display()
        )));
    }
    reader
        .deserialize()
        .collect::<Result<Vec<ExperimentRecord>, _>>()
        .map_err(HarnessError::csv(path))
}

/// CSV text with the `wall_time` column blanked, for determinism checks.
pub fn without_wall_time(csv_text: &str) -> String {
    let col = COLUMNS.iter().position(|&c| c == "wall_time").unwrap();
    csv_text
        .lines()
        .map(|line| {
            let mut fields: Vec<&str> = line.split(',').collect();
            if fields.len() > col {
                fields[col] = "";
            }
            fields.join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}
