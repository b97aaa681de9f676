//! Metrics rows and their CSV form. Every writer flushes after each row so
//! interrupted runs lose at most the row in flight.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::theory::UpdateChoice;

use super::HarnessError;

pub const METRICS_HEADER: &str = "step,strategy,seed,e_dyn,e_pi,decision,ttc,sr,wall_ms";

/// One evaluation row of a finetuning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub strategy: String,
    pub seed: u64,
    pub e_dyn: f64,
    pub e_pi: f64,
    /// `model`, `policy`, or `none` when nothing was updated.
    pub decision: String,
    pub ttc: f64,
    pub sr: f64,
    /// Wall-clock duration. Written as 0 so identical runs produce
    /// byte-identical CSVs; the field stays for external tooling.
    pub wall_ms: u64,
}

impl MetricsRow {
    /// Human-readable decision label for a row.
    pub fn decision_label(choice: UpdateChoice, updated: bool) -> &'static str {
        if !updated {
            return "none";
        }
        match choice {
            UpdateChoice::ModelUpdate => "model",
            UpdateChoice::PolicyUpdate => "policy",
        }
    }

    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.step,
            self.strategy,
            self.seed,
            self.e_dyn,
            self.e_pi,
            self.decision,
            self.ttc,
            self.sr,
            self.wall_ms
        )
    }

    pub fn from_csv_line(line: &str) -> Result<Self, HarnessError> {
        let bad = || HarnessError::BadMetrics(line.to_string());
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 9 {
            return Err(bad());
        }
        Ok(Self {
            step: parts[0].parse().map_err(|_| bad())?,
            strategy: parts[1].to_string(),
            seed: parts[2].parse().map_err(|_| bad())?,
            e_dyn: parts[3].parse().map_err(|_| bad())?,
            e_pi: parts[4].parse().map_err(|_| bad())?,
            decision: parts[5].to_string(),
            ttc: parts[6].parse().map_err(|_| bad())?,
            sr: parts[7].parse().map_err(|_| bad())?,
            wall_ms: parts[8].parse().map_err(|_| bad())?,
        })
    }
}

/// Append-with-flush CSV writer; creates the file with a header when new.
#[derive(Debug)]
pub struct MetricsWriter {
    file: std::fs::File,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self, HarnessError> {
        let mut file = std::fs::File::create(path)?;
        writeln!(file, "{METRICS_HEADER}")?;
        file.flush()?;
        Ok(Self { file })
    }

    /// Open for appending; writes the header only if the file is new/empty.
    pub fn append(path: &Path) -> Result<Self, HarnessError> {
        let mut file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        if file.metadata()?.len() == 0 {
            writeln!(file, "{METRICS_HEADER}")?;
        }
        file.flush()?;
        Ok(Self { file })
    }

    pub fn write_row(&mut self, row: &MetricsRow) -> Result<(), HarnessError> {
        writeln!(self.file, "{}", row.to_csv_line())?;
        self.file.flush()?;
        Ok(())
    }
}

/// Parse a whole metrics CSV back into rows.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == METRICS_HEADER => {}
        Some(other) => return Err(HarnessError::BadMetrics(other.to_string())),
        None => return Err(HarnessError::EmptyMetrics),
    }
    lines.map(MetricsRow::from_csv_line).collect()
}
