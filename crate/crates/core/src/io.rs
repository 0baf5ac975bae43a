//! JSON-lines trajectory files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::Trajectory;

/// One line of a trajectory file. Floats are written in shortest round-trip
/// form, so a read-back record is bit-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryRecord {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    #[serde(rename = "return")]
    pub episodic_return: f64,
    pub seed: u64,
    pub iteration: u64,
}

impl TrajectoryRecord {
    pub fn new(traj: &Trajectory, seed: u64, iteration: u64) -> Self {
        Self {
            states: traj.states.clone(),
            actions: traj.actions.clone(),
            episodic_return: traj.episodic_return,
            seed,
            iteration,
        }
    }

    pub fn to_trajectory(&self) -> Result<Trajectory> {
        Trajectory::new(self.states.clone(), self.actions.clone(), self.episodic_return)
    }
}

pub fn write_jsonl(path: &Path, records: &[TrajectoryRecord]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<TrajectoryRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TrajectoryRecord = serde_json::from_str(&line)
            .map_err(|e| Error::InvalidArgument(format!("{}:{}: {e}", path.display(), i + 1)))?;
        record.to_trajectory()?;
        records.push(record);
    }
    Ok(records)
}
