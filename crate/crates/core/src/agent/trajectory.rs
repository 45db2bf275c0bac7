//! JSONL trajectory files: a header line, one line per step, a footer line.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{ExitStatus, Step};
use crate::model::CostLedger;
use crate::task::ChallengeInfo;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub challenge: ChallengeInfo,
    pub challenge_dir: String,
    pub config: Value,
    pub config_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Footer {
    pub exit_status: ExitStatus,
    pub ledger: CostLedger,
    pub steps: usize,
    /// The accepted flag, for submitted runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub submission: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
pub enum Record {
    Header(Header),
    Step(Step),
    Footer(Footer),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub header: Header,
    pub steps: Vec<Step>,
    /// Absent when the run was cut short before finishing.
    pub footer: Option<Footer>,
}

impl Trajectory {
    pub fn exit_status(&self) -> Option<ExitStatus> {
        self.footer.as_ref().map(|f| f.exit_status)
    }

    pub fn solved(&self) -> bool {
        self.exit_status() == Some(ExitStatus::Submitted)
    }

    pub fn dollars(&self) -> f64 {
        self.footer.as_ref().map_or(0.0, |f| f.ledger.dollars)
    }

    /// Reads a trajectory file. A missing footer is tolerated; a torn last
    /// line (from a killed writer) is dropped.
    pub fn read(path: &Path) -> std::io::Result<Trajectory> {
        let reader = BufReader::new(File::open(path)?);
        let mut header = None;
        let mut steps = Vec::new();
        let mut footer = None;
        let lines: Vec<String> = reader.lines().collect::<Result<_, _>>()?;
        let n = lines.len();
        for (i, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = match serde_json::from_str(line) {
                Ok(r) => r,
                Err(_) if i + 1 == n => break,
                Err(e) => {
                    return Err(std::io::Error::new(
                        std::io::ErrorKind::InvalidData,
                        format!("{}:{}: {e}", path.display(), i + 1),
                    ))
                }
            };
            match rec {
                Record::Header(h) => header = Some(h),
                Record::Step(s) => steps.push(s),
                Record::Footer(f) => footer = Some(f),
            }
        }
        let header = header.ok_or_else(|| {
            std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("{}: no header record", path.display()),
            )
        })?;
        Ok(Trajectory {
            header,
            steps,
            footer,
        })
    }
}

/// Appends records, flushing after each so a crash loses at most the
/// record being written.
pub struct TrajectoryWriter {
    out: Option<File>,
}

impl TrajectoryWriter {
    pub fn create(path: &Path) -> std::io::Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        Ok(TrajectoryWriter {
            out: Some(File::create(path)?),
        })
    }

    /// A writer that keeps nothing.
    pub fn discard() -> Self {
        TrajectoryWriter { out: None }
    }

    pub fn write(&mut self, record: &Record) -> std::io::Result<()> {
        let Some(f) = self.out.as_mut() else {
            return Ok(());
        };
        let mut line = serde_json::to_vec(record)?;
        line.push(b'\n');
        f.write_all(&line)?;
        f.flush()
    }
}
