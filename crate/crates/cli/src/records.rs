//! Line-delimited structured records: the run log (`metrics.jsonl`) and
//! episode logs.
//!
//! Every line carries `schema_version`. Timestamps are a logical clock (the
//! record's position in its stream), which keeps reruns byte-identical.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use msgrpo::env::Variant;
use msgrpo::eval::EvalReport;
use msgrpo::tmsg::{EpisodeRecord, StepRecord, TerminalReason};
use msgrpo::trainer::IterationMetrics;
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum RecordError {
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
    #[error("line {line}: schema version {found}, expected {SCHEMA_VERSION}")]
    Version { line: usize, found: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    IterationMetrics,
    Episode,
    EvalReport,
    CheckpointRef,
}

/// One line of a run log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunLogRecord {
    pub schema_version: u32,
    pub kind: RecordKind,
    pub timestamp: u64,
    pub payload: serde_json::Value,
}

/// Typed view of a record payload.
#[derive(Clone, Debug, PartialEq)]
pub enum Entry {
    IterationMetrics(IterationMetrics),
    Episode(EpisodeSummary),
    EvalReport(EvalEntry),
    CheckpointRef(CheckpointRef),
}

impl Entry {
    pub fn kind(&self) -> RecordKind {
        match self {
            Entry::IterationMetrics(_) => RecordKind::IterationMetrics,
            Entry::Episode(_) => RecordKind::Episode,
            Entry::EvalReport(_) => RecordKind::EvalReport,
            Entry::CheckpointRef(_) => RecordKind::CheckpointRef,
        }
    }

    fn payload(&self) -> serde_json::Value {
        let v = match self {
            Entry::IterationMetrics(m) => serde_json::to_value(m),
            Entry::Episode(e) => serde_json::to_value(e),
            Entry::EvalReport(r) => serde_json::to_value(r),
            Entry::CheckpointRef(c) => serde_json::to_value(c),
        };
        v.expect("payloads serialize")
    }
}

impl RunLogRecord {
    pub fn entry(&self) -> Result<Entry, serde_json::Error> {
        let p = self.payload.clone();
        Ok(match self.kind {
            RecordKind::IterationMetrics => Entry::IterationMetrics(serde_json::from_value(p)?),
            RecordKind::Episode => Entry::Episode(serde_json::from_value(p)?),
            RecordKind::EvalReport => Entry::EvalReport(serde_json::from_value(p)?),
            RecordKind::CheckpointRef => Entry::CheckpointRef(serde_json::from_value(p)?),
        })
    }

    /// Parses and validates one line, payload included.
    pub fn parse_line(text: &str, line: usize) -> Result<(RunLogRecord, Entry), RecordError> {
        let invalid = |e: serde_json::Error| RecordError::Invalid {
            line,
            message: e.to_string(),
        };
        let rec: RunLogRecord = serde_json::from_str(text).map_err(invalid)?;
        if rec.schema_version != SCHEMA_VERSION {
            return Err(RecordError::Version {
                line,
                found: rec.schema_version,
            });
        }
        let entry = rec.entry().map_err(invalid)?;
        Ok((rec, entry))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeSummary {
    pub suite_id: String,
    pub checkpoint_id: String,
    pub seed: u64,
    pub terminal_reason: TerminalReason,
    pub steps: usize,
    pub invalid_steps: usize,
    pub total_env_reward: f64,
    pub composite_reward: f64,
}

impl EpisodeSummary {
    pub fn of(suite_id: &str, checkpoint_id: &str, e: &EpisodeRecord) -> Self {
        EpisodeSummary {
            suite_id: suite_id.to_string(),
            checkpoint_id: checkpoint_id.to_string(),
            seed: e.seed,
            terminal_reason: e.terminal_reason,
            steps: e.steps.len(),
            invalid_steps: e.invalid_steps(),
            total_env_reward: e.total_env_reward,
            composite_reward: e.composite_reward,
        }
    }
}

/// An evaluation report keyed by suite and checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalEntry {
    pub checkpoint_id: String,
    pub report: EvalReport,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointRole {
    /// Fixed reference policy of the KL term (the initial parameters).
    Reference,
    Policy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointRef {
    pub role: CheckpointRole,
    /// Completed training iterations.
    pub iteration: usize,
    /// Relative to the run directory.
    pub path: String,
    pub sha256: String,
}

/// Append-only writer; flushes after every record.
pub struct RunLog {
    out: BufWriter<File>,
    next: u64,
}

impl RunLog {
    pub fn create(path: &Path) -> std::io::Result<RunLog> {
        RunLog::append_to(path, 0)
    }

    /// Continues a log that already holds `existing` records.
    pub fn append_to(path: &Path, existing: u64) -> std::io::Result<RunLog> {
        let f = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(RunLog {
            out: BufWriter::new(f),
            next: existing,
        })
    }

    pub fn write(&mut self, entry: &Entry) -> std::io::Result<()> {
        let rec = RunLogRecord {
            schema_version: SCHEMA_VERSION,
            kind: entry.kind(),
            timestamp: self.next,
            payload: entry.payload(),
        };
        serde_json::to_writer(&mut self.out, &rec)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        self.next += 1;
        Ok(())
    }
}

/// Reads a whole run log. With `tolerate_torn_tail`, an unparsable final
/// line without a newline (an interrupted write) is dropped.
pub fn read_run_log(
    path: &Path,
    tolerate_torn_tail: bool,
) -> Result<Vec<(String, Entry)>, RecordError> {
    let text = std::fs::read_to_string(path)?;
    let torn = !text.is_empty() && !text.ends_with('\n');
    let lines: Vec<&str> = text.lines().collect();
    let mut out = Vec::with_capacity(lines.len());
    for (i, l) in lines.iter().enumerate() {
        match RunLogRecord::parse_line(l, i + 1) {
            Ok((rec, entry)) => {
                if rec.timestamp != i as u64 {
                    return Err(RecordError::Invalid {
                        line: i + 1,
                        message: format!("timestamp {} out of sequence", rec.timestamp),
                    });
                }
                out.push((l.to_string(), entry));
            }
            Err(_) if tolerate_torn_tail && torn && i + 1 == lines.len() => break,
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// One line of an episode log: each step, then a summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EpisodeLine {
    Step {
        schema_version: u32,
        variant: Variant,
        episode_seed: u64,
        index: usize,
        record: StepRecord,
    },
    Summary {
        schema_version: u32,
        variant: Variant,
        episode_seed: u64,
        terminal_reason: TerminalReason,
        steps: usize,
        total_env_reward: f64,
        composite_reward: f64,
    },
}

pub fn write_episode_log(
    out: &mut impl Write,
    variant: Variant,
    e: &EpisodeRecord,
) -> std::io::Result<()> {
    for (index, s) in e.steps.iter().enumerate() {
        let line = EpisodeLine::Step {
            schema_version: SCHEMA_VERSION,
            variant,
            episode_seed: e.seed,
            index,
            record: s.clone(),
        };
        serde_json::to_writer(&mut *out, &line)?;
        out.write_all(b"\n")?;
    }
    let summary = EpisodeLine::Summary {
        schema_version: SCHEMA_VERSION,
        variant,
        episode_seed: e.seed,
        terminal_reason: e.terminal_reason,
        steps: e.steps.len(),
        total_env_reward: e.total_env_reward,
        composite_reward: e.composite_reward,
    };
    serde_json::to_writer(&mut *out, &summary)?;
    out.write_all(b"\n")
}

/// An episode read back from a log.
#[derive(Clone, Debug, PartialEq)]
pub struct LoggedEpisode {
    pub variant: Variant,
    pub record: EpisodeRecord,
}

/// Reads every complete episode of an episode log, in file order.
pub fn read_episode_log(path: &Path) -> Result<Vec<LoggedEpisode>, RecordError> {
    let reader = BufReader::new(File::open(path)?);
    let mut episodes = Vec::new();
    let mut steps: Vec<StepRecord> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let n = i + 1;
        let parsed: EpisodeLine =
            serde_json::from_str(&line).map_err(|e| RecordError::Invalid {
                line: n,
                message: e.to_string(),
            })?;
        match parsed {
            EpisodeLine::Step {
                schema_version,
                index,
                record,
                ..
            } => {
                check_version(schema_version, n)?;
                if index != steps.len() {
                    return Err(RecordError::Invalid {
                        line: n,
                        message: format!("step {index} out of order"),
                    });
                }
                steps.push(record);
            }
            EpisodeLine::Summary {
                schema_version,
                variant,
                episode_seed,
                terminal_reason,
                steps: count,
                total_env_reward,
                composite_reward,
            } => {
                check_version(schema_version, n)?;
                if count != steps.len() {
                    return Err(RecordError::Invalid {
                        line: n,
                        message: format!("summary counts {count} steps, log has {}", steps.len()),
                    });
                }
                episodes.push(LoggedEpisode {
                    variant,
                    record: EpisodeRecord {
                        steps: std::mem::take(&mut steps),
                        seed: episode_seed,
                        terminal_reason,
                        composite_reward,
                        total_env_reward,
                    },
                });
            }
        }
    }
    Ok(episodes)
}

fn check_version(found: u32, line: usize) -> Result<(), RecordError> {
    if found == SCHEMA_VERSION {
        Ok(())
    } else {
        Err(RecordError::Version { line, found })
    }
}
