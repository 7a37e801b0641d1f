//! Command-line driver for training runs, evaluation, episode playback and
//! Frozen Lake oracles.
//!
//! A training run lives in one directory:
//!
//! - `config.toml`: the resolved configuration,
//! - `metrics.jsonl`: the run log ([`records::RunLogRecord`] per line),
//! - `reference.ckpt`: the initial parameters, used as the KL reference,
//! - `checkpoints/ckpt-NNNNNN.ckpt`: parameters after NNNNNN iterations,
//! - `eval_table.txt`: initial versus final evaluation.

pub mod checkpoint;
pub mod cmd;
pub mod config;
pub mod records;

/// Bad invocation, configuration or missing input. Exit code 1.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_RUNTIME: u8 = 2;

/// Exit code for a failed command.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        EXIT_USAGE
    } else {
        EXIT_RUNTIME
    }
}
