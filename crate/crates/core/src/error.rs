use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("cannot schedule at {requested_us} us: clock is already at {now_us} us")]
    ScheduleInPast { now_us: u64, requested_us: u64 },

    #[error("time reversal: state last updated at {last_s} s, asked to advance to {requested_s} s")]
    TimeReversal { last_s: f64, requested_s: f64 },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParam { name: String, reason: String },

    #[error("empty population")]
    EmptyPopulation,

    #[error("target rate {target_hz} Hz is unreachable; achievable range is [{min_hz}, {max_hz}] Hz")]
    CalibrationFailed {
        target_hz: f64,
        min_hz: f64,
        max_hz: f64,
    },

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("snapshot edge sets differ: {0}")]
    EdgeMismatch(String),

    #[error("neuron {0} has no population label")]
    Unlabeled(usize),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl SimError {
    pub fn param(name: &str, reason: impl Into<String>) -> Self {
        SimError::InvalidParam {
            name: name.to_string(),
            reason: reason.into(),
        }
    }

    pub fn parse(line: usize, msg: impl Into<String>) -> Self {
        SimError::Parse {
            line,
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, SimError>;
