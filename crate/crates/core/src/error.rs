use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("probability {0} is outside [0, 1]")]
    ProbabilityOutOfRange(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("block is empty")]
    EmptyBlock,

    #[error("force trace covers {available_s:.3} s before Go but the classification window needs {needed_s:.3} s")]
    TraceTooShort { available_s: f64, needed_s: f64 },

    #[error("block at p_r = {p_r} (round {round}, block {block}) did not reach {needed} successes within {max_len} trials")]
    UnfinishableBlock {
        round: u32,
        block: u32,
        p_r: f64,
        needed: u32,
        max_len: usize,
    },

    #[error("no trials")]
    NoTrials,

    #[error("cannot {operation} while the session is {phase}")]
    WrongPhase { operation: &'static str, phase: &'static str },

    #[error("line {line}: {message}")]
    MalformedLog { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
