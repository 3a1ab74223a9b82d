use std::fmt;

use fairlatent::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Load,
    Split,
    Estimate,
    Latents,
    Train,
    Evaluate,
    Sweep,
    Ablate,
    Write,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Config => "config",
            Self::Load => "load",
            Self::Split => "split",
            Self::Estimate => "estimate",
            Self::Latents => "latents",
            Self::Train => "train",
            Self::Evaluate => "evaluate",
            Self::Sweep => "sweep",
            Self::Ablate => "ablate",
            Self::Write => "write",
        })
    }
}

/// A library error tagged with the pipeline stage it came from.
#[derive(Debug, thiserror::Error)]
#[error("{stage}: {source}")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

impl StageError {
    /// 2 for configuration, 3 for data, 4 for non-finite numerics, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match &self.source {
            Error::Config(_) => 2,
            Error::Parse { .. } | Error::Csv(_) | Error::Io { .. } | Error::Format(_) | Error::Metric(_) | Error::Fit(_) => 3,
            Error::NonFinite(_) => 4,
            Error::Dimension { .. } | Error::Contract(_) => 1,
        }
    }
}

pub trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, StageError>;
}

impl<T> AtStage<T> for fairlatent::Result<T> {
    fn at(self, stage: Stage) -> Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}
