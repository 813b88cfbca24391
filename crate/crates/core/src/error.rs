use crate::attributes::AttributeError;
use crate::balancer::BalanceError;
use crate::bootstrap::BootstrapError;
use crate::config::ConfigError;
use crate::corpus::{CorpusError, PayloadError};
use crate::gapstats::GapError;
use crate::scoring::ScoringError;
use crate::synthgen::SynthError;

/// Any error raised by the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Payload(#[from] PayloadError),
    #[error(transparent)]
    Attributes(#[from] AttributeError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Gap(#[from] GapError),
    #[error(transparent)]
    Balance(#[from] BalanceError),
    #[error(transparent)]
    Bootstrap(#[from] BootstrapError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures caused by the input data rather than a defect or
    /// the environment.
    pub fn is_data_error(&self) -> bool {
        !matches!(
            self,
            Error::Io(_)
                | Error::Attributes(AttributeError::Io(_))
                | Error::Scoring(ScoringError::Io(_))
                | Error::Balance(BalanceError::Io(_))
        )
    }
}
