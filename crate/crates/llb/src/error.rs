use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("rejected input: {0}")]
    RejectedInput(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("memory ordering violation: frame {incoming} does not follow {last}")]
    MemoryOrdering { incoming: usize, last: usize },

    #[error("numeric fault in {0}: non-finite values")]
    NumericFault(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("data load error: {0}")]
    DataLoad(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
