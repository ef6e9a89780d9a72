use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A numeric argument is outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("scores are not a probability distribution: {0}")]
    NotAProbability(String),

    /// A per-record failure, tagged with the record position (0-based) and id.
    #[error("record {index}{}: {source}", id.as_deref().map(|s| format!(" (id {s})")).unwrap_or_default())]
    Record {
        index: usize,
        id: Option<String>,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn at_record(self, index: usize, id: Option<&str>) -> Self {
        Error::Record {
            index,
            id: id.map(str::to_owned),
            source: Box::new(self),
        }
    }
}
