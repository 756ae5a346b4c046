use thiserror::Error;

/// Errors produced anywhere in the localization pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("no strictly feasible starting point: {0}")]
    InfeasibleStart(String),

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("cluster {cluster}: {source}")]
    Cluster {
        cluster: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Attach a 1-based cluster id to an error raised while processing that cluster.
    pub fn in_cluster(self, cluster: usize) -> Self {
        match self {
            e @ Error::Cluster { .. } => e,
            other => Error::Cluster {
                cluster,
                source: Box::new(other),
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
