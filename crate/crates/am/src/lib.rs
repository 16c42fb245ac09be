//! File formats, the episodic evaluation harness and the configuration
//! layer behind the `am` binary.

pub mod ameb;
pub mod config;
pub mod harness;

use thiserror::Error;

pub use ameb::{load_embeddings, save_embeddings, AmebError};
pub use harness::{run_eval, EvalReport};

#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numerical(String),
    #[error(transparent)]
    Ameb(#[from] AmebError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Core(#[from] am_core::Error),
}

impl Error {
    /// 1 for usage errors, 2 for bad or unreadable data, 3 for numerical
    /// breakdowns.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Core(am_core::Error::Config(_)) => 1,
            Error::Numerical(_) => 3,
            Error::Core(e) if e.is_numerical() => 3,
            _ => 2,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(Error::Usage("x".into()).exit_code(), 1);
        assert_eq!(Error::Core(am_core::Error::Config("x".into())).exit_code(), 1);
        assert_eq!(Error::Ameb(AmebError::BadMagic(*b"XXXX")).exit_code(), 2);
        assert_eq!(Error::Core(am_core::Error::EmptyClass(0)).exit_code(), 2);
        assert_eq!(Error::Core(am_core::Error::Singular(3)).exit_code(), 3);
        assert_eq!(Error::Numerical("x".into()).exit_code(), 3);
    }
}
