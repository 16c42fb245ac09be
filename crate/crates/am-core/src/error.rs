use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("column {0} has zero norm")]
    ZeroNorm(usize),

    #[error("embedding set has fewer than {needed} classes (found {found})")]
    TooFewClasses { needed: usize, found: usize },

    #[error("class {class} has {available} examples, episode needs {needed}")]
    InsufficientExamples {
        class: usize,
        available: usize,
        needed: usize,
    },

    #[error("class {0} has no support examples")]
    EmptyClass(usize),

    #[error("non-finite affinity on edge ({0}, {1})")]
    NonFiniteAffinity(usize, usize),

    #[error("singular matrix (pivot {0})")]
    Singular(usize),

    #[error("non-finite value: {0}")]
    NonFinite(String),
}

impl Error {
    /// True for failures of the numerical pipeline rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteAffinity(..) | Error::Singular(_) | Error::NonFinite(_)
        )
    }
}
