//! Crate-wide error type with process exit-code mapping.

use std::path::PathBuf;

use crate::syntax::{Diagnostic, ParseError};

/// Everything that can go wrong across parsing, data handling, inference,
/// learning, and evaluation.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] ParseError),

    #[error("program is invalid:\n{}", format_diagnostics(.0))]
    Invalid(Vec<Diagnostic>),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Malformed { path: PathBuf, message: String },

    #[error("{table}.csv row {row}: foreign key `{value}` has no row in {target}.csv")]
    DanglingForeignKey {
        table: String,
        row: usize,
        value: String,
        target: String,
    },

    #[error("attribute `{attr}` of `{key}` is observed and cannot be marked as a query cell")]
    CellAlreadyObserved { attr: String, key: String },

    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),

    #[error("mode declaration for `{target}` does not fit the schema: {reason}")]
    ModeType { target: String, reason: String },

    #[error("table `{table}` repeats the key `{key}`")]
    DuplicateKey { table: String, key: String },

    #[error("random variable `{rv}` has {count} distinct distribution definitions in one world")]
    ConflictingDefinition { rv: String, count: usize },

    #[error("goal `{goal}` reached with unbound variables where ground terms are required")]
    UnboundVariable { goal: String },

    #[error("random variable `{rv}` depends on its own value")]
    CyclicDependency { rv: String },

    #[error("proof search did not terminate within {0} steps")]
    NonTermination(usize),

    #[error("attribute `{target}` has no training examples")]
    NoExamples { target: String },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("type mismatch: {0}")]
    TypeMismatch(String),

    #[error("{what}: expected {expected}, found {found}")]
    ArityMismatch {
        what: String,
        expected: usize,
        found: usize,
    },

    #[error("all {n} sampled worlds are inconsistent with the evidence (total weight 0)")]
    ZeroEvidenceWeight { n: usize },

    #[error("{0} requires at least one input value")]
    EmptyInput(&'static str),

    #[error("all training values of the attribute are equal; range-normalized error is undefined")]
    ZeroRange,

    #[error("AUC needs at least two distinct true labels")]
    SingleClass,

    #[error("numerical failure: {0}")]
    Numeric(String),
}

fn format_diagnostics(diags: &[Diagnostic]) -> String {
    diags
        .iter()
        .map(|d| format!("  {}", d))
        .collect::<Vec<_>>()
        .join("\n")
}

impl Error {
    /// Opens `path` for reading with the path recorded in any failure.
    pub fn read_to_string(path: &std::path::Path) -> Result<String, Error> {
        std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// The process exit code this error maps to: 2 for data and validation
    /// problems, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ZeroEvidenceWeight { .. }
            | Error::EmptyInput(_)
            | Error::ZeroRange
            | Error::SingleClass
            | Error::Numeric(_) => 3,
            _ => 2,
        }
    }
}
