use thiserror::Error;

use crate::data::DataError;
use crate::formula::FormulaError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Numerical model-fitting failures shared by every estimator in the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("{model}: design matrix is rank deficient; collinear columns: {}", columns.join(", "))]
    RankDeficient { model: &'static str, columns: Vec<String> },
    #[error(
        "{model}: no convergence after {iterations} iterations (gradient norm {gradient_norm:.3e}); trace: {trace}"
    )]
    NoConvergence {
        model: &'static str,
        iterations: usize,
        gradient_norm: f64,
        trace: String,
    },
    #[error("{model}: insufficient data: {reason}")]
    InsufficientData { model: &'static str, reason: String },
    #[error("{model}: {reason}")]
    Separation { model: &'static str, reason: String },
    #[error("{model}: degenerate outcome: {reason}")]
    Degenerate { model: &'static str, reason: String },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Formula(#[from] FormulaError),
    #[error(
        "positivity violation: censoring survival below {threshold} for records {}",
        format_records(records)
    )]
    Positivity { threshold: f64, records: Vec<usize> },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("uncovered covariate profile: {0}")]
    UncoveredProfile(String),
    #[error("bootstrap aborted: {failed} of {total} replicates failed (first: {first})")]
    BootstrapFailures { failed: usize, total: usize, first: String },
    #[error("simulation study aborted: {failed} of {total} replications failed (first: {first})")]
    StudyFailures { failed: usize, total: usize, first: String },
    #[error("singular bootstrap covariance for {0}; increase the number of replicates")]
    SingularCovariance(String),
    #[error("at lambda = {lambda}: {source}")]
    AtLambda {
        lambda: f64,
        #[source]
        source: Box<Error>,
    },
    #[error("model document: {0}")]
    Document(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn format_records(records: &[usize]) -> String {
    const SHOWN: usize = 10;
    let mut out: Vec<String> = records.iter().take(SHOWN).map(|r| r.to_string()).collect();
    if records.len() > SHOWN {
        out.push(format!("... ({} total)", records.len()));
    }
    out.join(", ")
}
