//! Survival-time and censoring-distribution models, and IPCW weights.

mod censoring;
mod ipcw;
mod weibull;

pub use censoring::{
    fit_censoring_cox, fit_censoring_km, CensoringKind, CensoringModel, CensoringStratum, StrataVariable,
};
pub use ipcw::{compute_ipcw, IpcwWeights, POSITIVITY_FLOOR};
pub use weibull::{fit_weibull, WeibullFit};
