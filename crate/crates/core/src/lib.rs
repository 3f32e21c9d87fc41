//! Wasserstein least squares: linear regression of probability measures on
//! Euclidean covariates, where each response is a distribution and the fitted
//! object is the law of a random coefficient matrix.

pub mod deform;
pub mod design;
pub mod error;
pub mod frechet;
pub mod gaussian;
pub mod inference;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod oracle;
pub mod particle;
pub mod report;
pub mod rng;
pub mod transport;

pub use design::Design;
pub use error::{Error, Result};
pub use report::{FitReport, TracePoint};
