//! Structured-POET: covariance and precision estimation for multi-level
//! factor models whose groups of assets are observed asynchronously.

pub mod covariance;
pub mod error;
pub mod estimate;
pub mod panel;
pub mod poet;
pub mod portfolio;
pub mod selection;
pub mod simulation;
pub mod spectral;
pub mod thresholding;

pub use covariance::SymmetricMatrix;
pub use error::{Error, ErrorKind, Result};
pub use estimate::{estimate, Method};
pub use panel::{GroupHierarchy, ReturnPanel};
pub use poet::{CovarianceDecomposition, EstimatorConfig};
