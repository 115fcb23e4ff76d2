use nalgebra::DMatrix;
use serde::Serialize;

use crate::covariance::SymmetricMatrix;
use crate::error::{Error, Result};
use crate::spectral::{full_eigen, spectral_map, spectral_norm_symmetric};
use crate::thresholding::pd_floor;

/// A positive definite truth with its inverse and inverse square root.
#[derive(Debug, Clone)]
pub struct TruthReference {
    pub sigma: SymmetricMatrix,
    pub inverse: SymmetricMatrix,
    inv_sqrt: DMatrix<f64>,
}

impl TruthReference {
    pub fn new(truth: &SymmetricMatrix) -> Result<Self> {
        let eig = full_eigen(truth);
        let min = eig
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if !(min > 0.0) {
            return Err(Error::NotPositiveDefinite(format!(
                "true covariance has eigenvalue {min}"
            )));
        }
        Ok(TruthReference {
            sigma: truth.clone(),
            inverse: spectral_map(truth, |l| 1.0 / l),
            inv_sqrt: spectral_map(truth, |l| 1.0 / l.sqrt()).into_matrix(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorMetrics {
    /// `p^{-1/2} ||Sigma^{-1/2} S Sigma^{-1/2} - I||_F`.
    pub relative_frobenius: f64,
    /// Largest absolute entry of `S - Sigma`.
    pub max_norm: f64,
    /// Spectral norm of `S^{-1} - Sigma^{-1}`.
    pub inverse_spectral: f64,
    /// The estimate had eigenvalues below `1e-8 * trace / p` that were
    /// clipped before inversion.
    pub pd_repaired: bool,
}

pub fn error_metrics(estimate: &SymmetricMatrix, truth: &TruthReference) -> Result<ErrorMetrics> {
    let p = truth.sigma.dim();
    if estimate.dim() != p {
        return Err(Error::DimensionMismatch(format!(
            "estimate is {}x{0}, truth is {p}x{p}",
            estimate.dim()
        )));
    }
    let mut scaled = &truth.inv_sqrt * estimate.as_matrix() * &truth.inv_sqrt;
    for i in 0..p {
        scaled[(i, i)] -= 1.0;
    }
    let relative_frobenius = scaled.norm() / (p as f64).sqrt();
    let max_norm = (estimate.as_matrix() - truth.sigma.as_matrix()).amax();

    let floor = pd_floor(estimate);
    let eig = full_eigen(estimate);
    let pd_repaired = eig.eigenvalues.iter().any(|&l| l < floor);
    let inv = spectral_map(estimate, |l| 1.0 / l.max(floor));
    let inverse_spectral = spectral_norm_symmetric(&inv.sub(&truth.inverse));
    Ok(ErrorMetrics {
        relative_frobenius,
        max_norm,
        inverse_spectral,
        pd_repaired,
    })
}
