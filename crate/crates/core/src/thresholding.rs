//! Adaptive, entry-dependent thresholding of idiosyncratic covariances.
//!
//! Off-diagonal entry `(i, j)` is compared against
//! `tau_ij = tau * sqrt(s_ii * s_jj)` and either kept (hard) or shrunk towards
//! zero by `tau_ij` (soft). The diagonal is never touched. With a sector mask
//! the threshold is bypassed: entries across sectors are zeroed and entries
//! within a sector are kept as they are.

use serde::{Deserialize, Serialize};

use crate::covariance::SymmetricMatrix;
use crate::error::{Error, Result};
use crate::spectral::min_eigenvalue;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Shrinkage {
    Hard,
    #[default]
    Soft,
}

impl Shrinkage {
    fn apply(self, x: f64, threshold: f64) -> f64 {
        if x.abs() < threshold {
            return 0.0;
        }
        match self {
            Shrinkage::Hard => x,
            Shrinkage::Soft => x.signum() * (x.abs() - threshold).max(0.0),
        }
    }
}

/// Threshold constant: explicit, or chosen by [`select_tau`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Tau {
    Fixed(f64),
    #[default]
    Auto,
}

impl Serialize for Tau {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Tau::Fixed(v) => s.serialize_f64(*v),
            Tau::Auto => s.serialize_str("auto"),
        }
    }
}

impl<'de> Deserialize<'de> for Tau {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) if v >= 0.0 && v.is_finite() => Ok(Tau::Fixed(v)),
            Raw::Num(v) => Err(serde::de::Error::custom(format!(
                "tau must be >= 0, got {v}"
            ))),
            Raw::Str(s) if s == "auto" => Ok(Tau::Auto),
            Raw::Str(s) => s
                .parse::<f64>()
                .ok()
                .filter(|v| *v >= 0.0 && v.is_finite())
                .map(Tau::Fixed)
                .ok_or_else(|| serde::de::Error::custom(format!("invalid tau `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThresholdPolicy {
    pub shrinkage: Shrinkage,
    pub tau: Tau,
    /// Zero out cross-sector entries and keep within-sector entries.
    pub sector_mask: bool,
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        ThresholdPolicy {
            shrinkage: Shrinkage::Soft,
            tau: Tau::Auto,
            sector_mask: false,
        }
    }
}

impl ThresholdPolicy {
    pub fn soft(tau: f64) -> Self {
        ThresholdPolicy {
            shrinkage: Shrinkage::Soft,
            tau: Tau::Fixed(tau),
            sector_mask: false,
        }
    }

    pub fn hard(tau: f64) -> Self {
        ThresholdPolicy {
            shrinkage: Shrinkage::Hard,
            tau: Tau::Fixed(tau),
            sector_mask: false,
        }
    }

    pub fn sector_masked() -> Self {
        ThresholdPolicy {
            sector_mask: true,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Tau::Fixed(t) = self.tau {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(Error::InvalidArgument(format!("tau must be >= 0, got {t}")));
            }
        }
        Ok(())
    }

    fn with_tau(&self, tau: f64) -> Self {
        ThresholdPolicy {
            tau: Tau::Fixed(tau),
            ..self.clone()
        }
    }
}

/// Default search grid for `tau = auto`: 0.00, 0.05, ..., 2.00.
pub fn default_tau_grid() -> Vec<f64> {
    (0..=40).map(|i| i as f64 * 0.05).collect()
}

/// Relative floor used for positive-definiteness checks: `1e-8 * trace / p`.
pub fn pd_floor(m: &SymmetricMatrix) -> f64 {
    1e-8 * m.mean_variance()
}

/// Thresholds the off-diagonal entries of `residual`.
///
/// `sectors` (one label per asset) is required when the policy uses a
/// sector mask and ignored otherwise.
pub fn adaptive_threshold(
    residual: &SymmetricMatrix,
    policy: &ThresholdPolicy,
    sectors: Option<&[usize]>,
) -> Result<SymmetricMatrix> {
    policy.validate()?;
    let p = residual.dim();
    let diag = residual.diagonal();
    if let Some((index, &value)) = diag.iter().enumerate().find(|(_, v)| **v <= 0.0) {
        return Err(Error::DegenerateAsset { index, value });
    }
    let mut out = residual.as_matrix().clone();
    if policy.sector_mask {
        let sectors = sectors.ok_or_else(|| {
            Error::InvalidArgument("sector mask requested but assets have no sector labels".into())
        })?;
        if sectors.len() != p {
            return Err(Error::DimensionMismatch(format!(
                "{} sector labels for {p} assets",
                sectors.len()
            )));
        }
        for j in 0..p {
            for i in 0..p {
                if sectors[i] != sectors[j] {
                    out[(i, j)] = 0.0;
                }
            }
        }
        return Ok(SymmetricMatrix::symmetrized(out));
    }
    let tau = match policy.tau {
        Tau::Fixed(t) => t,
        Tau::Auto => return Err(Error::TauUnresolved),
    };
    let sd = diag.map(f64::sqrt);
    for j in 0..p {
        for i in 0..p {
            if i != j {
                out[(i, j)] = policy.shrinkage.apply(out[(i, j)], tau * sd[i] * sd[j]);
            }
        }
    }
    Ok(SymmetricMatrix::symmetrized(out))
}

/// Outcome of the positive-definiteness grid search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TauSelection {
    pub tau: f64,
    /// False when no grid value produced a positive definite matrix and the
    /// grid maximum was returned instead.
    pub positive_definite: bool,
}

/// Smallest grid value whose thresholded matrix has minimum eigenvalue above
/// `1e-8 * trace / p`; the grid maximum (flagged) if none qualifies.
pub fn select_tau(
    residual: &SymmetricMatrix,
    policy: &ThresholdPolicy,
    sectors: Option<&[usize]>,
    grid: &[f64],
) -> Result<TauSelection> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("tau grid is empty".into()));
    }
    if grid.iter().any(|t| !(*t >= 0.0 && t.is_finite())) || grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument(
            "tau grid must be ascending and nonnegative".into(),
        ));
    }
    let floor = pd_floor(residual);
    for &tau in grid {
        let thresholded = adaptive_threshold(residual, &policy.with_tau(tau), sectors)?;
        if min_eigenvalue(&thresholded) > floor {
            return Ok(TauSelection {
                tau,
                positive_definite: true,
            });
        }
        if policy.sector_mask {
            // tau has no effect under the sector mask
            break;
        }
    }
    let tau = *grid.last().expect("nonempty");
    log::debug!("no tau on the grid yields a positive definite matrix; using {tau}");
    Ok(TauSelection {
        tau,
        positive_definite: false,
    })
}

/// Resolves `tau = auto` (if needed) and thresholds.
pub fn threshold_with_policy(
    residual: &SymmetricMatrix,
    policy: &ThresholdPolicy,
    sectors: Option<&[usize]>,
    grid: &[f64],
) -> Result<(SymmetricMatrix, TauSelection)> {
    let selection = match policy.tau {
        Tau::Fixed(tau) => TauSelection {
            tau,
            positive_definite: true,
        },
        Tau::Auto if policy.sector_mask => TauSelection {
            tau: 0.0,
            positive_definite: min_eigenvalue(&adaptive_threshold(
                residual,
                &policy.with_tau(0.0),
                sectors,
            )?) > pd_floor(residual),
        },
        Tau::Auto => select_tau(residual, policy, sectors, grid)?,
    };
    let out = adaptive_threshold(residual, &policy.with_tau(selection.tau), sectors)?;
    Ok((out, selection))
}
