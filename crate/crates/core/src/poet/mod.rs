//! Factor-based covariance estimators.
//!
//! * [`poet`]: leading principal components of a pilot plus a thresholded
//!   residual.
//! * [`double_poet`]: global components, then per-country components of the
//!   residual's diagonal blocks, then thresholding.
//! * [`structured_poet`]: per-continent Double-POET on full-frequency data,
//!   low-rank approximations of the cross-continent blocks of a
//!   low-frequency correlation matrix, and a final eigendecomposition of the
//!   assembled global component.
//!
//! [`invert_decomposition`] turns any of these into a precision matrix by
//! nested Woodbury updates.

mod envelope;
mod fit;
mod precision;
mod structured;

pub use envelope::{
    read_dense_csv, report_json, write_dense_csv, DecompositionEnvelope, EnvelopeMeta,
    LocalEnvelope, SparseSymmetric, Triplet, SCHEMA_VERSION,
};
pub use fit::{double_poet, poet, poet_with_config};
pub use precision::{invert_decomposition, Precision};
pub use structured::structured_poet;

use std::ops::Range;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::covariance::SymmetricMatrix;
use crate::error::{Error, Result};
use crate::selection::{SelectionResult, Selector};
use crate::spectral::EigenSystem;
use crate::thresholding::{default_tau_grid, TauSelection, ThresholdPolicy};

/// A factor count that is either given or chosen from the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FactorCount {
    #[default]
    Auto,
    Fixed(usize),
}

impl FactorCount {
    pub fn fixed(self) -> Option<usize> {
        match self {
            FactorCount::Fixed(n) => Some(n),
            FactorCount::Auto => None,
        }
    }
}

impl std::str::FromStr for FactorCount {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(FactorCount::Auto);
        }
        s.parse()
            .map(FactorCount::Fixed)
            .map_err(|_| Error::InvalidArgument(format!("expected `auto` or a count, got `{s}`")))
    }
}

impl std::fmt::Display for FactorCount {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FactorCount::Auto => f.write_str("auto"),
            FactorCount::Fixed(n) => write!(f, "{n}"),
        }
    }
}

impl Serialize for FactorCount {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            FactorCount::Auto => s.serialize_str("auto"),
            FactorCount::Fixed(n) => s.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for FactorCount {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(usize),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(n) => Ok(FactorCount::Fixed(n)),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Number of local factors per country.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum LocalFactors {
    #[default]
    Auto,
    Uniform(usize),
    /// One count per country, in canonical country order.
    PerCountry(Vec<usize>),
}

impl Serialize for LocalFactors {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            LocalFactors::Auto => s.serialize_str("auto"),
            LocalFactors::Uniform(n) => s.serialize_u64(*n as u64),
            LocalFactors::PerCountry(v) => v.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for LocalFactors {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(usize),
            List(Vec<usize>),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(n) => Ok(LocalFactors::Uniform(n)),
            Raw::List(v) => Ok(LocalFactors::PerCountry(v)),
            Raw::Str(s) if s == "auto" => Ok(LocalFactors::Auto),
            Raw::Str(s) => s
                .parse()
                .map(LocalFactors::Uniform)
                .map_err(|_| serde::de::Error::custom(format!("invalid local factor count `{s}`"))),
        }
    }
}

/// Settings shared by the estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    /// Global factors.
    pub k: FactorCount,
    /// Local factors per country.
    pub local_factors: LocalFactors,
    /// Rank of each cross-continent correlation block.
    pub cross_rank: FactorCount,
    /// Low-frequency window in periods.
    pub d: usize,
    pub threshold: ThresholdPolicy,
    /// Clip eigenvalues of the total before inversion.
    pub pd_repair: bool,
    pub k_max: usize,
    pub r_max: usize,
    pub cross_rank_max: usize,
    pub cross_rank_selector: Selector,
    pub tau_grid: Vec<f64>,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            k: FactorCount::Auto,
            local_factors: LocalFactors::Auto,
            cross_rank: FactorCount::Auto,
            d: 1,
            threshold: ThresholdPolicy::default(),
            pd_repair: false,
            k_max: 10,
            r_max: 10,
            cross_rank_max: 10,
            cross_rank_selector: Selector::SingularRatio,
            tau_grid: default_tau_grid(),
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::InvalidArgument("d must be at least 1".into()));
        }
        if let (FactorCount::Fixed(k), FactorCount::Fixed(r)) = (self.k, self.cross_rank) {
            if r > k {
                return Err(Error::InvalidArgument(format!(
                    "cross-continent rank {r} exceeds the number of global factors {k}"
                )));
            }
        }
        if self.k_max == 0 || self.r_max == 0 || self.cross_rank_max == 0 {
            return Err(Error::InvalidArgument(
                "selection caps must be positive".into(),
            ));
        }
        if self.cross_rank_selector == Selector::EigenvalueRatio {
            return Err(Error::InvalidArgument(
                "cross-continent ranks use a singular-value selector".into(),
            ));
        }
        self.threshold.validate()?;
        if self.tau_grid.is_empty() {
            return Err(Error::InvalidArgument("tau grid is empty".into()));
        }
        Ok(())
    }
}

/// Low-rank component of one country, embedded at `range` of the full asset order.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalComponent {
    pub range: Range<usize>,
    pub eigen: EigenSystem,
}

/// Rank used for one cross-continent block.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossRank {
    pub continents: (usize, usize),
    pub rank: usize,
    pub selection: Option<SelectionResult>,
}

/// What the fit chose and anything worth reporting.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct FitReport {
    pub k: usize,
    pub k_selection: Option<SelectionResult>,
    pub local_factors: Vec<usize>,
    pub local_selections: Vec<Option<SelectionResult>>,
    /// One entry per thresholded block (one per continent for Structured-POET).
    pub tau: Vec<TauSelection>,
    pub cross_ranks: Vec<CrossRank>,
    pub diagnostics: Vec<String>,
}

/// `total = global + local + idiosyncratic`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceDecomposition {
    pub global: EigenSystem,
    pub local: Vec<LocalComponent>,
    pub idiosyncratic: SymmetricMatrix,
    pub total: SymmetricMatrix,
    pub report: FitReport,
}

impl CovarianceDecomposition {
    pub fn dim(&self) -> usize {
        self.total.dim()
    }

    pub fn global_matrix(&self) -> SymmetricMatrix {
        self.global.reconstruct()
    }

    /// Block-diagonal sum of the local components.
    pub fn local_matrix(&self) -> SymmetricMatrix {
        let p = self.dim();
        let mut out = DMatrix::zeros(p, p);
        for c in &self.local {
            let block = c.eigen.reconstruct();
            out.view_mut(
                (c.range.start, c.range.start),
                (c.range.len(), c.range.len()),
            )
            .copy_from(block.as_matrix());
        }
        SymmetricMatrix::symmetrized(out)
    }

    /// Assembles a decomposition whose total is the sum of its parts.
    pub fn from_parts(
        global: EigenSystem,
        local: Vec<LocalComponent>,
        idiosyncratic: SymmetricMatrix,
        report: FitReport,
    ) -> Result<Self> {
        let p = idiosyncratic.dim();
        if global.dim() != p {
            return Err(Error::DimensionMismatch(format!(
                "global component is {}-dimensional, idiosyncratic is {p}",
                global.dim()
            )));
        }
        if let Some(c) = local
            .iter()
            .find(|c| c.range.end > p || c.eigen.dim() != c.range.len())
        {
            return Err(Error::DimensionMismatch(format!(
                "local component at {:?} does not fit a {p}-dimensional matrix",
                c.range
            )));
        }
        let mut dec = CovarianceDecomposition {
            global,
            local,
            idiosyncratic,
            total: SymmetricMatrix::zeros(p),
            report,
        };
        dec.total = dec
            .global_matrix()
            .add(&dec.local_matrix())
            .add(&dec.idiosyncratic);
        Ok(dec)
    }

    /// Total local factor count `r = sum r_l`.
    pub fn local_rank(&self) -> usize {
        self.local.iter().map(|c| c.eigen.rank()).sum()
    }
}

/// Truncates a full (descending) eigensystem to its leading `k` pairs.
pub(crate) fn leading(eig: &EigenSystem, k: usize) -> EigenSystem {
    EigenSystem {
        eigenvalues: eig.eigenvalues.rows(0, k).into_owned(),
        eigenvectors: eig.eigenvectors.columns(0, k).into_owned(),
    }
}
