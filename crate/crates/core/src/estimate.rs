//! One entry point for every estimator, driven from a daily panel.

use serde::{Deserialize, Serialize};

use crate::covariance::{descale_covariance, sample_covariance, SymmetricMatrix};
use crate::error::{Error, Result};
use crate::panel::{aggregate_returns, GroupHierarchy, ReturnPanel};
use crate::poet::{
    double_poet, poet_with_config, structured_poet, CovarianceDecomposition, EstimatorConfig,
    FitReport,
};
use crate::spectral::EigenSystem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Samcov,
    Poet,
    DoublePoet,
    StructuredPoet,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Samcov,
        Method::Poet,
        Method::DoublePoet,
        Method::StructuredPoet,
    ];

    /// Short label used in result tables.
    pub fn label(self) -> &'static str {
        match self {
            Method::Samcov => "SamCov",
            Method::Poet => "POET",
            Method::DoublePoet => "D-POET",
            Method::StructuredPoet => "S-POET",
        }
    }

    pub fn id(self) -> &'static str {
        match self {
            Method::Samcov => "samcov",
            Method::Poet => "poet",
            Method::DoublePoet => "double-poet",
            Method::StructuredPoet => "structured-poet",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.id())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.id() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method `{s}`")))
    }
}

/// `d^{-1}` times the sample covariance of `d`-period sums.
pub fn descaled_pilot(daily: &ReturnPanel, d: usize) -> Result<SymmetricMatrix> {
    let low = aggregate_returns(daily, d)?;
    descale_covariance(&sample_covariance(&low)?, d)
}

/// Fits `method` to a one-period panel.
///
/// SamCov, POET and Double-POET work on the descaled `d`-period pilot;
/// Structured-POET uses daily data within continents and `d`-period data
/// across them. SamCov is returned with everything in the idiosyncratic part.
pub fn estimate(
    method: Method,
    daily: &ReturnPanel,
    groups: &GroupHierarchy,
    config: &EstimatorConfig,
) -> Result<CovarianceDecomposition> {
    config.validate()?;
    match method {
        Method::StructuredPoet => structured_poet(daily, groups, config),
        Method::Samcov => {
            let pilot = descaled_pilot(daily, config.d)?;
            let p = pilot.dim();
            CovarianceDecomposition::from_parts(
                EigenSystem::empty(p),
                Vec::new(),
                pilot,
                FitReport::default(),
            )
        }
        Method::Poet => poet_with_config(&descaled_pilot(daily, config.d)?, groups, config),
        Method::DoublePoet => double_poet(&descaled_pilot(daily, config.d)?, groups, config),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::tests::panel_from_rows;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.id().parse::<Method>().unwrap(), m);
            assert_eq!(
                serde_json::to_string(&m).unwrap(),
                format!("\"{}\"", m.id())
            );
        }
        assert!("pca".parse::<Method>().is_err());
    }

    #[test]
    fn samcov_is_descaled_low_frequency_covariance() {
        let panel = panel_from_rows(&[
            &[1.0, -1.0, 2.0, 0.0, 1.0, 1.0],
            &[0.0, 1.0, 1.0, -1.0, 2.0, 0.0],
        ]);
        let groups = GroupHierarchy::uniform(1, 1, 2).unwrap();
        let config = EstimatorConfig {
            d: 2,
            ..Default::default()
        };
        let dec = estimate(Method::Samcov, &panel, &groups, &config).unwrap();
        // sums a = [0, 2, 2]: squared deviations 16/9 + 4/9 + 4/9, divisor 3, then / 2
        let var_a = 4.0 / 9.0;
        assert!((dec.total[(0, 0)] - var_a).abs() < 1e-15);
        assert_eq!(dec.global.rank(), 0);
    }
}
