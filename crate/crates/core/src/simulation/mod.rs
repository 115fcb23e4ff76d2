//! Synthetic multi-level factor data with asynchronous cross-continent
//! correlation, and a seeded Monte-Carlo harness comparing estimators.

mod dgp;
mod experiment;
mod metrics;

pub use dgp::{
    business_days, distort_correlation, generate_true_model, simulate_returns,
    simulate_staggered_returns, TrueModel,
};
pub use experiment::{
    run_experiment, run_grid_point, write_results_csv, ResultRow, RESULT_COLUMNS,
};
pub use metrics::{error_metrics, ErrorMetrics, TruthReference};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::Method;
use crate::panel::GroupHierarchy;
use crate::poet::EstimatorConfig;

/// Which quantity a sweep varies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "over", rename_all = "lowercase", deny_unknown_fields)]
pub enum Sweep {
    /// Sample size varies; every estimator is run at each of `d_values`.
    T {
        t_values: Vec<usize>,
        d_values: Vec<usize>,
    },
    /// Window length varies at a fixed sample size.
    D { t: usize, d_values: Vec<usize> },
}

/// One point of a sweep.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridPoint {
    pub var: &'static str,
    pub value: usize,
    pub t: usize,
    pub d_values: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub p: usize,
    /// Number of continents `S`.
    pub continents: usize,
    /// Total number of countries `L`, split evenly across continents.
    pub countries: usize,
    pub country_size: usize,
    pub k: usize,
    pub r_l: usize,
    pub beta: f64,
    /// Probability that `pi_i` is nonzero; defaults to `0.5 / (sqrt(p) ln p)`.
    pub pi_probability: Option<f64>,
    pub sweep: Sweep,
    pub methods: Vec<Method>,
    pub replications: usize,
    pub master_seed: u64,
    /// Window length that sets the distortion `h = 0.5 / d`. When absent each
    /// estimator sees data distorted for its own `d`.
    pub dgp_d: Option<usize>,
    /// Settings shared by all estimators; `d` is overridden per estimator.
    pub estimator: EstimatorConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            p: 100,
            continents: 2,
            countries: 4,
            country_size: 25,
            k: 2,
            r_l: 2,
            beta: 0.75,
            pi_probability: None,
            sweep: Sweep::T {
                t_values: vec![100, 200, 400],
                d_values: vec![1, 5],
            },
            methods: Method::ALL.to_vec(),
            replications: 20,
            master_seed: 1,
            dgp_d: None,
            estimator: EstimatorConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.continents == 0 || self.countries == 0 || self.country_size == 0 {
            return bad("continents, countries and country_size must be positive".into());
        }
        if !self.countries.is_multiple_of(self.continents) {
            return bad(format!(
                "{} countries cannot be split evenly across {} continents",
                self.countries, self.continents
            ));
        }
        if self.p != self.countries * self.country_size {
            return bad(format!(
                "p = {} but {} countries of {} assets give {}",
                self.p,
                self.countries,
                self.country_size,
                self.countries * self.country_size
            ));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be positive, got {}", self.beta));
        }
        if let Some(q) = self.pi_probability {
            if !(0.0..=1.0).contains(&q) {
                return bad(format!("pi_probability must lie in [0, 1], got {q}"));
            }
        }
        if self.replications == 0 {
            return bad("replications must be at least 1".into());
        }
        if self.methods.is_empty() {
            return bad("no estimators requested".into());
        }
        if self.dgp_d == Some(0) {
            return bad("dgp_d must be at least 1".into());
        }
        let (ts, ds): (Vec<usize>, &[usize]) = match &self.sweep {
            Sweep::T { t_values, d_values } => (t_values.clone(), d_values),
            Sweep::D { t, d_values } => (vec![*t], d_values),
        };
        if ts.is_empty() || ds.is_empty() {
            return bad("sweep grid is empty".into());
        }
        if ts.iter().any(|&t| t < 2) || ds.contains(&0) {
            return bad("sample sizes must be at least 2 and windows at least 1".into());
        }
        Ok(())
    }

    /// `S` continents of `L / S` countries of `country_size` assets.
    pub fn hierarchy(&self) -> Result<GroupHierarchy> {
        GroupHierarchy::uniform(
            self.continents,
            self.countries / self.continents,
            self.country_size,
        )
    }

    pub fn grid_points(&self) -> Vec<GridPoint> {
        match &self.sweep {
            Sweep::T { t_values, d_values } => t_values
                .iter()
                .map(|&t| GridPoint {
                    var: "T",
                    value: t,
                    t,
                    d_values: d_values.clone(),
                })
                .collect(),
            Sweep::D { t, d_values } => d_values
                .iter()
                .map(|&d| GridPoint {
                    var: "d",
                    value: d,
                    t: *t,
                    d_values: vec![d],
                })
                .collect(),
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of an independent stream identified by `parts` under `master`.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(master), |h, &p| splitmix64(h ^ splitmix64(p)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        let c = SimConfig::default();
        c.validate().unwrap();
        assert_eq!(c.grid_points().len(), 3);
        let h = c.hierarchy().unwrap();
        assert_eq!(
            (h.n_assets(), h.n_continents(), h.n_countries()),
            (100, 2, 4)
        );
    }

    #[test]
    fn inconsistent_configs_are_rejected() {
        let base = SimConfig::default();
        for bad in [
            SimConfig {
                p: 99,
                ..base.clone()
            },
            SimConfig {
                countries: 3,
                p: 75,
                ..base.clone()
            },
            SimConfig {
                beta: 0.0,
                ..base.clone()
            },
            SimConfig {
                replications: 0,
                ..base.clone()
            },
            SimConfig {
                sweep: Sweep::D {
                    t: 600,
                    d_values: vec![],
                },
                ..base.clone()
            },
        ] {
            assert!(matches!(bad.validate(), Err(Error::InvalidArgument(_))));
        }
    }

    #[test]
    fn sweep_json_shape() {
        let s: Sweep =
            serde_json::from_str(r#"{"over": "d", "t": 600, "d_values": [1, 2, 8]}"#).unwrap();
        assert_eq!(
            s,
            Sweep::D {
                t: 600,
                d_values: vec![1, 2, 8]
            }
        );
        let c: SimConfig = serde_json::from_str(
            r#"{"replications": 3, "sweep": {"over": "t", "t_values": [50], "d_values": [1]}}"#,
        )
        .unwrap();
        assert_eq!(c.replications, 3);
        assert_eq!(c.p, 100);
    }

    #[test]
    fn seeds_differ_by_stream() {
        let a = derive_seed(7, &[0, 0]);
        assert_eq!(a, derive_seed(7, &[0, 0]));
        assert_ne!(a, derive_seed(7, &[0, 1]));
        assert_ne!(a, derive_seed(7, &[1, 0]));
        assert_ne!(a, derive_seed(8, &[0, 0]));
    }
}
