use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use super::{
    derive_seed, distort_correlation, error_metrics, generate_true_model, simulate_returns,
    SimConfig, TruthReference,
};
use crate::error::{Error, Result};
use crate::estimate::{estimate, Method};
use crate::panel::ReturnPanel;
use crate::poet::EstimatorConfig;

pub const RESULT_COLUMNS: [&str; 9] = [
    "grid_var",
    "grid_value",
    "replication",
    "estimator",
    "d",
    "dgp_d",
    "metric",
    "value",
    "status",
];

const METRICS: [&str; 3] = ["relative_frobenius", "max_norm", "inverse_spectral"];

/// One line of the long-format results table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub grid_var: String,
    pub grid_value: usize,
    pub replication: usize,
    pub estimator: String,
    pub d: usize,
    pub dgp_d: usize,
    pub metric: String,
    pub value: f64,
    /// `ok`, `pd-repaired` (inverse needed clipping) or `error: ...`.
    pub status: String,
}

/// Runs every replication of one grid point. Rows come out ordered by
/// replication, then estimator (method-major, then `d`), then metric.
pub fn run_grid_point(config: &SimConfig, index: usize) -> Result<Vec<ResultRow>> {
    config.validate()?;
    let points = config.grid_points();
    let point = points.get(index).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "grid point {index} out of range (0..{})",
            points.len()
        ))
    })?;
    let estimators: Vec<(Method, usize)> = config
        .methods
        .iter()
        .flat_map(|&m| point.d_values.iter().map(move |&d| (m, d)))
        .collect();

    let per_rep: Vec<Vec<ResultRow>> = (0..config.replications)
        .into_par_iter()
        .map(|rep| {
            let row = |estimator: &(Method, usize),
                       dgp_d: usize,
                       metric: &str,
                       value: f64,
                       status: String| ResultRow {
                grid_var: point.var.to_string(),
                grid_value: point.value,
                replication: rep,
                estimator: estimator.0.label().to_string(),
                d: estimator.1,
                dgp_d,
                metric: metric.to_string(),
                value,
                status,
            };
            let outcome = replicate(config, index as u64, rep as u64, point.t, &estimators);
            let mut rows = Vec::with_capacity(estimators.len() * METRICS.len());
            for (est, result) in estimators.iter().zip(outcome) {
                let dgp_d = config.dgp_d.unwrap_or(est.1);
                match result {
                    Ok(m) => {
                        let status = if m.pd_repaired { "pd-repaired" } else { "ok" };
                        for (name, value) in METRICS.iter().zip([
                            m.relative_frobenius,
                            m.max_norm,
                            m.inverse_spectral,
                        ]) {
                            rows.push(row(est, dgp_d, name, value, status.to_string()));
                        }
                    }
                    Err(e) => {
                        for name in METRICS {
                            rows.push(row(est, dgp_d, name, f64::NAN, format!("error: {e}")));
                        }
                    }
                }
            }
            rows
        })
        .collect();
    Ok(per_rep.into_iter().flatten().collect())
}

/// Fresh model, one panel per distinct distortion, every estimator scored.
fn replicate(
    config: &SimConfig,
    grid: u64,
    rep: u64,
    t: usize,
    estimators: &[(Method, usize)],
) -> Vec<std::result::Result<super::ErrorMetrics, String>> {
    let model = match generate_true_model(config, derive_seed(config.master_seed, &[grid, rep, 0]))
    {
        Ok(m) => m,
        Err(e) => return estimators.iter().map(|_| Err(e.to_string())).collect(),
    };
    let truth = match TruthReference::new(&model.sigma) {
        Ok(t) => t,
        Err(e) => return estimators.iter().map(|_| Err(e.to_string())).collect(),
    };
    // same shocks for every distortion level
    let shock_seed = derive_seed(config.master_seed, &[grid, rep, 1]);
    let mut panels: BTreeMap<usize, std::result::Result<ReturnPanel, String>> = BTreeMap::new();
    for &(_, d) in estimators {
        let dgp_d = config.dgp_d.unwrap_or(d);
        panels.entry(dgp_d).or_insert_with(|| {
            distort_correlation(&model, &model.groups, dgp_d, config.beta)
                .and_then(|distorted| simulate_returns(&distorted, t, shock_seed))
                .map_err(|e| e.to_string())
        });
    }
    estimators
        .par_iter()
        .map(|&(method, d)| {
            let panel = panels[&config.dgp_d.unwrap_or(d)]
                .as_ref()
                .map_err(Clone::clone)?;
            let est_config = EstimatorConfig {
                d,
                ..config.estimator.clone()
            };
            estimate(method, panel, &model.groups, &est_config)
                .and_then(|dec| error_metrics(&dec.total, &truth))
                .map_err(|e| e.to_string())
        })
        .collect()
}

/// All grid points in order.
pub fn run_experiment(config: &SimConfig) -> Result<Vec<ResultRow>> {
    let mut rows = Vec::new();
    for index in 0..config.grid_points().len() {
        rows.extend(run_grid_point(config, index)?);
    }
    Ok(rows)
}

pub fn write_results_csv<W: Write>(rows: &[ResultRow], writer: W, header: bool) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(writer);
    let err = |e: csv::Error| Error::MalformedCsv {
        context: "results".into(),
        message: e.to_string(),
    };
    if header {
        w.write_record(RESULT_COLUMNS).map_err(err)?;
    }
    for r in rows {
        w.write_record([
            r.grid_var.clone(),
            r.grid_value.to_string(),
            r.replication.to_string(),
            r.estimator.clone(),
            r.d.to_string(),
            r.dgp_d.to_string(),
            r.metric.clone(),
            r.value.to_string(),
            r.status.clone(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io("results", e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::Sweep;

    fn tiny(methods: Vec<Method>) -> SimConfig {
        SimConfig {
            p: 24,
            continents: 2,
            countries: 4,
            country_size: 6,
            k: 1,
            r_l: 1,
            replications: 2,
            methods,
            sweep: Sweep::T {
                t_values: vec![100],
                d_values: vec![1],
            },
            ..Default::default()
        }
    }

    #[test]
    fn samcov_bookkeeping() {
        let rows = run_experiment(&tiny(vec![Method::Samcov])).unwrap();
        assert_eq!(rows.len(), 2 * 3);
        assert!(rows.iter().all(|r| r.status == "ok" && r.value.is_finite()));
        assert_eq!(rows[0].replication, 0);
        assert_eq!(rows[3].replication, 1);
        assert_eq!(rows[0].metric, "relative_frobenius");
    }

    #[test]
    fn deterministic_and_errors_are_recorded() {
        let mut cfg = tiny(Method::ALL.to_vec());
        cfg.sweep = Sweep::D {
            t: 60,
            d_values: vec![1, 40],
        };
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        let mut buf_a = Vec::new();
        let mut buf_b = Vec::new();
        write_results_csv(&a, &mut buf_a, true).unwrap();
        write_results_csv(&b, &mut buf_b, true).unwrap();
        assert_eq!(buf_a, buf_b);
        // d = 40 leaves one window of 60 periods: every estimator fails, the sweep does not
        let failed: Vec<_> = a.iter().filter(|r| r.grid_value == 40).collect();
        assert_eq!(failed.len(), 2 * 4 * 3);
        assert!(failed
            .iter()
            .all(|r| r.status.starts_with("error") && r.value.is_nan()));
        assert!(a
            .iter()
            .filter(|r| r.grid_value == 1)
            .all(|r| !r.status.starts_with("error")));
    }

    #[test]
    fn out_of_range_grid_point() {
        assert!(run_grid_point(&tiny(vec![Method::Samcov]), 5).is_err());
    }
}
