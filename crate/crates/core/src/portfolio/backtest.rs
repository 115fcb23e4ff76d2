use std::collections::BTreeMap;

use chrono::{Datelike, Months, NaiveDate, Weekday};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{min_variance_weights, realized_risk, PortfolioProblem};
use crate::covariance::SymmetricMatrix;
use crate::error::{Error, Result};
use crate::estimate::{estimate, Method};
use crate::panel::{GroupHierarchy, ReturnPanel};
use crate::poet::{EstimatorConfig, FactorCount};
use crate::spectral::{min_eigenvalue, spectral_map};
use crate::thresholding::pd_floor;

/// A window may start up to this many days before the first observation
/// (weekends and holidays).
const WINDOW_START_SLACK_DAYS: i64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BacktestMethod {
    pub method: Method,
    /// Window in days for the pilot (SamCov, POET, D-POET) or for the
    /// cross-continent blocks (S-POET).
    pub d: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BacktestConfig {
    pub methods: Vec<BacktestMethod>,
    /// Global factor counts tried for the factor methods; SamCov runs once.
    pub k_values: Vec<FactorCount>,
    pub exposure_caps: Vec<f64>,
    pub window_months: u32,
    /// Shared estimator settings; `k` and `d` are overridden per run.
    pub estimator: EstimatorConfig,
    /// Clip eigenvalues of each estimate below `1e-8 * trace / p` before solving.
    pub pd_repair: bool,
    pub evaluation_start: Option<NaiveDate>,
    pub evaluation_end: Option<NaiveDate>,
    pub tolerance: f64,
    pub max_iter: usize,
    pub keep_weights: bool,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        let m = |method, d| BacktestMethod { method, d };
        BacktestConfig {
            methods: vec![
                m(Method::StructuredPoet, 5),
                m(Method::DoublePoet, 1),
                m(Method::DoublePoet, 5),
                m(Method::Poet, 1),
                m(Method::Poet, 5),
                m(Method::Samcov, 1),
                m(Method::Samcov, 5),
            ],
            k_values: (1..=5).map(FactorCount::Fixed).collect(),
            exposure_caps: vec![1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0],
            window_months: 12,
            estimator: EstimatorConfig {
                r_max: 5,
                cross_rank: FactorCount::Fixed(1),
                ..Default::default()
            },
            pd_repair: true,
            evaluation_start: None,
            evaluation_end: None,
            tolerance: 1e-8,
            max_iter: 50_000,
            keep_weights: false,
        }
    }
}

impl BacktestConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.methods.is_empty() {
            return bad("no methods requested");
        }
        if self.methods.iter().any(|m| m.d == 0) {
            return bad("d must be at least 1");
        }
        if self.k_values.is_empty() {
            return bad("k_values is empty");
        }
        if self.exposure_caps.is_empty()
            || self
                .exposure_caps
                .iter()
                .any(|c| !(*c >= 1.0 && c.is_finite()))
        {
            return bad("exposure caps must be finite and at least 1");
        }
        if self.window_months == 0 {
            return bad("window_months must be positive");
        }
        if let (Some(a), Some(b)) = (self.evaluation_start, self.evaluation_end) {
            if a > b {
                return bad("evaluation_start is after evaluation_end");
            }
        }
        Ok(())
    }
}

/// One line of the risk report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BacktestRow {
    pub method: String,
    /// Global factor count, empty for SamCov.
    pub k: String,
    pub d: usize,
    pub c: f64,
    /// Calendar year of the holding weeks, or `full`.
    pub period: String,
    pub n_weeks: usize,
    pub risk: f64,
    pub n_skipped_windows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightRecord {
    pub week_start: NaiveDate,
    pub method: String,
    pub k: String,
    pub d: usize,
    pub c: f64,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestReport {
    pub rows: Vec<BacktestRow>,
    pub weights: Vec<WeightRecord>,
    pub n_weeks: usize,
}

struct Week {
    start: NaiveDate,
    /// Column range of the holding week in the panel.
    days: std::ops::Range<usize>,
    /// Column range of the estimation window.
    window: std::ops::Range<usize>,
}

/// Complete calendar weeks: the first week is dropped unless it starts on a
/// Monday, the last unless it reaches Friday.
fn holding_weeks(periods: &[NaiveDate]) -> Vec<(NaiveDate, std::ops::Range<usize>)> {
    let mut weeks: Vec<(NaiveDate, std::ops::Range<usize>)> = Vec::new();
    let mut start = 0;
    for i in 1..=periods.len() {
        if i == periods.len() || periods[i].iso_week() != periods[start].iso_week() {
            weeks.push((periods[start], start..i));
            start = i;
        }
    }
    if let Some((first, _)) = weeks.first() {
        if first.weekday() != Weekday::Mon {
            weeks.remove(0);
        }
    }
    if let Some((_, range)) = weeks.last() {
        let last = periods[range.end - 1];
        if last.weekday().num_days_from_monday() < Weekday::Fri.num_days_from_monday() {
            weeks.pop();
        }
    }
    weeks
}

#[derive(Clone, Copy)]
struct Run {
    method: BacktestMethod,
    k: Option<FactorCount>,
}

impl Run {
    fn k_label(&self) -> String {
        self.k.map(|k| k.to_string()).unwrap_or_default()
    }
}

/// Weekly-rebalanced minimum-variance backtest.
///
/// At the first trading day of every complete week each method is fitted
/// to the preceding `window_months` of daily returns, a portfolio is solved
/// for every exposure cap and held for the week. The weekly portfolio return
/// is `w' r` with `r` the assets' summed daily log-returns over the week.
/// Windows whose estimate or solve fails are skipped and counted.
pub fn backtest(
    daily: &ReturnPanel,
    groups: &GroupHierarchy,
    config: &BacktestConfig,
) -> Result<BacktestReport> {
    config.validate()?;
    if daily.frequency_days() != 1 {
        return Err(Error::InvalidArgument(
            "backtest expects a daily panel".into(),
        ));
    }
    if groups.n_assets() != daily.n_assets() {
        return Err(Error::DimensionMismatch(format!(
            "hierarchy covers {} assets, panel has {}",
            groups.n_assets(),
            daily.n_assets()
        )));
    }
    let periods = daily.periods();
    let first = periods[0];
    let weeks: Vec<Week> = holding_weeks(periods)
        .into_iter()
        .filter(|(s, _)| config.evaluation_start.is_none_or(|e| *s >= e))
        .filter(|(s, _)| config.evaluation_end.is_none_or(|e| *s <= e))
        .filter_map(|(start, days)| {
            let window_start = start.checked_sub_months(Months::new(config.window_months))?;
            if (first - window_start).num_days() > WINDOW_START_SLACK_DAYS {
                return None;
            }
            let lo = periods.partition_point(|d| *d < window_start);
            Some(Week {
                start,
                window: lo..days.start,
                days,
            })
        })
        .collect();
    if weeks.is_empty() {
        return Err(Error::WindowTooLarge {
            window: config.window_months as usize * 21,
            available: daily.n_periods(),
        });
    }

    let runs: Vec<Run> = config
        .methods
        .iter()
        .flat_map(|&method| {
            let ks: Vec<Option<FactorCount>> = if method.method == Method::Samcov {
                vec![None]
            } else {
                config.k_values.iter().copied().map(Some).collect()
            };
            ks.into_iter().map(move |k| Run { method, k })
        })
        .collect();

    // per week, per run: one weekly return (or None) per cap
    type WeekResult = Vec<Vec<Option<(f64, Vec<f64>)>>>;
    let results: Vec<WeekResult> = weeks
        .par_iter()
        .map(|week| {
            let window = daily.select_periods(week.window.clone());
            let held: Vec<f64> = (0..daily.n_assets())
                .map(|i| daily.values().row(i).columns_range(week.days.clone()).sum())
                .collect();
            runs.iter()
                .map(|run| {
                    let cov = window.as_ref().map_err(|e| e.to_string()).and_then(|w| {
                        fit_covariance(w, groups, config, run).map_err(|e| {
                            log::warn!(
                                "{} d={} k={} week {}: {e}",
                                run.method.method,
                                run.method.d,
                                run.k_label(),
                                week.start
                            );
                            e.to_string()
                        })
                    });
                    config
                        .exposure_caps
                        .iter()
                        .map(|&c| {
                            let cov = cov.as_ref().ok()?;
                            let problem = PortfolioProblem {
                                covariance: cov.clone(),
                                exposure_cap: c,
                                tolerance: config.tolerance,
                                max_iter: config.max_iter,
                            };
                            match min_variance_weights(&problem) {
                                Ok(w) => {
                                    let ret = w.iter().zip(&held).map(|(a, b)| a * b).sum();
                                    Some((ret, w.iter().copied().collect()))
                                }
                                Err(e) => {
                                    log::warn!("solver failed for week {} c={c}: {e}", week.start);
                                    None
                                }
                            }
                        })
                        .collect()
                })
                .collect()
        })
        .collect();

    let mut rows = Vec::new();
    let mut weights = Vec::new();
    for (ri, run) in runs.iter().enumerate() {
        for (ci, &c) in config.exposure_caps.iter().enumerate() {
            let mut by_period: BTreeMap<String, (Vec<f64>, usize)> = BTreeMap::new();
            for (week, res) in weeks.iter().zip(&results) {
                let year = week.start.year().to_string();
                for key in [year, "full".to_string()] {
                    let entry = by_period.entry(key).or_default();
                    match &res[ri][ci] {
                        Some((ret, _)) => entry.0.push(*ret),
                        None => entry.1 += 1,
                    }
                }
                if config.keep_weights {
                    if let Some((_, w)) = &res[ri][ci] {
                        weights.push(WeightRecord {
                            week_start: week.start,
                            method: run.method.method.label().to_string(),
                            k: run.k_label(),
                            d: run.method.d,
                            c,
                            weights: w.clone(),
                        });
                    }
                }
            }
            // years first, then the full period
            let full = by_period.remove("full");
            for (period, (returns, skipped)) in by_period
                .into_iter()
                .chain(full.map(|f| ("full".to_string(), f)))
            {
                rows.push(BacktestRow {
                    method: run.method.method.label().to_string(),
                    k: run.k_label(),
                    d: run.method.d,
                    c,
                    period,
                    n_weeks: returns.len(),
                    risk: realized_risk(&returns).unwrap_or(f64::NAN),
                    n_skipped_windows: skipped,
                });
            }
        }
    }
    Ok(BacktestReport {
        rows,
        weights,
        n_weeks: weeks.len(),
    })
}

fn fit_covariance(
    window: &ReturnPanel,
    groups: &GroupHierarchy,
    config: &BacktestConfig,
    run: &Run,
) -> Result<SymmetricMatrix> {
    let est = EstimatorConfig {
        k: run.k.unwrap_or(config.estimator.k),
        d: run.method.d,
        ..config.estimator.clone()
    };
    let total = estimate(run.method.method, window, groups, &est)?.total;
    if config.pd_repair {
        let floor = pd_floor(&total);
        if min_eigenvalue(&total) < floor {
            return Ok(spectral_map(&total, |l| l.max(floor)));
        }
    }
    Ok(total)
}

/// For every method, `d`, cap and period keeps the row with the lowest risk
/// across `k` (first such row on ties).
pub fn best_k(rows: &[BacktestRow]) -> Vec<BacktestRow> {
    let mut best: Vec<BacktestRow> = Vec::new();
    for row in rows {
        let slot = best.iter_mut().find(|b| {
            b.method == row.method && b.d == row.d && b.c == row.c && b.period == row.period
        });
        match slot {
            Some(b) => {
                if row.risk < b.risk || (b.risk.is_nan() && !row.risk.is_nan()) {
                    *b = row.clone();
                }
            }
            None => best.push(row.clone()),
        }
    }
    best
}

pub const REPORT_COLUMNS: [&str; 8] = [
    "method",
    "k",
    "d",
    "c",
    "period",
    "n_weeks",
    "risk",
    "n_skipped_windows",
];

pub fn write_report_csv<W: std::io::Write>(rows: &[BacktestRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let err = |e: csv::Error| Error::MalformedCsv {
        context: "backtest report".into(),
        message: e.to_string(),
    };
    for row in rows {
        w.serialize(row).map_err(err)?;
    }
    if rows.is_empty() {
        w.write_record(REPORT_COLUMNS).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io("backtest report", e))
}

/// `week_start,method,k,d,c,<asset ids>`, one row per held portfolio.
pub fn write_weights_csv<W: std::io::Write>(
    records: &[WeightRecord],
    asset_ids: &[String],
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let err = |e: csv::Error| Error::MalformedCsv {
        context: "weights".into(),
        message: e.to_string(),
    };
    let header = ["week_start", "method", "k", "d", "c"]
        .into_iter()
        .map(str::to_string)
        .chain(asset_ids.iter().cloned());
    w.write_record(header).map_err(err)?;
    for r in records {
        let fields = [
            r.week_start.to_string(),
            r.method.clone(),
            r.k.clone(),
            r.d.to_string(),
            r.c.to_string(),
        ]
        .into_iter()
        .chain(r.weights.iter().map(f64::to_string));
        w.write_record(fields).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io("weights", e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::business_days;
    use nalgebra::DMatrix;

    fn panel(values: DMatrix<f64>, start: NaiveDate) -> ReturnPanel {
        let p = values.nrows();
        let t = values.ncols();
        let ids = (0..p).map(|i| format!("a{i}")).collect();
        ReturnPanel::new(ids, business_days(start, t), values, 1).unwrap()
    }

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    #[test]
    fn partial_weeks_are_dropped() {
        // Wednesday start, Tuesday end
        let days = business_days(d(2024, 1, 3), 10);
        let weeks = holding_weeks(&days);
        assert_eq!(weeks.len(), 1);
        assert_eq!(weeks[0].0, d(2024, 1, 8));
        assert_eq!(weeks[0].1, 3..8);
        let full = business_days(d(2024, 1, 1), 10);
        assert_eq!(holding_weeks(&full).len(), 2);
    }

    #[test]
    fn single_asset_is_fully_invested() {
        let t = 400;
        let values = DMatrix::from_fn(1, t, |_, j| if j % 2 == 0 { 0.01 } else { -0.02 });
        let p = panel(values, d(2017, 1, 2));
        let groups = GroupHierarchy::uniform(1, 1, 1).unwrap();
        let config = BacktestConfig {
            methods: vec![BacktestMethod {
                method: Method::Samcov,
                d: 1,
            }],
            exposure_caps: vec![1.0, 2.0],
            keep_weights: true,
            ..Default::default()
        };
        let report = backtest(&p, &groups, &config).unwrap();
        assert!(report
            .weights
            .iter()
            .all(|w| (w.weights[0] - 1.0).abs() < 1e-12));
        let full: Vec<_> = report.rows.iter().filter(|r| r.period == "full").collect();
        assert_eq!(full.len(), 2);
        let expected: Vec<f64> = holding_weeks(p.periods())
            .into_iter()
            .filter(|(s, _)| *s >= d(2018, 1, 1))
            .map(|(_, r)| p.values().row(0).columns_range(r).sum())
            .collect();
        assert_eq!(full[0].n_weeks, expected.len());
        assert!((full[0].risk - realized_risk(&expected).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn zero_returns_have_zero_risk() {
        let values = DMatrix::from_fn(3, 330, |i, j| {
            if j < 300 {
                ((i + 1) * (j % 7)) as f64 * 1e-3 - 0.003
            } else {
                0.0
            }
        });
        let p = panel(values, d(2017, 1, 2));
        let groups = GroupHierarchy::uniform(1, 1, 3).unwrap();
        let config = BacktestConfig {
            methods: vec![BacktestMethod {
                method: Method::Samcov,
                d: 1,
            }],
            evaluation_start: Some(d(2018, 3, 1)),
            ..Default::default()
        };
        let report = backtest(&p, &groups, &config).unwrap();
        assert!(report.n_weeks > 0);
        assert!(report.rows.iter().all(|r| r.risk == 0.0));
    }

    #[test]
    fn short_panel_is_rejected() {
        let p = panel(DMatrix::from_element(2, 100, 0.01), d(2017, 1, 2));
        let groups = GroupHierarchy::uniform(1, 1, 2).unwrap();
        assert!(matches!(
            backtest(&p, &groups, &BacktestConfig::default()),
            Err(Error::WindowTooLarge { .. })
        ));
    }

    #[test]
    fn report_csv_layout() {
        let mut buf = Vec::new();
        write_report_csv(&[], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap().trim(),
            REPORT_COLUMNS.join(",")
        );
        let row = BacktestRow {
            method: "S-POET".into(),
            k: "2".into(),
            d: 5,
            c: 1.5,
            period: "2018".into(),
            n_weeks: 3,
            risk: 0.25,
            n_skipped_windows: 1,
        };
        let mut buf = Vec::new();
        write_report_csv(&[row], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            format!(
                "{}\nS-POET,2,5,1.5,2018,3,0.25,1\n",
                REPORT_COLUMNS.join(",")
            )
        );
    }

    #[test]
    fn best_k_picks_lowest_risk() {
        let row = |k: &str, risk| BacktestRow {
            method: "POET".into(),
            k: k.into(),
            d: 1,
            c: 2.0,
            period: "full".into(),
            n_weeks: 10,
            risk,
            n_skipped_windows: 0,
        };
        let best = best_k(&[row("1", 0.3), row("2", 0.1), row("3", 0.1)]);
        assert_eq!(best.len(), 1);
        assert_eq!(best[0].k, "2");
    }
}
