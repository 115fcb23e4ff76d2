//! Return panels: ingestion, frequency aggregation and asset grouping.
//!
//! A [`ReturnPanel`] stores `p` assets by `T` periods of log-returns. Rows are
//! assets and columns are periods, so a column is the cross-sectional vector
//! `y_t`.

mod hierarchy;
mod io;

pub use hierarchy::{
    reorder_by_hierarchy, GroupHierarchy, Membership, MembershipRecord, Permutation,
};
pub use io::{load_panel, read_panel, LoadedPanel, PanelMode};

use chrono::NaiveDate;
use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPanel {
    asset_ids: Vec<String>,
    periods: Vec<NaiveDate>,
    values: DMatrix<f64>,
    frequency_days: usize,
}

impl ReturnPanel {
    /// Builds a panel, checking shape, finiteness and period ordering.
    pub fn new(
        asset_ids: Vec<String>,
        periods: Vec<NaiveDate>,
        values: DMatrix<f64>,
        frequency_days: usize,
    ) -> Result<Self> {
        if asset_ids.is_empty() {
            return Err(Error::NoAssets);
        }
        if periods.len() < 2 {
            return Err(Error::InsufficientPeriods {
                needed: 2,
                got: periods.len(),
            });
        }
        if values.nrows() != asset_ids.len() || values.ncols() != periods.len() {
            return Err(Error::DimensionMismatch(format!(
                "values are {}x{} but panel has {} assets and {} periods",
                values.nrows(),
                values.ncols(),
                asset_ids.len(),
                periods.len()
            )));
        }
        if frequency_days == 0 {
            return Err(Error::InvalidArgument(
                "frequency_days must be positive".into(),
            ));
        }
        if let Some(idx) = values.iter().position(|v| !v.is_finite()) {
            let (row, col) = (idx % values.nrows(), idx / values.nrows());
            return Err(Error::InvalidArgument(format!(
                "non-finite return for asset `{}` at period {}",
                asset_ids[row], periods[col]
            )));
        }
        if let Some(i) = periods.windows(2).position(|w| w[0] >= w[1]) {
            return Err(Error::NonIncreasingPeriods { index: i + 1 });
        }
        Ok(ReturnPanel {
            asset_ids,
            periods,
            values,
            frequency_days,
        })
    }

    pub fn asset_ids(&self) -> &[String] {
        &self.asset_ids
    }

    pub fn periods(&self) -> &[NaiveDate] {
        &self.periods
    }

    /// The `p x T` matrix of log-returns.
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn frequency_days(&self) -> usize {
        self.frequency_days
    }

    pub fn n_assets(&self) -> usize {
        self.asset_ids.len()
    }

    pub fn n_periods(&self) -> usize {
        self.periods.len()
    }

    /// Sub-panel with the given asset rows, in the given order.
    pub fn select_assets(&self, rows: &[usize]) -> Result<ReturnPanel> {
        let ids = rows.iter().map(|&r| self.asset_ids[r].clone()).collect();
        let values = self.values.select_rows(rows);
        ReturnPanel::new(ids, self.periods.clone(), values, self.frequency_days)
    }

    /// Sub-panel restricted to the periods in `range`.
    pub fn select_periods(&self, range: std::ops::Range<usize>) -> Result<ReturnPanel> {
        if range.end > self.n_periods() || range.start > range.end {
            return Err(Error::InvalidArgument(format!(
                "period range {range:?} outside 0..{}",
                self.n_periods()
            )));
        }
        let values = self.values.columns(range.start, range.len()).into_owned();
        ReturnPanel::new(
            self.asset_ids.clone(),
            self.periods[range].to_vec(),
            values,
            self.frequency_days,
        )
    }
}

/// Sums consecutive windows of `d` periods.
///
/// When `d` does not divide `T`, the oldest `T mod d` periods are discarded so
/// the most recent observations are kept. Each output period is labelled with
/// the last date of its window.
pub fn aggregate_returns(panel: &ReturnPanel, d: usize) -> Result<ReturnPanel> {
    if d == 0 {
        return Err(Error::InvalidArgument(
            "aggregation window d must be positive".into(),
        ));
    }
    let t = panel.n_periods();
    if d > t {
        return Err(Error::WindowTooLarge {
            window: d,
            available: t,
        });
    }
    if d == 1 {
        return Ok(panel.clone());
    }
    let n_out = t / d;
    let skip = t % d;
    let p = panel.n_assets();
    let mut values = DMatrix::zeros(p, n_out);
    let mut periods = Vec::with_capacity(n_out);
    for w in 0..n_out {
        let start = skip + w * d;
        for col in start..start + d {
            for row in 0..p {
                values[(row, w)] += panel.values[(row, col)];
            }
        }
        periods.push(panel.periods[start + d - 1]);
    }
    ReturnPanel::new(
        panel.asset_ids.clone(),
        periods,
        values,
        panel.frequency_days * d,
    )
}
