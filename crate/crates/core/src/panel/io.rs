use std::io::Read;
use std::path::Path;

use chrono::NaiveDate;
use nalgebra::DMatrix;

use super::ReturnPanel;
use crate::error::{Error, Result};

/// How the numeric cells of a panel CSV are interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PanelMode {
    /// Cells are prices; log-returns are taken between consecutive rows.
    Prices,
    /// Cells are already log-returns.
    Returns,
}

#[derive(Debug, Clone)]
pub struct LoadedPanel {
    pub panel: ReturnPanel,
    /// Assets removed because they contained a missing or non-finite value.
    pub dropped_assets: Vec<String>,
}

pub fn load_panel(path: impl AsRef<Path>, mode: PanelMode) -> Result<LoadedPanel> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_panel(file, mode, &path.display().to_string())
}

/// Parses a `date,<asset_1>,...` CSV. `context` names the source in errors.
pub fn read_panel<R: Read>(reader: R, mode: PanelMode, context: &str) -> Result<LoadedPanel> {
    let malformed = |message: String| Error::MalformedCsv {
        context: context.to_string(),
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| malformed(e.to_string()))?.clone();
    if headers.len() < 2 {
        return Err(malformed(
            "header needs a date column and at least one asset".into(),
        ));
    }
    let asset_ids: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let n_assets = asset_ids.len();

    let mut dates = Vec::new();
    // column-major per asset: cells[asset][row]
    let mut cells: Vec<Vec<Option<f64>>> = vec![Vec::new(); n_assets];
    for (line, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| malformed(e.to_string()))?;
        let row = line + 2;
        if record.len() != n_assets + 1 {
            return Err(malformed(format!(
                "row {row} has {} fields, expected {}",
                record.len(),
                n_assets + 1
            )));
        }
        let date = NaiveDate::parse_from_str(&record[0], "%Y-%m-%d")
            .map_err(|e| malformed(format!("row {row}: bad date `{}`: {e}", &record[0])))?;
        dates.push(date);
        for (a, cell) in record.iter().skip(1).enumerate() {
            let value = if cell.is_empty() {
                None
            } else {
                let v: f64 = cell
                    .parse()
                    .map_err(|_| malformed(format!("row {row}: `{cell}` is not a number")))?;
                v.is_finite().then_some(v)
            };
            cells[a].push(value);
        }
    }

    let min_rows = match mode {
        PanelMode::Prices => 3,
        PanelMode::Returns => 2,
    };
    if dates.len() < min_rows {
        return Err(Error::InsufficientPeriods {
            needed: min_rows,
            got: dates.len(),
        });
    }

    let mut kept = Vec::new();
    let mut dropped_assets = Vec::new();
    for (a, column) in cells.iter().enumerate() {
        if column.iter().all(Option::is_some) {
            kept.push(a);
        } else {
            log::warn!("dropping asset `{}`: missing values", asset_ids[a]);
            dropped_assets.push(asset_ids[a].clone());
        }
    }
    if kept.is_empty() {
        return Err(Error::NoAssets);
    }

    let (periods, values) = match mode {
        PanelMode::Returns => {
            let values = DMatrix::from_fn(kept.len(), dates.len(), |i, t| {
                cells[kept[i]][t].expect("filtered")
            });
            (dates, values)
        }
        PanelMode::Prices => {
            for &a in &kept {
                if let Some((row, &v)) = cells[a]
                    .iter()
                    .map(|c| c.as_ref().expect("filtered"))
                    .enumerate()
                    .find(|(_, v)| **v <= 0.0)
                {
                    return Err(Error::NonPositivePrice {
                        asset: asset_ids[a].clone(),
                        row: row + 2,
                        value: v,
                    });
                }
            }
            let t = dates.len() - 1;
            let values = DMatrix::from_fn(kept.len(), t, |i, s| {
                let col = &cells[kept[i]];
                col[s + 1].unwrap().ln() - col[s].unwrap().ln()
            });
            (dates[1..].to_vec(), values)
        }
    };
    let ids = kept.iter().map(|&a| asset_ids[a].clone()).collect();
    let panel = ReturnPanel::new(ids, periods, values, 1)?;
    Ok(LoadedPanel {
        panel,
        dropped_assets,
    })
}
