use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{CovarianceDecomposition, FitReport, LocalComponent};
use crate::covariance::SymmetricMatrix;
use crate::error::{Error, Result};
use crate::spectral::EigenSystem;

pub const SCHEMA_VERSION: &str = "spoet.decomposition/1";

/// `(row, column, value)` of a nonzero upper-triangular entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Triplet(pub usize, pub usize, pub f64);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeMeta {
    pub method: String,
    pub p: usize,
    pub asset_ids: Vec<String>,
    pub d: usize,
    /// The fit report as written; informational only.
    #[serde(default)]
    pub report: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalEnvelope {
    pub start: usize,
    pub end: usize,
    pub eigenvalues: Vec<f64>,
    /// One inner vector per eigenvector, of length `end - start`.
    pub eigenvectors: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseSymmetric {
    pub dim: usize,
    pub triplets: Vec<Triplet>,
}

/// Serialized form of a [`CovarianceDecomposition`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionEnvelope {
    pub schema: String,
    pub meta: EnvelopeMeta,
    pub k: usize,
    pub r_l: Vec<usize>,
    pub eigenvalues: Vec<f64>,
    /// One inner vector per global eigenvector, of length `p`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eigenvectors: Option<Vec<Vec<f64>>>,
    pub local: Vec<LocalEnvelope>,
    pub idiosyncratic: SparseSymmetric,
    /// File name of a dense CSV holding the total, relative to the envelope.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total: Option<String>,
}

fn columns(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.column_iter()
        .map(|c| c.iter().copied().collect())
        .collect()
}

fn from_columns(cols: &[Vec<f64>], rows: usize, what: &str) -> Result<DMatrix<f64>> {
    if let Some(c) = cols.iter().find(|c| c.len() != rows) {
        return Err(Error::DimensionMismatch(format!(
            "{what}: eigenvector of length {}, expected {rows}",
            c.len()
        )));
    }
    Ok(DMatrix::from_fn(rows, cols.len(), |i, j| cols[j][i]))
}

impl DecompositionEnvelope {
    pub fn from_decomposition(
        dec: &CovarianceDecomposition,
        method: &str,
        asset_ids: &[String],
        d: usize,
    ) -> Result<Self> {
        let p = dec.dim();
        if asset_ids.len() != p {
            return Err(Error::DimensionMismatch(format!(
                "{} asset ids for a {p}-dimensional decomposition",
                asset_ids.len()
            )));
        }
        let mut triplets = Vec::new();
        for j in 0..p {
            for i in 0..=j {
                let v = dec.idiosyncratic[(i, j)];
                if v != 0.0 {
                    triplets.push(Triplet(i, j, v));
                }
            }
        }
        Ok(DecompositionEnvelope {
            schema: SCHEMA_VERSION.to_string(),
            meta: EnvelopeMeta {
                method: method.to_string(),
                p,
                asset_ids: asset_ids.to_vec(),
                d,
                report: report_json(&dec.report),
            },
            k: dec.global.rank(),
            r_l: dec.local.iter().map(|c| c.eigen.rank()).collect(),
            eigenvalues: dec.global.eigenvalues.iter().copied().collect(),
            eigenvectors: Some(columns(&dec.global.eigenvectors)),
            local: dec
                .local
                .iter()
                .map(|c| LocalEnvelope {
                    start: c.range.start,
                    end: c.range.end,
                    eigenvalues: c.eigen.eigenvalues.iter().copied().collect(),
                    eigenvectors: columns(&c.eigen.eigenvectors),
                })
                .collect(),
            idiosyncratic: SparseSymmetric { dim: p, triplets },
            total: None,
        })
    }

    /// Rebuilds the decomposition. The report keeps only `k` and the local counts.
    pub fn to_decomposition(&self) -> Result<CovarianceDecomposition> {
        if self.schema != SCHEMA_VERSION {
            return Err(Error::MalformedCsv {
                context: "decomposition envelope".into(),
                message: format!("unsupported schema `{}`", self.schema),
            });
        }
        let p = self.meta.p;
        let vectors = self
            .eigenvectors
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("envelope has no global eigenvectors".into()))?;
        if vectors.len() != self.eigenvalues.len() || self.eigenvalues.len() != self.k {
            return Err(Error::DimensionMismatch(
                "global eigenpairs disagree with k".into(),
            ));
        }
        let global = EigenSystem {
            eigenvalues: DVector::from_column_slice(&self.eigenvalues),
            eigenvectors: from_columns(vectors, p, "global")?,
        };
        let mut local = Vec::with_capacity(self.local.len());
        for l in &self.local {
            if l.end < l.start || l.eigenvectors.len() != l.eigenvalues.len() {
                return Err(Error::DimensionMismatch(format!(
                    "local block {}..{}",
                    l.start, l.end
                )));
            }
            local.push(LocalComponent {
                range: l.start..l.end,
                eigen: EigenSystem {
                    eigenvalues: DVector::from_column_slice(&l.eigenvalues),
                    eigenvectors: from_columns(&l.eigenvectors, l.end - l.start, "local")?,
                },
            });
        }
        if self.idiosyncratic.dim != p {
            return Err(Error::DimensionMismatch(
                "idiosyncratic dimension differs from p".into(),
            ));
        }
        let mut idio = DMatrix::zeros(p, p);
        for &Triplet(i, j, v) in &self.idiosyncratic.triplets {
            if i >= p || j >= p {
                return Err(Error::DimensionMismatch(format!(
                    "triplet ({i}, {j}) outside {p}x{p}"
                )));
            }
            idio[(i, j)] = v;
            idio[(j, i)] = v;
        }
        let report = FitReport {
            k: self.k,
            local_factors: self.r_l.clone(),
            ..Default::default()
        };
        CovarianceDecomposition::from_parts(
            global,
            local,
            SymmetricMatrix::from_matrix(idio)?,
            report,
        )
    }

    pub fn to_writer<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer_pretty(writer, self).map_err(|e| Error::MalformedCsv {
            context: "decomposition envelope".into(),
            message: e.to_string(),
        })
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        serde_json::from_reader(reader).map_err(|e| Error::MalformedCsv {
            context: "decomposition envelope".into(),
            message: e.to_string(),
        })
    }
}

/// The fit report as JSON. Non-finite criterion values (a lone positive
/// eigenvalue gives an infinite ratio) are written as strings.
pub fn report_json(report: &FitReport) -> serde_json::Value {
    serde_json::to_value(ReportView(report)).unwrap_or(serde_json::Value::Null)
}

struct ReportView<'a>(&'a FitReport);

impl Serialize for ReportView<'_> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let r = self.0;
        let finite = |v: &Option<crate::selection::SelectionResult>| {
            v.as_ref().map(|sel| {
                let values: Vec<serde_json::Value> = sel
                    .criterion_values
                    .iter()
                    .map(|&c| match serde_json::Number::from_f64(c) {
                        Some(n) => serde_json::Value::Number(n),
                        None => serde_json::Value::String(c.to_string()),
                    })
                    .collect();
                serde_json::json!({
                    "chosen": sel.chosen,
                    "criterion_values": values,
                    "cap": sel.cap,
                    "diagnostics": sel.diagnostics,
                })
            })
        };
        let mut st = s.serialize_struct("FitReport", 7)?;
        st.serialize_field("k", &r.k)?;
        st.serialize_field("k_selection", &finite(&r.k_selection))?;
        st.serialize_field("local_factors", &r.local_factors)?;
        st.serialize_field(
            "local_selections",
            &r.local_selections.iter().map(finite).collect::<Vec<_>>(),
        )?;
        st.serialize_field("tau", &r.tau)?;
        let cross: Vec<serde_json::Value> = r
            .cross_ranks
            .iter()
            .map(|c| {
                serde_json::json!({
                    "continents": [c.continents.0, c.continents.1],
                    "rank": c.rank,
                    "selection": finite(&c.selection),
                })
            })
            .collect();
        st.serialize_field("cross_ranks", &cross)?;
        st.serialize_field("diagnostics", &r.diagnostics)?;
        st.end()
    }
}

/// Writes a labelled dense matrix: header `asset_id,<ids>`, one row per asset.
pub fn write_dense_csv(path: &Path, ids: &[String], matrix: &DMatrix<f64>) -> Result<()> {
    if ids.len() != matrix.nrows() || matrix.nrows() != matrix.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "{} ids for a {}x{} matrix",
            ids.len(),
            matrix.nrows(),
            matrix.ncols()
        )));
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    let csv_err = |e: csv::Error| Error::MalformedCsv {
        context: path.display().to_string(),
        message: e.to_string(),
    };
    let mut header = vec!["asset_id".to_string()];
    header.extend(ids.iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    for (i, id) in ids.iter().enumerate() {
        let mut row = vec![id.clone()];
        row.extend(matrix.row(i).iter().map(|v| format!("{v:e}")));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a matrix written by [`write_dense_csv`].
pub fn read_dense_csv(path: &Path) -> Result<(Vec<String>, DMatrix<f64>)> {
    let context = path.display().to_string();
    let bad = |message: String| Error::MalformedCsv {
        context: context.clone(),
        message,
    };
    let mut r = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let ids: Vec<String> = r
        .headers()
        .map_err(|e| bad(e.to_string()))?
        .iter()
        .skip(1)
        .map(str::to_string)
        .collect();
    let n = ids.len();
    let mut values = Vec::with_capacity(n * n);
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        if rec.len() != n + 1 || rec.get(0) != ids.get(rows).map(String::as_str) {
            return Err(bad(format!("row {} does not match the header", rows + 1)));
        }
        for cell in rec.iter().skip(1) {
            values.push(
                cell.trim()
                    .parse::<f64>()
                    .map_err(|e| bad(format!("`{cell}`: {e}")))?,
            );
        }
        rows += 1;
    }
    if rows != n {
        return Err(bad(format!("{rows} rows for {n} columns")));
    }
    Ok((ids, DMatrix::from_row_slice(n, n, &values)))
}
