//! Pilot estimators: sample covariance, frequency descaling and correlation.

use std::ops::{Index, Range};

use crate::error::{Error, Result};
use crate::panel::ReturnPanel;
use nalgebra::{DMatrix, DVector};

/// A finite, exactly symmetric square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMatrix(DMatrix<f64>);

impl SymmetricMatrix {
    /// Symmetrizes `m` as `(m + m') / 2`, then mirrors the lower triangle so
    /// the result is bit-exactly symmetric.
    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "expected a square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "matrix has non-finite entries".into(),
            ));
        }
        Ok(Self::symmetrized(m))
    }

    pub(crate) fn symmetrized(mut m: DMatrix<f64>) -> Self {
        let n = m.nrows();
        for j in 0..n {
            for i in j + 1..n {
                let v = 0.5 * (m[(i, j)] + m[(j, i)]);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        SymmetricMatrix(m)
    }

    pub fn identity(p: usize) -> Self {
        SymmetricMatrix(DMatrix::identity(p, p))
    }

    pub fn zeros(p: usize) -> Self {
        SymmetricMatrix(DMatrix::zeros(p, p))
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::from_matrix(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn diagonal(&self) -> DVector<f64> {
        self.0.diagonal()
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    /// Principal submatrix on `range`.
    pub fn block(&self, range: Range<usize>) -> SymmetricMatrix {
        SymmetricMatrix(
            self.0
                .view((range.start, range.start), (range.len(), range.len()))
                .into_owned(),
        )
    }

    /// Entrywise scaling.
    pub fn scaled(&self, factor: f64) -> SymmetricMatrix {
        SymmetricMatrix(&self.0 * factor)
    }

    pub fn add(&self, other: &SymmetricMatrix) -> SymmetricMatrix {
        SymmetricMatrix(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &SymmetricMatrix) -> SymmetricMatrix {
        SymmetricMatrix(&self.0 - &other.0)
    }

    /// Block-diagonal assembly in the given order.
    pub fn block_diagonal(blocks: &[SymmetricMatrix]) -> SymmetricMatrix {
        let p = blocks.iter().map(SymmetricMatrix::dim).sum();
        let mut out = DMatrix::zeros(p, p);
        let mut at = 0;
        for b in blocks {
            out.view_mut((at, at), (b.dim(), b.dim())).copy_from(&b.0);
            at += b.dim();
        }
        SymmetricMatrix(out)
    }

    /// Average variance `trace / p`; used to make tolerances scale-free.
    pub fn mean_variance(&self) -> f64 {
        if self.dim() == 0 {
            0.0
        } else {
            self.trace() / self.dim() as f64
        }
    }
}

impl Index<(usize, usize)> for SymmetricMatrix {
    type Output = f64;

    fn index(&self, idx: (usize, usize)) -> &f64 {
        &self.0[idx]
    }
}

impl TryFrom<DMatrix<f64>> for SymmetricMatrix {
    type Error = Error;

    fn try_from(m: DMatrix<f64>) -> Result<Self> {
        SymmetricMatrix::from_matrix(m)
    }
}

impl From<SymmetricMatrix> for DMatrix<f64> {
    fn from(m: SymmetricMatrix) -> Self {
        m.0
    }
}

/// Mean-centred outer-product average with divisor `n` (the number of
/// periods), not `n - 1`.
pub fn sample_covariance(panel: &ReturnPanel) -> Result<SymmetricMatrix> {
    covariance_of(panel.values())
}

pub(crate) fn covariance_of(values: &DMatrix<f64>) -> Result<SymmetricMatrix> {
    let n = values.ncols();
    if n < 2 {
        return Err(Error::InsufficientPeriods { needed: 2, got: n });
    }
    let mean = values.column_mean();
    let mut centered = values.clone();
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }
    let cov = (&centered * centered.transpose()) / n as f64;
    Ok(SymmetricMatrix::symmetrized(cov))
}

/// Divides a `d`-period covariance by `d` so it targets the one-period scale.
pub fn descale_covariance(cov: &SymmetricMatrix, d: usize) -> Result<SymmetricMatrix> {
    if d == 0 {
        return Err(Error::InvalidArgument(
            "descaling factor d must be positive".into(),
        ));
    }
    if d == 1 {
        return Ok(cov.clone());
    }
    Ok(cov.scaled(1.0 / d as f64))
}

/// Returns `(R, D)` with `R = D^{-1/2} cov D^{-1/2}` and unit diagonal, where
/// `D` is the diagonal of `cov`.
pub fn correlation_from_covariance(
    cov: &SymmetricMatrix,
) -> Result<(SymmetricMatrix, DVector<f64>)> {
    let diag = cov.diagonal();
    if let Some((index, &value)) = diag.iter().enumerate().find(|(_, v)| **v <= 0.0) {
        return Err(Error::DegenerateAsset { index, value });
    }
    let inv_sd = diag.map(|v| 1.0 / v.sqrt());
    let p = cov.dim();
    let mut r = DMatrix::from_fn(p, p, |i, j| cov[(i, j)] * inv_sd[i] * inv_sd[j]);
    r.fill_diagonal(1.0);
    Ok((SymmetricMatrix::symmetrized(r), diag))
}

/// Inverse of [`correlation_from_covariance`]: `D^{1/2} R D^{1/2}`.
pub fn covariance_from_correlation(corr: &SymmetricMatrix, diag: &DVector<f64>) -> SymmetricMatrix {
    let sd = diag.map(f64::sqrt);
    let p = corr.dim();
    SymmetricMatrix::symmetrized(DMatrix::from_fn(p, p, |i, j| corr[(i, j)] * sd[i] * sd[j]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::tests::panel_from_rows;

    #[test]
    fn constant_asset_has_zero_variance() {
        let cov = sample_covariance(&panel_from_rows(&[&[0.3, 0.3, 0.3]])).unwrap();
        assert_eq!(cov[(0, 0)], 0.0);
    }

    #[test]
    fn identical_assets_are_perfectly_correlated() {
        let cov =
            sample_covariance(&panel_from_rows(&[&[1.0, -2.0, 0.5], &[1.0, -2.0, 0.5]])).unwrap();
        assert_eq!(cov[(0, 1)], cov[(0, 0)]);
        assert_eq!(cov[(1, 1)], cov[(0, 0)]);
    }

    #[test]
    fn hand_computed_divisor_n() {
        // means 2 and 0; deviations (-1,0,1) and (1,0,-1); sums of products 2, -2 over n = 3
        let cov =
            sample_covariance(&panel_from_rows(&[&[1.0, 2.0, 3.0], &[1.0, 0.0, -1.0]])).unwrap();
        let expected = [[2.0 / 3.0, -2.0 / 3.0], [-2.0 / 3.0, 2.0 / 3.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((cov[(i, j)] - expected[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn descale_divides_entries() {
        let cov = SymmetricMatrix::from_matrix(DMatrix::from_element(2, 2, 5.0)).unwrap();
        assert_eq!(descale_covariance(&cov, 1).unwrap(), cov);
        let d = descale_covariance(&cov, 5).unwrap();
        assert!(d.as_matrix().iter().all(|&v| v == 1.0));
        assert!(descale_covariance(&cov, 0).is_err());
    }

    #[test]
    fn correlation_hand_example() {
        let cov =
            SymmetricMatrix::from_matrix(DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 1.0]))
                .unwrap();
        let (r, d) = correlation_from_covariance(&cov).unwrap();
        assert_eq!(d.as_slice(), &[4.0, 1.0]);
        assert!(r.as_matrix().iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn diagonal_covariance_has_identity_correlation() {
        let cov = SymmetricMatrix::from_diagonal(&[2.0, 3.0, 0.5]).unwrap();
        let (r, _) = correlation_from_covariance(&cov).unwrap();
        assert_eq!(r, SymmetricMatrix::identity(3));
    }

    #[test]
    fn zero_variance_asset_is_rejected() {
        let cov = SymmetricMatrix::from_diagonal(&[2.0, 0.0]).unwrap();
        assert!(matches!(
            correlation_from_covariance(&cov),
            Err(Error::DegenerateAsset { index: 1, .. })
        ));
    }

    #[test]
    fn from_matrix_validates() {
        assert!(SymmetricMatrix::from_matrix(DMatrix::zeros(2, 3)).is_err());
        assert!(SymmetricMatrix::from_matrix(DMatrix::from_element(2, 2, f64::INFINITY)).is_err());
        let s = SymmetricMatrix::from_matrix(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]))
            .unwrap();
        assert_eq!(s[(0, 1)], s[(1, 0)]);
    }

    proptest::proptest! {
        #[test]
        fn sample_covariance_is_psd(data in proptest::collection::vec(-1.0f64..1.0, 40)) {
            let values = DMatrix::from_column_slice(4, 10, &data);
            let cov = covariance_of(&values).unwrap();
            let min = cov.as_matrix().clone().symmetric_eigen().eigenvalues.min();
            let slack = -1e-10 * cov.mean_variance().max(f64::MIN_POSITIVE);
            proptest::prop_assert!(min >= slack);
        }

        #[test]
        fn correlation_round_trip(data in proptest::collection::vec(-1.0f64..1.0, 30)) {
            let values = DMatrix::from_column_slice(3, 10, &data);
            let cov = covariance_of(&values).unwrap();
            proptest::prop_assume!(cov.diagonal().min() > 1e-6);
            let (r, d) = correlation_from_covariance(&cov).unwrap();
            let back = covariance_from_correlation(&r, &d);
            let scale = cov.as_matrix().amax();
            proptest::prop_assert!((back.as_matrix() - cov.as_matrix()).amax() <= 1e-12 * scale);
        }
    }
}
