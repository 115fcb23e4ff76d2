//! Deterministic eigen and singular value primitives.
//!
//! Every decomposition is returned under a sign canon: in each (left) vector
//! the entry of largest magnitude is positive, with ties resolved by the
//! lowest index. This removes the sign ambiguity of eigenvectors so outputs
//! are reproducible.

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};

use crate::covariance::SymmetricMatrix;
use crate::error::{Error, Result};

/// Leading eigenpairs, eigenvalues in descending order.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenSystem {
    pub eigenvalues: DVector<f64>,
    /// `p x m`, orthonormal columns.
    pub eigenvectors: DMatrix<f64>,
}

impl EigenSystem {
    pub fn empty(p: usize) -> Self {
        EigenSystem {
            eigenvalues: DVector::zeros(0),
            eigenvectors: DMatrix::zeros(p, 0),
        }
    }

    pub fn dim(&self) -> usize {
        self.eigenvectors.nrows()
    }

    pub fn rank(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rank() == 0
    }

    /// `V diag(lambda) V'`.
    pub fn reconstruct(&self) -> SymmetricMatrix {
        let v = &self.eigenvectors;
        let mut scaled = v.clone();
        for (mut col, &l) in scaled.column_iter_mut().zip(self.eigenvalues.iter()) {
            col *= l;
        }
        SymmetricMatrix::symmetrized(&scaled * v.transpose())
    }

    /// Orthogonal projector `V V'` onto the retained eigenspace.
    pub fn projector(&self) -> DMatrix<f64> {
        &self.eigenvectors * self.eigenvectors.transpose()
    }
}

/// Leading singular triples, values in descending order.
#[derive(Debug, Clone, PartialEq)]
pub struct SingularTriples {
    pub singular_values: DVector<f64>,
    /// `rows x m`.
    pub left: DMatrix<f64>,
    /// `cols x m`.
    pub right: DMatrix<f64>,
}

impl SingularTriples {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    /// `sum_i xi_i u_i w_i'`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut scaled = self.left.clone();
        for (mut col, &s) in scaled.column_iter_mut().zip(self.singular_values.iter()) {
            col *= s;
        }
        scaled * self.right.transpose()
    }
}

/// Flips `v` so its largest-magnitude entry is positive. Returns whether it flipped.
fn canonical_sign(v: &mut nalgebra::DVectorViewMut<'_, f64>) -> bool {
    let mut best = 0;
    let mut best_abs = -1.0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > best_abs {
            best_abs = x.abs();
            best = i;
        }
    }
    if best_abs > 0.0 && v[best] < 0.0 {
        v.neg_mut();
        true
    } else {
        false
    }
}

/// Descending order of `values`, ties by lower index.
fn descending_order(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx
}

/// Full eigendecomposition, descending, under the sign canon.
pub fn full_eigen(matrix: &SymmetricMatrix) -> EigenSystem {
    top_k_eigen(matrix, matrix.dim()).expect("m = p is always admissible")
}

/// The `m` leading eigenpairs of a symmetric matrix.
pub fn top_k_eigen(matrix: &SymmetricMatrix, m: usize) -> Result<EigenSystem> {
    let p = matrix.dim();
    if m > p {
        return Err(Error::RankTooLarge {
            requested: m,
            max: p,
            context: "eigen decomposition".into(),
        });
    }
    if m == 0 {
        return Ok(EigenSystem::empty(p));
    }
    let eig = SymmetricEigen::new(matrix.as_matrix().clone());
    let order = descending_order(eig.eigenvalues.as_slice());
    let mut vectors = DMatrix::zeros(p, m);
    let mut values = DVector::zeros(m);
    for (slot, &src) in order.iter().take(m).enumerate() {
        values[slot] = eig.eigenvalues[src];
        vectors.set_column(slot, &eig.eigenvectors.column(src));
        canonical_sign(&mut vectors.column_mut(slot));
    }
    Ok(EigenSystem {
        eigenvalues: values,
        eigenvectors: vectors,
    })
}

/// All eigenvalues in ascending order.
pub fn eigenvalues_ascending(matrix: &SymmetricMatrix) -> Vec<f64> {
    let mut v: Vec<f64> = matrix
        .as_matrix()
        .clone()
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .collect();
    v.sort_by(f64::total_cmp);
    v
}

pub fn min_eigenvalue(matrix: &SymmetricMatrix) -> f64 {
    eigenvalues_ascending(matrix)
        .first()
        .copied()
        .unwrap_or(f64::INFINITY)
}

/// The `m` leading singular triples of a rectangular matrix.
pub fn truncated_svd(matrix: &DMatrix<f64>, m: usize) -> Result<SingularTriples> {
    let (rows, cols) = matrix.shape();
    let max = rows.min(cols);
    if m > max {
        return Err(Error::RankTooLarge {
            requested: m,
            max,
            context: "truncated SVD".into(),
        });
    }
    if m == 0 {
        return Ok(SingularTriples {
            singular_values: DVector::zeros(0),
            left: DMatrix::zeros(rows, 0),
            right: DMatrix::zeros(cols, 0),
        });
    }
    let svd = SVD::new(matrix.clone(), true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let order = descending_order(svd.singular_values.as_slice());
    let mut left = DMatrix::zeros(rows, m);
    let mut right = DMatrix::zeros(cols, m);
    let mut values = DVector::zeros(m);
    for (slot, &src) in order.iter().take(m).enumerate() {
        values[slot] = svd.singular_values[src];
        left.set_column(slot, &u.column(src));
        right.set_column(slot, &v_t.row(src).transpose());
        if canonical_sign(&mut left.column_mut(slot)) {
            right.column_mut(slot).neg_mut();
        }
    }
    Ok(SingularTriples {
        singular_values: values,
        left,
        right,
    })
}

/// All singular values in descending order.
pub fn singular_values(matrix: &DMatrix<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = matrix.singular_values().iter().copied().collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// Largest singular value.
pub fn spectral_norm(matrix: &DMatrix<f64>) -> f64 {
    if matrix.is_empty() {
        return 0.0;
    }
    singular_values(matrix)[0]
}

/// Spectral norm of a symmetric matrix: largest absolute eigenvalue.
pub fn spectral_norm_symmetric(matrix: &SymmetricMatrix) -> f64 {
    eigenvalues_ascending(matrix)
        .iter()
        .fold(0.0, |acc: f64, v| acc.max(v.abs()))
}

/// Applies `f` to the spectrum: `V diag(f(lambda)) V'`.
pub fn spectral_map(matrix: &SymmetricMatrix, f: impl Fn(f64) -> f64) -> SymmetricMatrix {
    let mut eig = full_eigen(matrix);
    eig.eigenvalues.apply(|l| *l = f(*l));
    eig.reconstruct()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_symmetric(p: usize, rng: &mut ChaCha8Rng) -> SymmetricMatrix {
        let a = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
        SymmetricMatrix::from_matrix(&a + a.transpose()).unwrap()
    }

    #[test]
    fn identity_gives_axis_vectors() {
        let eig = top_k_eigen(&SymmetricMatrix::identity(3), 2).unwrap();
        assert_eq!(eig.eigenvalues.as_slice(), &[1.0, 1.0]);
        // degenerate spectrum: compare the projector's trace and idempotence
        let proj = eig.projector();
        assert!((proj.trace() - 2.0).abs() < 1e-12);
        assert!((&proj * &proj - &proj).amax() < 1e-12);
    }

    #[test]
    fn diagonal_spectrum_is_sorted() {
        let m = SymmetricMatrix::from_diagonal(&[3.0, 1.0, 2.0]).unwrap();
        let eig = top_k_eigen(&m, 2).unwrap();
        assert!((eig.eigenvalues[0] - 3.0).abs() < 1e-14);
        assert!((eig.eigenvalues[1] - 2.0).abs() < 1e-14);
        assert!((eig.eigenvectors[(0, 0)] - 1.0).abs() < 1e-14);
        assert!((eig.eigenvectors[(2, 1)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn zero_rank_and_oversized_requests() {
        let m = SymmetricMatrix::identity(2);
        assert!(top_k_eigen(&m, 0).unwrap().is_empty());
        assert!(top_k_eigen(&m, 3).is_err());
        assert!(truncated_svd(&DMatrix::zeros(2, 3), 3).is_err());
    }

    #[test]
    fn full_reconstruction_and_canon() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = random_symmetric(6, &mut rng);
        let eig = top_k_eigen(&m, 6).unwrap();
        let err = (eig.reconstruct().as_matrix() - m.as_matrix()).norm();
        assert!(err < 1e-10);
        let gram = eig.eigenvectors.transpose() * &eig.eigenvectors;
        assert!((gram - DMatrix::identity(6, 6)).amax() < 1e-10);
        for col in eig.eigenvectors.column_iter() {
            let imax = col.iamax();
            assert!(col[imax] > 0.0);
        }
        assert!(eig.eigenvalues.as_slice().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn rank_one_svd_is_exact() {
        let u = DVector::from_column_slice(&[0.6, 0.8]);
        let v = DVector::from_column_slice(&[0.0, -1.0, 0.0]);
        let m = &u * v.transpose();
        let svd = truncated_svd(&m, 1).unwrap();
        assert!((svd.singular_values[0] - 1.0).abs() < 1e-12);
        assert!((svd.left.column(0) - &u).amax() < 1e-12);
        assert!((svd.right.column(0) - &v).amax() < 1e-12);
    }

    #[test]
    fn full_rank_svd_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = DMatrix::from_fn(4, 3, |_, _| rng.random_range(-1.0..1.0));
        let svd = truncated_svd(&m, 3).unwrap();
        assert!((svd.reconstruct() - &m).amax() < 1e-10);
    }

    #[test]
    fn determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = random_symmetric(12, &mut rng);
        let a = top_k_eigen(&m, 4).unwrap();
        let b = top_k_eigen(&m, 4).unwrap();
        assert_eq!(a, b);
        let r = DMatrix::from_fn(5, 7, |i, j| (i * 7 + j) as f64 * 0.37 % 1.3);
        assert_eq!(truncated_svd(&r, 3).unwrap(), truncated_svd(&r, 3).unwrap());
    }

    #[test]
    fn spectral_map_inverse_sqrt() {
        let m = SymmetricMatrix::from_diagonal(&[4.0, 9.0]).unwrap();
        let s = spectral_map(&m, |l| 1.0 / l.sqrt());
        assert!((s[(0, 0)] - 0.5).abs() < 1e-14);
        assert!((s[(1, 1)] - 1.0 / 3.0).abs() < 1e-14);
        assert!((spectral_norm_symmetric(&m) - 9.0).abs() < 1e-12);
    }
}
