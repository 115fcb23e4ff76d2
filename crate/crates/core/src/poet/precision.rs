use nalgebra::{DMatrix, DVector};

use super::CovarianceDecomposition;
use crate::covariance::SymmetricMatrix;
use crate::error::{Error, Result};
use crate::spectral::{full_eigen, spectral_map};
use crate::thresholding::pd_floor;

/// A precision matrix and whether its eigenvalues had to be clipped.
#[derive(Debug, Clone, PartialEq)]
pub struct Precision {
    pub matrix: SymmetricMatrix,
    pub repaired: bool,
}

/// Inverts `global + local + idiosyncratic` by nested Woodbury updates:
/// invert the idiosyncratic part one connected block at a time, fold in the
/// per-country low-rank terms, then the global low-rank term.
///
/// With `pd_repair`, a total whose smallest eigenvalue is below
/// `1e-8 * trace / p` is inverted with those eigenvalues clipped to that
/// floor instead, and the result is flagged.
pub fn invert_decomposition(dec: &CovarianceDecomposition, pd_repair: bool) -> Result<Precision> {
    if pd_repair {
        let floor = pd_floor(&dec.total);
        let eig = full_eigen(&dec.total);
        let min = eig
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if min < floor {
            let matrix = spectral_map(&dec.total, |l| 1.0 / l.max(floor));
            return Ok(Precision {
                matrix,
                repaired: true,
            });
        }
        match woodbury(dec) {
            Ok(matrix) => {
                return Ok(Precision {
                    matrix,
                    repaired: false,
                })
            }
            // total is PD but its structured pieces are not individually invertible
            Err(_) => {
                let matrix = spectral_map(&dec.total, |l| 1.0 / l);
                return Ok(Precision {
                    matrix,
                    repaired: false,
                });
            }
        }
    }
    Ok(Precision {
        matrix: woodbury(dec)?,
        repaired: false,
    })
}

fn woodbury(dec: &CovarianceDecomposition) -> Result<SymmetricMatrix> {
    let p = dec.dim();
    let mut inverse = invert_sparse_blocks(&dec.idiosyncratic)?;

    let r = dec.local_rank();
    if r > 0 {
        let mut u = DMatrix::zeros(p, r);
        let mut c = DVector::zeros(r);
        let mut col = 0;
        for comp in &dec.local {
            let m = comp.eigen.rank();
            u.view_mut((comp.range.start, col), (comp.range.len(), m))
                .copy_from(&comp.eigen.eigenvectors);
            c.rows_mut(col, m).copy_from(&comp.eigen.eigenvalues);
            col += m;
        }
        inverse = low_rank_update(&inverse, &u, &c)?;
    }
    if !dec.global.is_empty() {
        inverse = low_rank_update(&inverse, &dec.global.eigenvectors, &dec.global.eigenvalues)?;
    }
    Ok(SymmetricMatrix::symmetrized(inverse))
}

/// `(A + U diag(c) U')^{-1}` from `A^{-1}` without inverting `diag(c)`:
/// `A^{-1} - A^{-1} U (I + diag(c) U' A^{-1} U)^{-1} diag(c) U' A^{-1}`.
fn low_rank_update(
    a_inv: &DMatrix<f64>,
    u: &DMatrix<f64>,
    c: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let m = c.len();
    let a_inv_u = a_inv * u;
    let mut inner = u.transpose() * &a_inv_u;
    for i in 0..m {
        inner.row_mut(i).scale_mut(c[i]);
    }
    inner += DMatrix::identity(m, m);
    let mut rhs = a_inv_u.transpose();
    for i in 0..m {
        rhs.row_mut(i).scale_mut(c[i]);
    }
    let solved = inner.lu().solve(&rhs).ok_or_else(|| {
        Error::NotPositiveDefinite("low-rank update made the matrix singular".into())
    })?;
    Ok(a_inv - a_inv_u * solved)
}

/// Inverts a symmetric matrix one connected component (of its nonzero
/// pattern) at a time. Diagonal and sector-blocked matrices split into many
/// small components.
fn invert_sparse_blocks(m: &SymmetricMatrix) -> Result<DMatrix<f64>> {
    let p = m.dim();
    let mut parent: Vec<usize> = (0..p).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for j in 0..p {
        for i in j + 1..p {
            if m[(i, j)] != 0.0 {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut components: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; p];
    for i in 0..p {
        let root = find(&mut parent, i);
        if slot[root] == usize::MAX {
            slot[root] = components.len();
            components.push(Vec::new());
        }
        components[slot[root]].push(i);
    }

    let mut out = DMatrix::zeros(p, p);
    for idx in components {
        let n = idx.len();
        let block = DMatrix::from_fn(n, n, |a, b| m[(idx[a], idx[b])]);
        let inv = if n == 1 {
            DMatrix::from_element(1, 1, 1.0 / block[(0, 0)])
        } else {
            match block.clone().cholesky() {
                Some(chol) => chol.inverse(),
                None => block.try_inverse().ok_or(Error::SingularIdiosyncratic)?,
            }
        };
        if inv.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularIdiosyncratic);
        }
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                out[(i, j)] = inv[(a, b)];
            }
        }
    }
    Ok(out)
}
