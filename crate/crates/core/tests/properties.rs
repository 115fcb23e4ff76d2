use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use spoet_core::poet::{invert_decomposition, CovarianceDecomposition, FitReport, LocalComponent};
use spoet_core::portfolio::{min_variance_weights, PortfolioProblem};
use spoet_core::spectral::EigenSystem;
use spoet_core::SymmetricMatrix;

fn orthonormal(raw: Vec<f64>, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_vec(rows, cols, raw)
        .qr()
        .q()
        .columns(0, cols)
        .into_owned()
}

prop_compose! {
    fn decomposition()(countries in 1usize..4, size in 2usize..6)
        (global_raw in prop::collection::vec(-1.0f64..1.0, countries * size),
         global_value in 2.0f64..30.0,
         local_raw in prop::collection::vec(-1.0f64..1.0, countries * size),
         local_values in prop::collection::vec(0.5f64..5.0, countries),
         idio in prop::collection::vec(0.2f64..2.0, countries * size),
         countries in Just(countries), size in Just(size)) -> CovarianceDecomposition {
        let p = countries * size;
        let global = EigenSystem {
            eigenvalues: DVector::from_element(1, global_value),
            eigenvectors: orthonormal(global_raw, p, 1),
        };
        let local = (0..countries)
            .map(|c| LocalComponent {
                range: c * size..(c + 1) * size,
                eigen: EigenSystem {
                    eigenvalues: DVector::from_element(1, local_values[c]),
                    eigenvectors: orthonormal(local_raw[c * size..(c + 1) * size].to_vec(), size, 1),
                },
            })
            .collect();
        let idio = SymmetricMatrix::from_matrix(DMatrix::from_diagonal(&DVector::from_vec(idio))).unwrap();
        CovarianceDecomposition::from_parts(global, local, idio, FitReport::default()).unwrap()
    }
}

prop_compose! {
    fn covariance()(p in 2usize..8)(raw in prop::collection::vec(-1.0f64..1.0, p * p), p in Just(p)) -> DMatrix<f64> {
        let a = DMatrix::from_vec(p, p, raw);
        let m = &a * a.transpose() + DMatrix::identity(p, p) * 0.2;
        (&m + m.transpose()) * 0.5
    }
}

proptest! {
    #[test]
    fn precision_inverts_the_total(dec in decomposition()) {
        let precision = invert_decomposition(&dec, false).unwrap();
        let product = precision.matrix.as_matrix() * dec.total.as_matrix();
        let p = product.nrows();
        prop_assert!((product - DMatrix::identity(p, p)).amax() < 1e-9);
        prop_assert!(!precision.repaired);
    }

    #[test]
    fn weights_satisfy_first_order_conditions(s in covariance(), extra in 0.0f64..3.0) {
        let p = s.nrows();
        let c = 1.0 + extra;
        let w = min_variance_weights(&PortfolioProblem::new(SymmetricMatrix::from_matrix(s.clone()).unwrap(), c)).unwrap();
        prop_assert!((w.sum() - 1.0).abs() < 1e-8);
        prop_assert!(w.lp_norm(1) <= c + 1e-8);
        // no feasible direction along a pair of assets lowers the variance
        let g = &s * &w;
        let base = (w.transpose() * &s * &w)[0];
        for i in 0..p {
            for j in 0..p {
                if i == j {
                    continue;
                }
                let mut v = w.clone();
                v[i] += 1e-4;
                v[j] -= 1e-4;
                if v.lp_norm(1) <= c {
                    prop_assert!((v.transpose() * &s * &v)[0] >= base - 1e-9, "gradient {g}");
                }
            }
        }
    }
}
