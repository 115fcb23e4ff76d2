use chrono::NaiveDate;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use spoet_core::covariance::sample_covariance;
use spoet_core::panel::aggregate_returns;
use spoet_core::simulation::{
    business_days, generate_true_model, simulate_staggered_returns, SimConfig,
};
use spoet_core::spectral::full_eigen;
use spoet_core::{ReturnPanel, SymmetricMatrix};

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn panel(values: DMatrix<f64>) -> ReturnPanel {
    let ids = (0..values.nrows()).map(|i| format!("x{i}")).collect();
    let start = NaiveDate::from_ymd_opt(2021, 3, 1).unwrap();
    ReturnPanel::new(ids, business_days(start, values.ncols()), values, 1).unwrap()
}

/// Cyclic Jacobi rotations until the off-diagonal mass vanishes.
fn jacobi_eigenvalues(mut a: DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|(i, j)| i != j)
            .map(|(i, j)| a[(i, j)].powi(2))
            .sum();
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let mut r = DMatrix::identity(n, n);
                r[(p, p)] = c;
                r[(q, q)] = c;
                r[(p, q)] = s;
                r[(q, p)] = -s;
                a = r.transpose() * a * r;
            }
        }
    }
    let mut values: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    values.sort_by(|x, y| y.total_cmp(x));
    values
}

#[test]
fn eigen_matches_jacobi_rotations() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for n in [2, 5, 12] {
        let a = gaussian(&mut rng, n, n);
        let m = &a + a.transpose();
        let eig = full_eigen(&SymmetricMatrix::from_matrix(m.clone()).unwrap());
        let oracle = jacobi_eigenvalues(m.clone());
        for (x, y) in eig.eigenvalues.iter().zip(&oracle) {
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
        let v = &eig.eigenvectors;
        let rebuilt = v * DMatrix::from_diagonal(&eig.eigenvalues) * v.transpose();
        assert!((rebuilt - &m).amax() < 1e-10);
        assert!((v.transpose() * v - DMatrix::identity(n, n)).amax() < 1e-12);
    }
}

#[test]
fn sample_covariance_matches_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = gaussian(&mut rng, 4, 9);
    let cov = sample_covariance(&panel(x.clone())).unwrap();
    let n = x.ncols() as f64;
    for i in 0..4 {
        for j in 0..4 {
            let (mi, mj) = (x.row(i).sum() / n, x.row(j).sum() / n);
            let expected: f64 = (0..x.ncols())
                .map(|t| (x[(i, t)] - mi) * (x[(j, t)] - mj))
                .sum::<f64>()
                / n;
            assert!((cov.as_matrix()[(i, j)] - expected).abs() < 1e-13);
        }
    }
}

#[test]
fn aggregation_sums_the_most_recent_windows() {
    let x = DMatrix::from_fn(2, 11, |i, t| (10 * i + t) as f64);
    let p = panel(x.clone());
    let agg = aggregate_returns(&p, 3).unwrap();
    assert_eq!(agg.n_periods(), 3);
    assert_eq!(agg.frequency_days(), 3);
    for w in 0..3 {
        // 11 mod 3 = 2 oldest periods dropped
        let cols = [2 + 3 * w, 3 + 3 * w, 4 + 3 * w];
        assert_eq!(agg.periods()[w], p.periods()[cols[2]]);
        for i in 0..2 {
            let expected: f64 = cols.iter().map(|&t| x[(i, t)]).sum();
            assert_eq!(agg.values()[(i, w)], expected);
        }
    }
    assert!(aggregate_returns(&p, 12).is_err());
}

#[test]
fn staggered_closes_shrink_cross_continent_covariance() {
    let config = SimConfig {
        p: 20,
        continents: 2,
        countries: 4,
        country_size: 5,
        k: 1,
        r_l: 1,
        ..Default::default()
    };
    let model = generate_true_model(&config, 5).unwrap();
    let daily = simulate_staggered_returns(&model, &[0.0, 0.5], 40_000, 6).unwrap();
    let weekly = aggregate_returns(&daily, 5).unwrap();
    let sigma = model.sigma.as_matrix();
    let (s_daily, s_weekly) = (
        sample_covariance(&daily).unwrap(),
        sample_covariance(&weekly).unwrap(),
    );
    let block = |m: &DMatrix<f64>, r: usize, c: usize| m.view((r, c), (10, 10)).into_owned();
    let rel = |a: DMatrix<f64>, b: DMatrix<f64>| (&a - &b).norm() / b.norm();
    assert!(rel(block(s_daily.as_matrix(), 0, 0), block(sigma, 0, 0)) < 0.05);
    assert!(rel(block(s_daily.as_matrix(), 0, 10), block(sigma, 0, 10) * 0.5) < 0.05);
    // five-day sums keep 4.5 of 5 days of overlap
    assert!(
        rel(
            block(s_weekly.as_matrix(), 0, 10),
            block(sigma, 0, 10) * 4.5
        ) < 0.1
    );
    assert!(simulate_staggered_returns(&model, &[0.0], 10, 1).is_err());
}
