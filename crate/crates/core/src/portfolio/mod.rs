//! Minimum-variance portfolios under a gross-exposure cap, and a weekly
//! rebalancing backtest.

mod backtest;

pub use backtest::{
    backtest, best_k, write_report_csv, write_weights_csv, BacktestConfig, BacktestMethod,
    BacktestReport, BacktestRow, WeightRecord, REPORT_COLUMNS,
};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::covariance::SymmetricMatrix;
use crate::error::{Error, Result};

/// `min w' S w` subject to `sum w = 1` and `||w||_1 <= c`.
#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioProblem {
    pub covariance: SymmetricMatrix,
    pub exposure_cap: f64,
    pub tolerance: f64,
    pub max_iter: usize,
}

impl PortfolioProblem {
    pub fn new(covariance: SymmetricMatrix, exposure_cap: f64) -> Self {
        PortfolioProblem {
            covariance,
            exposure_cap,
            tolerance: 1e-8,
            max_iter: 50_000,
        }
    }
}

/// Solves a [`PortfolioProblem`].
///
/// If the unconstrained minimiser `S^{-1} 1 / 1' S^{-1} 1` already satisfies
/// the cap it is returned. Otherwise ADMM on the splitting `w = z`, with `w`
/// carrying the budget constraint and `z` the L1 ball, runs from zero; every
/// few iterations the sign pattern of `z` is used to solve the KKT system
/// exactly, and that solution is returned once it checks out.
pub fn min_variance_weights(problem: &PortfolioProblem) -> Result<DVector<f64>> {
    let c = problem.exposure_cap;
    if !(c >= 1.0 && c.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "exposure cap must be >= 1, got {c}"
        )));
    }
    if !(problem.tolerance > 0.0) || problem.max_iter == 0 {
        return Err(Error::InvalidArgument(
            "tolerance and iteration cap must be positive".into(),
        ));
    }
    let sigma = problem.covariance.as_matrix();
    let p = sigma.nrows();
    if p == 0 {
        return Err(Error::InvalidArgument("empty covariance".into()));
    }
    let chol = sigma
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("portfolio covariance".into()))?;
    let ones = DVector::from_element(p, 1.0);
    let s_inv_one = chol.solve(&ones);
    let unconstrained = &s_inv_one / s_inv_one.sum();
    if unconstrained.lp_norm(1) <= c + problem.tolerance {
        return Ok(unconstrained);
    }

    let tol = problem.tolerance;
    let scale = problem.covariance.trace() / p as f64;
    let mut rho = scale;
    let mut factor = kkt_factor(sigma, rho)?;
    let mut w;
    let mut z = DVector::zeros(p);
    let mut u = DVector::zeros(p);
    let (mut primal, mut dual) = (f64::INFINITY, f64::INFINITY);
    for iter in 1..=problem.max_iter {
        // w-update: minimise w'Sw + rho/2 |w - z + u|^2 with 1'w = 1
        let rhs = (&z - &u) * rho;
        let a = factor.solve(&rhs);
        let b = factor.solve(&ones);
        let nu = (a.sum() - 1.0) / b.sum();
        w = a - b * nu;

        let z_prev = z.clone();
        z = project_l1_ball(&(&w + &u), c);
        u += &w - &z;

        primal = (&w - &z).lp_norm(1);
        dual = rho * (&z - &z_prev).lp_norm(1);

        if iter % 25 == 0 {
            if let Some(exact) = polish(sigma, &z, c, tol) {
                return Ok(exact);
            }
            // residual balancing
            let new_rho = if primal > 10.0 * dual {
                rho * 2.0
            } else if dual > 10.0 * primal {
                rho / 2.0
            } else {
                rho
            };
            if new_rho != rho {
                u *= rho / new_rho;
                rho = new_rho;
                factor = kkt_factor(sigma, rho)?;
            }
        }
        if primal <= tol * 1e-1 && dual <= tol * scale.max(1.0) {
            if let Some(exact) = polish(sigma, &z, c, tol) {
                return Ok(exact);
            }
            // w meets the budget exactly and is within `primal` of the ball
            if w.lp_norm(1) <= c + tol {
                return Ok(w);
            }
        }
    }
    Err(Error::ConvergenceFailure {
        iterations: problem.max_iter,
        primal,
        dual,
    })
}

fn kkt_factor(sigma: &DMatrix<f64>, rho: f64) -> Result<Cholesky<f64, Dyn>> {
    let p = sigma.nrows();
    (sigma * 2.0 + DMatrix::identity(p, p) * rho)
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("ADMM system".into()))
}

/// Euclidean projection onto `{x : ||x||_1 <= c}`.
pub(crate) fn project_l1_ball(v: &DVector<f64>, c: f64) -> DVector<f64> {
    if v.lp_norm(1) <= c {
        return v.clone();
    }
    let mut mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, m) in mags.iter().enumerate() {
        cumsum += m;
        let t = (cumsum - c) / (j + 1) as f64;
        if *m > t {
            theta = t;
        } else {
            break;
        }
    }
    v.map(|x| x.signum() * (x.abs() - theta).max(0.0))
}

/// Exact solution for the support and signs of `z` with the cap binding,
/// accepted only if it satisfies every KKT condition.
fn polish(sigma: &DMatrix<f64>, z: &DVector<f64>, c: f64, tol: f64) -> Option<DVector<f64>> {
    let p = sigma.nrows();
    let zmax = z.amax();
    if zmax == 0.0 {
        return None;
    }
    let support: Vec<usize> = (0..p).filter(|&i| z[i].abs() > 1e-9 * zmax).collect();
    let m = support.len();
    let signs: Vec<f64> = support.iter().map(|&i| z[i].signum()).collect();
    // with one sign throughout, the cap row duplicates the budget row
    let long_only = signs.iter().all(|&s| s == signs[0]);
    if long_only && (signs[0] < 0.0 || c > 1.0 + tol) {
        return None;
    }
    // [2 S_ss  1  s] [w ]   [0]
    // [1'      0  0] [nu] = [1]
    // [s'      0  0] [mu]   [c]
    let n = if long_only { m + 1 } else { m + 2 };
    let mut kkt = DMatrix::zeros(n, n);
    for (a, &i) in support.iter().enumerate() {
        for (b, &j) in support.iter().enumerate() {
            kkt[(a, b)] = 2.0 * sigma[(i, j)];
        }
        kkt[(a, m)] = 1.0;
        kkt[(m, a)] = 1.0;
        if !long_only {
            kkt[(a, m + 1)] = signs[a];
            kkt[(m + 1, a)] = signs[a];
        }
    }
    let mut rhs = DVector::zeros(n);
    rhs[m] = 1.0;
    if !long_only {
        rhs[m + 1] = c;
    }
    let sol = kkt.lu().solve(&rhs)?;
    let (nu, mu) = (sol[m], if long_only { 0.0 } else { sol[m + 1] });
    if !(mu >= -tol) || sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mut w = DVector::zeros(p);
    for (a, &i) in support.iter().enumerate() {
        if sol[a] * signs[a] < 0.0 {
            return None;
        }
        w[i] = sol[a];
    }
    let grad = sigma * &w * 2.0;
    let slack = tol.max(1e-10) * (1.0 + mu.abs() + nu.abs());
    for i in 0..p {
        if w[i] != 0.0 {
            continue;
        }
        // long-only: nu absorbs the cap multiplier, which can be taken as large as needed
        let ok = if long_only {
            grad[i] + nu >= -slack
        } else {
            (grad[i] + nu).abs() <= mu + slack
        };
        if !ok {
            return None;
        }
    }
    if (w.sum() - 1.0).abs() > tol || w.lp_norm(1) > c + tol {
        return None;
    }
    Some(w)
}

/// Root mean square of the weekly portfolio returns.
pub fn realized_risk(weekly_returns: &[f64]) -> Result<f64> {
    if weekly_returns.is_empty() {
        return Err(Error::InvalidArgument("no returns to measure".into()));
    }
    let ms = weekly_returns.iter().map(|r| r * r).sum::<f64>() / weekly_returns.len() as f64;
    Ok(ms.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solve(cov: DMatrix<f64>, c: f64) -> DVector<f64> {
        min_variance_weights(&PortfolioProblem::new(
            SymmetricMatrix::from_matrix(cov).unwrap(),
            c,
        ))
        .unwrap()
    }

    #[test]
    fn identity_gives_equal_weights() {
        for c in [1.0, 2.0, 10.0] {
            let w = solve(DMatrix::identity(4, 4), c);
            assert!(w.iter().all(|x| (x - 0.25).abs() < 1e-12));
        }
    }

    #[test]
    fn diagonal_closed_form() {
        let w = solve(
            DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0])),
            5.0,
        );
        assert!((w[0] - 0.8).abs() < 1e-12 && (w[1] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn cap_binds_when_shorting_is_attractive() {
        // strongly correlated pair: the unconstrained solution shorts the riskier asset
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 1.2, 1.2, 4.0]);
        let unconstrained = solve(cov.clone(), 100.0);
        assert!(unconstrained[1] < 0.0);
        let w = solve(cov, 1.0);
        assert!(w.iter().all(|x| *x >= -1e-12));
        assert!((w.sum() - 1.0).abs() < 1e-12);
        assert!((w[0] - 1.0).abs() < 1e-9);
        let w = solve(DMatrix::from_row_slice(2, 2, &[1.0, 1.2, 1.2, 4.0]), 1.1);
        assert!((w[0] - 1.05).abs() < 1e-9 && (w[1] + 0.05).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_problems() {
        let s = SymmetricMatrix::identity(2);
        assert!(min_variance_weights(&PortfolioProblem::new(s.clone(), 0.5)).is_err());
        let singular = SymmetricMatrix::from_diagonal(&[1.0, 0.0]).unwrap();
        assert!(matches!(
            min_variance_weights(&PortfolioProblem::new(singular, 1.0)),
            Err(Error::NotPositiveDefinite(_))
        ));
    }

    #[test]
    fn l1_projection() {
        let v = DVector::from_vec(vec![3.0, -1.0, 0.5]);
        let x = project_l1_ball(&v, 2.0);
        assert!((x.lp_norm(1) - 2.0).abs() < 1e-12);
        assert_eq!(x.as_slice(), &[2.0, 0.0, 0.0]);
        assert_eq!(project_l1_ball(&v, 10.0), v);
    }

    #[test]
    fn realized_risk_examples() {
        assert_eq!(realized_risk(&[0.0, 0.0, 0.0]).unwrap(), 0.0);
        assert!((realized_risk(&[0.1, -0.1]).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(realized_risk(&[-0.3]).unwrap(), 0.3);
        assert!(realized_risk(&[]).is_err());
    }
}
