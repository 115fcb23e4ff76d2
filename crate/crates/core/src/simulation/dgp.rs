use chrono::{Datelike, NaiveDate, Weekday};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::SimConfig;
use crate::covariance::{correlation_from_covariance, SymmetricMatrix};
use crate::error::{Error, Result};
use crate::panel::{GroupHierarchy, ReturnPanel};
use crate::spectral::top_k_eigen;

const MAX_PD_ATTEMPTS: usize = 1000;

/// Ground truth of one simulated market.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueModel {
    /// Global loadings, `p x k`.
    pub b: DMatrix<f64>,
    /// Loadings that reproduce the distorted correlation; set by
    /// [`distort_correlation`].
    pub b_h: Option<DMatrix<f64>>,
    /// Block-diagonal local loadings, `p x (L r_l)`.
    pub lambda: DMatrix<f64>,
    pub sigma_u: SymmetricMatrix,
    /// `B B' + Lambda Lambda' + Sigma_u`.
    pub sigma: SymmetricMatrix,
    pub r0: SymmetricMatrix,
    pub r_h: Option<SymmetricMatrix>,
    /// Diagonal of `sigma`.
    pub d: DVector<f64>,
    pub groups: GroupHierarchy,
    /// Draws of `Sigma_u` needed to reach positive definiteness.
    pub pd_attempts: usize,
    pub diagnostics: Vec<String>,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn generate_true_model(config: &SimConfig, seed: u64) -> Result<TrueModel> {
    config.validate()?;
    let groups = config.hierarchy()?;
    let (p, k, r_l) = (config.p, config.k, config.r_l);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mu_b: Vec<f64> = (0..k).map(|_| rng.random_range(-0.5..0.5)).collect();
    let mut b = DMatrix::zeros(p, k);
    for i in 0..p {
        for j in 0..k {
            b[(i, j)] = mu_b[j] + normal(&mut rng);
        }
    }

    let countries = groups.country_ranges()?;
    let mut lambda = DMatrix::zeros(p, countries.len() * r_l);
    for (l, range) in countries.iter().enumerate() {
        let mu: Vec<f64> = (0..r_l).map(|_| rng.random_range(-0.3..0.3)).collect();
        for i in range.clone() {
            for j in 0..r_l {
                lambda[(i, l * r_l + j)] = mu[j] + normal(&mut rng);
            }
        }
    }

    let q = config
        .pi_probability
        .unwrap_or_else(|| (0.5 / ((p as f64).sqrt() * (p as f64).ln())).min(1.0));
    let mut attempts = 0;
    let sigma_u = loop {
        attempts += 1;
        if attempts > MAX_PD_ATTEMPTS {
            return Err(Error::PdRegenerationExceeded {
                attempts: MAX_PD_ATTEMPTS,
            });
        }
        let du: Vec<f64> = (0..p).map(|_| rng.random_range(0.5..1.5)).collect();
        let pi: Vec<f64> = (0..p)
            .map(|_| {
                let hit = rng.random_bool(q);
                let z = normal(&mut rng);
                if hit {
                    z
                } else {
                    0.0
                }
            })
            .collect();
        let m = DMatrix::from_fn(p, p, |i, j| if i == j { du[i] } else { pi[i] * pi[j] });
        if m.clone().cholesky().is_some() {
            break SymmetricMatrix::from_matrix(m)?;
        }
    };

    let sigma = SymmetricMatrix::symmetrized(
        &b * b.transpose() + &lambda * lambda.transpose() + sigma_u.as_matrix(),
    );
    let (r0, d) = correlation_from_covariance(&sigma)?;
    Ok(TrueModel {
        b,
        b_h: None,
        lambda,
        sigma_u,
        sigma,
        r0,
        r_h: None,
        d,
        groups,
        pd_attempts: attempts,
        diagnostics: Vec::new(),
    })
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Pushes every cross-continent correlation `0.5 h^beta` away from zero,
/// with `h = 0.5 / d`, and rebuilds global loadings `B_h = V Gamma^{1/2}`
/// from the leading `k` eigenpairs of `D^{1/2} R_h D^{1/2} - Lambda Lambda' - Sigma_u`.
pub fn distort_correlation(
    model: &TrueModel,
    groups: &GroupHierarchy,
    d: usize,
    beta: f64,
) -> Result<TrueModel> {
    if d == 0 || !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "need d >= 1 and beta > 0, got d = {d}, beta = {beta}"
        )));
    }
    let p = model.r0.dim();
    if groups.n_assets() != p {
        return Err(Error::DimensionMismatch(format!(
            "hierarchy covers {} assets, model has {p}",
            groups.n_assets()
        )));
    }
    let h = 0.5 / d as f64;
    let shift = 0.5 * h.powf(beta);
    let continent = groups.continent_of();
    let mut rh = model.r0.as_matrix().clone();
    let mut out_of_range = 0usize;
    for j in 0..p {
        for i in 0..p {
            if continent[i] != continent[j] {
                let rho = rh[(i, j)];
                let v = sign(rho) * (rho.abs() + shift);
                if v.abs() >= 1.0 {
                    out_of_range += 1;
                }
                rh[(i, j)] = v;
            }
        }
    }
    let mut out = model.clone();
    if out_of_range > 0 {
        let msg = format!(
            "{} distorted correlations have |rho| >= 1 (d = {d})",
            out_of_range / 2
        );
        log::warn!("{msg}");
        out.diagnostics.push(msg);
    }

    let k = model.b.ncols();
    let sd = model.d.map(f64::sqrt);
    let target = DMatrix::from_fn(p, p, |i, j| sd[i] * rh[(i, j)] * sd[j])
        - &model.lambda * model.lambda.transpose()
        - model.sigma_u.as_matrix();
    let eig = top_k_eigen(&SymmetricMatrix::symmetrized(target), k)?;
    if let Some((index, &value)) = eig.eigenvalues.iter().enumerate().find(|(_, v)| **v <= 0.0) {
        return Err(Error::NonPositiveLeadingEigenvalue { index, value });
    }
    let mut b_h = eig.eigenvectors.clone();
    for (j, gamma) in eig.eigenvalues.iter().enumerate() {
        b_h.column_mut(j).scale_mut(gamma.sqrt());
    }
    out.b_h = Some(b_h);
    out.r_h = Some(SymmetricMatrix::from_matrix(rh)?);
    Ok(out)
}

/// `n` consecutive weekdays starting at `start` (or the next weekday).
pub fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut day = start;
    while out.len() < n {
        if !matches!(day.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(day);
        }
        day = day.succ_opt().expect("date overflow");
    }
    out
}

/// `T` draws of `y_t = B_h G_t + Lambda F_t + u_t` with standard normal
/// factors and `u_t ~ N(0, Sigma_u)`, dated on weekdays from 2017-01-02.
///
/// The normal draws depend only on `seed` and the dimensions, so models that
/// differ only in `B_h` receive the same shocks.
pub fn simulate_returns(model: &TrueModel, t: usize, seed: u64) -> Result<ReturnPanel> {
    let b_h = model.b_h.as_ref().ok_or_else(|| {
        Error::InvalidArgument(
            "model has no distorted loadings; call distort_correlation first".into(),
        )
    })?;
    let p = model.sigma_u.dim();
    let chol = model
        .sigma_u
        .as_matrix()
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("idiosyncratic covariance".into()))?;
    let (k, r) = (b_h.ncols(), model.lambda.ncols());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = DMatrix::zeros(k, t);
    let mut f = DMatrix::zeros(r, t);
    let mut z = DMatrix::zeros(p, t);
    for col in 0..t {
        for i in 0..k {
            g[(i, col)] = normal(&mut rng);
        }
        for i in 0..r {
            f[(i, col)] = normal(&mut rng);
        }
        for i in 0..p {
            z[(i, col)] = normal(&mut rng);
        }
    }
    let values = b_h * g + &model.lambda * f + chol.l() * z;
    let ids = (0..p).map(|i| format!("s{i:04}")).collect();
    let start = NaiveDate::from_ymd_opt(2017, 1, 2).expect("valid date");
    ReturnPanel::new(ids, business_days(start, t), values, 1)
}

/// `T` daily returns of the undistorted model observed at staggered closes.
///
/// Prices follow a Brownian motion with daily covariance `Sigma`; continent
/// `s` closes at time `j + offsets[s]` of day `j`, so each return spans one
/// full day but assets on different continents see shifted windows. Their
/// daily cross covariance is scaled by `1 - |offset_s - offset_q|`, and the
/// distortion fades as returns are summed over longer windows.
pub fn simulate_staggered_returns(
    model: &TrueModel,
    offsets: &[f64],
    t: usize,
    seed: u64,
) -> Result<ReturnPanel> {
    let continent_of = model.groups.continent_of();
    if offsets.len() != model.groups.n_continents() {
        return Err(Error::DimensionMismatch(format!(
            "{} offsets for {} continents",
            offsets.len(),
            model.groups.n_continents()
        )));
    }
    if offsets.iter().any(|o| !(0.0..1.0).contains(o)) {
        return Err(Error::InvalidArgument(
            "close offsets must lie in [0, 1)".into(),
        ));
    }
    let mut marks: Vec<f64> = offsets.to_vec();
    marks.sort_by(f64::total_cmp);
    marks.dedup();
    let slot: Vec<usize> = offsets
        .iter()
        .map(|o| marks.iter().position(|m| m == o).expect("offset is a mark"))
        .collect();
    let per_day = marks.len();
    let n_points = (t + 1) * per_day;
    let times: Vec<f64> = (0..n_points)
        .map(|i| (i / per_day) as f64 + marks[i % per_day])
        .collect();

    let p = model.sigma_u.dim();
    let chol = model
        .sigma_u
        .as_matrix()
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("idiosyncratic covariance".into()))?;
    let (k, r) = (model.b.ncols(), model.lambda.ncols());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut level = DMatrix::zeros(p, n_points);
    for i in 1..n_points {
        let scale = (times[i] - times[i - 1]).sqrt();
        let g = DVector::from_fn(k, |_, _| normal(&mut rng));
        let f = DVector::from_fn(r, |_, _| normal(&mut rng));
        let z = DVector::from_fn(p, |_, _| normal(&mut rng));
        let step = (&model.b * g + &model.lambda * f + chol.l() * z) * scale;
        let next = level.column(i - 1) + step;
        level.set_column(i, &next);
    }
    let values = DMatrix::from_fn(p, t, |i, j| {
        let s = slot[continent_of[i]];
        level[(i, (j + 1) * per_day + s)] - level[(i, j * per_day + s)]
    });
    let ids = (0..p).map(|i| format!("s{i:04}")).collect();
    let start = NaiveDate::from_ymd_opt(2017, 1, 2).expect("valid date");
    ReturnPanel::new(ids, business_days(start, t), values, 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::Sweep;

    fn small() -> SimConfig {
        SimConfig {
            p: 24,
            continents: 2,
            countries: 4,
            country_size: 6,
            k: 2,
            r_l: 1,
            replications: 1,
            sweep: Sweep::T {
                t_values: vec![50],
                d_values: vec![1],
            },
            ..Default::default()
        }
    }

    #[test]
    fn model_is_consistent_and_reproducible() {
        let cfg = small();
        let m = generate_true_model(&cfg, 3).unwrap();
        assert_eq!(m, generate_true_model(&cfg, 3).unwrap());
        assert_ne!(m.b, generate_true_model(&cfg, 4).unwrap().b);
        let rebuilt =
            &m.b * m.b.transpose() + &m.lambda * m.lambda.transpose() + m.sigma_u.as_matrix();
        assert!((rebuilt - m.sigma.as_matrix()).amax() < 1e-12);
        for i in 0..24 {
            assert_eq!(m.r0[(i, i)], 1.0);
        }
        // local loadings vanish outside the asset's own country
        assert_eq!(m.lambda[(0, 1)], 0.0);
        assert_ne!(m.lambda[(6, 1)], 0.0);
    }

    #[test]
    fn zero_pi_gives_diagonal_idiosyncratic() {
        let cfg = SimConfig {
            pi_probability: Some(0.0),
            ..small()
        };
        let m = generate_true_model(&cfg, 1).unwrap();
        assert_eq!(m.pd_attempts, 1);
        let off: f64 = (0..24)
            .flat_map(|i| (0..24).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m.sigma_u[(i, j)].abs())
            .sum();
        assert_eq!(off, 0.0);
    }

    #[test]
    fn distortion_touches_only_cross_continent_entries() {
        let cfg = small();
        let m = generate_true_model(&cfg, 5).unwrap();
        let groups = cfg.hierarchy().unwrap();
        let dm = distort_correlation(&m, &groups, 5, 0.75).unwrap();
        let rh = dm.r_h.as_ref().unwrap();
        let shift = 0.5 * 0.1f64.powf(0.75);
        for i in 0..24 {
            for j in 0..24 {
                let r0 = m.r0[(i, j)];
                if (i < 12) == (j < 12) {
                    assert_eq!(rh[(i, j)].to_bits(), r0.to_bits());
                } else {
                    assert!((rh[(i, j)] - r0.signum() * (r0.abs() + shift)).abs() < 1e-15);
                }
            }
        }
        assert_eq!(dm.b_h.as_ref().unwrap().shape(), (24, 2));
        assert!(distort_correlation(&m, &groups, 0, 0.75).is_err());
    }

    #[test]
    fn sign_of_zero_is_zero() {
        assert_eq!(sign(0.0), 0.0);
        assert_eq!(sign(-0.0), 0.0);
        assert_eq!(sign(-2.0), -1.0);
    }

    #[test]
    fn returns_need_distorted_loadings_and_are_reproducible() {
        let cfg = small();
        let m = generate_true_model(&cfg, 1).unwrap();
        assert!(simulate_returns(&m, 10, 1).is_err());
        let dm = distort_correlation(&m, &cfg.hierarchy().unwrap(), 1, 0.75).unwrap();
        let a = simulate_returns(&dm, 30, 9).unwrap();
        assert_eq!(a, simulate_returns(&dm, 30, 9).unwrap());
        assert_eq!(a.n_periods(), 30);
        assert_eq!(a.periods()[0], NaiveDate::from_ymd_opt(2017, 1, 2).unwrap());
        assert_eq!(a.periods()[5], NaiveDate::from_ymd_opt(2017, 1, 9).unwrap());
    }

    #[test]
    fn business_days_skip_weekends() {
        let days = business_days(NaiveDate::from_ymd_opt(2024, 6, 1).unwrap(), 3);
        assert_eq!(days[0], NaiveDate::from_ymd_opt(2024, 6, 3).unwrap());
        assert_eq!(days[2], NaiveDate::from_ymd_opt(2024, 6, 5).unwrap());
    }
}
