use nalgebra::DMatrix;

use super::{
    leading, CovarianceDecomposition, EstimatorConfig, FactorCount, FitReport, LocalComponent,
    LocalFactors,
};
use crate::covariance::SymmetricMatrix;
use crate::error::{Error, Result};
use crate::panel::GroupHierarchy;
use crate::selection::eigenvalue_ratio_select;
use crate::spectral::{full_eigen, EigenSystem};
use crate::thresholding::{default_tau_grid, threshold_with_policy, ThresholdPolicy};

/// Single-level estimator with `k` global factors and no local level.
pub fn poet(
    pilot: &SymmetricMatrix,
    k: usize,
    policy: &ThresholdPolicy,
    sectors: Option<&[usize]>,
) -> Result<CovarianceDecomposition> {
    let p = pilot.dim();
    if k > p {
        return Err(Error::RankTooLarge {
            requested: k,
            max: p,
            context: "global factors".into(),
        });
    }
    let mut report = FitReport {
        k,
        ..Default::default()
    };
    let global = leading(&full_eigen(pilot), k);
    let residual = pilot.sub(&global.reconstruct());
    let idiosyncratic =
        threshold_residual(&residual, policy, sectors, &default_tau_grid(), &mut report)?;
    CovarianceDecomposition::from_parts(global, Vec::new(), idiosyncratic, report)
}

/// POET driven by a config: `k` may be `auto`, local factors are ignored.
pub fn poet_with_config(
    pilot: &SymmetricMatrix,
    groups: &GroupHierarchy,
    config: &EstimatorConfig,
) -> Result<CovarianceDecomposition> {
    let config = EstimatorConfig {
        local_factors: LocalFactors::Uniform(0),
        ..config.clone()
    };
    double_poet(pilot, groups, &config)
}

/// Two-level estimator: global PCA, per-country PCA of the residual's
/// diagonal blocks, then thresholding of what remains.
///
/// Assets must be in canonical (continent, country) order.
pub fn double_poet(
    pilot: &SymmetricMatrix,
    groups: &GroupHierarchy,
    config: &EstimatorConfig,
) -> Result<CovarianceDecomposition> {
    config.validate()?;
    let p = pilot.dim();
    if groups.n_assets() != p {
        return Err(Error::DimensionMismatch(format!(
            "hierarchy covers {} assets, pilot is {p}x{p}",
            groups.n_assets()
        )));
    }
    let countries = groups.country_ranges()?;
    let mut report = FitReport::default();

    // global level
    let spectrum = full_eigen(pilot);
    let k = match config.k {
        FactorCount::Fixed(k) => k,
        FactorCount::Auto => {
            let sel = select_count(&spectrum, config.k_max)?;
            let k = sel.chosen;
            report.k_selection = Some(sel);
            k
        }
    };
    if k > p {
        return Err(Error::RankTooLarge {
            requested: k,
            max: p,
            context: "global factors".into(),
        });
    }
    report.k = k;
    let global = leading(&spectrum, k);
    let mut residual = pilot.sub(&global.reconstruct()).into_matrix();

    // local level
    let requested: Vec<Option<usize>> = match &config.local_factors {
        LocalFactors::Auto => vec![None; countries.len()],
        LocalFactors::Uniform(r) => vec![Some(*r); countries.len()],
        LocalFactors::PerCountry(v) => {
            if v.len() != countries.len() {
                return Err(Error::DimensionMismatch(format!(
                    "{} local factor counts for {} countries",
                    v.len(),
                    countries.len()
                )));
            }
            v.iter().map(|&r| Some(r)).collect()
        }
    };
    let mut local = Vec::with_capacity(countries.len());
    for (range, want) in countries.iter().zip(requested) {
        let block = SymmetricMatrix::symmetrized(
            residual
                .view((range.start, range.start), (range.len(), range.len()))
                .into_owned(),
        );
        let block_spectrum = full_eigen(&block);
        let (r, selection) = match want {
            Some(r) => (r, None),
            None => {
                let sel = select_count(&block_spectrum, config.r_max)?;
                (sel.chosen, Some(sel))
            }
        };
        if r > range.len() {
            return Err(Error::RankTooLarge {
                requested: r,
                max: range.len(),
                context: format!("local factors of the country at assets {range:?}"),
            });
        }
        let eigen = leading(&block_spectrum, r);
        if r > 0 {
            let fitted = eigen.reconstruct();
            let mut view =
                residual.view_mut((range.start, range.start), (range.len(), range.len()));
            view -= fitted.as_matrix();
        }
        report.local_factors.push(r);
        report.local_selections.push(selection);
        local.push(LocalComponent {
            range: range.clone(),
            eigen,
        });
    }

    // idiosyncratic level
    let residual = SymmetricMatrix::symmetrized(residual);
    let idiosyncratic = threshold_residual(
        &residual,
        &config.threshold,
        groups.sector_of(),
        &config.tau_grid,
        &mut report,
    )?;
    CovarianceDecomposition::from_parts(global, local, idiosyncratic, report)
}

/// Eigenvalue-ratio choice on a full spectrum, capped by `cap` and `len - 1`.
fn select_count(spectrum: &EigenSystem, cap: usize) -> Result<crate::selection::SelectionResult> {
    let values = spectrum.eigenvalues.as_slice();
    if values.len() < 2 {
        return Ok(crate::selection::SelectionResult {
            chosen: values
                .len()
                .min(usize::from(values.first().is_some_and(|v| *v > 0.0))),
            criterion_values: Vec::new(),
            cap: 0,
            diagnostics: vec!["spectrum too short for ratio selection".into()],
        });
    }
    eigenvalue_ratio_select(values, cap.min(values.len() - 1))
}

/// Thresholds a residual, tolerating assets whose residual variance was
/// absorbed entirely by the factors (non-positive diagonal): their
/// off-diagonal entries are set to zero and their diagonal is kept.
pub(crate) fn threshold_residual(
    residual: &SymmetricMatrix,
    policy: &ThresholdPolicy,
    sectors: Option<&[usize]>,
    grid: &[f64],
    report: &mut FitReport,
) -> Result<SymmetricMatrix> {
    let p = residual.dim();
    let diag = residual.diagonal();
    let degenerate: Vec<usize> = (0..p).filter(|&i| diag[i] <= 0.0).collect();
    if degenerate.is_empty() {
        let (out, selection) = threshold_with_policy(residual, policy, sectors, grid)?;
        report.tau.push(selection);
        return Ok(out);
    }
    report.diagnostics.push(format!(
        "{} asset(s) with non-positive residual variance; their residual covariances were zeroed",
        degenerate.len()
    ));
    if degenerate.len() == p {
        let mut m = DMatrix::zeros(p, p);
        m.set_diagonal(&diag);
        return Ok(SymmetricMatrix::symmetrized(m));
    }
    let mut work = residual.as_matrix().clone();
    for &i in &degenerate {
        work.row_mut(i).fill(0.0);
        work.column_mut(i).fill(0.0);
        work[(i, i)] = 1.0;
    }
    let (out, selection) =
        threshold_with_policy(&SymmetricMatrix::symmetrized(work), policy, sectors, grid)?;
    report.tau.push(selection);
    let mut out = out.into_matrix();
    for &i in &degenerate {
        out[(i, i)] = diag[i];
    }
    Ok(SymmetricMatrix::symmetrized(out))
}
