use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{
    double_poet, CovarianceDecomposition, CrossRank, EstimatorConfig, FactorCount, FitReport,
    LocalComponent,
};
use crate::covariance::{
    correlation_from_covariance, descale_covariance, sample_covariance, SymmetricMatrix,
};
use crate::error::{Error, Result};
use crate::panel::{aggregate_returns, GroupHierarchy, ReturnPanel};
use crate::selection::eigenvalue_ratio_select;
use crate::spectral::{singular_values, top_k_eigen, truncated_svd};

/// Structured estimator for panels whose continents trade asynchronously.
///
/// 1. Double-POET per continent on the full-frequency sample covariance.
/// 2. Rank-`k*_sq` approximations of every cross-continent block of the
///    correlation matrix of `d`-period aggregated returns.
/// 3. The approximated cross blocks are rescaled by the standard deviations
///    of the step-1 estimate, added to the block-diagonal global component,
///    and the leading `k` eigenpairs of the sum become the global component.
///
/// The local and idiosyncratic components are those of step 1.
pub fn structured_poet(
    daily_panel: &ReturnPanel,
    groups: &GroupHierarchy,
    config: &EstimatorConfig,
) -> Result<CovarianceDecomposition> {
    config.validate()?;
    if daily_panel.frequency_days() != 1 {
        return Err(Error::InvalidArgument(format!(
            "structured estimator expects a one-period panel, got frequency {}",
            daily_panel.frequency_days()
        )));
    }
    let p = daily_panel.n_assets();
    if groups.n_assets() != p {
        return Err(Error::DimensionMismatch(format!(
            "hierarchy covers {} assets, panel has {p}",
            groups.n_assets()
        )));
    }
    let continents = groups.continent_ranges()?;
    let low_freq = aggregate_returns(daily_panel, config.d)?;
    let low_cov = sample_covariance(&low_freq)?;

    let mut report = FitReport::default();
    let k = match config.k {
        FactorCount::Fixed(k) => k,
        FactorCount::Auto => {
            // global factor count from the descaled low-frequency pilot
            let pilot = descale_covariance(&low_cov, config.d)?;
            let mut values: Vec<f64> = crate::spectral::eigenvalues_ascending(&pilot);
            values.reverse();
            let cap = config.k_max.min(values.len().saturating_sub(1)).max(1);
            let sel = eigenvalue_ratio_select(&values, cap)?;
            let k = sel.chosen;
            report.k_selection = Some(sel);
            k
        }
    };
    report.k = k;
    if let Some((s, range)) = continents.iter().enumerate().find(|(_, r)| r.len() < k) {
        return Err(Error::RankTooLarge {
            requested: k,
            max: range.len(),
            context: format!(
                "global factors in continent `{}`",
                groups.continent_names()[s]
            ),
        });
    }

    // step 1: per-continent Double-POET on full-frequency data
    let daily_cov = sample_covariance(daily_panel)?;
    let per_continent_config = EstimatorConfig {
        k: FactorCount::Fixed(k),
        ..config.clone()
    };
    let local_counts = split_local_counts(config, groups, &continents)?;
    let fits: Vec<CovarianceDecomposition> = continents
        .par_iter()
        .zip(local_counts.into_par_iter())
        .map(|(range, local_factors)| {
            let sub_groups = groups.subset(range.clone())?;
            let sub_config = EstimatorConfig {
                local_factors,
                ..per_continent_config.clone()
            };
            double_poet(&daily_cov.block(range.clone()), &sub_groups, &sub_config)
        })
        .collect::<Result<_>>()?;

    let global_blocks: Vec<SymmetricMatrix> = fits
        .iter()
        .map(CovarianceDecomposition::global_matrix)
        .collect();
    let idio_blocks: Vec<SymmetricMatrix> = fits.iter().map(|f| f.idiosyncratic.clone()).collect();
    let total_blocks: Vec<SymmetricMatrix> = fits.iter().map(|f| f.total.clone()).collect();
    let block_global = SymmetricMatrix::block_diagonal(&global_blocks);
    let block_idio = SymmetricMatrix::block_diagonal(&idio_blocks);
    let block_total = SymmetricMatrix::block_diagonal(&total_blocks);

    let mut local = Vec::new();
    for (fit, range) in fits.iter().zip(&continents) {
        report.local_factors.extend(&fit.report.local_factors);
        report
            .local_selections
            .extend(fit.report.local_selections.iter().cloned());
        report.tau.extend(&fit.report.tau);
        report
            .diagnostics
            .extend(fit.report.diagnostics.iter().cloned());
        local.extend(fit.local.iter().map(|c| LocalComponent {
            range: c.range.start + range.start..c.range.end + range.start,
            eigen: c.eigen.clone(),
        }));
    }

    // step 2: low-rank cross-continent correlation blocks
    let (low_corr, _) = correlation_from_covariance(&low_cov)?;
    let pairs: Vec<(usize, usize)> = (0..continents.len())
        .flat_map(|s| (s + 1..continents.len()).map(move |q| (s, q)))
        .collect();
    let approximations: Vec<(CrossRank, DMatrix<f64>, Vec<String>)> = pairs
        .par_iter()
        .map(|&(s, q)| cross_block(&low_corr, &continents[s], &continents[q], (s, q), k, config))
        .collect::<Result<_>>()?;
    let mut theta = DMatrix::zeros(p, p);
    for ((cross, block, notes), &(s, q)) in approximations.into_iter().zip(&pairs) {
        let (rs, rq) = (&continents[s], &continents[q]);
        theta
            .view_mut((rs.start, rq.start), (rs.len(), rq.len()))
            .copy_from(&block);
        theta
            .view_mut((rq.start, rs.start), (rq.len(), rs.len()))
            .copy_from(&block.transpose());
        report.diagnostics.extend(notes);
        report.cross_ranks.push(cross);
    }

    // step 3: rescale with the full-frequency variances and re-extract k factors
    let sd: DVector<f64> = block_total.diagonal().map(|v| v.max(0.0).sqrt());
    let scaled_theta = DMatrix::from_fn(p, p, |i, j| theta[(i, j)] * sd[i] * sd[j]);
    let combined = SymmetricMatrix::symmetrized(block_global.as_matrix() + scaled_theta);
    let global = top_k_eigen(&combined, k)?;

    CovarianceDecomposition::from_parts(global, local, block_idio, report)
}

fn split_local_counts(
    config: &EstimatorConfig,
    groups: &GroupHierarchy,
    continents: &[std::ops::Range<usize>],
) -> Result<Vec<super::LocalFactors>> {
    use super::LocalFactors;
    match &config.local_factors {
        LocalFactors::PerCountry(counts) => {
            if counts.len() != groups.n_countries() {
                return Err(Error::DimensionMismatch(format!(
                    "{} local factor counts for {} countries",
                    counts.len(),
                    groups.n_countries()
                )));
            }
            let countries = groups.country_ranges()?;
            Ok(continents
                .iter()
                .map(|c| {
                    let v = countries
                        .iter()
                        .zip(counts)
                        .filter(|(l, _)| l.start >= c.start && l.end <= c.end)
                        .map(|(_, &r)| r)
                        .collect();
                    LocalFactors::PerCountry(v)
                })
                .collect())
        }
        other => Ok(vec![other.clone(); continents.len()]),
    }
}

fn cross_block(
    corr: &SymmetricMatrix,
    rows: &std::ops::Range<usize>,
    cols: &std::ops::Range<usize>,
    pair: (usize, usize),
    k: usize,
    config: &EstimatorConfig,
) -> Result<(CrossRank, DMatrix<f64>, Vec<String>)> {
    let block = corr
        .as_matrix()
        .view((rows.start, cols.start), (rows.len(), cols.len()))
        .into_owned();
    let max_rank = rows.len().min(cols.len());
    let mut notes = Vec::new();
    let (rank, selection) = match config.cross_rank {
        FactorCount::Fixed(r) => {
            if r > max_rank {
                return Err(Error::RankTooLarge {
                    requested: r,
                    max: max_rank,
                    context: format!("cross-continent block {pair:?}"),
                });
            }
            (r, None)
        }
        FactorCount::Auto => {
            if k == 0 || max_rank < 2 {
                (k.min(max_rank), None)
            } else {
                let values = singular_values(&block);
                let cap = config.cross_rank_max.min(max_rank - 1);
                let sel = config.cross_rank_selector.select(&values, cap)?;
                let mut rank = sel.chosen;
                if rank > k {
                    notes.push(format!(
                        "cross-continent block {pair:?}: selected rank {rank} clamped to k = {k}"
                    ));
                    rank = k;
                }
                (rank, Some(sel))
            }
        }
    };
    let approx = truncated_svd(&block, rank)?.reconstruct();
    Ok((
        CrossRank {
            continents: pair,
            rank,
            selection,
        },
        approx,
        notes,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poet::LocalFactors;
    use crate::thresholding::ThresholdPolicy;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_panel(p: usize, t: usize, seed: u64) -> ReturnPanel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let factor: Vec<f64> = (0..t).map(|_| StandardNormal.sample(&mut rng)).collect();
        let values = DMatrix::from_fn(p, t, |i, j| {
            let noise: f64 = StandardNormal.sample(&mut rng);
            (1.0 + 0.1 * i as f64) * factor[j] + noise
        });
        let ids = (0..p).map(|i| format!("a{i}")).collect();
        ReturnPanel::new(ids, crate::panel::tests::dates(t), values, 1).unwrap()
    }

    #[test]
    fn two_continents_run_and_reconstruct() {
        let panel = random_panel(12, 200, 1);
        let groups = GroupHierarchy::uniform(2, 2, 3).unwrap();
        let config = EstimatorConfig {
            k: FactorCount::Fixed(1),
            local_factors: LocalFactors::Uniform(1),
            d: 5,
            threshold: ThresholdPolicy::soft(0.1),
            ..Default::default()
        };
        let dec = structured_poet(&panel, &groups, &config).unwrap();
        assert_eq!(dec.dim(), 12);
        assert_eq!(dec.local.len(), 4);
        assert_eq!(dec.report.cross_ranks.len(), 1);
        assert!(dec.report.cross_ranks[0].rank <= 1);
        let parts = dec
            .global_matrix()
            .add(&dec.local_matrix())
            .add(&dec.idiosyncratic);
        assert!(
            (parts.as_matrix() - dec.total.as_matrix()).norm()
                <= 1e-10 * dec.total.as_matrix().norm()
        );
        // idiosyncratic has no cross-continent entries
        assert_eq!(dec.idiosyncratic[(0, 11)], 0.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let panel = random_panel(6, 20, 2);
        let groups = GroupHierarchy::uniform(2, 1, 3).unwrap();
        let big_k = EstimatorConfig {
            k: FactorCount::Fixed(4),
            local_factors: LocalFactors::Uniform(0),
            threshold: ThresholdPolicy::soft(0.1),
            ..Default::default()
        };
        assert!(matches!(
            structured_poet(&panel, &groups, &big_k),
            Err(Error::RankTooLarge { .. })
        ));
        let big_d = EstimatorConfig {
            k: FactorCount::Fixed(1),
            d: 15,
            ..big_k.clone()
        };
        assert!(structured_poet(&panel, &groups, &big_d).is_err());
        let weekly = aggregate_returns(&panel, 2).unwrap();
        let ok = EstimatorConfig {
            k: FactorCount::Fixed(1),
            ..big_k
        };
        assert!(structured_poet(&weekly, &groups, &ok).is_err());
        assert!(structured_poet(&panel, &groups, &ok).is_ok());
    }
}
