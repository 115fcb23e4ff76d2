use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde_json::json;
use spoet_core::estimate::estimate as fit;
use spoet_core::panel::{
    load_panel, reorder_by_hierarchy, GroupHierarchy, Membership, PanelMode, Permutation,
    ReturnPanel,
};
use spoet_core::poet::{report_json, write_dense_csv, DecompositionEnvelope, EstimatorConfig};
use spoet_core::portfolio::{
    backtest as run_backtest, best_k, write_report_csv, write_weights_csv, BacktestConfig,
};
use spoet_core::simulation::{run_grid_point, write_results_csv, SimConfig};
use spoet_core::thresholding::{Shrinkage, Tau};

use crate::manifest::{create_dir, digest_bytes, write_file, RunManifest};
use crate::{BacktestArgs, EstimateArgs, Failure, PanelArgs, ShrinkageArg, SimulateArgs};

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::data(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Failure::usage(format!("invalid config {}: {e}", path.display())))
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<serde_json::Value, Failure> {
    serde_json::to_value(value).map_err(|e| Failure::data(e.to_string()))
}

struct Inputs {
    panel: ReturnPanel,
    groups: GroupHierarchy,
    order: Permutation,
    dropped: Vec<String>,
}

/// Loads the panel and membership and sorts assets by continent and country.
fn load_inputs(args: &PanelArgs, manifest: &mut RunManifest) -> Result<Inputs, Failure> {
    manifest.add_input(&args.returns)?;
    manifest.add_input(&args.membership)?;
    let mode = if args.prices {
        PanelMode::Prices
    } else {
        PanelMode::Returns
    };
    let loaded = load_panel(&args.returns, mode)?;
    for id in &loaded.dropped_assets {
        log::warn!("dropped asset `{id}`: missing or non-finite values");
    }
    let membership = Membership::load(&args.membership)?;
    let groups = GroupHierarchy::for_panel(&loaded.panel, &membership)?;
    let (panel, groups, order) = reorder_by_hierarchy(&loaded.panel, &groups)?;
    Ok(Inputs {
        panel,
        groups,
        order,
        dropped: loaded.dropped_assets,
    })
}

fn csv_bytes(
    write: impl FnOnce(&mut Vec<u8>) -> spoet_core::Result<()>,
) -> Result<Vec<u8>, Failure> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(buf)
}

pub fn estimate(args: EstimateArgs, threads: usize) -> Result<(), Failure> {
    let started = Instant::now();
    let mut config: EstimatorConfig = match &args.config {
        Some(path) => read_json(path)?,
        None => EstimatorConfig::default(),
    };
    if let Some(k) = args.k {
        config.k = k;
    }
    if let Some(d) = args.d {
        config.d = d;
    }
    if let Some(tau) = &args.tau {
        config.threshold.tau = serde_json::from_value::<Tau>(json!(tau))
            .map_err(|e| Failure::usage(format!("--tau: {e}")))?;
    }
    if let Some(s) = args.shrinkage {
        config.threshold.shrinkage = match s {
            ShrinkageArg::Soft => Shrinkage::Soft,
            ShrinkageArg::Hard => Shrinkage::Hard,
        };
    }
    if args.sector_block {
        config.threshold.sector_mask = true;
    }
    config.validate()?;

    let resolved = json!({
        "method": args.method,
        "prices": args.panel.prices,
        "dense": args.dense,
        "estimator": to_json(&config)?,
    });
    let mut manifest = RunManifest::new("estimate", resolved, threads);
    if let Some(path) = &args.config {
        manifest.add_input(path)?;
    }
    let inputs = load_inputs(&args.panel, &mut manifest)?;
    manifest.time("load", started);

    let fit_started = Instant::now();
    let dec = fit(args.method, &inputs.panel, &inputs.groups, &config)?;
    manifest.time("estimate", fit_started);

    create_dir(&args.out)?;
    let mut envelope = DecompositionEnvelope::from_decomposition(
        &dec,
        args.method.id(),
        inputs.panel.asset_ids(),
        config.d,
    )?;
    if args.dense {
        let name = "covariance.csv";
        let ids = inputs.order.restore_vector(inputs.panel.asset_ids());
        write_dense_csv(
            &args.out.join(name),
            &ids,
            &inputs.order.restore_matrix(dec.total.as_matrix()),
        )?;
        envelope.total = Some(name.to_string());
    }
    let mut buf = Vec::new();
    envelope.to_writer(&mut buf)?;
    write_file(&args.out.join("decomposition.json"), &buf)?;
    let report = report_json(&dec.report);
    let text = serde_json::to_string_pretty(&report).map_err(|e| Failure::data(e.to_string()))?;
    write_file(&args.out.join("selection.json"), text.as_bytes())?;

    manifest.outcome = json!({
        "k": dec.report.k,
        "local_factors": dec.report.local_factors,
        "cross_ranks": dec.report.cross_ranks.iter().map(|c| c.rank).collect::<Vec<_>>(),
        "n_assets": inputs.panel.n_assets(),
        "n_periods": inputs.panel.n_periods(),
        "dropped_assets": inputs.dropped,
    });
    manifest.time("total", started);
    manifest.write(&args.out)
}

const PARTIAL_DIR: &str = "partial";

fn partial_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("point_{index:04}.csv"))
}

pub fn simulate(args: SimulateArgs, threads: usize) -> Result<(), Failure> {
    let started = Instant::now();
    let mut config: SimConfig = read_json(&args.config)?;
    if let Some(reps) = args.reps {
        config.replications = reps;
    }
    if let Some(seed) = args.seed {
        config.master_seed = seed;
    }
    config.validate()?;
    let resolved = to_json(&config)?;
    let fingerprint = digest_bytes(resolved.to_string().as_bytes());

    let mut manifest = RunManifest::new("simulate", resolved, threads);
    manifest.add_input(&args.config)?;
    manifest.master_seed = Some(config.master_seed);

    // grid points already on disk for the same configuration are reused
    let partial = args.out.join(PARTIAL_DIR);
    create_dir(&partial)?;
    let stamp = partial.join("config.sha256");
    match fs::read_to_string(&stamp) {
        Ok(existing) if existing.trim() != fingerprint => {
            return Err(Failure::usage(format!(
                "{} holds partial results of a different configuration; remove it or choose another --out",
                partial.display()
            )));
        }
        Ok(_) => {}
        Err(_) => write_file(&stamp, fingerprint.as_bytes())?,
    }

    let points = config.grid_points();
    let mut resumed = 0;
    let mut combined = csv_bytes(|buf| write_results_csv(&[], buf, true))?;
    for index in 0..points.len() {
        let path = partial_path(&partial, index);
        let bytes = if path.exists() {
            resumed += 1;
            log::info!("grid point {index}: reusing {}", path.display());
            fs::read(&path)
                .map_err(|e| Failure::data(format!("cannot read {}: {e}", path.display())))?
        } else {
            let point_started = Instant::now();
            let rows = run_grid_point(&config, index)?;
            let bytes = csv_bytes(|buf| write_results_csv(&rows, buf, false))?;
            write_file(&path, &bytes)?;
            manifest.time(&format!("grid_point_{index}"), point_started);
            bytes
        };
        combined.extend_from_slice(&bytes);
    }
    write_file(&args.out.join("results.csv"), &combined)?;
    manifest.outcome = json!({
        "grid_points": points.len(),
        "resumed_grid_points": resumed,
    });
    manifest.time("total", started);
    manifest.write(&args.out)
}

pub fn backtest(args: BacktestArgs, threads: usize) -> Result<(), Failure> {
    let started = Instant::now();
    let mut config: BacktestConfig = match &args.config {
        Some(path) => read_json(path)?,
        None => BacktestConfig::default(),
    };
    if args.weights {
        config.keep_weights = true;
    }
    config.validate()?;
    let mut manifest = RunManifest::new("backtest", to_json(&config)?, threads);
    if let Some(path) = &args.config {
        manifest.add_input(path)?;
    }
    let inputs = load_inputs(&args.panel, &mut manifest)?;
    manifest.time("load", started);

    let run_started = Instant::now();
    let report = run_backtest(&inputs.panel, &inputs.groups, &config)?;
    manifest.time("backtest", run_started);

    create_dir(&args.out)?;
    write_file(
        &args.out.join("report.csv"),
        &csv_bytes(|buf| write_report_csv(&report.rows, buf))?,
    )?;
    let best = best_k(&report.rows);
    write_file(
        &args.out.join("best_k.csv"),
        &csv_bytes(|buf| write_report_csv(&best, buf))?,
    )?;
    if config.keep_weights {
        let bytes =
            csv_bytes(|buf| write_weights_csv(&report.weights, inputs.panel.asset_ids(), buf))?;
        write_file(&args.out.join("weights.csv"), &bytes)?;
    }
    manifest.outcome = json!({
        "n_weeks": report.n_weeks,
        "n_assets": inputs.panel.n_assets(),
        "dropped_assets": inputs.dropped,
    });
    manifest.time("total", started);
    manifest.write(&args.out)
}
