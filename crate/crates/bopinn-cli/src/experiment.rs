//! Case execution: one snapshot per case, repeated independent BO runs with
//! derived seeds, aggregation, and field exports.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use bopinn::bo::{run_bo, target_function, BoConfig, BoTrace, ForwardModel, PinnForwardConfig};
use bopinn::pinn::{sample_collocation, train_pinn, TrainedField};
use bopinn::seed::mix;
use bopinn::wave::{make_snapshot, Snapshot, WaveDomain, WaveSpeed};
use bopinn::{Error, Result};

use crate::config::{ExperimentConfig, ForwardMode};
use crate::report;

/// Seed-stream tags.
const TAG_SNAPSHOT: u64 = 0x534e;
const TAG_COLLOC: u64 = 0x434f;
const TAG_TRAIN: u64 = 0x5452;

/// One completed BO run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub run_index: usize,
    pub best_g: f64,
    pub best_c: f64,
    pub wall_secs: f64,
    pub trace: BoTrace,
}

/// Aggregated results of one case.
#[derive(Debug, Clone)]
pub struct RunSummary {
    /// 1-based position of the case in the configured list.
    pub case_index: usize,
    pub c_true: f64,
    pub best_g: f64,
    pub best_c: f64,
    pub mean_g: f64,
    pub std_g: f64,
    pub mean_c: f64,
    pub std_c: f64,
    pub per_run: Vec<RunOutcome>,
    /// Failed runs, if any (the summary covers completed runs only).
    pub warnings: Vec<String>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Deterministic per-case snapshot seed, independent of case order.
pub fn snapshot_seed(seed_base: u64, c_true: f64) -> u64 {
    mix(mix(seed_base, TAG_SNAPSHOT), c_true.to_bits())
}

/// Snapshot observed for a case.
pub fn case_snapshot(cfg: &ExperimentConfig, c_true: f64) -> Result<Snapshot> {
    make_snapshot(
        WaveSpeed::from_scaled(c_true)?,
        cfg.snapshot.t_obs,
        cfg.snapshot.n_sensors,
        cfg.snapshot.snr_db,
        snapshot_seed(cfg.seed_base, c_true),
        &cfg.domain,
    )
}

/// Execute one independent BO run (`run_index` selects the seed stream).
pub fn single_run(cfg: &ExperimentConfig, obs: &Snapshot, run_index: usize) -> Result<RunOutcome> {
    let run_seed = cfg.seed_base + run_index as u64;
    let bo_cfg = BoConfig {
        seed: run_seed,
        ..cfg.bo.clone()
    };
    let forward = match cfg.forward_mode {
        ForwardMode::Analytic => ForwardModel::Analytic { domain: cfg.domain },
        ForwardMode::Pinn => ForwardModel::Pinn(Box::new(PinnForwardConfig {
            colloc: sample_collocation(
                &cfg.domain,
                cfg.pinn.n_interior,
                cfg.pinn.n_initial,
                cfg.pinn.n_boundary,
                mix(run_seed, TAG_COLLOC),
            )?,
            arch: cfg.pinn.arch.clone(),
            opts: cfg.pinn.opts.clone(),
            dropout_rate: cfg.pinn.dropout_rate,
            train_seed: mix(run_seed, TAG_TRAIN),
        })),
    };

    let start = Instant::now();
    let trace = run_bo(
        |c| target_function(WaveSpeed::from_scaled(c)?, obs, &forward),
        &bo_cfg,
    )?;
    let wall_secs = start.elapsed().as_secs_f64();
    let (best_c, best_g) = trace.best();
    Ok(RunOutcome {
        run_index,
        best_g,
        best_c,
        wall_secs,
        trace,
    })
}

/// Run all repeats for one case, write per-run trace CSVs and the case
/// snapshot, and aggregate the statistics.
pub fn run_case(cfg: &ExperimentConfig, c_true: f64) -> Result<RunSummary> {
    let case_index = cfg
        .cases
        .iter()
        .position(|&c| c == c_true)
        .ok_or_else(|| Error::Config(format!("case {c_true} is not in the configured case list")))?
        + 1;

    let obs = case_snapshot(cfg, c_true)?;
    let case_dir = cfg.out_dir.join(format!("case{case_index}"));
    obs.write_csv(&case_dir.join("snapshot.csv"))?;

    let results: Vec<std::result::Result<RunOutcome, String>> = (0..cfg.runs)
        .into_par_iter()
        .map(|run_index| single_run(cfg, &obs, run_index).map_err(|e| format!("run {run_index}: {e}")))
        .collect();

    let mut per_run = Vec::new();
    let mut warnings = Vec::new();
    for result in results {
        match result {
            Ok(outcome) => per_run.push(outcome),
            Err(message) => warnings.push(message),
        }
    }

    for outcome in &per_run {
        let path = case_dir.join(format!("run{}", outcome.run_index)).join("trace.csv");
        report::write_trace_csv(&path, case_index, c_true, outcome)?;
    }

    let (mean_g, std_g) = mean_std(&per_run.iter().map(|r| r.best_g).collect::<Vec<_>>());
    let (mean_c, std_c) = mean_std(&per_run.iter().map(|r| r.best_c).collect::<Vec<_>>());
    let best = per_run
        .iter()
        .max_by(|a, b| a.best_g.total_cmp(&b.best_g));
    let (best_g, best_c) = best.map_or((f64::NAN, f64::NAN), |r| (r.best_g, r.best_c));

    Ok(RunSummary {
        case_index,
        c_true,
        best_g,
        best_c,
        mean_g,
        std_g,
        mean_c,
        std_c,
        per_run,
        warnings,
    })
}

/// Run every configured case and write `summary.csv` and `summary.txt`.
/// Returns the summaries and the rendered text table.
pub fn run_all(cfg: &ExperimentConfig) -> Result<(Vec<RunSummary>, String)> {
    let summaries: Vec<RunSummary> = cfg
        .cases
        .iter()
        .map(|&c| run_case(cfg, c))
        .collect::<Result<_>>()?;

    let table = report::summary_table(&summaries);
    let csv = report::summary_csv(&summaries);
    bopinn::wave::write_file(&cfg.out_dir.join("summary.csv"), csv.as_bytes())?;

    let mut text = table.clone();
    text.push('\n');
    text.push_str(&report::accuracy_block(&summaries));
    text.push('\n');
    text.push_str(&report::timing_report(&summaries));
    for summary in &summaries {
        for warning in &summary.warnings {
            text.push_str(&format!("\nwarning (case{}): {warning}", summary.case_index));
        }
    }
    text.push('\n');
    bopinn::wave::write_file(&cfg.out_dir.join("summary.txt"), text.as_bytes())?;

    Ok((summaries, table))
}

/// Train one field at `c` with the configured profile (used by the `field`
/// subcommand and the forward-fidelity checks).
pub fn train_case_field(cfg: &ExperimentConfig, c: f64, seed: u64) -> Result<TrainedField> {
    let colloc = sample_collocation(
        &cfg.domain,
        cfg.pinn.n_interior,
        cfg.pinn.n_initial,
        cfg.pinn.n_boundary,
        mix(seed, TAG_COLLOC),
    )?;
    train_pinn(
        WaveSpeed::from_scaled(c)?,
        &colloc,
        &cfg.pinn.arch,
        &cfg.pinn.opts,
        cfg.pinn.dropout_rate,
        mix(seed, TAG_TRAIN),
    )
}

/// Export a trained field on an `n_x × n_t` grid plus three time slices at
/// `t ∈ {0.25, 0.5, 0.75}·T`, and the raw parameters.
pub fn export_field(
    field: &TrainedField,
    grid: (usize, usize),
    domain: &WaveDomain,
    out_dir: &Path,
) -> Result<()> {
    if grid.0 < 2 || grid.1 < 2 {
        return Err(Error::Config(format!("field grid must be at least 2x2, got {grid:?}")));
    }
    report::write_field_grid(&out_dir.join("field.csv"), field, grid, domain)?;
    for fraction in [0.25, 0.5, 0.75] {
        let t = fraction * domain.horizon();
        let name = format!("slice_{}.csv", (fraction * 100.0) as u32);
        report::write_field_slice(&out_dir.join(name), field, grid.0, t, domain)?;
    }
    field.write_file(&out_dir.join("params.txt"))
}
