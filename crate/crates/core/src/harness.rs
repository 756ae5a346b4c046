//! Monte-Carlo evaluation and parameter sweeps.
//!
//! Trial `k` (1-based) of a batch with base seed `s` draws its noise from seed
//! `s + k`, so a batch of `L` trials is a prefix of any larger batch with the
//! same base.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::engine::{run, RunConfig, Variant};
use crate::error::{Error, Result};
use crate::model::{generate_measurements, Scenario};
use crate::subsolver::dist2;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    /// `ERR_RMSE_i` per cluster.
    pub err_rmse: Vec<f64>,
    pub inc_rmse: f64,
    /// Trials that entered the averages.
    pub trials: usize,
    /// Trials dropped because the run failed.
    pub excluded: usize,
}

/// Accuracy and inconsistency RMSE over `estimates[trial][cluster]`.
///
/// `ERR_i = √(Σ_l ‖x_i^l − x*‖² / L)` and
/// `INC = √(Σ_l Σ_{i<j} ‖x_i^l − x_j^l‖² / L)`.
pub fn compute_metrics(estimates: &[Vec<Vec<f64>>], truth: &[f64]) -> Result<MetricsReport> {
    let l = estimates.len();
    if l == 0 {
        return Err(Error::InvalidInput("metrics need at least one trial".into()));
    }
    let m = estimates[0].len();
    if estimates.iter().any(|t| t.len() != m || t.iter().any(|x| x.len() != truth.len())) {
        return Err(Error::InvalidInput("estimates have inconsistent shapes".into()));
    }
    let mut err = vec![0.0; m];
    let mut inc = 0.0;
    for trial in estimates {
        for (i, x) in trial.iter().enumerate() {
            err[i] += dist2(x, truth);
            for y in &trial[i + 1..] {
                inc += dist2(x, y);
            }
        }
    }
    Ok(MetricsReport {
        err_rmse: err.iter().map(|e| (e / l as f64).sqrt()).collect(),
        inc_rmse: (inc / l as f64).sqrt(),
        trials: l,
        excluded: 0,
    })
}

/// Seed used by trial `k` (1-based).
pub fn trial_seed(base: u64, k: usize) -> u64 {
    base.wrapping_add(k as u64)
}

#[derive(Debug, Clone)]
pub struct TrialBatch {
    /// Final estimates of the successful trials, in trial order.
    pub estimates: Vec<Vec<Vec<f64>>>,
    pub excluded: usize,
}

fn run_trials<T, F>(trials: usize, parallel: bool, f: F) -> Vec<Result<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    if parallel {
        (1..=trials).into_par_iter().map(&f).collect()
    } else {
        (1..=trials).map(&f).collect()
    }
}

/// Run `trials` independent noise realizations and keep the final estimates.
///
/// Trials whose run fails with a numerical error are excluded and counted;
/// any other error aborts the batch.
pub fn monte_carlo(
    scenario: &Scenario,
    config: &RunConfig,
    trials: usize,
    base_seed: u64,
    parallel: bool,
) -> Result<TrialBatch> {
    let snapshots = monte_carlo_snapshots(scenario, config, trials, base_seed, parallel, &[config.iterations])?;
    Ok(TrialBatch {
        estimates: snapshots.estimates.into_iter().map(|mut s| s.remove(0)).collect(),
        excluded: snapshots.excluded,
    })
}

struct SnapshotBatch {
    /// `estimates[trial][snapshot][cluster]`.
    estimates: Vec<Vec<Vec<Vec<f64>>>>,
    excluded: usize,
}

/// One run per trial up to the largest requested horizon, read at every
/// horizon; runs are deterministic so this equals separate shorter runs.
fn monte_carlo_snapshots(
    scenario: &Scenario,
    config: &RunConfig,
    trials: usize,
    base_seed: u64,
    parallel: bool,
    horizons: &[usize],
) -> Result<SnapshotBatch> {
    if trials == 0 {
        return Err(Error::InvalidInput("trial count must be positive".into()));
    }
    let horizon = horizons.iter().copied().max().unwrap_or(config.iterations);
    let mut cfg = config.clone();
    cfg.iterations = horizon;
    let outcomes = run_trials(trials, parallel, |k| {
        let meas = generate_measurements(scenario, trial_seed(base_seed, k))?;
        let record = run(scenario, &meas, &cfg)?;
        Ok(horizons
            .iter()
            .map(|&h| record.iterations[h].positions.clone())
            .collect::<Vec<_>>())
    });
    let mut estimates = Vec::with_capacity(trials);
    let mut excluded = 0;
    for outcome in outcomes {
        match outcome {
            Ok(v) => estimates.push(v),
            Err(e) if is_numerical(&e) => excluded += 1,
            Err(e) => return Err(e),
        }
    }
    if estimates.is_empty() {
        return Err(Error::Numerical(format!("all {trials} trials failed")));
    }
    Ok(SnapshotBatch { estimates, excluded })
}

fn is_numerical(e: &Error) -> bool {
    match e {
        Error::Numerical(_) | Error::InfeasibleStart(_) => true,
        Error::Cluster { source, .. } => is_numerical(source),
        _ => false,
    }
}

/// Monte-Carlo metrics of one configuration.
pub fn evaluate(
    scenario: &Scenario,
    config: &RunConfig,
    trials: usize,
    base_seed: u64,
    parallel: bool,
) -> Result<MetricsReport> {
    let batch = monte_carlo(scenario, config, trials, base_seed, parallel)?;
    let mut report = compute_metrics(&batch.estimates, &scenario.event)?;
    report.excluded = batch.excluded;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Rho,
    Sigma,
    Iterations,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Rho => "rho",
            SweepAxis::Sigma => "sigma",
            SweepAxis::Iterations => "iterations",
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rho" => Ok(SweepAxis::Rho),
            "sigma" => Ok(SweepAxis::Sigma),
            "iterations" | "t" => Ok(SweepAxis::Iterations),
            other => Err(Error::InvalidInput(format!("unknown sweep axis '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: f64,
    pub variant: Variant,
    /// 1-based cluster id.
    pub cluster: usize,
    pub err_rmse: f64,
    pub inc_rmse: f64,
    pub trials: usize,
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub variants: Vec<Variant>,
    pub trials: usize,
    pub base_seed: u64,
    pub parallel: bool,
}

/// Evaluate every variant at every axis value. Rows are ordered by variant,
/// then value, then cluster.
pub fn sweep(scenario: &Scenario, base: &RunConfig, spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    if spec.values.is_empty() {
        return Err(Error::InvalidInput("sweep needs at least one value".into()));
    }
    let mut rows = Vec::new();
    for &variant in &spec.variants {
        let mut cfg = base.clone();
        cfg.variant = variant;
        let reports: Vec<MetricsReport> = match spec.axis {
            SweepAxis::Iterations => {
                let horizons = spec
                    .values
                    .iter()
                    .map(|&v| {
                        if v < 0.0 || v.fract() != 0.0 {
                            Err(Error::InvalidInput(format!("iteration count must be a whole number (got {v})")))
                        } else {
                            Ok(v as usize)
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                let batch = monte_carlo_snapshots(scenario, &cfg, spec.trials, spec.base_seed, spec.parallel, &horizons)?;
                (0..horizons.len())
                    .map(|h| {
                        let est: Vec<Vec<Vec<f64>>> = batch.estimates.iter().map(|t| t[h].clone()).collect();
                        let mut r = compute_metrics(&est, &scenario.event)?;
                        r.excluded = batch.excluded;
                        Ok(r)
                    })
                    .collect::<Result<_>>()?
            }
            SweepAxis::Rho => spec
                .values
                .iter()
                .map(|&rho| {
                    let mut c = cfg.clone();
                    c.rho = rho;
                    evaluate(scenario, &c, spec.trials, spec.base_seed, spec.parallel)
                })
                .collect::<Result<_>>()?,
            SweepAxis::Sigma => spec
                .values
                .iter()
                .map(|&sigma| {
                    let sc = scenario.with_uniform_sigma(sigma);
                    evaluate(&sc, &cfg, spec.trials, spec.base_seed, spec.parallel)
                })
                .collect::<Result<_>>()?,
        };
        for (&value, report) in spec.values.iter().zip(&reports) {
            for (i, &err) in report.err_rmse.iter().enumerate() {
                rows.push(SweepRow {
                    axis: spec.axis,
                    value,
                    variant,
                    cluster: i + 1,
                    err_rmse: err,
                    inc_rmse: report.inc_rmse,
                    trials: report.trials,
                });
            }
        }
    }
    Ok(rows)
}

/// CSV with columns `axis,value,variant,cluster,err_rmse,inc_rmse,trials`.
pub fn write_sweep_csv<W: Write>(out: W, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["axis", "value", "variant", "cluster", "err_rmse", "inc_rmse", "trials"])?;
    for r in rows {
        w.write_record([
            r.axis.name().to_string(),
            r.value.to_string(),
            r.variant.name().to_string(),
            r.cluster.to_string(),
            r.err_rmse.to_string(),
            r.inc_rmse.to_string(),
            r.trials.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `sweep_<axis>_<variant>.csv`
pub fn sweep_file_name(axis: SweepAxis, variant: Variant) -> String {
    format!("sweep_{}_{}.csv", axis.name(), variant.name())
}

/// Write one CSV per variant into `dir`; returns the paths written.
pub fn write_sweep_files(dir: &Path, rows: &[SweepRow]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut keys: Vec<(SweepAxis, Variant)> = Vec::new();
    for r in rows {
        if !keys.contains(&(r.axis, r.variant)) {
            keys.push((r.axis, r.variant));
        }
    }
    let mut paths = Vec::new();
    for (axis, variant) in keys {
        let subset: Vec<SweepRow> = rows
            .iter()
            .filter(|r| r.axis == axis && r.variant == variant)
            .cloned()
            .collect();
        let path = dir.join(sweep_file_name(axis, variant));
        write_sweep_csv(std::fs::File::create(&path)?, &subset)?;
        paths.push(path);
    }
    Ok(paths)
}
