//! Result files of a Monte-Carlo experiment. Every writer is deterministic:
//! identical results produce byte-identical files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::ExportFormat;
use crate::fusion::{fuse_uplink, BsMap, Uplink};
use crate::geometry::SourceType;
use crate::gm::PruneParams;
use crate::metrics::{state_errors, ErrorStats, StateErrorSummary};
use crate::sim::{Holder, MonteCarloResult, RunMode, Scenario};

/// Version of the file layouts written here.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("{path}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}")]
    Json { path: PathBuf, source: serde_json::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateRow {
    pub run: usize,
    pub k: usize,
    pub vehicle: usize,
    pub truth_x_m: f64,
    pub truth_y_m: f64,
    pub truth_z_m: f64,
    pub truth_heading_rad: f64,
    pub truth_clock_bias_m: f64,
    pub est_x_m: f64,
    pub est_y_m: f64,
    pub est_z_m: f64,
    pub est_heading_rad: f64,
    pub est_clock_bias_m: f64,
    pub err_location_m: f64,
    pub err_clock_bias_m: f64,
    pub err_heading_rad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub scope: String,
    pub quantity: String,
    pub mae: f64,
    pub rmse: f64,
    pub runs: usize,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GospaRow {
    pub run: usize,
    pub k: usize,
    pub holder: String,
    #[serde(rename = "type")]
    pub kind: SourceType,
    pub gospa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GospaMeanRow {
    pub k: usize,
    pub holder: String,
    #[serde(rename = "type")]
    pub kind: SourceType,
    pub mean: f64,
    pub std: f64,
    pub runs: usize,
}

/// Parameters needed to replay the fusion events from the sync file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionParams {
    pub gamma_up: f64,
    pub prune: PruneParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncEntry {
    pub run: usize,
    pub k: usize,
    pub vehicle: usize,
    pub bs_map_before: BsMap,
    pub uplink: Uplink,
    pub bs_map_after: BsMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncFile {
    pub schema_version: u32,
    pub mode: RunMode,
    pub seed: u64,
    pub fusion: FusionParams,
    pub syncs: Vec<SyncEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergedRun {
    pub run: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub mode: RunMode,
    pub seed: u64,
    pub particles: usize,
    pub runs: usize,
    pub completed: usize,
    pub diverged: Vec<DivergedRun>,
    pub metrics: Vec<MetricRow>,
}

pub fn state_rows(mc: &MonteCarloResult) -> Vec<StateRow> {
    let mut rows = Vec::new();
    for r in &mc.runs {
        for (n, est) in r.estimates.iter().enumerate() {
            for (i, e) in est.iter().enumerate() {
                let t = &r.truth[n][i + 1];
                let (el, eb, eh) = state_errors(e, t);
                rows.push(StateRow {
                    run: r.run,
                    k: i + 1,
                    vehicle: n + 1,
                    truth_x_m: t.position.x,
                    truth_y_m: t.position.y,
                    truth_z_m: t.position.z,
                    truth_heading_rad: t.heading,
                    truth_clock_bias_m: t.clock_bias,
                    est_x_m: e.position.x,
                    est_y_m: e.position.y,
                    est_z_m: e.position.z,
                    est_heading_rad: e.heading,
                    est_clock_bias_m: e.clock_bias,
                    err_location_m: el,
                    err_clock_bias_m: eb,
                    err_heading_rad: eh,
                });
            }
        }
    }
    rows
}

fn metric_rows_for(scope: &str, s: &StateErrorSummary, runs: usize) -> Vec<MetricRow> {
    let row = |q: &str, e: &ErrorStats| MetricRow {
        scope: scope.to_string(),
        quantity: q.to_string(),
        mae: e.mae,
        rmse: e.rmse,
        runs,
        samples: s.samples,
    };
    vec![
        row("location_m", &s.location),
        row("clock_bias_m", &s.clock_bias),
        row("heading_rad", &s.heading),
    ]
}

/// Steady-state MAE/RMSE per vehicle and pooled over vehicles.
pub fn metric_rows(mc: &MonteCarloResult, scenario: &Scenario) -> Vec<MetricRow> {
    let runs = mc.completed().count();
    let k = scenario.steady_state_k;
    let mut rows = Vec::new();
    for n in 0..scenario.vehicles.len() {
        rows.extend(metric_rows_for(
            &format!("vehicle{}", n + 1),
            &mc.state_errors(Some(n), k),
            runs,
        ));
    }
    rows.extend(metric_rows_for("all", &mc.state_errors(None, k), runs));
    rows
}

pub fn gospa_rows(mc: &MonteCarloResult) -> Vec<GospaRow> {
    mc.runs
        .iter()
        .flat_map(|r| {
            r.gospa.iter().map(|g| GospaRow {
                run: r.run,
                k: g.k,
                holder: g.holder.to_string(),
                kind: g.kind,
                gospa: g.value,
            })
        })
        .collect()
}

/// Run-averaged GOSPA series per holder and source type.
pub fn gospa_mean_rows(mc: &MonteCarloResult, scenario: &Scenario) -> Vec<GospaMeanRow> {
    let holders: Vec<Holder> = (0..scenario.vehicles.len())
        .map(Holder::Vehicle)
        .chain(std::iter::once(Holder::Bs))
        .collect();
    let mut rows = Vec::new();
    for k in 1..=scenario.steps {
        for h in &holders {
            for kind in SourceType::MAPPED {
                let vals: Vec<f64> = mc.completed().filter_map(|r| r.gospa_at(k, *h, kind)).collect();
                if vals.is_empty() {
                    continue;
                }
                let n = vals.len() as f64;
                let mean = vals.iter().sum::<f64>() / n;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                rows.push(GospaMeanRow {
                    k,
                    holder: h.to_string(),
                    kind,
                    mean,
                    std: var.sqrt(),
                    runs: vals.len(),
                });
            }
        }
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateErrorMeanRow {
    pub k: usize,
    pub vehicle: usize,
    pub location_mae_m: f64,
    pub clock_bias_mae_m: f64,
    pub heading_mae_rad: f64,
    pub runs: usize,
}

/// Per-step errors averaged over completed runs.
pub fn state_error_mean_rows(mc: &MonteCarloResult, scenario: &Scenario) -> Vec<StateErrorMeanRow> {
    let mut rows = Vec::new();
    for k in 1..=scenario.steps {
        for n in 0..scenario.vehicles.len() {
            let errs: Vec<(f64, f64, f64)> = mc
                .completed()
                .filter_map(|r| r.estimates[n].get(k - 1).map(|e| state_errors(e, &r.truth[n][k])))
                .collect();
            if errs.is_empty() {
                continue;
            }
            let m = errs.len() as f64;
            rows.push(StateErrorMeanRow {
                k,
                vehicle: n + 1,
                location_mae_m: errs.iter().map(|e| e.0).sum::<f64>() / m,
                clock_bias_mae_m: errs.iter().map(|e| e.1).sum::<f64>() / m,
                heading_mae_rad: errs.iter().map(|e| e.2).sum::<f64>() / m,
                runs: errs.len(),
            });
        }
    }
    rows
}

pub fn sync_file(mc: &MonteCarloResult, scenario: &Scenario) -> SyncFile {
    SyncFile {
        schema_version: SCHEMA_VERSION,
        mode: mc.mode,
        seed: mc.seed,
        fusion: FusionParams {
            gamma_up: scenario.gamma_up,
            prune: scenario.filter.prune,
        },
        syncs: mc
            .runs
            .iter()
            .flat_map(|r| {
                r.syncs.iter().map(|s| SyncEntry {
                    run: r.run,
                    k: s.k,
                    vehicle: s.vehicle + 1,
                    bs_map_before: s.bs_map_before.clone(),
                    uplink: s.uplink.clone(),
                    bs_map_after: s.bs_map_after.clone(),
                })
            })
            .collect(),
    }
}

pub fn summary(mc: &MonteCarloResult, scenario: &Scenario) -> Summary {
    Summary {
        schema_version: SCHEMA_VERSION,
        mode: mc.mode,
        seed: mc.seed,
        particles: scenario.particles,
        runs: mc.runs.len(),
        completed: mc.completed().count(),
        diverged: mc
            .runs
            .iter()
            .filter_map(|r| {
                r.diverged.as_ref().map(|reason| DivergedRun {
                    run: r.run,
                    reason: reason.clone(),
                })
            })
            .collect(),
        metrics: metric_rows(mc, scenario),
    }
}

/// Sync events whose stored fused map differs from fusing the stored inputs again.
pub fn replay_mismatches(file: &SyncFile) -> Vec<usize> {
    file.syncs
        .iter()
        .enumerate()
        .filter(|(_, s)| {
            fuse_uplink(&s.bs_map_before, &s.uplink, file.fusion.gamma_up, &file.fusion.prune) != s.bs_map_after
        })
        .map(|(i, _)| i)
        .collect()
}

fn create(path: &Path) -> Result<BufWriter<File>, ExportError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| ExportError::Io {
            path: path.to_path_buf(),
            source,
        })
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), ExportError> {
    let err = |source| ExportError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in rows {
        w.serialize(r).map_err(err)?;
    }
    w.flush().map_err(|source| ExportError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), ExportError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|source| ExportError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    w.write_all(b"\n")
        .and_then(|_| w.flush())
        .map_err(|source| ExportError::Io {
            path: path.to_path_buf(),
            source,
        })
}

pub fn read_sync_file(path: &Path) -> Result<SyncFile, ExportError> {
    let f = File::open(path).map_err(|source| ExportError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_reader(std::io::BufReader::new(f)).map_err(|source| ExportError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Write every result file into `dir`; returns the paths written.
pub fn write_all(
    dir: &Path,
    mc: &MonteCarloResult,
    scenario: &Scenario,
    formats: &[ExportFormat],
) -> Result<Vec<PathBuf>, ExportError> {
    std::fs::create_dir_all(dir).map_err(|source| ExportError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::new();
    let states = state_rows(mc);
    let metrics = metric_rows(mc, scenario);
    let gospa = gospa_rows(mc);
    let gospa_mean = gospa_mean_rows(mc, scenario);
    let error_mean = state_error_mean_rows(mc, scenario);
    for f in formats {
        match f {
            ExportFormat::Csv => {
                for (name, res) in [
                    ("states.csv", write_csv(&dir.join("states.csv"), &states)),
                    ("metrics.csv", write_csv(&dir.join("metrics.csv"), &metrics)),
                    ("gospa.csv", write_csv(&dir.join("gospa.csv"), &gospa)),
                    (
                        "plot_gospa_mean.csv",
                        write_csv(&dir.join("plot_gospa_mean.csv"), &gospa_mean),
                    ),
                    (
                        "plot_state_errors.csv",
                        write_csv(&dir.join("plot_state_errors.csv"), &error_mean),
                    ),
                ] {
                    res?;
                    written.push(dir.join(name));
                }
            }
            ExportFormat::Json => {
                for (name, res) in [
                    ("states.json", write_json(&dir.join("states.json"), &states)),
                    ("metrics.json", write_json(&dir.join("metrics.json"), &metrics)),
                    ("gospa.json", write_json(&dir.join("gospa.json"), &gospa)),
                    (
                        "plot_gospa_mean.json",
                        write_json(&dir.join("plot_gospa_mean.json"), &gospa_mean),
                    ),
                    (
                        "plot_state_errors.json",
                        write_json(&dir.join("plot_state_errors.json"), &error_mean),
                    ),
                ] {
                    res?;
                    written.push(dir.join(name));
                }
            }
        }
    }
    let syncs = dir.join("syncs.json");
    write_json(&syncs, &sync_file(mc, scenario))?;
    written.push(syncs);
    let sum = dir.join("summary.json");
    write_json(&sum, &summary(mc, scenario))?;
    written.push(sum);
    Ok(written)
}
