//! Replicate fan-out, aggregation and output files.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use crw_core::coupling::{bias_summary, deviation_process, pair_visits, simulate_coupled};
use crw_core::env::{diff_tail_rows, renewal_field, DiffTailConfig, Environment};
use crw_core::rng::{purpose, SeedKey};
use crw_core::stats::{
    dispersion_index, intermediate_range_from_ranges, invariance_from_samples, median, non_increasing, quantile,
    range_exceedance_from_ranges, strictly_decreasing, wilson_interval, PathSample, TailCurve, TailRow, TestReport,
};
use crw_core::walker::{range, simulate_crw, Trajectory};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{Experiment, ExperimentConfig};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Core(#[from] crw_core::Error),
    #[error("thread pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
    #[error("{0}")]
    Replay(String),
}

fn io<T>(path: &Path, r: std::io::Result<T>) -> Result<T, RunError> {
    r.map_err(|source| RunError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DEGRADED: i32 = 3;

/// One summary line: ordered named cells.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Row(pub Vec<(&'static str, Value)>);

impl Row {
    fn push(&mut self, key: &'static str, value: impl Into<Value>) -> &mut Self {
        self.0.push((key, value.into()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.0.iter().find(|(k, _)| *k == key).map(|(_, v)| v)
    }

    pub fn num(&self, key: &str) -> Option<f64> {
        self.get(key).and_then(Value::as_f64)
    }

    pub fn flag(&self, key: &str) -> bool {
        self.get(key).and_then(Value::as_bool).unwrap_or(false)
    }

    pub fn header(&self) -> Vec<&'static str> {
        self.0.iter().map(|(k, _)| *k).collect()
    }

    pub fn cells(&self) -> Vec<String> {
        self.0
            .iter()
            .map(|(_, v)| match v {
                Value::Null => String::new(),
                Value::String(s) => s.clone(),
                other => other.to_string(),
            })
            .collect()
    }

    pub fn to_json(&self) -> Value {
        Value::Object(self.0.iter().map(|(k, v)| (k.to_string(), v.clone())).collect())
    }
}

pub struct ReplicateOutput {
    pub row: Row,
    pub flagged: bool,
    pub trajectory: Option<Trajectory>,
}

/// Seed node of replicate `rep` on ladder rung `rung`.
pub fn replicate_key(master_seed: u64, rung: usize, rep: u64) -> SeedKey {
    SeedKey::new(master_seed)
        .stream(purpose::LADDER, rung as u64)
        .stream(purpose::REPLICATE, rep)
}

fn tail_key(master_seed: u64) -> SeedKey {
    SeedKey::new(master_seed).child(purpose::DIFF_TAIL)
}

fn crw(cfg: &ExperimentConfig, key: SeedKey, t_end: f64, horizon: f64) -> crw_core::Result<(Trajectory, usize)> {
    let mut env = renewal_field(cfg.env, key)?;
    let traj = simulate_crw(&mut env, 1.0, t_end, cfg.jump_cap(horizon), &mut key.stream(purpose::WALKER, 0).rng())?;
    Ok((traj, env.edges_built()))
}

/// Column order of `summary.csv` for each experiment.
pub fn columns(experiment: Experiment) -> &'static [&'static str] {
    match experiment {
        Experiment::EnvTail => &["length", "anchor_mode", "epsilon", "exceedances", "samples", "freq", "ci_low", "ci_high"],
        Experiment::Simulate => &["replicate", "T", "final_position", "n_jumps", "range", "edges_built", "flagged"],
        Experiment::Invariance => &["replicate", "T", "x_quarter", "x_half", "x_end", "n_jumps", "flagged"],
        Experiment::Range => &["replicate", "T", "range", "exceeds", "n_jumps", "flagged"],
        Experiment::IntermediateRange => &["replicate", "T", "t1", "t2", "range", "over_sqrt", "over_scale", "flagged"],
        Experiment::Coupling => &[
            "replicate", "T", "gamma", "beta", "failed", "failure_time", "sup_dev", "sup_dev_over_sqrtT", "max_p",
            "max_busy_B", "max_calm_B", "n_busy", "n_calm", "n_jumps", "srw_jumps", "flagged",
        ],
    }
}

/// Recomputes one replicate from the configuration alone.
pub fn run_replicate(cfg: &ExperimentConfig, rung: usize, rep: u64, keep_trajectory: bool) -> Result<ReplicateOutput, RunError> {
    let mut out = replicate_inner(cfg, rung, rep, keep_trajectory)?;
    let cells = std::mem::take(&mut out.row.0);
    out.row.0 = columns(cfg.experiment)
        .iter()
        .map(|&name| {
            let v = cells.iter().find(|(k, _)| *k == name).map_or(Value::Null, |(_, v)| v.clone());
            (name, v)
        })
        .collect();
    Ok(out)
}

fn replicate_inner(cfg: &ExperimentConfig, rung: usize, rep: u64, keep_trajectory: bool) -> Result<ReplicateOutput, RunError> {
    let horizon = cfg.t_ladder[rung];
    let key = replicate_key(cfg.master_seed, rung, rep);
    let mut row = Row::default();
    row.push("replicate", rep).push("T", horizon);
    let capped = |e: crw_core::Error, mut row: Row| match e {
        crw_core::Error::JumpCap { partial, .. } => Ok(ReplicateOutput {
            row: {
                row.push("flagged", true);
                row
            },
            flagged: true,
            trajectory: keep_trajectory.then_some(*partial),
        }),
        other => Err(RunError::Core(other)),
    };

    match cfg.experiment {
        Experiment::EnvTail => unreachable!("env-tail has no walker replicates"),
        Experiment::Simulate | Experiment::Invariance | Experiment::Range => {
            let (traj, edges) = match crw(cfg, key, horizon, horizon) {
                Ok(v) => v,
                Err(e) => return capped(e, row),
            };
            match cfg.experiment {
                Experiment::Simulate => {
                    row.push("final_position", traj.final_position())
                        .push("n_jumps", traj.events.len())
                        .push("range", range(&traj, 1.0, horizon)?)
                        .push("edges_built", edges);
                }
                Experiment::Invariance => {
                    let s = PathSample::from_trajectory(&traj, horizon);
                    row.push("x_quarter", s.x_quarter)
                        .push("x_half", s.x_half)
                        .push("x_end", s.x_end)
                        .push("n_jumps", traj.events.len());
                }
                _ => {
                    let r = range(&traj, 1.0, horizon)?;
                    row.push("range", r)
                        .push("exceeds", r as f64 > cfg.multiplier * horizon)
                        .push("n_jumps", traj.events.len());
                }
            }
            row.push("flagged", false);
            Ok(ReplicateOutput {
                row,
                flagged: false,
                trajectory: keep_trajectory.then_some(traj),
            })
        }
        Experiment::IntermediateRange => {
            let (t1, t2) = (horizon.powf(cfg.alpha), horizon.powf(cfg.beta));
            let (traj, _) = match crw(cfg, key, t2, horizon) {
                Ok(v) => v,
                Err(e) => return capped(e, row),
            };
            let r = range(&traj, t1, t2)? as f64;
            row.push("t1", t1)
                .push("t2", t2)
                .push("range", r)
                .push("over_sqrt", r / horizon.sqrt())
                .push("over_scale", r / horizon.powf(cfg.beta - cfg.alpha / 2.0 + cfg.epsilon))
                .push("flagged", false);
            Ok(ReplicateOutput {
                row,
                flagged: false,
                trajectory: keep_trajectory.then_some(traj),
            })
        }
        Experiment::Coupling => {
            let cc = cfg.coupling(horizon);
            let mut env = renewal_field(cfg.env, key)?;
            let trace = match simulate_coupled(
                &mut env,
                &cc,
                &mut key.stream(purpose::WALKER, 0).rng(),
                &mut key.stream(purpose::THINNING, 0).rng(),
            ) {
                Ok(t) => t,
                Err(e) => return capped(e, row),
            };
            let dev = deviation_process(&trace);
            let bias = pair_visits(&trace, cc.theta());
            let summary = bias_summary(std::slice::from_ref(&bias), &cc, cfg.thresholds.bias_slack)?;
            row.push("gamma", cfg.gamma)
                .push("beta", cfg.beta)
                .push("failed", trace.failed)
                .push("failure_time", trace.failure_time)
                .push("sup_dev", dev.sup)
                .push("sup_dev_over_sqrtT", dev.sup as f64 / horizon.sqrt())
                .push("max_p", bias.max_p)
                .push("max_busy_B", bias.max_busy_b())
                .push("max_calm_B", bias.max_calm_b())
                .push("n_busy", summary.n_busy)
                .push("n_calm", summary.n_calm)
                .push("n_jumps", trace.crw_path.events.len())
                .push("srw_jumps", trace.srw_path.events.len())
                .push("flagged", false);
            Ok(ReplicateOutput {
                row,
                flagged: false,
                trajectory: keep_trajectory.then_some(trace.crw_path),
            })
        }
    }
}

fn tail_config(cfg: &ExperimentConfig) -> DiffTailConfig {
    DiffTailConfig {
        zeta: cfg.zeta,
        epsilon: cfg.epsilon,
        c: cfg.tail_c,
        lengths: cfg.lengths.clone(),
        samples_per_length: cfg.replicates as usize,
        ci_z: cfg.thresholds.ci_z,
    }
}

fn tail_row(row: &TailRow) -> Row {
    let mut r = Row::default();
    r.push("length", row.length)
        .push("anchor_mode", row.anchor_mode.name())
        .push("epsilon", row.epsilon)
        .push("exceedances", row.exceedances)
        .push("samples", row.samples)
        .push("freq", row.freq)
        .push("ci_low", row.ci_low)
        .push("ci_high", row.ci_high);
    r
}

// ---------------------------------------------------------------------------
// Aggregation

fn failed_report(name: &str, why: impl ToString) -> TestReport {
    TestReport::new(name, f64::NAN, 0, 0.0, false).with("error", why.to_string())
}

fn column(rows: &[&Row], key: &str) -> Vec<f64> {
    rows.iter().filter_map(|r| r.num(key)).collect()
}

fn aggregate(cfg: &ExperimentConfig, rungs: &[Vec<Row>]) -> Vec<TestReport> {
    let th = &cfg.thresholds;
    let mut reports = Vec::new();
    let ok_rows: Vec<Vec<&Row>> = rungs
        .iter()
        .map(|rows| rows.iter().filter(|r| !r.flag("flagged")).collect())
        .collect();
    match cfg.experiment {
        Experiment::EnvTail => unreachable!("env-tail aggregates its own rows"),
        Experiment::Simulate => {
            for (k, rows) in ok_rows.iter().enumerate() {
                let t = cfg.t_ladder[k];
                let x = column(rows, "final_position");
                if x.len() >= 2 {
                    let ratio = crw_core::stats::sample_variance(&x) / (2.0 * t);
                    reports.push(
                        TestReport::new(
                            "simulate_variance_ratio",
                            ratio,
                            x.len() as u64,
                            th.var_ratio_low,
                            ratio >= th.var_ratio_low && ratio <= th.var_ratio_high,
                        )
                        .with("T", t),
                    );
                }
                match range_exceedance_from_ranges(&column(rows, "range"), t, cfg.multiplier, th) {
                    Ok(r) => reports.push(r.with("T", t)),
                    Err(e) => reports.push(failed_report("range_exceedance", e)),
                }
            }
        }
        Experiment::Invariance => {
            for (k, rows) in ok_rows.iter().enumerate() {
                let samples: Vec<PathSample> = rows
                    .iter()
                    .map(|r| PathSample {
                        x_quarter: r.num("x_quarter").unwrap_or(0.0) as i64,
                        x_half: r.num("x_half").unwrap_or(0.0) as i64,
                        x_end: r.num("x_end").unwrap_or(0.0) as i64,
                    })
                    .collect();
                match invariance_from_samples(&samples, cfg.t_ladder[k], th) {
                    Ok(b) => reports.extend(b.reports()),
                    Err(e) => reports.push(failed_report("invariance_overall", e)),
                }
            }
        }
        Experiment::Range => {
            for (k, rows) in ok_rows.iter().enumerate() {
                let t = cfg.t_ladder[k];
                match range_exceedance_from_ranges(&column(rows, "range"), t, cfg.multiplier, th) {
                    Ok(r) => reports.push(r),
                    Err(e) => reports.push(failed_report("range_exceedance", e)),
                }
            }
        }
        Experiment::IntermediateRange => {
            for (k, rows) in ok_rows.iter().enumerate() {
                let over = column(rows, "over_sqrt");
                reports.push(
                    TestReport::new("intermediate_range_median", median(&over), over.len() as u64, 0.0, !over.is_empty())
                        .with("T", cfg.t_ladder[k])
                        .with("median_over_scale", median(&column(rows, "over_scale"))),
                );
            }
            if cfg.t_ladder.len() >= 3 {
                let ladder: Vec<(f64, Vec<f64>)> = ok_rows
                    .iter()
                    .enumerate()
                    .map(|(k, rows)| (cfg.t_ladder[k], column(rows, "range")))
                    .collect();
                match intermediate_range_from_ranges(&ladder, cfg.alpha, cfg.beta, cfg.epsilon) {
                    Ok(r) => reports.push(r),
                    Err(e) => reports.push(failed_report("intermediate_range_trend", e)),
                }
            }
        }
        Experiment::Coupling => {
            let mut medians = Vec::new();
            let mut failure_freqs = Vec::new();
            for (k, rows) in ok_rows.iter().enumerate() {
                let t = cfg.t_ladder[k];
                let cc = cfg.coupling(t);
                let n = rows.len() as u64;
                let failed = rows.iter().filter(|r| r.flag("failed")).count() as u64;
                let freq = if n > 0 { failed as f64 / n as f64 } else { f64::NAN };
                let (lo, hi) = wilson_interval(failed, n, th.ci_z);
                failure_freqs.push(freq);
                reports.push(
                    TestReport::new("coupling_failure_frequency", freq, n, th.failure_max, freq <= th.failure_max)
                        .with("T", t)
                        .with("failed", failed)
                        .with("ci_low", lo)
                        .with("ci_high", hi),
                );

                let dev = column(rows, "sup_dev_over_sqrtT");
                let dev_ok: Vec<f64> = rows
                    .iter()
                    .filter(|r| !r.flag("failed"))
                    .filter_map(|r| r.num("sup_dev_over_sqrtT"))
                    .collect();
                let m = median(&dev);
                medians.push(m);
                reports.push(
                    TestReport::new("coupling_sup_deviation", m, n, 0.0, !dev.is_empty())
                        .with("T", t)
                        .with("q25", quantile(&dev, 0.25))
                        .with("q75", quantile(&dev, 0.75))
                        .with("median_non_failed", if dev_ok.is_empty() { Value::Null } else { json!(median(&dev_ok)) }),
                );

                let slack = th.bias_slack;
                let bounds = [
                    ("bias_max_p", "max_p", t.powf(5.0 / 8.0 - cfg.beta)),
                    ("bias_busy", "max_busy_B", t.powf(1.0 - cfg.beta)),
                    ("bias_calm", "max_calm_B", t.powf(7.0 / 8.0 + 1.0 / (2.0 * (cfg.zeta - 1.0)) - cfg.beta)),
                ];
                for (name, key, bound) in bounds {
                    let values = column(rows, key);
                    let within = values.iter().filter(|&&v| v <= slack * bound).count();
                    let frac = if values.is_empty() { f64::NAN } else { within as f64 / values.len() as f64 };
                    reports.push(
                        TestReport::new(name, frac, values.len() as u64, th.bound_quantile, frac >= th.bound_quantile)
                            .with("T", t)
                            .with("bound", bound)
                            .with("slack", slack)
                            .with("max", values.iter().copied().fold(0.0, f64::max))
                            .with("q95", quantile(&values, 0.95))
                            .with("theta", cc.theta())
                            .with("n_busy", column(rows, "n_busy").iter().sum::<f64>())
                            .with("n_calm", column(rows, "n_calm").iter().sum::<f64>()),
                    );
                }

                let counts: Vec<u64> = rows
                    .iter()
                    .filter(|r| !r.flag("failed"))
                    .filter_map(|r| r.num("srw_jumps"))
                    .map(|c| c as u64)
                    .collect();
                let window = t - cc.start();
                match dispersion_index(&counts, 2.0 * (1.0 - cc.eps()), window, th) {
                    Ok(r) => reports.push(r.with("T", t)),
                    Err(e) => reports.push(failed_report("dispersion_index", e).with("T", t)),
                }
            }
            if cfg.t_ladder.len() >= 3 {
                reports.push(
                    TestReport::new(
                        "coupling_deviation_trend",
                        *medians.last().unwrap_or(&f64::NAN),
                        cfg.t_ladder.len() as u64,
                        0.0,
                        strictly_decreasing(&medians),
                    )
                    .with("medians", medians.clone()),
                );
                reports.push(
                    TestReport::new(
                        "coupling_failure_trend",
                        *failure_freqs.last().unwrap_or(&f64::NAN),
                        cfg.t_ladder.len() as u64,
                        0.0,
                        non_increasing(&failure_freqs),
                    )
                    .with("frequencies", failure_freqs.clone()),
                );
            }
        }
    }
    reports
}

fn tail_reports(cfg: &ExperimentConfig, curve: &TailCurve) -> Vec<TestReport> {
    let mut reports = Vec::new();
    let longest = cfg.lengths.iter().copied().fold(f64::MIN, f64::max);
    for row in curve.rows.iter().filter(|r| r.length == longest) {
        reports.push(
            TestReport::new("diff_tail_longest", row.freq, row.samples, cfg.tail_max, row.freq <= cfg.tail_max)
                .with("length", row.length)
                .with("anchor_mode", row.anchor_mode.name())
                .with("ci_low", row.ci_low)
                .with("ci_high", row.ci_high),
        );
    }
    let slope = curve.fitted_slope;
    reports.push(
        TestReport::new(
            "diff_tail_slope",
            slope.unwrap_or(f64::NAN),
            curve.rows.len() as u64,
            -curve.zeta,
            slope.is_some_and(|s| s < -curve.zeta),
        )
        .with("resolved", slope.is_some()),
    );
    let mut c = TestReport::new("diff_tail_constant", curve.implied_c, curve.rows.len() as u64, cfg.tail_c.unwrap_or(f64::NAN), curve.c_holds.unwrap_or(true));
    if cfg.tail_c.is_none() {
        c = c.with("note", "no constant configured; implied value only");
    }
    reports.push(c);
    reports
}

// ---------------------------------------------------------------------------
// Outputs

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedEntry {
    pub rung: usize,
    pub horizon: f64,
    pub replicate: u64,
    pub seed: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub software_version: String,
    pub workers: usize,
    pub seeds: Vec<SeedEntry>,
    pub started_at: u64,
    pub finished_at: Option<u64>,
    pub outputs: Vec<String>,
    pub replicates_total: usize,
    pub replicates_flagged: usize,
    pub complete: bool,
}

#[derive(Serialize)]
struct ReportBundle<'a> {
    experiment: Experiment,
    config_hash: &'a str,
    master_seed: u64,
    reports: &'a [TestReport],
}

pub struct RunOutcome {
    pub manifest: RunManifest,
    pub reports: Vec<TestReport>,
    pub exit_code: i32,
}

/// SHA-256 of the canonical JSON form of `cfg`.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let canonical = serde_json::to_vec(cfg).expect("config is plain data");
    hex::encode(Sha256::digest(&canonical))
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn write_csv(path: &Path, rows: &[Row]) -> Result<(), RunError> {
    let mut w = csv::Writer::from_path(path)?;
    if let Some(first) = rows.first() {
        w.write_record(first.header())?;
    }
    for row in rows {
        w.write_record(row.cells())?;
    }
    w.flush().map_err(|e| RunError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), RunError> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    io(path, fs::write(path, bytes))
}

fn write_trajectories(path: &Path, items: &[(u64, f64, &Trajectory)]) -> Result<(), RunError> {
    let file = io(path, fs::File::create(path))?;
    let mut w = BufWriter::new(file);
    for (rep, horizon, traj) in items {
        for e in &traj.events {
            let line = json!({"rep": rep, "horizon": horizon, "t": e.time, "edge": e.edge.0, "dir": e.direction, "pos": e.position_after});
            io(path, writeln!(w, "{line}"))?;
        }
    }
    io(path, w.flush())
}

/// Runs every replicate of `cfg` on `workers` threads and writes
/// `summary.csv`, `reports.json`, `manifest.json` (and optionally
/// `trajectories.jsonl`) into `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, workers: usize, out_dir: &Path) -> Result<RunOutcome, RunError> {
    io(out_dir, fs::create_dir_all(out_dir))?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build()?;
    let hash = config_hash(cfg);
    let manifest_path = out_dir.join("manifest.json");

    let seeds: Vec<SeedEntry> = if cfg.experiment == Experiment::EnvTail {
        vec![SeedEntry {
            rung: 0,
            horizon: 0.0,
            replicate: 0,
            seed: format!("{:016x}", tail_key(cfg.master_seed).0),
        }]
    } else {
        cfg.t_ladder
            .iter()
            .enumerate()
            .flat_map(|(k, &t)| {
                (0..cfg.replicates).map(move |r| SeedEntry {
                    rung: k,
                    horizon: t,
                    replicate: r,
                    seed: format!("{:016x}", replicate_key(cfg.master_seed, k, r).0),
                })
            })
            .collect()
    };
    let mut manifest = RunManifest {
        config: cfg.clone(),
        config_hash: hash.clone(),
        software_version: env!("CARGO_PKG_VERSION").to_string(),
        workers,
        seeds,
        started_at: now(),
        finished_at: None,
        outputs: Vec::new(),
        replicates_total: 0,
        replicates_flagged: 0,
        complete: false,
    };
    write_json(&manifest_path, &manifest)?;

    let summary_path = out_dir.join("summary.csv");
    let (reports, total, flagged) = if cfg.experiment == Experiment::EnvTail {
        let tcfg = tail_config(cfg);
        let curve = pool.install(|| crw_core::env::estimate_diff_tail(&cfg.env, &tcfg, tail_key(cfg.master_seed)))?;
        let rows: Vec<Row> = curve.rows.iter().map(tail_row).collect();
        write_csv(&summary_path, &rows)?;
        (tail_reports(cfg, &curve), rows.len(), 0)
    } else {
        let keep = cfg.write_trajectories;
        // Rows go to disk rung by rung so an interrupted run keeps them.
        let mut summary = csv::Writer::from_path(&summary_path)?;
        let mut rungs: Vec<Vec<ReplicateOutput>> = Vec::new();
        for k in 0..cfg.t_ladder.len() {
            let outs: Vec<Result<ReplicateOutput, RunError>> = pool.install(|| {
                (0..cfg.replicates)
                    .into_par_iter()
                    .map(|r| run_replicate(cfg, k, r, keep))
                    .collect()
            });
            let outs: Vec<ReplicateOutput> = outs.into_iter().collect::<Result<_, _>>()?;
            for (i, o) in outs.iter().enumerate() {
                if k == 0 && i == 0 {
                    summary.write_record(o.row.header())?;
                }
                summary.write_record(o.row.cells())?;
            }
            io(&summary_path, summary.flush())?;
            rungs.push(outs);
        }
        drop(summary);
        let all_rows = rungs.iter().map(Vec::len).sum::<usize>();
        if keep {
            let path = out_dir.join("trajectories.jsonl");
            let items: Vec<(u64, f64, &Trajectory)> = rungs
                .iter()
                .enumerate()
                .flat_map(|(k, outs)| {
                    outs.iter()
                        .enumerate()
                        .filter_map(move |(r, o)| o.trajectory.as_ref().map(|t| (r as u64, cfg.t_ladder[k], t)))
                })
                .collect();
            write_trajectories(&path, &items)?;
            manifest.outputs.push("trajectories.jsonl".into());
        }
        let flagged = rungs.iter().flatten().filter(|o| o.flagged).count();
        let rows: Vec<Vec<Row>> = rungs.into_iter().map(|outs| outs.into_iter().map(|o| o.row).collect()).collect();
        (aggregate(cfg, &rows), all_rows, flagged)
    };

    write_json(
        &out_dir.join("reports.json"),
        &ReportBundle {
            experiment: cfg.experiment,
            config_hash: &hash,
            master_seed: cfg.master_seed,
            reports: &reports,
        },
    )?;
    manifest.outputs.splice(0..0, ["summary.csv".to_string(), "reports.json".to_string()]);
    manifest.replicates_total = total;
    manifest.replicates_flagged = flagged;
    manifest.finished_at = Some(now());
    manifest.complete = true;
    write_json(&manifest_path, &manifest)?;

    let degraded = total > 0 && flagged as f64 / total as f64 > cfg.thresholds.degraded_fraction;
    Ok(RunOutcome {
        manifest,
        reports,
        exit_code: if degraded { EXIT_DEGRADED } else { EXIT_OK },
    })
}

/// Result of re-deriving one replicate from a manifest.
pub struct Replayed {
    pub rows: Vec<Row>,
    /// Whether the rows equal those in the run's `summary.csv`, if present.
    pub matches_summary: Option<bool>,
}

/// Re-derives replicate `replicate` of ladder rung `rung` (for `env-tail`,
/// the two rows of length index `rung`).
pub fn replay(manifest_path: &Path, rung: usize, replicate: u64) -> Result<Replayed, RunError> {
    let text = io(manifest_path, fs::read_to_string(manifest_path))?;
    let manifest: RunManifest = serde_json::from_str(&text)?;
    let cfg = &manifest.config;
    if config_hash(cfg) != manifest.config_hash {
        return Err(RunError::Replay("config hash does not match the config snapshot".into()));
    }
    let rows = if cfg.experiment == Experiment::EnvTail {
        if rung >= cfg.lengths.len() {
            return Err(RunError::Replay(format!("length index {rung} out of range")));
        }
        diff_tail_rows(&cfg.env, &tail_config(cfg), tail_key(cfg.master_seed), rung)?
            .iter()
            .map(tail_row)
            .collect()
    } else {
        if rung >= cfg.t_ladder.len() || replicate >= cfg.replicates {
            return Err(RunError::Replay(format!("no replicate {replicate} on rung {rung}")));
        }
        vec![run_replicate(cfg, rung, replicate, false)?.row]
    };

    let summary = manifest_path.with_file_name("summary.csv");
    let matches_summary = if summary.exists() {
        let mut reader = csv::Reader::from_path(&summary)?;
        let recorded: Vec<Vec<String>> = reader
            .records()
            .map(|r| r.map(|rec| rec.iter().map(str::to_string).collect()))
            .collect::<Result<_, _>>()?;
        let offset = if cfg.experiment == Experiment::EnvTail {
            2 * rung
        } else {
            rung * cfg.replicates as usize + replicate as usize
        };
        Some(rows.iter().enumerate().all(|(i, row)| recorded.get(offset + i) == Some(&row.cells())))
    } else {
        None
    };
    Ok(Replayed { rows, matches_summary })
}
