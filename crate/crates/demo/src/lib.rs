//! WebAssembly bindings behind `www/index.html`. Each export takes plain
//! numbers, runs one simulation and hands back a JSON string for the page
//! to draw.

use crw_core::coupling::{deviation_process, simulate_coupled, CouplingConfig};
use crw_core::env::{renewal_field, Environment, EdgeId, RenewalSpec};
use crw_core::rng::{purpose, SeedKey};
use crw_core::walker::{default_jump_cap, simulate_crw, Trajectory};
use serde::Serialize;
use wasm_bindgen::prelude::*;

// Keeps the browser responsive; the page also clamps its inputs.
const MAX_HORIZON: f64 = 2e5;
const GRID: usize = 600;

fn family(name: &str, param: f64) -> Result<RenewalSpec, String> {
    let spec = match name {
        "exponential" => RenewalSpec::Exponential,
        "gamma" => RenewalSpec::Gamma { shape: param },
        "uniform-shifted" => RenewalSpec::UniformShifted { half_width: param },
        "deterministic-jitter" => RenewalSpec::DeterministicJitter { jitter: param },
        other => return Err(format!("unknown family `{other}`")),
    };
    spec.validate().map_err(|e| e.to_string())?;
    Ok(spec)
}

fn horizon_ok(t: f64) -> Result<(), String> {
    if t > 1.0 && t <= MAX_HORIZON {
        Ok(())
    } else {
        Err(format!("horizon must lie in (1, {MAX_HORIZON}]"))
    }
}

/// `n` points spaced evenly on a log scale from 1 to `t`.
fn log_grid(t: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| t.powf(i as f64 / (n - 1) as f64)).collect()
}

fn sampled(path: &Trajectory, grid: &[f64]) -> Vec<i64> {
    grid.iter().map(|&s| path.position_at(s)).collect()
}

#[derive(Serialize)]
struct PathView {
    times: Vec<f64>,
    positions: Vec<i64>,
    jumps: usize,
    final_position: i64,
    edges_built: usize,
}

#[derive(Serialize)]
struct CouplingView {
    times: Vec<f64>,
    crw: Vec<i64>,
    srw: Vec<i64>,
    start: f64,
    eps: f64,
    failed: bool,
    failure_time: Option<f64>,
    sup_deviation: u64,
    sup_over_sqrt: f64,
}

#[derive(Serialize)]
struct EdgeView {
    times: Vec<f64>,
    /// One `Λ(t)/t` curve per edge.
    curves: Vec<Vec<f64>>,
}

fn to_js(r: Result<String, String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

fn walk(seed: u64, horizon: f64, family_name: &str, param: f64) -> Result<String, String> {
    horizon_ok(horizon)?;
    let key = SeedKey::new(seed);
    let mut env = renewal_field(family(family_name, param)?, key).map_err(|e| e.to_string())?;
    let mut rng = key.stream(purpose::WALKER, 0).rng();
    let path = simulate_crw(&mut env, 1.0, horizon, default_jump_cap(horizon), &mut rng).map_err(|e| e.to_string())?;
    let times: Vec<f64> = (0..=GRID).map(|i| 1.0 + (horizon - 1.0) * i as f64 / GRID as f64).collect();
    let view = PathView {
        positions: sampled(&path, &times),
        times,
        jumps: path.events.len(),
        final_position: path.final_position(),
        edges_built: env.edges_built(),
    };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

fn coupled(seed: u64, horizon: f64, gamma: f64, beta: f64) -> Result<String, String> {
    horizon_ok(horizon)?;
    let cfg = CouplingConfig {
        gamma,
        beta,
        ..CouplingConfig::new(horizon)
    };
    cfg.validate().map_err(|e| e.to_string())?;
    let key = SeedKey::new(seed);
    let mut env = renewal_field(RenewalSpec::Exponential, key).map_err(|e| e.to_string())?;
    let trace = simulate_coupled(
        &mut env,
        &cfg,
        &mut key.stream(purpose::WALKER, 0).rng(),
        &mut key.stream(purpose::THINNING, 0).rng(),
    )
    .map_err(|e| e.to_string())?;
    let dev = deviation_process(&trace);
    let times: Vec<f64> = (0..=GRID)
        .map(|i| trace.start + (horizon - trace.start) * i as f64 / GRID as f64)
        .collect();
    let view = CouplingView {
        crw: sampled(&trace.crw_path, &times),
        srw: sampled(&trace.srw_path, &times),
        times,
        start: trace.start,
        eps: trace.eps,
        failed: trace.failed,
        failure_time: trace.failure_time,
        sup_deviation: dev.sup,
        sup_over_sqrt: dev.sup as f64 / horizon.sqrt(),
    };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

fn edges(seed: u64, count: u32, horizon: f64, family_name: &str, param: f64) -> Result<String, String> {
    horizon_ok(horizon)?;
    if count == 0 || count > 50 {
        return Err("edge count must lie in 1..=50".into());
    }
    let mut env = renewal_field(family(family_name, param)?, SeedKey::new(seed)).map_err(|e| e.to_string())?;
    let times = log_grid(horizon, 200);
    let curves = (0..count as i64)
        .map(|e| {
            let edge = env.edge(EdgeId(e));
            times.iter().map(|&t| edge.lambda_at(t) as f64 / t).collect()
        })
        .collect();
    serde_json::to_string(&EdgeView { times, curves }).map_err(|e| e.to_string())
}

/// Walk in a random environment on `[1, horizon]`.
#[wasm_bindgen]
pub fn simulate_path(seed: u64, horizon: f64, family_name: &str, param: f64) -> Result<String, JsError> {
    to_js(walk(seed, horizon, family_name, param))
}

/// Walk coupled to a rate-2 simple random walk from `horizon^beta` on.
#[wasm_bindgen]
pub fn coupled_run(seed: u64, horizon: f64, gamma: f64, beta: f64) -> Result<String, JsError> {
    to_js(coupled(seed, horizon, gamma, beta))
}

/// `Λ(t)/t` for the first `count` edges on a log-spaced grid.
#[wasm_bindgen]
pub fn edge_rates(seed: u64, count: u32, horizon: f64, family_name: &str, param: f64) -> Result<String, JsError> {
    to_js(edges(seed, count, horizon, family_name, param))
}
