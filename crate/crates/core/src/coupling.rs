//! Coupling of the walk with a slowed-down simple random walk.
//!
//! From time `T^β` on, every jump of the walk across edge `e` at time `τ` is
//! copied by the simple walk unless an independent coin with stay-put
//! probability `P = 1 - τ(1 - ε_T)/Λ_e(τ)` says otherwise. As long as every
//! conductance seen stays above `1 - ε_T` the copied jumps form a symmetric
//! walk of rate `2(1 - ε_T)`.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{EdgeId, Environment, Piece};
use crate::error::{argument, config, Error, Result};
use crate::walker::{step_in, JumpEvent, Segment, Trajectory, WalkerState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingConfig {
    pub horizon: f64,
    pub gamma: f64,
    pub beta: f64,
    pub zeta: f64,
    /// Busy/calm threshold exponent; defaults to `5/8 - 1/(2(zeta - 1))`.
    pub theta: Option<f64>,
    pub jump_cap: usize,
}

impl CouplingConfig {
    pub fn new(horizon: f64) -> Self {
        CouplingConfig {
            horizon,
            gamma: 0.4,
            beta: 0.9,
            zeta: 6.0,
            theta: None,
            jump_cap: crate::walker::default_jump_cap(horizon),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 1.0 && self.horizon.is_finite()) {
            return Err(config(format!("horizon must be finite and > 1, got {}", self.horizon)));
        }
        if !(self.gamma > 0.0 && self.gamma < 0.5) {
            return Err(config(format!("gamma must lie in (0, 1/2), got {}", self.gamma)));
        }
        if !(self.zeta > 5.0) {
            return Err(config(format!("zeta must be > 5, got {}", self.zeta)));
        }
        let floor = (2.0 * self.gamma).max(1.0 / (self.zeta - 1.0));
        if !(self.beta > floor && self.beta < 1.0) {
            return Err(config(format!(
                "beta must lie in (max(2 gamma, 1/(zeta - 1)), 1) = ({floor}, 1), got {}",
                self.beta
            )));
        }
        Ok(())
    }

    /// `ε_T = T^(-γ)`.
    pub fn eps(&self) -> f64 {
        self.horizon.powf(-self.gamma)
    }

    /// `T^β`, where the simple walk is attached.
    pub fn start(&self) -> f64 {
        self.horizon.powf(self.beta)
    }

    pub fn theta(&self) -> f64 {
        self.theta.unwrap_or_else(|| default_theta(self.zeta))
    }
}

pub fn default_theta(zeta: f64) -> f64 {
    5.0 / 8.0 - 1.0 / (2.0 * (zeta - 1.0))
}

/// Stay-put probability `1 - τ(1 - ε)/Λ`. Negative values (including `-inf`
/// for `Λ = 0`) mean the coupling has failed.
pub fn thinning_prob(tau: f64, lambda: f64, eps: f64) -> f64 {
    1.0 - tau * (1.0 - eps) / lambda
}

/// One jump of the walk after the coupling start.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingRecord {
    pub tau: f64,
    pub edge: EdgeId,
    pub direction: i8,
    pub lambda: f64,
    pub p: f64,
    /// `true` if the simple walk stayed put.
    pub xi: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingTrace {
    pub start: f64,
    pub horizon: f64,
    pub eps: f64,
    pub records: Vec<CouplingRecord>,
    pub crw_path: Trajectory,
    pub srw_path: Trajectory,
    pub failed: bool,
    pub failure_time: Option<f64>,
}

/// First time in `[lo, hi]` at which `Λ(s)/s < 1 - eps`, for the affine
/// piece `p` anchored at `from`. The infimum over a stretch sits at its right
/// end, so checking `hi` decides it.
fn failure_in(p: &Piece, from: f64, lo: f64, hi: f64, eps: f64) -> Option<f64> {
    // Λ(s) = a + b s, fails where a < (1 - eps - b) s
    let a = p.value - p.slope * from;
    let k = 1.0 - eps - p.slope;
    if k > 0.0 {
        (a < k * hi).then(|| lo.max(a / k))
    } else {
        (a < k * lo).then_some(lo)
    }
}

/// Runs the walk from time 1 to `cfg.horizon` and the coupled simple walk
/// from `T^β`. `thin_rng` supplies exactly one uniform per record.
pub fn simulate_coupled<E, G, H>(env: &mut E, cfg: &CouplingConfig, walk_rng: &mut G, thin_rng: &mut H) -> Result<CouplingTrace>
where
    E: Environment + ?Sized,
    G: Rng + ?Sized,
    H: Rng + ?Sized,
{
    cfg.validate()?;
    run_coupled(env, cfg.horizon, cfg.start(), cfg.eps(), cfg.jump_cap, walk_rng, thin_rng)
}

/// [`simulate_coupled`] with the window and delay given directly, so that
/// degenerate settings such as `eps = 0` can be exercised.
pub fn run_coupled<E, G, H>(
    env: &mut E,
    horizon: f64,
    start: f64,
    eps: f64,
    jump_cap: usize,
    walk_rng: &mut G,
    thin_rng: &mut H,
) -> Result<CouplingTrace>
where
    E: Environment + ?Sized,
    G: Rng + ?Sized,
    H: Rng + ?Sized,
{
    if !(1.0 <= start && start <= horizon && horizon.is_finite()) {
        return Err(argument(format!("need 1 <= start <= horizon < inf, got {start}, {horizon}")));
    }
    if !(0.0..1.0).contains(&eps) {
        return Err(argument(format!("eps must lie in [0, 1), got {eps}")));
    }
    let mut crw = Trajectory::new(1.0, 0);
    let mut state = WalkerState { position: 0, time: 1.0 };

    // Uncoupled stretch [1, T^β].
    while let Some(step) = step_in(&mut state, env, start, walk_rng, &mut |_| {}) {
        push_capped(&mut crw, step.event, jump_cap, state.time)?;
    }

    let mut srw = Trajectory::new(start, state.position);
    let mut records = Vec::new();
    let mut failure_time: Option<f64> = None;
    let mut watch = |seg: &Segment| {
        if failure_time.is_some() {
            return;
        }
        let hit = [seg.left, seg.right]
            .iter()
            .filter_map(|p| failure_in(p, seg.from, seg.from, seg.to, eps))
            .reduce(f64::min);
        failure_time = hit;
    };
    while let Some(step) = step_in(&mut state, env, horizon, walk_rng, &mut watch) {
        let JumpEvent { time, edge, direction, .. } = step.event;
        push_capped(&mut crw, step.event, jump_cap, time)?;
        let p = thinning_prob(time, step.edge_value, eps);
        let xi = thin_rng.random::<f64>() < p;
        records.push(CouplingRecord {
            tau: time,
            edge,
            direction,
            lambda: step.edge_value,
            p,
            xi,
        });
        if !xi {
            let position_after = srw.final_position() + direction as i64;
            srw.events.push(JumpEvent {
                time,
                edge: if direction > 0 { EdgeId(position_after - 1) } else { EdgeId(position_after) },
                direction,
                position_after,
            });
        }
    }
    crw.end_time = horizon;
    srw.end_time = horizon;
    Ok(CouplingTrace {
        start,
        horizon,
        eps,
        records,
        crw_path: crw,
        srw_path: srw,
        failed: failure_time.is_some(),
        failure_time,
    })
}

fn push_capped(traj: &mut Trajectory, event: JumpEvent, cap: usize, time: f64) -> Result<()> {
    if traj.events.len() == cap {
        let mut partial = traj.clone();
        partial.end_time = time;
        return Err(Error::JumpCap {
            cap,
            time,
            partial: Box::new(partial),
        });
    }
    traj.events.push(event);
    Ok(())
}

/// `X - X^s` at the coupling start and after every record, computed from
/// the two paths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    pub points: Vec<(f64, i64)>,
    /// `sup |X - X^s|` over `[T^β, T]`.
    pub sup: u64,
}

pub fn deviation_process(trace: &CouplingTrace) -> Deviation {
    let crw = &trace.crw_path;
    let srw = &trace.srw_path;
    let mut points = Vec::with_capacity(trace.records.len() + 1);
    points.push((trace.start, crw.position_at(trace.start) - srw.start_position));
    let first = crw.events.partition_point(|e| e.time <= trace.start);
    let mut srw_idx = 0;
    let mut srw_pos = srw.start_position;
    for e in &crw.events[first..] {
        while srw_idx < srw.events.len() && srw.events[srw_idx].time <= e.time {
            srw_pos = srw.events[srw_idx].position_after;
            srw_idx += 1;
        }
        points.push((e.time, e.position_after - srw_pos));
    }
    let sup = points.iter().map(|p| p.1.unsigned_abs()).max().unwrap_or(0);
    Deviation { points, sup }
}

/// `Σ direction` over stay-put records with `tau <= t`, the value that
/// `X(t) - X^s(t)` must equal.
pub fn signed_stay_count(trace: &CouplingTrace, t: f64) -> i64 {
    trace
        .records
        .iter()
        .take_while(|r| r.tau <= t)
        .filter(|r| r.xi)
        .map(|r| r.direction as i64)
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeClass {
    Busy,
    Calm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeBias {
    pub visit_count: usize,
    /// Record indices, consecutive visits paired from the first one.
    pub pairs: Vec<(usize, usize)>,
    pub unpaired: Vec<usize>,
    pub b_e: f64,
    pub class: EdgeClass,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub per_edge: BTreeMap<i64, EdgeBias>,
    pub max_p: f64,
    pub theta_used: f64,
    pub busy_threshold: f64,
}

impl BiasReport {
    fn max_b(&self, class: EdgeClass) -> f64 {
        self.per_edge
            .values()
            .filter(|e| e.class == class)
            .map(|e| e.b_e)
            .fold(0.0, f64::max)
    }

    pub fn max_busy_b(&self) -> f64 {
        self.max_b(EdgeClass::Busy)
    }

    pub fn max_calm_b(&self) -> f64 {
        self.max_b(EdgeClass::Calm)
    }

    pub fn count(&self, class: EdgeClass) -> usize {
        self.per_edge.values().filter(|e| e.class == class).count()
    }
}

/// Pairs the visits of each edge and accumulates `B_e = Σ |P_i - P_j|`.
pub fn pair_visits(trace: &CouplingTrace, theta: f64) -> BiasReport {
    let mut visits: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, r) in trace.records.iter().enumerate() {
        visits.entry(r.edge.0).or_default().push(i);
    }
    let busy_threshold = trace.horizon.powf(theta);
    let per_edge = visits
        .into_iter()
        .map(|(edge, idx)| {
            let pairs: Vec<(usize, usize)> = idx.chunks_exact(2).map(|c| (c[0], c[1])).collect();
            let unpaired = idx.chunks_exact(2).remainder().to_vec();
            let b_e = pairs
                .iter()
                .map(|&(i, j)| (trace.records[i].p - trace.records[j].p).abs())
                .sum();
            let class = if idx.len() as f64 > busy_threshold { EdgeClass::Busy } else { EdgeClass::Calm };
            (
                edge,
                EdgeBias {
                    visit_count: idx.len(),
                    pairs,
                    unpaired,
                    b_e,
                    class,
                },
            )
        })
        .collect();
    BiasReport {
        per_edge,
        max_p: trace.records.iter().map(|r| r.p).fold(0.0, f64::max),
        theta_used: theta,
        busy_threshold,
    }
}

/// Bias figures across replicates, compared against `slack` times the
/// bounds `T^(5/8-β)`, `T^(1-β)` and `T^(7/8 + 1/(2(ζ-1)) - β)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasSummary {
    pub replicates: usize,
    pub max_p: f64,
    pub max_busy_b: f64,
    pub max_calm_b: f64,
    pub n_busy: usize,
    pub n_calm: usize,
    pub bound_p: f64,
    pub bound_busy: f64,
    pub bound_calm: f64,
    pub slack: f64,
    /// Fraction of replicates with `max P_i <= slack * bound_p`.
    pub frac_p_within: f64,
    pub frac_busy_within: f64,
    pub frac_calm_within: f64,
    /// Replicates breaking at least one scaled bound.
    pub flagged: Vec<usize>,
}

pub fn bias_summary(reports: &[BiasReport], cfg: &CouplingConfig, slack: f64) -> Result<BiasSummary> {
    if !(slack > 0.0) {
        return Err(argument(format!("slack must be > 0, got {slack}")));
    }
    let t = cfg.horizon;
    let bound_p = t.powf(5.0 / 8.0 - cfg.beta);
    let bound_busy = t.powf(1.0 - cfg.beta);
    let bound_calm = t.powf(7.0 / 8.0 + 1.0 / (2.0 * (cfg.zeta - 1.0)) - cfg.beta);
    let n = reports.len();
    let frac = |f: &dyn Fn(&BiasReport) -> bool| {
        if n == 0 {
            1.0
        } else {
            reports.iter().filter(|r| f(r)).count() as f64 / n as f64
        }
    };
    let p_ok = |r: &BiasReport| r.max_p <= slack * bound_p;
    let busy_ok = |r: &BiasReport| r.max_busy_b() <= slack * bound_busy;
    let calm_ok = |r: &BiasReport| r.max_calm_b() <= slack * bound_calm;
    Ok(BiasSummary {
        replicates: n,
        max_p: reports.iter().map(|r| r.max_p).fold(0.0, f64::max),
        max_busy_b: reports.iter().map(BiasReport::max_busy_b).fold(0.0, f64::max),
        max_calm_b: reports.iter().map(BiasReport::max_calm_b).fold(0.0, f64::max),
        n_busy: reports.iter().map(|r| r.count(EdgeClass::Busy)).sum(),
        n_calm: reports.iter().map(|r| r.count(EdgeClass::Calm)).sum(),
        bound_p,
        bound_busy,
        bound_calm,
        slack,
        frac_p_within: frac(&p_ok),
        frac_busy_within: frac(&busy_ok),
        frac_calm_within: frac(&calm_ok),
        flagged: reports
            .iter()
            .enumerate()
            .filter(|(_, r)| !(p_ok(r) && busy_ok(r) && calm_ok(r)))
            .map(|(i, _)| i)
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::fixtures::IdentityEdge;
    use crate::env::uniform_field;
    use crate::rng::StreamRng;
    use rand::SeedableRng;

    fn rng(seed: u64) -> StreamRng {
        StreamRng::seed_from_u64(seed)
    }

    #[test]
    fn thinning_examples() {
        assert_eq!(thinning_prob(3.0, 3.0, 0.0), 0.0);
        assert!((thinning_prob(4.0, 5.0, 0.0) - 0.2).abs() < 1e-15);
        assert!(thinning_prob(10.0, 9.0, 0.05) < 0.0);
        assert_eq!(thinning_prob(1.0, 0.0, 0.1), f64::NEG_INFINITY);
    }

    #[test]
    fn theta_at_zeta_six() {
        assert!((default_theta(6.0) - 0.525).abs() < 1e-15);
        assert!((CouplingConfig::new(1e4).theta() - 0.525).abs() < 1e-15);
    }

    #[test]
    fn config_constraints() {
        let ok = CouplingConfig::new(1e4);
        ok.validate().unwrap();
        for bad in [
            CouplingConfig { gamma: 0.6, ..ok.clone() },
            CouplingConfig { beta: 0.5, ..ok.clone() },
            CouplingConfig { zeta: 5.0, ..ok.clone() },
            CouplingConfig { horizon: 1.0, ..ok.clone() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn failure_detection_on_pieces() {
        let flat = Piece { value: 9.0, slope: 0.0, until: 20.0 };
        // 9/s < 0.95 once s > 9.47
        let hit = failure_in(&flat, 5.0, 5.0, 10.0, 0.05).unwrap();
        assert!((hit - 9.0 / 0.95).abs() < 1e-12);
        assert_eq!(failure_in(&flat, 5.0, 5.0, 9.0, 0.05), None);
        let ident = Piece { value: 5.0, slope: 1.0, until: f64::INFINITY };
        assert_eq!(failure_in(&ident, 5.0, 5.0, 1e9, 0.0), None);
    }

    fn trace_from(p: &[(i64, i8, f64, bool)]) -> CouplingTrace {
        let records = p
            .iter()
            .enumerate()
            .map(|(i, &(edge, direction, p, xi))| CouplingRecord {
                tau: 2.0 + i as f64,
                edge: EdgeId(edge),
                direction,
                lambda: 1.0,
                p,
                xi,
            })
            .collect();
        CouplingTrace {
            start: 1.0,
            horizon: 100.0,
            eps: 0.0,
            records,
            crw_path: Trajectory::new(1.0, 0),
            srw_path: Trajectory::new(1.0, 0),
            failed: false,
            failure_time: None,
        }
    }

    #[test]
    fn pairing_example() {
        let trace = trace_from(&[(0, 1, 0.10, false), (0, -1, 0.04, false), (0, 1, 0.07, false), (0, -1, 0.05, false)]);
        let report = pair_visits(&trace, 0.525);
        let e = &report.per_edge[&0];
        assert_eq!(e.pairs, vec![(0, 1), (2, 3)]);
        assert!((e.b_e - 0.08).abs() < 1e-15);
        assert!((report.max_p - 0.10).abs() < 1e-15);
        assert_eq!(e.class, EdgeClass::Calm);
    }

    #[test]
    fn single_visit_is_unpaired() {
        let report = pair_visits(&trace_from(&[(3, 1, 0.2, false)]), 0.5);
        let e = &report.per_edge[&3];
        assert!(e.pairs.is_empty());
        assert_eq!(e.unpaired, vec![0]);
        assert_eq!(e.b_e, 0.0);
    }

    #[test]
    fn empty_trace_summary_is_zero() {
        let cfg = CouplingConfig::new(1e4);
        let report = pair_visits(&trace_from(&[]), cfg.theta());
        let s = bias_summary(&[report], &cfg, 4.0).unwrap();
        assert_eq!((s.max_p, s.max_busy_b, s.max_calm_b), (0.0, 0.0, 0.0));
        assert!(s.flagged.is_empty());
    }

    #[test]
    fn identity_environment_couples_perfectly() {
        let cfg = CouplingConfig {
            gamma: 0.4,
            ..CouplingConfig::new(2000.0)
        };
        let mut env = uniform_field(IdentityEdge);
        let trace = simulate_coupled(&mut env, &cfg, &mut rng(1), &mut rng(2)).unwrap();
        assert!(!trace.failed);
        assert!(!trace.records.is_empty());
        // Λ(τ) = τ makes P = ε_T exactly
        for r in &trace.records {
            assert!((r.p - cfg.eps()).abs() < 1e-12);
        }
        let report = pair_visits(&trace, cfg.theta());
        assert!(report.per_edge.values().all(|e| e.b_e < 1e-12));
    }

    #[test]
    fn zero_delay_identity_tracks_exactly() {
        let mut env = uniform_field(IdentityEdge);
        let trace = run_coupled(&mut env, 500.0, 20.0, 0.0, 100_000, &mut rng(3), &mut rng(4)).unwrap();
        assert!(trace.records.iter().all(|r| r.p.abs() < 1e-12 && !r.xi));
        assert_eq!(deviation_process(&trace).sup, 0);
        assert_eq!(trace.srw_path.events.len(), trace.records.len());
    }

    #[test]
    fn deviation_counts_stays() {
        let mut trace = trace_from(&[(0, 1, 0.5, true), (0, -1, 0.5, true)]);
        // X moves +1 then -1, X^s never moves
        let mut crw = Trajectory::new(1.0, 0);
        crw.events.push(JumpEvent { time: 2.0, edge: EdgeId(0), direction: 1, position_after: 1 });
        crw.events.push(JumpEvent { time: 3.0, edge: EdgeId(0), direction: -1, position_after: 0 });
        crw.end_time = 100.0;
        trace.crw_path = crw;
        trace.srw_path.end_time = 100.0;
        let d = deviation_process(&trace);
        assert_eq!(d.points.iter().map(|p| p.1).collect::<Vec<_>>(), vec![0, 1, 0]);
        assert_eq!(d.sup, 1);
        assert_eq!(signed_stay_count(&trace, 2.5), 1);
    }
}
