//! Exact event-driven simulation of the walk with jump rate `Λ_e(t)/t`
//! across each incident edge, plus the plain continuous-time symmetric walk.
//!
//! Between environment epochs the total rate is `c/s + b` for constants `c`
//! and `b`, so the next jump time can be drawn by inversion. No time
//! discretization happens anywhere.

use rand::distr::Open01;
use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::env::{EdgeId, EdgeProcess, Environment, Piece};
use crate::error::{argument, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpEvent {
    pub time: f64,
    pub edge: EdgeId,
    /// `+1` for a jump to the right.
    pub direction: i8,
    pub position_after: i64,
}

/// Piecewise-constant path stored as its jumps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub start_time: f64,
    pub start_position: i64,
    pub events: Vec<JumpEvent>,
    pub end_time: f64,
}

impl Trajectory {
    pub fn new(start_time: f64, start_position: i64) -> Self {
        Trajectory {
            start_time,
            start_position,
            events: Vec::new(),
            end_time: start_time,
        }
    }

    /// `X(t)`, right-continuous. Times before the start give the start position.
    pub fn position_at(&self, t: f64) -> i64 {
        let k = self.events.partition_point(|e| e.time <= t);
        if k == 0 {
            self.start_position
        } else {
            self.events[k - 1].position_after
        }
    }

    pub fn final_position(&self) -> i64 {
        self.events.last().map_or(self.start_position, |e| e.position_after)
    }

    /// Number of jumps in `(a, b]`.
    pub fn jumps_between(&self, a: f64, b: f64) -> usize {
        self.events.partition_point(|e| e.time <= b) - self.events.partition_point(|e| e.time <= a)
    }

    /// Checks unit steps, strictly increasing times inside the time window
    /// and directions consistent with the crossed edges.
    pub fn validate(&self) -> Result<()> {
        let mut pos = self.start_position;
        let mut last = self.start_time;
        for (i, e) in self.events.iter().enumerate() {
            if !(e.time > last) || e.time > self.end_time {
                return Err(argument(format!("event {i} at time {} is out of order", e.time)));
            }
            let expected_edge = if e.direction > 0 { EdgeId::right_of(pos) } else { EdgeId::left_of(pos) };
            if e.direction.abs() != 1 || e.edge != expected_edge || e.position_after != pos + e.direction as i64 {
                return Err(argument(format!("event {i} is not a unit step across its edge")));
            }
            pos = e.position_after;
            last = e.time;
        }
        Ok(())
    }
}

/// Time `t'` of the first arrival after `t` of a Poisson process with
/// intensity `c/s`, given the uniform `u` in `(0, 1)`:
/// `t' = t u^(-1/c)`. `None` when `c = 0` or the result overflows.
pub fn next_jump_from_uniform(c_total: f64, t: f64, u: f64) -> Result<Option<f64>> {
    if !(t > 0.0) {
        return Err(argument(format!("time must be > 0, got {t}")));
    }
    if !(c_total >= 0.0) {
        return Err(argument(format!("rate must be >= 0, got {c_total}")));
    }
    if !(u > 0.0 && u < 1.0) {
        return Err(argument(format!("uniform must lie in (0, 1), got {u}")));
    }
    if c_total == 0.0 {
        return Ok(None);
    }
    let next = t * (-u.ln() / c_total).exp();
    Ok(next.is_finite().then_some(next))
}

/// [`next_jump_from_uniform`] with a fresh uniform from `rng`.
pub fn next_jump_exact<R: Rng + ?Sized>(c_total: f64, t: f64, rng: &mut R) -> Result<Option<f64>> {
    let u: f64 = rng.sample(Open01);
    next_jump_from_uniform(c_total, t, u)
}

/// A stretch `[from, to]` during which the walker sat still and both
/// incident edges followed the given pieces (each anchored at `from`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    pub from: f64,
    pub to: f64,
    pub position: i64,
    pub left: Piece,
    pub right: Piece,
}

/// A jump together with the value of the crossed edge at the jump time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Step {
    pub event: JumpEvent,
    pub edge_value: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WalkerState {
    pub position: i64,
    pub time: f64,
}

/// Linear-in-`s` split of a piece: `Λ(s) = intercept + slope * s`.
fn intercept(p: &Piece, t: f64) -> f64 {
    (p.value - p.slope * t).max(0.0)
}

/// Advances `state` to the next jump, or to `t_end` if none happens first.
///
/// `pieces(t)` returns the pieces of the left and right incident edge of the
/// current position at time `t`. Every still stretch is reported to
/// `observe` before the jump that ends it.
fn advance<G, P, O>(state: &mut WalkerState, t_end: f64, rng: &mut G, mut pieces: P, observe: &mut O) -> Option<Step>
where
    G: Rng + ?Sized,
    P: FnMut(i64, f64) -> (Piece, Piece),
    O: FnMut(&Segment),
{
    while state.time < t_end {
        let t = state.time;
        let (left, right) = pieces(state.position, t);
        let t_env = left.until.min(right.until);
        // rate(s) = a / s + b on [t, t_env)
        let (a_left, a_right) = (intercept(&left, t), intercept(&right, t));
        let a = a_left + a_right;
        let b = left.slope + right.slope;

        let mut candidate = f64::INFINITY;
        let mut from_a = true;
        if a > 0.0 {
            let u: f64 = rng.sample(Open01);
            if let Ok(Some(s)) = next_jump_from_uniform(a, t, u) {
                candidate = s;
            }
        }
        if b > 0.0 {
            let e: f64 = rng.sample(Exp1);
            let s = t + e / b;
            if s < candidate {
                candidate = s;
                from_a = false;
            }
        }

        let jump = candidate < t_env && candidate <= t_end;
        let to = if jump { candidate } else { t_env.min(t_end) };
        observe(&Segment {
            from: t,
            to,
            position: state.position,
            left,
            right,
        });
        if !jump {
            state.time = to;
            continue;
        }

        let p_right = if from_a { a_right / a } else { right.slope / b };
        let u: f64 = rng.random();
        let (direction, piece) = if u < p_right { (1i8, right) } else { (-1i8, left) };
        let edge = if direction > 0 { EdgeId::right_of(state.position) } else { EdgeId::left_of(state.position) };
        state.position += direction as i64;
        state.time = candidate;
        return Some(Step {
            event: JumpEvent {
                time: candidate,
                edge,
                direction,
                position_after: state.position,
            },
            edge_value: piece.value + piece.slope * (candidate - t),
        });
    }
    None
}

/// One jump of the walk between two given edges, or `None` if the walk
/// reaches `t_end` first. The edges are taken as frozen to the current
/// position, which is how tests pin the rates.
pub fn step_crw<L, R, G>(
    state: &mut WalkerState,
    left: &mut L,
    right: &mut R,
    t_end: f64,
    rng: &mut G,
) -> Result<Option<JumpEvent>>
where
    L: EdgeProcess,
    R: EdgeProcess,
    G: Rng + ?Sized,
{
    if !(state.time > 0.0) {
        return Err(argument(format!("time must be > 0, got {}", state.time)));
    }
    let step = advance(state, t_end, rng, |_, t| (left.piece_at(t), right.piece_at(t)), &mut |_| {});
    Ok(step.map(|s| s.event))
}

/// One jump of the walk in `env`, reporting every still stretch to `observe`.
pub fn step_in<E, G, O>(state: &mut WalkerState, env: &mut E, t_end: f64, rng: &mut G, observe: &mut O) -> Option<Step>
where
    E: Environment + ?Sized,
    G: Rng + ?Sized,
    O: FnMut(&Segment),
{
    advance(
        state,
        t_end,
        rng,
        |x, t| {
            let left = env.edge(EdgeId::left_of(x)).piece_at(t);
            let right = env.edge(EdgeId::right_of(x)).piece_at(t);
            (left, right)
        },
        observe,
    )
}

/// Default jump budget for a run up to `t_end`.
pub fn default_jump_cap(t_end: f64) -> usize {
    (10.0 * t_end).ceil().max(16.0) as usize
}

fn check_window(t_start: f64, t_end: f64) -> Result<()> {
    if !(t_start >= 1.0 && t_end >= t_start && t_end.is_finite()) {
        return Err(argument(format!("need 1 <= t_start <= t_end < inf, got [{t_start}, {t_end}]")));
    }
    Ok(())
}

/// Runs the walk from `X(t_start) = 0` to `t_end`.
///
/// Exceeding `jump_cap` jumps returns [`Error::JumpCap`] with the path so far.
pub fn simulate_crw<E, G>(env: &mut E, t_start: f64, t_end: f64, jump_cap: usize, rng: &mut G) -> Result<Trajectory>
where
    E: Environment + ?Sized,
    G: Rng + ?Sized,
{
    check_window(t_start, t_end)?;
    let mut traj = Trajectory::new(t_start, 0);
    let mut state = WalkerState { position: 0, time: t_start };
    while let Some(step) = step_in(&mut state, env, t_end, rng, &mut |_| {}) {
        if traj.events.len() == jump_cap {
            traj.end_time = state.time;
            return Err(Error::JumpCap {
                cap: jump_cap,
                time: state.time,
                partial: Box::new(traj),
            });
        }
        traj.events.push(step.event);
    }
    traj.end_time = t_end;
    Ok(traj)
}

/// Continuous-time symmetric walk with total jump rate `rate`.
pub fn simulate_srw<G: Rng + ?Sized>(
    rate: f64,
    t_start: f64,
    t_end: f64,
    start_position: i64,
    rng: &mut G,
) -> Result<Trajectory> {
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(argument(format!("rate must be > 0, got {rate}")));
    }
    if !(t_end >= t_start) {
        return Err(argument(format!("need t_start <= t_end, got [{t_start}, {t_end}]")));
    }
    let mut traj = Trajectory::new(t_start, start_position);
    let mut t = t_start;
    let mut pos = start_position;
    loop {
        let e: f64 = rng.sample(Exp1);
        t += e / rate;
        if t > t_end {
            break;
        }
        let direction: i8 = if rng.random::<bool>() { 1 } else { -1 };
        let edge = if direction > 0 { EdgeId::right_of(pos) } else { EdgeId::left_of(pos) };
        pos += direction as i64;
        traj.events.push(JumpEvent {
            time: t,
            edge,
            direction,
            position_after: pos,
        });
    }
    traj.end_time = t_end;
    Ok(traj)
}

/// `sup_{t in [t1, t2]} |X(t) - X(t1)|`.
pub fn range(traj: &Trajectory, t1: f64, t2: f64) -> Result<u64> {
    if !(traj.start_time <= t1 && t1 <= t2 && t2 <= traj.end_time) {
        return Err(argument(format!(
            "window [{t1}, {t2}] is outside [{}, {}]",
            traj.start_time, traj.end_time
        )));
    }
    let x1 = traj.position_at(t1);
    let lo = traj.events.partition_point(|e| e.time <= t1);
    let hi = traj.events.partition_point(|e| e.time <= t2);
    Ok(traj.events[lo..hi]
        .iter()
        .map(|e| (e.position_after - x1).unsigned_abs())
        .max()
        .unwrap_or(0))
}

/// `sup_{s in [s0, s1]} |Λ(s) - s| s^(-exponent)` for a counting edge.
///
/// On each stretch between epochs `Λ` is constant and the map is
/// V-shaped in `s`, so the supremum is attained at stretch endpoints
/// (as a left limit at the right end).
pub fn rate_envelope_sup<E: EdgeProcess + ?Sized>(edge: &mut E, s0: f64, s1: f64, exponent: f64) -> Result<f64> {
    if !(s0 > 0.0 && s0 <= s1) {
        return Err(argument(format!("need 0 < s0 <= s1, got [{s0}, {s1}]")));
    }
    let score = |level: f64, s: f64| (level - s).abs() * s.powf(-exponent);
    let mut s = s0;
    let mut sup: f64 = 0.0;
    loop {
        let piece = edge.piece_at(s);
        if piece.slope != 0.0 {
            return Err(argument("rate envelope needs a piecewise-constant edge"));
        }
        let end = piece.until.min(s1);
        sup = sup.max(score(piece.value, s)).max(score(piece.value, end));
        if piece.until > s1 {
            return Ok(sup);
        }
        s = piece.until;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::fixtures::{ConstantEdge, IdentityEdge};
    use crate::env::{renewal_field, uniform_field, EdgeEnvironment, RenewalSpec};
    use crate::rng::{SeedKey, StreamRng};
    use rand::SeedableRng;

    fn rng(seed: u64) -> StreamRng {
        StreamRng::seed_from_u64(seed)
    }

    #[test]
    fn inversion_examples() {
        assert_eq!(next_jump_from_uniform(1.0, 1.0, 0.25).unwrap(), Some(4.0));
        let t = next_jump_from_uniform(2.0, 1.0, 0.25).unwrap().unwrap();
        assert!((t - 2.0).abs() < 1e-15);
        assert_eq!(next_jump_from_uniform(0.0, 1.0, 0.25).unwrap(), None);
        assert!(next_jump_from_uniform(1.0, 0.0, 0.5).is_err());
        assert!(next_jump_exact(1.0, -1.0, &mut rng(0)).is_err());
        // Tiny rates overflow to "no jump".
        assert_eq!(next_jump_from_uniform(1e-300, 1.0, 0.5).unwrap(), None);
    }

    #[test]
    fn inversion_matches_integrated_intensity() {
        // int_t^t' c/s ds = c ln(t'/t) must equal -ln u
        for (c, t, u) in [(1.0, 1.0, 0.3), (3.5, 7.0, 0.9), (0.2, 100.0, 0.01)] {
            let next = next_jump_from_uniform(c, t, u).unwrap().unwrap();
            assert!((c * (next / t).ln() + u.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_left_rate_only_moves_right() {
        let mut r = rng(3);
        let mut state = WalkerState { position: 0, time: 1.0 };
        let (mut left, mut right) = (ConstantEdge(0.0), ConstantEdge(2.0));
        let mut n = 0;
        while let Some(e) = step_crw(&mut state, &mut left, &mut right, 100.0, &mut r).unwrap() {
            assert_eq!(e.direction, 1);
            n += 1;
        }
        assert!(n > 0);
        assert_eq!(state.time, 100.0);
    }

    #[test]
    fn frozen_rates_split_directions() {
        let mut r = rng(5);
        let (mut left, mut right) = (ConstantEdge(3.0), ConstantEdge(1.0));
        let n = 40_000;
        let mut ups = 0;
        for _ in 0..n {
            let mut state = WalkerState { position: 0, time: 1.0 };
            let e = step_crw(&mut state, &mut left, &mut right, f64::INFINITY, &mut r).unwrap().unwrap();
            ups += (e.direction > 0) as u32;
        }
        let p = ups as f64 / n as f64;
        let sigma = (0.25f64 * 0.75 / n as f64).sqrt();
        assert!((p - 0.25).abs() < 4.0 * sigma, "p = {p}");
    }

    #[test]
    fn zero_rate_never_jumps() {
        let mut env = uniform_field(ConstantEdge(0.0));
        let traj = simulate_crw(&mut env, 1.0, 50.0, 100, &mut rng(1)).unwrap();
        assert!(traj.events.is_empty());
        assert_eq!(traj.end_time, 50.0);
    }

    #[test]
    fn degenerate_window_is_empty() {
        let mut env = uniform_field(IdentityEdge);
        let traj = simulate_crw(&mut env, 3.0, 3.0, 100, &mut rng(1)).unwrap();
        assert!(traj.events.is_empty());
        assert!(simulate_crw(&mut env, 0.5, 3.0, 100, &mut rng(1)).is_err());
    }

    #[test]
    fn lattice_edges_jump_at_rate_two() {
        let spec = RenewalSpec::DeterministicJitter { jitter: 0.0 };
        // epochs at 1, 2, 3, ... on every edge
        let mut env = crate::env::LazyField::new(move |_| EdgeEnvironment::with_delay(spec, 1.0, rng(0)).unwrap());
        let traj = simulate_crw(&mut env, 1.0, 1e4, 1_000_000, &mut rng(9)).unwrap();
        let n = traj.jumps_between(1e3, 1e4) as f64;
        let expected = 2.0 * 9e3;
        assert!((n - expected).abs() < 4.0 * expected.sqrt(), "n = {n}");
    }

    #[test]
    fn trajectories_are_valid_and_reproducible() {
        let spec = RenewalSpec::Exponential;
        let run = || {
            let mut env = renewal_field(spec, SeedKey::new(11)).unwrap();
            simulate_crw(&mut env, 1.0, 2000.0, default_jump_cap(2000.0), &mut rng(4)).unwrap()
        };
        let (a, b) = (run(), run());
        a.validate().unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert!(a.events.iter().all(|e| e.time > 1.0 && e.time <= 2000.0));
    }

    #[test]
    fn jump_cap_returns_partial_path() {
        let mut env = uniform_field(IdentityEdge);
        match simulate_crw(&mut env, 1.0, 1000.0, 50, &mut rng(2)) {
            Err(Error::JumpCap { cap, partial, .. }) => {
                assert_eq!(cap, 50);
                assert_eq!(partial.events.len(), 50);
                partial.validate().unwrap();
            }
            other => panic!("expected a jump-cap error, got {other:?}"),
        }
    }

    #[test]
    fn srw_without_time_stays_put() {
        let traj = simulate_srw(2.0, 4.0, 4.0, 5, &mut rng(0)).unwrap();
        assert_eq!(traj.position_at(4.0), 5);
        assert!(simulate_srw(0.0, 1.0, 2.0, 0, &mut rng(0)).is_err());
    }

    fn path(steps: &[(f64, i8)]) -> Trajectory {
        let mut traj = Trajectory::new(1.0, 0);
        let mut pos = 0;
        for &(time, direction) in steps {
            let edge = if direction > 0 { EdgeId::right_of(pos) } else { EdgeId::left_of(pos) };
            pos += direction as i64;
            traj.events.push(JumpEvent { time, edge, direction, position_after: pos });
        }
        traj.end_time = 10.0;
        traj
    }

    #[test]
    fn range_examples() {
        let traj = path(&[(2.0, 1), (3.0, 1), (4.0, -1), (5.0, -1), (6.0, -1)]);
        traj.validate().unwrap();
        assert_eq!(range(&traj, 1.0, 10.0).unwrap(), 2);
        assert_eq!(range(&traj, 6.5, 9.0).unwrap(), 0);
        assert_eq!(range(&traj, 3.0, 10.0).unwrap(), 3);
        assert!(range(&traj, 0.5, 2.0).is_err());
        assert!(range(&traj, 3.0, 2.0).is_err());
    }

    #[test]
    fn envelope_on_hand_built_edge() {
        let spec = RenewalSpec::Exponential;
        let mut edge = EdgeEnvironment::from_epochs(spec, vec![1.0, 3.0, 4.0], rng(0)).unwrap();
        // the edge keeps drawing past 4, so only probe [1, 4)
        let sup = rate_envelope_sup(&mut edge, 2.0, 3.5, 0.0).unwrap();
        // on [2, 3): Λ = 1, |1 - s| peaks at s -> 3 with 2; on [3, 3.5]: Λ = 2, peak 1.5
        assert!((sup - 2.0).abs() < 1e-12);
    }
}
