//! Statistical checks of the walk simulator.

use crw_core::env::fixtures::ConstantEdge;
use crw_core::env::*;
use crw_core::rng::{purpose, SeedKey, StreamRng};
use crw_core::stats::{ks_two_sample, mean, sample_variance, Thresholds};
use crw_core::walker::*;
use rand::Rng;
use rand_distr::{Distribution, Exp1};

fn rng(label: u64) -> StreamRng {
    SeedKey::new(0x3A).child(label).rng()
}

/// First arrival after `t` of the intensity `c/s`, by thinning: on each
/// window `[s, 2s]` dominate by the constant `c/s` and reject.
fn thinning_oracle<R: Rng>(c: f64, t: f64, rng: &mut R) -> f64 {
    let mut lo = t;
    loop {
        let hi = 2.0 * lo;
        let bound = c / lo;
        let mut s = lo;
        loop {
            let e: f64 = Exp1.sample(rng);
            s += e / bound;
            if s > hi {
                break;
            }
            if rng.random::<f64>() * bound < c / s {
                return s;
            }
        }
        lo = hi;
    }
}

#[test]
fn exact_sampler_matches_thinning_oracle() {
    for (k, c) in [1.0, 2.0, 5.0].into_iter().enumerate() {
        let mut r = rng(k as u64);
        let exact: Vec<f64> = (0..10_000)
            .map(|_| next_jump_exact(c, 1.0, &mut r).unwrap().unwrap())
            .collect();
        let oracle: Vec<f64> = (0..10_000).map(|_| thinning_oracle(c, 1.0, &mut r)).collect();
        let report = ks_two_sample(&exact, &oracle, &Thresholds::default()).unwrap();
        assert!(report.pass, "c = {c}: {report:?}");
    }
}

#[test]
fn srw_moments() {
    let mut r = rng(10);
    let xs: Vec<f64> = (0..10_000)
        .map(|_| simulate_srw(2.0, 0.0, 1e3, 0, &mut r).unwrap().final_position() as f64)
        .collect();
    let n = xs.len() as f64;
    // Var = rate * t = 2000; sample-variance sd ~ 2000 sqrt(2/n) for near-normal data
    assert!((sample_variance(&xs) - 2000.0).abs() < 3.0 * 2000.0 * (2.0 / n).sqrt());
    assert!(mean(&xs).abs() < 3.0 * (2000.0 / n).sqrt());
}

#[test]
fn crw_stays_within_linear_bound() {
    let t = 1e4;
    let inside = (0..1000u64)
        .filter(|&i| {
            let key = SeedKey::new(5).stream(purpose::REPLICATE, i);
            let mut env = renewal_field(RenewalSpec::Exponential, key).unwrap();
            let traj = simulate_crw(&mut env, 1.0, t, default_jump_cap(t), &mut key.stream(purpose::WALKER, 0).rng()).unwrap();
            traj.final_position().unsigned_abs() < (2.0 * t) as u64
        })
        .count();
    assert!(inside >= 990);
}

#[test]
fn frozen_rates_give_exponential_holding() {
    // Λ ≡ 3 on both sides: rate 6/s, so ln(τ/t) ~ Exp(6).
    let mut r = rng(11);
    let logs: Vec<f64> = (0..10_000)
        .map(|_| {
            let mut state = WalkerState { position: 0, time: 2.0 };
            let e = step_crw(&mut state, &mut ConstantEdge(3.0), &mut ConstantEdge(3.0), f64::INFINITY, &mut r)
                .unwrap()
                .unwrap();
            (e.time / 2.0).ln() * 6.0
        })
        .collect();
    let direct: Vec<f64> = (0..10_000).map(|_| Exp1.sample(&mut r)).collect();
    assert!(ks_two_sample(&logs, &direct, &Thresholds::default()).unwrap().pass);
}

/// Grid evaluation of `|Λ(s) - s| s^(-0.6)` from the explicit epoch list; a
/// lower bound on the true supremum that tightens with the grid.
fn envelope_grid(epochs: &[f64], s0: f64, s1: f64, step: f64) -> f64 {
    let mut best: f64 = 0.0;
    let mut s = s0;
    while s <= s1 {
        let count = epochs.partition_point(|&e| e <= s) as f64;
        best = best.max((count - s).abs() * s.powf(-0.6));
        s += step;
    }
    best
}

#[test]
fn rate_envelope_matches_grid_oracle() {
    for i in 0..20u64 {
        let mut env = EdgeEnvironment::stationary(RenewalSpec::Exponential, rng(100 + i)).unwrap();
        let epochs = env.epochs_until(3000.0);
        let exact = rate_envelope_sup(&mut env, 1000.0, 3000.0, 0.6).unwrap();
        let grid = envelope_grid(&epochs, 1000.0, 3000.0, 0.01);
        // between grid points the score moves by at most step * s^-0.6
        assert!(grid <= exact + 1e-9 && exact <= grid + 0.01 * 1000f64.powf(-0.6) + 1e-9, "{grid} {exact}");
    }
}

#[test]
fn rate_envelope_fraction_is_reported() {
    // |Λ(s) - s| <= s^0.6 is a large-s statement; at s = 10^3 the bound
    // is only about two standard deviations, so many edges break it.
    let within = (0..200u64)
        .filter(|&i| {
            let mut env = EdgeEnvironment::stationary(RenewalSpec::Exponential, rng(1000 + i)).unwrap();
            rate_envelope_sup(&mut env, 1e3, 1e5, 0.6).unwrap() <= 1.0
        })
        .count();
    println!("rate envelope held on {within}/200 edges");
    assert!(within > 0);
}
