//! Property tests for invariants that must hold on every realization.

use crw_core::env::*;
use crw_core::rng::{SeedKey, StreamRng};
use crw_core::stats::wilson_interval;
use crw_core::walker::*;
use proptest::prelude::*;
use rand::SeedableRng;

fn family() -> impl Strategy<Value = RenewalSpec> {
    prop_oneof![
        Just(RenewalSpec::Exponential),
        (0.5f64..5.0).prop_map(|shape| RenewalSpec::Gamma { shape }),
        (0.05f64..0.95).prop_map(|half_width| RenewalSpec::UniformShifted { half_width }),
        (0.0f64..0.9).prop_map(|jitter| RenewalSpec::DeterministicJitter { jitter }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lambda_is_monotone_and_consistent(spec in family(), seed in any::<u64>(), mut ts in prop::collection::vec(0.0f64..200.0, 2..20)) {
        let mut env = EdgeEnvironment::stationary(spec, StreamRng::seed_from_u64(seed)).unwrap();
        // query in arbitrary order first, then check sorted
        let values: Vec<u64> = ts.iter().map(|&t| env.lambda_at(t)).collect();
        for (&t, &v) in ts.iter().zip(&values) {
            prop_assert_eq!(env.lambda_at(t), v);
        }
        ts.sort_by(f64::total_cmp);
        for w in ts.windows(2) {
            let (a, b) = (env.lambda_at(w[0]), env.lambda_at(w[1]));
            prop_assert!(a <= b);
            prop_assert_eq!(env.lambda_increment(w[0], w[1]).unwrap(), b - a);
            let next = env.next_epoch_after(w[0]);
            prop_assert!(next > w[0]);
            prop_assert!(env.lambda_at(next) > a);
        }
    }

    #[test]
    fn trajectories_are_valid_and_deterministic(spec in family(), seed in any::<u64>(), horizon in 2.0f64..300.0) {
        let run = || {
            let key = SeedKey::new(seed);
            let mut env = renewal_field(spec, key).unwrap();
            simulate_crw(&mut env, 1.0, horizon, default_jump_cap(horizon), &mut key.child(9).rng()).unwrap()
        };
        let (a, b) = (run(), run());
        prop_assert!(a.validate().is_ok());
        prop_assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
    }

    #[test]
    fn range_is_nested_and_matches_brute_force(seed in any::<u64>(), cuts in prop::collection::vec(1.0f64..100.0, 3)) {
        let mut rng = StreamRng::seed_from_u64(seed);
        let traj = simulate_srw(2.0, 1.0, 100.0, 0, &mut rng).unwrap();
        let mut c = cuts.clone();
        c.sort_by(f64::total_cmp);
        let (t1, t2, t3) = (c[0], c[1], c[2]);
        let r12 = range(&traj, t1, t2).unwrap();
        prop_assert!(r12 <= range(&traj, t1, t3).unwrap());
        let x1 = traj.position_at(t1);
        let brute = traj
            .events
            .iter()
            .filter(|e| e.time > t1 && e.time <= t2)
            .map(|e| (traj.position_at(e.time) - x1).unsigned_abs())
            .max()
            .unwrap_or(0);
        prop_assert_eq!(r12, brute);
    }

    #[test]
    fn wilson_interval_is_well_formed(n in 1u64..100_000, frac in 0.0f64..=1.0, z in 0.5f64..4.0) {
        let k = ((n as f64) * frac).floor() as u64;
        let (lo, hi) = wilson_interval(k, n, z);
        let p = k as f64 / n as f64;
        prop_assert!(0.0 <= lo && lo <= p && p <= hi && hi <= 1.0);
    }
}
