//! Edge environment processes.
//!
//! Every nearest-neighbour edge `{v, v+1}` of the integer line carries a
//! nondecreasing process `Λ_e(t)`. The walker only ever asks two things of an
//! edge: the current value, and how long that value (or affine piece) stays
//! valid. [`EdgeProcess`] captures exactly that, and [`Environment`] hands out
//! edges lazily by [`EdgeId`].
//!
//! The main family is the stationary renewal process: inter-arrival times
//! `Y_1, Y_2, ...` with mean one, and a first epoch `Y_0 = U * Y_0'` where
//! `Y_0'` is size-biased. Exponential inter-arrivals make this a unit-rate
//! Poisson process, which lets [`EdgeEnvironment`] skip over long stretches of
//! time with a single Poisson draw instead of materializing every epoch.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Exp1, Gamma, Open01, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{argument, config, Result};
use crate::rng::{purpose, SeedKey, StreamRng};
use crate::stats::{wilson_interval, TailCurve, TailRow};

/// Edge `{v, v+1}`, identified by its left endpoint `v`.
#[derive(
    Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct EdgeId(pub i64);

impl EdgeId {
    /// Edge to the left of site `v`.
    pub fn left_of(v: i64) -> Self {
        EdgeId(v - 1)
    }

    /// Edge to the right of site `v`.
    pub fn right_of(v: i64) -> Self {
        EdgeId(v)
    }

    pub fn endpoints(self) -> (i64, i64) {
        (self.0, self.0 + 1)
    }
}

/// Inter-arrival law of a renewal environment. Every family is parameterized
/// so that `E[Y_1] = 1`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum RenewalSpec {
    /// `Exp(1)`.
    #[default]
    Exponential,
    /// `Gamma(shape, 1/shape)`.
    Gamma { shape: f64 },
    /// `Uniform[1 - half_width, 1 + half_width]`.
    UniformShifted { half_width: f64 },
    /// `1 ± jitter` with probability 1/2 each; `jitter = 0` is the lattice
    /// renewal process with unit spacing. Atomic, so test use only.
    DeterministicJitter { jitter: f64 },
}

impl RenewalSpec {
    pub fn name(&self) -> &'static str {
        match self {
            RenewalSpec::Exponential => "exponential",
            RenewalSpec::Gamma { .. } => "gamma",
            RenewalSpec::UniformShifted { .. } => "uniform-shifted",
            RenewalSpec::DeterministicJitter { .. } => "deterministic-jitter",
        }
    }

    /// Analytic mean of `Y_1`.
    pub fn mean(&self) -> f64 {
        match *self {
            RenewalSpec::Exponential => 1.0,
            RenewalSpec::Gamma { shape } => shape * (1.0 / shape),
            RenewalSpec::UniformShifted { half_width } => {
                ((1.0 - half_width) + (1.0 + half_width)) / 2.0
            }
            RenewalSpec::DeterministicJitter { jitter } => {
                0.5 * (1.0 - jitter) + 0.5 * (1.0 + jitter)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            RenewalSpec::Exponential => {}
            RenewalSpec::Gamma { shape } => {
                if !(shape.is_finite() && shape > 0.0) {
                    return Err(config(format!("gamma shape must be > 0, got {shape}")));
                }
            }
            RenewalSpec::UniformShifted { half_width } => {
                if !(half_width > 0.0 && half_width < 1.0) {
                    return Err(config(format!(
                        "uniform-shifted half_width must lie in (0, 1), got {half_width}"
                    )));
                }
            }
            RenewalSpec::DeterministicJitter { jitter } => {
                if !(0.0..1.0).contains(&jitter) {
                    return Err(config(format!(
                        "deterministic-jitter jitter must lie in [0, 1), got {jitter}"
                    )));
                }
            }
        }
        let mean = self.mean();
        if (mean - 1.0).abs() > 1e-12 {
            return Err(config(format!(
                "{} inter-arrival mean is {mean}, expected 1",
                self.name()
            )));
        }
        Ok(())
    }

    /// One inter-arrival time `Y_n`, `n >= 1`.
    pub fn sample_interarrival<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            RenewalSpec::Exponential => rng.sample::<f64, _>(Exp1),
            RenewalSpec::Gamma { shape } => Gamma::new(shape, 1.0 / shape)
                .expect("validated gamma parameters")
                .sample(rng),
            RenewalSpec::UniformShifted { half_width } => {
                let u: f64 = rng.random();
                1.0 - half_width + 2.0 * half_width * u
            }
            RenewalSpec::DeterministicJitter { jitter } => {
                if jitter == 0.0 {
                    1.0
                } else if rng.random::<bool>() {
                    1.0 + jitter
                } else {
                    1.0 - jitter
                }
            }
        }
    }
}

/// Sample from the size-biased law `y f(y) / E[Y_1]`.
pub fn sample_size_biased<R: Rng + ?Sized>(spec: &RenewalSpec, rng: &mut R) -> Result<f64> {
    spec.validate()?;
    Ok(size_biased_unchecked(spec, rng))
}

fn size_biased_unchecked<R: Rng + ?Sized>(spec: &RenewalSpec, rng: &mut R) -> f64 {
    match *spec {
        // Gamma(2, 1).
        RenewalSpec::Exponential => {
            let a: f64 = rng.sample::<f64, _>(Exp1);
            let b: f64 = rng.sample::<f64, _>(Exp1);
            a + b
        }
        RenewalSpec::Gamma { shape } => Gamma::new(shape + 1.0, 1.0 / shape)
            .expect("validated gamma parameters")
            .sample(rng),
        // Acceptance-rejection: propose from f, accept with y / y_max.
        RenewalSpec::UniformShifted { half_width } => {
            let top = 1.0 + half_width;
            loop {
                let y = spec.sample_interarrival(rng);
                let u: f64 = rng.random();
                if u * top <= y {
                    return y;
                }
            }
        }
        RenewalSpec::DeterministicJitter { jitter } => {
            if jitter == 0.0 {
                return 1.0;
            }
            let u: f64 = rng.random();
            if u < (1.0 + jitter) / 2.0 {
                1.0 + jitter
            } else {
                1.0 - jitter
            }
        }
    }
}

/// Sample the stationary first delay `Y_0 = U * Y_0'`.
pub fn sample_stationary_delay<R: Rng + ?Sized>(spec: &RenewalSpec, rng: &mut R) -> Result<f64> {
    spec.validate()?;
    let biased = size_biased_unchecked(spec, rng);
    let u: f64 = rng.random();
    Ok(u * biased)
}

/// `Y_0` with the thinning uniform supplied by the caller.
pub fn stationary_delay_with_uniform<R: Rng + ?Sized>(
    spec: &RenewalSpec,
    u: f64,
    rng: &mut R,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&u) {
        return Err(argument(format!("uniform must lie in [0, 1], got {u}")));
    }
    Ok(u * sample_size_biased(spec, rng)?)
}

/// An affine piece of an edge process: `Λ(s) = value + slope * (s - t)` for
/// `s` in `[t, until)`, where `t` is the query time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Piece {
    pub value: f64,
    pub slope: f64,
    pub until: f64,
}

/// What the walker needs from an edge.
pub trait EdgeProcess {
    /// `Λ(t)`.
    fn value_at(&mut self, t: f64) -> f64;

    /// The piece of `Λ` that starts at `t`. `until` is strictly greater than
    /// `t` and may be infinite.
    fn piece_at(&mut self, t: f64) -> Piece;
}

/// Widest span that is filled epoch by epoch; longer unseen stretches of a
/// Poisson edge are summarized by a single count.
const DENSE_SPAN: f64 = 8.0;

#[derive(Clone, Copy, Debug, PartialEq)]
enum Block {
    Epoch(f64),
    /// Exactly `count` epochs in `(lo, hi]`, positions not yet drawn.
    Gap { lo: f64, hi: f64, count: u64 },
}

impl Block {
    fn key(&self) -> f64 {
        match *self {
            Block::Epoch(s) => s,
            Block::Gap { lo, .. } => lo,
        }
    }

    fn count(&self) -> u64 {
        match *self {
            Block::Epoch(_) => 1,
            Block::Gap { count, .. } => count,
        }
    }
}

/// Unit-rate Poisson process on `(0, horizon]`, partly summarized.
///
/// Everything in `(0, horizon]` outside a gap is known: the epochs are the
/// `Epoch` blocks. Given its count, the epochs inside a gap are iid uniform,
/// so a gap can be split (binomial) or have its first point drawn (minimum of
/// uniforms) at any later time without changing the law of the process.
#[derive(Clone, Debug, Default)]
struct PoissonStore {
    blocks: Vec<Block>,
    /// `cum[i]` = number of epochs in `blocks[..=i]`.
    cum: Vec<u64>,
    horizon: f64,
}

impl PoissonStore {
    fn from_epochs(epochs: &[f64]) -> Self {
        let mut store = PoissonStore::default();
        for &s in epochs {
            store.push(Block::Epoch(s));
        }
        store.horizon = epochs.last().copied().unwrap_or(0.0);
        store
    }

    fn push(&mut self, block: Block) {
        let c = self.cum.last().copied().unwrap_or(0) + block.count();
        self.blocks.push(block);
        self.cum.push(c);
    }

    fn cum_before(&self, i: usize) -> u64 {
        if i == 0 {
            0
        } else {
            self.cum[i - 1]
        }
    }

    /// Replace `blocks[i]` by `new`, which must hold the same number of epochs.
    fn replace(&mut self, i: usize, new: &[Block]) {
        let mut c = self.cum_before(i);
        let cums: Vec<u64> = new
            .iter()
            .map(|b| {
                c += b.count();
                c
            })
            .collect();
        debug_assert_eq!(c, self.cum[i]);
        self.blocks.splice(i..=i, new.iter().copied());
        self.cum.splice(i..=i, cums);
    }

    fn extend_to<R: Rng + ?Sized>(&mut self, t: f64, rng: &mut R) {
        if t <= self.horizon {
            return;
        }
        let span = t - self.horizon;
        if span > DENSE_SPAN {
            let count = Poisson::new(span).expect("positive span").sample(rng) as u64;
            if count > 0 {
                self.push(Block::Gap {
                    lo: self.horizon,
                    hi: t,
                    count,
                });
            }
            self.horizon = t;
        } else {
            let mut s = self.horizon + rng.sample::<f64, _>(Exp1);
            while s <= t {
                self.push(Block::Epoch(s));
                s += rng.sample::<f64, _>(Exp1);
            }
            self.push(Block::Epoch(s));
            self.horizon = s;
        }
    }

    fn count_le<R: Rng + ?Sized>(&mut self, t: f64, rng: &mut R) -> u64 {
        if t <= 0.0 {
            return 0;
        }
        self.extend_to(t, rng);
        let i = self.blocks.partition_point(|b| b.key() <= t);
        if i == 0 {
            return 0;
        }
        let j = i - 1;
        match self.blocks[j] {
            Block::Epoch(_) => self.cum[j],
            Block::Gap { lo, hi, count } => {
                if t >= hi {
                    self.cum[j]
                } else if t <= lo {
                    self.cum[j] - count
                } else {
                    let p = (t - lo) / (hi - lo);
                    let below = Binomial::new(count, p).expect("p in [0, 1]").sample(rng);
                    let mut new = Vec::with_capacity(2);
                    if below > 0 {
                        new.push(Block::Gap {
                            lo,
                            hi: t,
                            count: below,
                        });
                    }
                    if count - below > 0 {
                        new.push(Block::Gap {
                            lo: t,
                            hi,
                            count: count - below,
                        });
                    }
                    let base = self.cum_before(j);
                    self.replace(j, &new);
                    base + below
                }
            }
        }
    }

    fn next_after<R: Rng + ?Sized>(&mut self, t: f64, rng: &mut R) -> f64 {
        let t = t.max(0.0);
        // Splits any gap straddling `t`, so no gap below starts before `t`
        // while ending after it.
        self.count_le(t, rng);
        let mut k = self.blocks.partition_point(|b| b.key() < t);
        while k < self.blocks.len() {
            match self.blocks[k] {
                Block::Epoch(s) if s > t => return s,
                Block::Epoch(_) => {}
                Block::Gap { hi, .. } if hi <= t => {}
                Block::Gap { lo, hi, count } => {
                    let v: f64 = rng.random();
                    let first = lo + (hi - lo) * (1.0 - v.powf(1.0 / count as f64));
                    let first = if first > t { first } else { hi };
                    let mut new = vec![Block::Epoch(first)];
                    if count > 1 {
                        new.push(Block::Gap {
                            lo: first,
                            hi,
                            count: count - 1,
                        });
                    }
                    self.replace(k, &new);
                    return first;
                }
            }
            k += 1;
        }
        let s = self.horizon.max(t) + rng.sample::<f64, _>(Exp1);
        self.push(Block::Epoch(s));
        self.horizon = s;
        s
    }

    fn resolved_epochs(&self) -> usize {
        self.blocks
            .iter()
            .filter(|b| matches!(b, Block::Epoch(_)))
            .count()
    }
}

#[derive(Clone, Debug)]
enum EpochStore {
    /// Every epoch up to the materialized horizon, in order.
    Dense(Vec<f64>),
    Poisson(PoissonStore),
}

/// One edge's renewal process, materialized lazily and memoized.
#[derive(Clone, Debug)]
pub struct EdgeEnvironment {
    spec: RenewalSpec,
    store: EpochStore,
    rng: StreamRng,
}

impl EdgeEnvironment {
    /// Stationary renewal process drawn from `rng`. Exponential edges use the
    /// compressed Poisson store.
    pub fn stationary(spec: RenewalSpec, rng: StreamRng) -> Result<Self> {
        spec.validate()?;
        Ok(Self::stationary_unchecked(spec, rng))
    }

    pub(crate) fn stationary_unchecked(spec: RenewalSpec, mut rng: StreamRng) -> Self {
        let store = match spec {
            // The stationary exponential renewal process is the unit-rate
            // Poisson process; its first epoch is drawn on demand.
            RenewalSpec::Exponential => EpochStore::Poisson(PoissonStore::default()),
            _ => {
                let delay = size_biased_unchecked(&spec, &mut rng) * rng.random::<f64>();
                EpochStore::Dense(vec![delay])
            }
        };
        EdgeEnvironment { spec, store, rng }
    }

    /// Stationary process with every epoch materialized, whatever the family.
    pub fn stationary_dense(spec: RenewalSpec, mut rng: StreamRng) -> Result<Self> {
        let delay = sample_stationary_delay(&spec, &mut rng)?;
        Ok(EdgeEnvironment {
            spec,
            store: EpochStore::Dense(vec![delay]),
            rng,
        })
    }

    /// Renewal process with a prescribed first epoch `Y_0 = delay`.
    pub fn with_delay(spec: RenewalSpec, delay: f64, rng: StreamRng) -> Result<Self> {
        spec.validate()?;
        if !(delay.is_finite() && delay >= 0.0) {
            return Err(argument(format!("delay must be finite and >= 0, got {delay}")));
        }
        Ok(EdgeEnvironment {
            spec,
            store: EpochStore::Dense(vec![delay]),
            rng,
        })
    }

    /// Process whose first epochs are given; later ones are drawn from `spec`.
    pub fn from_epochs(spec: RenewalSpec, epochs: Vec<f64>, rng: StreamRng) -> Result<Self> {
        spec.validate()?;
        if epochs.is_empty() {
            return Err(argument("at least one epoch is required"));
        }
        if epochs[0] < 0.0 || !epochs.windows(2).all(|w| w[0] < w[1]) {
            return Err(argument("epochs must be nonnegative and strictly increasing"));
        }
        let store = match spec {
            RenewalSpec::Exponential => EpochStore::Poisson(PoissonStore::from_epochs(&epochs)),
            _ => EpochStore::Dense(epochs),
        };
        Ok(EdgeEnvironment { spec, store, rng })
    }

    pub fn spec(&self) -> &RenewalSpec {
        &self.spec
    }

    /// The first epoch `Y_0`.
    pub fn delay(&mut self) -> f64 {
        match &self.store {
            EpochStore::Dense(epochs) => epochs[0],
            EpochStore::Poisson(_) => {
                if self.lambda_at(0.0) > 0 {
                    0.0
                } else {
                    self.next_epoch_after(0.0)
                }
            }
        }
    }

    fn extend_dense(epochs: &mut Vec<f64>, spec: &RenewalSpec, rng: &mut StreamRng, t: f64) {
        let mut last = *epochs.last().expect("dense store is never empty");
        while last <= t {
            last += spec.sample_interarrival(rng);
            epochs.push(last);
        }
    }

    /// `Λ(t)`: the number of epochs `<= t`.
    pub fn lambda_at(&mut self, t: f64) -> u64 {
        match &mut self.store {
            EpochStore::Dense(epochs) => {
                Self::extend_dense(epochs, &self.spec, &mut self.rng, t);
                epochs.partition_point(|&s| s <= t) as u64
            }
            EpochStore::Poisson(store) => store.count_le(t, &mut self.rng),
        }
    }

    /// `Λ(b) - Λ(a)`.
    pub fn lambda_increment(&mut self, a: f64, b: f64) -> Result<u64> {
        if !(a >= 0.0 && a <= b) {
            return Err(argument(format!("need 0 <= a <= b, got a = {a}, b = {b}")));
        }
        let lo = self.lambda_at(a);
        let hi = self.lambda_at(b);
        Ok(hi - lo)
    }

    /// First epoch strictly after `t`.
    pub fn next_epoch_after(&mut self, t: f64) -> f64 {
        match &mut self.store {
            EpochStore::Dense(epochs) => {
                Self::extend_dense(epochs, &self.spec, &mut self.rng, t);
                epochs[epochs.partition_point(|&s| s <= t)]
            }
            EpochStore::Poisson(store) => store.next_after(t, &mut self.rng),
        }
    }

    /// All epochs `<= t`, in order. Forces full materialization up to `t`.
    pub fn epochs_until(&mut self, t: f64) -> Vec<f64> {
        let mut out = Vec::new();
        if self.lambda_at(0.0) > 0 {
            out.push(0.0);
        }
        let mut s = self.next_epoch_after(0.0);
        while s <= t {
            out.push(s);
            s = self.next_epoch_after(s);
        }
        out
    }

    /// Number of epochs held explicitly.
    pub fn materialized_epochs(&self) -> usize {
        match &self.store {
            EpochStore::Dense(epochs) => epochs.len(),
            EpochStore::Poisson(store) => store.resolved_epochs(),
        }
    }
}

impl EdgeProcess for EdgeEnvironment {
    fn value_at(&mut self, t: f64) -> f64 {
        self.lambda_at(t) as f64
    }

    fn piece_at(&mut self, t: f64) -> Piece {
        let value = self.lambda_at(t) as f64;
        Piece {
            value,
            slope: 0.0,
            until: self.next_epoch_after(t),
        }
    }
}

/// Hand-built edge processes for tests and demonstrations.
pub mod fixtures {
    use super::{EdgeProcess, Piece};

    /// `Λ ≡ level` forever.
    #[derive(Clone, Copy, Debug)]
    pub struct ConstantEdge(pub f64);

    impl EdgeProcess for ConstantEdge {
        fn value_at(&mut self, _t: f64) -> f64 {
            self.0
        }

        fn piece_at(&mut self, _t: f64) -> Piece {
            Piece {
                value: self.0,
                slope: 0.0,
                until: f64::INFINITY,
            }
        }
    }

    /// `Λ(t) = t`: the conductance is exactly one at all times.
    #[derive(Clone, Copy, Debug, Default)]
    pub struct IdentityEdge;

    impl EdgeProcess for IdentityEdge {
        fn value_at(&mut self, t: f64) -> f64 {
            t
        }

        fn piece_at(&mut self, t: f64) -> Piece {
            Piece {
                value: t,
                slope: 1.0,
                until: f64::INFINITY,
            }
        }
    }
}

/// A field of edge processes indexed by [`EdgeId`].
pub trait Environment {
    type Edge: EdgeProcess;

    fn edge(&mut self, id: EdgeId) -> &mut Self::Edge;

    /// Number of edges built so far.
    fn edges_built(&self) -> usize;
}

/// Builds each edge on first access with `make`.
pub struct LazyField<E, F> {
    make: F,
    nonneg: Vec<Option<E>>,
    neg: Vec<Option<E>>,
    built: usize,
}

impl<E, F: FnMut(EdgeId) -> E> LazyField<E, F> {
    pub fn new(make: F) -> Self {
        LazyField {
            make,
            nonneg: Vec::new(),
            neg: Vec::new(),
            built: 0,
        }
    }
}

impl<E: EdgeProcess, F: FnMut(EdgeId) -> E> Environment for LazyField<E, F> {
    type Edge = E;

    fn edge(&mut self, id: EdgeId) -> &mut E {
        let (side, idx) = if id.0 >= 0 {
            (&mut self.nonneg, id.0 as usize)
        } else {
            (&mut self.neg, (-(id.0 + 1)) as usize)
        };
        if idx >= side.len() {
            side.resize_with(idx + 1, || None);
        }
        let slot = &mut side[idx];
        if slot.is_none() {
            *slot = Some((self.make)(id));
            self.built += 1;
        }
        slot.as_mut().expect("just built")
    }

    fn edges_built(&self) -> usize {
        self.built
    }
}

/// Stationary renewal environment whose edge `e` draws from the stream
/// `(key, EDGE, e)`.
pub fn renewal_field(
    spec: RenewalSpec,
    key: SeedKey,
) -> Result<LazyField<EdgeEnvironment, impl FnMut(EdgeId) -> EdgeEnvironment>> {
    spec.validate()?;
    Ok(LazyField::new(move |id: EdgeId| {
        EdgeEnvironment::stationary_unchecked(spec, key.stream(purpose::EDGE, id.0 as u64).rng())
    }))
}

/// Same process on every edge, e.g. [`fixtures::IdentityEdge`].
pub fn uniform_field<E: EdgeProcess + Clone>(
    edge: E,
) -> LazyField<E, impl FnMut(EdgeId) -> E> {
    LazyField::new(move |_| edge.clone())
}

/// Where the probed interval `[a, a + L]` starts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnchorMode {
    /// `a = 0`.
    Zero,
    /// `a ~ Uniform[0, L]`.
    Uniform,
}

impl AnchorMode {
    pub fn name(&self) -> &'static str {
        match self {
            AnchorMode::Zero => "zero",
            AnchorMode::Uniform => "uniform",
        }
    }
}

/// Parameters of the empirical deviation-tail estimate
/// `P(|Λ([a, a+L]) - L| > L^(1/2 + ε))` against the bound `c L^-ζ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffTailConfig {
    pub zeta: f64,
    pub epsilon: f64,
    /// Constant to check the bound against; `None` only reports the implied one.
    pub c: Option<f64>,
    pub lengths: Vec<f64>,
    pub samples_per_length: usize,
    /// Normal quantile for the Wilson intervals.
    pub ci_z: f64,
}

impl DiffTailConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples_per_length == 0 {
            return Err(argument("samples_per_length must be positive"));
        }
        if self.lengths.is_empty() || self.lengths.iter().any(|&l| !(l >= 1.0) || !l.is_finite()) {
            return Err(argument("lengths must be nonempty, finite and >= 1"));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return Err(argument(format!("epsilon must lie in (0, 1/2), got {}", self.epsilon)));
        }
        if !(self.zeta > 0.0) {
            return Err(argument(format!("zeta must be > 0, got {}", self.zeta)));
        }
        if matches!(self.c, Some(c) if !(c > 0.0)) {
            return Err(argument("c must be > 0"));
        }
        Ok(())
    }
}

/// Whether one fresh edge exceeds the deviation threshold on `[a, a + L]`.
fn diff_tail_sample(spec: RenewalSpec, key: SeedKey, length: f64, anchor: AnchorMode, power: f64) -> bool {
    let mut env = EdgeEnvironment::stationary_unchecked(spec, key.child(0).rng());
    let a = match anchor {
        AnchorMode::Zero => 0.0,
        AnchorMode::Uniform => {
            let u: f64 = key.child(1).rng().sample(Open01);
            u * length
        }
    };
    let inc = env
        .lambda_increment(a, a + length)
        .expect("a >= 0 and length >= 1") as f64;
    (inc - length).abs() > length.powf(power)
}

/// Estimate the deviation tail for every length and both anchor modes.
pub fn estimate_diff_tail(spec: &RenewalSpec, cfg: &DiffTailConfig, seed: SeedKey) -> Result<TailCurve> {
    let mut rows = Vec::new();
    for li in 0..cfg.lengths.len() {
        rows.extend(diff_tail_rows(spec, cfg, seed, li)?);
    }
    Ok(TailCurve::from_rows(rows, cfg.zeta, cfg.c))
}

/// The two rows (anchor at zero, uniform anchor) of `cfg.lengths[index]`,
/// exactly as [`estimate_diff_tail`] computes them.
pub fn diff_tail_rows(spec: &RenewalSpec, cfg: &DiffTailConfig, seed: SeedKey, index: usize) -> Result<Vec<TailRow>> {
    spec.validate()?;
    cfg.validate()?;
    let length = *cfg
        .lengths
        .get(index)
        .ok_or_else(|| argument(format!("length index {index} out of range")))?;
    let power = 0.5 + cfg.epsilon;
    let n = cfg.samples_per_length;
    let mut rows = Vec::with_capacity(2);
    for (ai, anchor) in [AnchorMode::Zero, AnchorMode::Uniform].into_iter().enumerate() {
        let key = seed
            .stream(purpose::DIFF_TAIL, index as u64)
            .stream(purpose::ANCHOR, ai as u64);
        let sample = |s: usize| diff_tail_sample(*spec, key.child(s as u64), length, anchor, power);
        #[cfg(feature = "parallel")]
        let exceedances = {
            use rayon::prelude::*;
            (0..n).into_par_iter().filter(|&s| sample(s)).count() as u64
        };
        #[cfg(not(feature = "parallel"))]
        let exceedances = (0..n).filter(|&s| sample(s)).count() as u64;
        let (ci_low, ci_high) = wilson_interval(exceedances, n as u64, cfg.ci_z);
        rows.push(TailRow {
            length,
            anchor_mode: anchor,
            epsilon: cfg.epsilon,
            exceedances,
            samples: n as u64,
            freq: exceedances as f64 / n as f64,
            ci_low,
            ci_high,
        });
    }
    Ok(rows)
}
