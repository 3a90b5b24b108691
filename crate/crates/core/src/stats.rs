//! Estimators and hypothesis tests that turn simulation output into
//! pass/fail evidence.
//!
//! Every test returns a [`TestReport`]. Reports are pure functions of their
//! input samples and thresholds, so re-running on the same samples gives the
//! same bytes once serialized.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::env::AnchorMode;
use crate::error::{argument, Result};
use crate::walker::{self, Trajectory};

/// Pass thresholds shared by the tests in this module.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    /// KS tests pass iff `p > ks_p_min`.
    pub ks_p_min: f64,
    pub var_ratio_low: f64,
    pub var_ratio_high: f64,
    /// Range exceedance frequency must not exceed this.
    pub exceedance_max: f64,
    pub dispersion_low: f64,
    pub dispersion_high: f64,
    /// Normal quantile for every confidence interval (2.576 = 99%).
    pub ci_z: f64,
    /// Coupling failure frequency must not exceed this.
    pub failure_max: f64,
    /// Fraction of replicates that must respect a bias bound.
    pub bound_quantile: f64,
    /// Bias bounds are checked against `slack * T^exponent`.
    pub bias_slack: f64,
    /// Runs with more jump-capped replicates than this fraction are degraded.
    pub degraded_fraction: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            ks_p_min: 0.01,
            var_ratio_low: 0.9,
            var_ratio_high: 1.1,
            exceedance_max: 0.01,
            dispersion_low: 0.9,
            dispersion_high: 1.1,
            ci_z: 2.576,
            failure_max: 0.05,
            bound_quantile: 0.95,
            bias_slack: 4.0,
            degraded_fraction: 0.10,
        }
    }
}

/// Outcome of one statistical test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub test_name: String,
    pub statistic: f64,
    pub p_value: Option<f64>,
    pub n: u64,
    pub pass: bool,
    pub threshold: f64,
    pub metadata: BTreeMap<String, Value>,
}

impl TestReport {
    pub fn new(test_name: impl Into<String>, statistic: f64, n: u64, threshold: f64, pass: bool) -> Self {
        TestReport {
            test_name: test_name.into(),
            statistic,
            p_value: None,
            n,
            pass,
            threshold,
            metadata: BTreeMap::new(),
        }
    }

    pub fn with_p(mut self, p: f64) -> Self {
        self.p_value = Some(p);
        self
    }

    pub fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.metadata.insert(key.to_string(), value.into());
        self
    }

    pub fn meta_f64(&self, key: &str) -> Option<f64> {
        self.metadata.get(key).and_then(Value::as_f64)
    }
}

// ---------------------------------------------------------------------------
// Special functions

const ERF_SERIES_LIMIT: f64 = 2.5;

/// Error function, relative error well below 1e-12.
pub fn erf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    let ax = x.abs();
    let v = if ax < ERF_SERIES_LIMIT {
        erf_series(ax)
    } else {
        1.0 - erfc_continued_fraction(ax)
    };
    v.copysign(x)
}

/// Complementary error function, accurate in relative terms in the far tail.
pub fn erfc(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x < 0.0 {
        return 2.0 - erfc(-x);
    }
    if x < ERF_SERIES_LIMIT {
        1.0 - erf_series(x)
    } else {
        erfc_continued_fraction(x)
    }
}

/// `erf(x) = 2/sqrt(pi) exp(-x^2) sum_n 2^n x^(2n+1) / (1*3*...*(2n+1))`.
/// All terms are positive, so there is no cancellation.
fn erf_series(x: f64) -> f64 {
    let x2 = x * x;
    let mut term = x;
    let mut sum = x;
    let mut n = 0.0;
    loop {
        n += 1.0;
        term *= 2.0 * x2 / (2.0 * n + 1.0);
        sum += term;
        if term <= sum * 1e-17 {
            break;
        }
    }
    2.0 / PI.sqrt() * (-x2).exp() * sum
}

/// `erfc(x) = exp(-x^2)/sqrt(pi) / (x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))`,
/// evaluated with the modified Lentz algorithm.
fn erfc_continued_fraction(x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for n in 1..1000 {
        let a = n as f64 / 2.0;
        d = x + a * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = x + a / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-x * x).exp() / (PI.sqrt() * f)
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Kolmogorov survival function `2 sum_k (-1)^(k-1) exp(-2 k^2 lambda^2)`,
/// truncated once a term drops below 1e-10.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if !(lambda > 0.0) {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..100_000u64 {
        let kf = k as f64;
        let term = 2.0 * (-2.0 * kf * kf * lambda * lambda).exp();
        sum += sign * term;
        sign = -sign;
        if term < 1e-10 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

/// Upper bound `exp(-x/2 log(x/lambda))` on `P(Z >= x)` for `Z ~ Poisson(lambda)`,
/// valid for `x >= e^2 lambda`.
pub fn poisson_tail_bound(lambda: f64, x: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(argument("lambda must be > 0"));
    }
    if x < std::f64::consts::E.powi(2) * lambda {
        return Err(argument(format!(
            "bound needs x >= e^2 lambda = {}, got {x}",
            std::f64::consts::E.powi(2) * lambda
        )));
    }
    Ok((-(x / 2.0) * (x / lambda).ln()).exp())
}

// ---------------------------------------------------------------------------
// Descriptive helpers

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

pub fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

/// Linear-interpolation quantile.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Wilson score interval for `k` successes out of `n`.
pub fn wilson_interval(k: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = k as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0).min(p), (centre + half).min(1.0).max(p))
}

/// `true` iff every entry is strictly below its predecessor.
pub fn strictly_decreasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] < w[0])
}

/// `true` iff no entry exceeds its predecessor.
pub fn non_increasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] <= w[0])
}

// ---------------------------------------------------------------------------
// Kolmogorov-Smirnov

/// One-sample KS distance against `cdf`.
pub fn ks_distance<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            ((i + 1) as f64 / n - f).max(f - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

/// One-sample KS test of `samples` against the standard normal.
pub fn ks_against_standard_normal(samples: &[f64], thresholds: &Thresholds) -> Result<TestReport> {
    const MIN_SAMPLES: usize = 50;
    if samples.len() < MIN_SAMPLES {
        return Err(argument(format!(
            "KS test needs at least {MIN_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|x| x.is_nan()) {
        return Err(argument("samples contain NaN"));
    }
    let d = ks_distance(samples, normal_cdf);
    let n = samples.len();
    let p = kolmogorov_survival((n as f64).sqrt() * d);
    Ok(TestReport::new("ks_standard_normal", d, n as u64, thresholds.ks_p_min, p > thresholds.ks_p_min).with_p(p))
}

/// Two-sample KS distance.
pub fn ks_two_sample_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

/// Two-sample KS test with the asymptotic p-value at `sqrt(nm/(n+m)) D`.
pub fn ks_two_sample(a: &[f64], b: &[f64], thresholds: &Thresholds) -> Result<TestReport> {
    if a.is_empty() || b.is_empty() {
        return Err(argument("both samples must be nonempty"));
    }
    if a.iter().chain(b).any(|x| x.is_nan()) {
        return Err(argument("samples contain NaN"));
    }
    let d = ks_two_sample_distance(a, b);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let p = kolmogorov_survival((n * m / (n + m)).sqrt() * d);
    Ok(TestReport::new("ks_two_sample", d, (a.len() + b.len()) as u64, thresholds.ks_p_min, p > thresholds.ks_p_min)
        .with_p(p)
        .with("n_a", a.len())
        .with("n_b", b.len()))
}

// ---------------------------------------------------------------------------
// Deviation tails

/// One row of a deviation-tail estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub length: f64,
    pub anchor_mode: AnchorMode,
    pub epsilon: f64,
    pub exceedances: u64,
    pub samples: u64,
    pub freq: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailCurve {
    pub rows: Vec<TailRow>,
    /// Least-squares slope of `ln freq` against `ln L` over rows with at
    /// least one exceedance; `None` unless two distinct lengths qualify.
    pub fitted_slope: Option<f64>,
    pub zeta: f64,
    /// Smallest `c` with `freq <= c L^-zeta` on every row.
    pub implied_c: f64,
    /// Whether the configured `c` satisfies the bound on every row.
    pub c_holds: Option<bool>,
}

impl TailCurve {
    pub fn from_rows(rows: Vec<TailRow>, zeta: f64, c: Option<f64>) -> Self {
        let points: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.exceedances > 0)
            .map(|r| (r.length.ln(), r.freq.ln()))
            .collect();
        let implied_c = rows
            .iter()
            .map(|r| r.freq * r.length.powf(zeta))
            .fold(0.0, f64::max);
        TailCurve {
            fitted_slope: least_squares_slope(&points),
            zeta,
            implied_c,
            c_holds: c.map(|c| implied_c <= c),
            rows,
        }
    }
}

/// Slope of the least-squares line through `points`; `None` when the
/// abscissae do not vary.
pub fn least_squares_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx <= 1e-12 {
        return None;
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}

// ---------------------------------------------------------------------------
// Invariance principle

/// Positions of one path at `T/4`, `T/2` and `T`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathSample {
    pub x_quarter: i64,
    pub x_half: i64,
    pub x_end: i64,
}

impl PathSample {
    pub fn from_trajectory(traj: &Trajectory, horizon: f64) -> Self {
        PathSample {
            x_quarter: traj.position_at(horizon / 4.0),
            x_half: traj.position_at(horizon / 2.0),
            x_end: traj.position_at(horizon),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvarianceBundle {
    pub ks: TestReport,
    pub variance_ratios: Vec<TestReport>,
    pub covariance: TestReport,
    /// Pass iff the KS test and every variance ratio pass.
    pub overall: TestReport,
}

impl InvarianceBundle {
    pub fn reports(&self) -> Vec<TestReport> {
        let mut out = vec![self.ks.clone()];
        out.extend(self.variance_ratios.iter().cloned());
        out.push(self.covariance.clone());
        out.push(self.overall.clone());
        out
    }
}

/// Diffusive-scaling checks on whole trajectories spanning `[1, T]`.
pub fn invariance_report(trajectories: &[Trajectory], horizon: f64, thresholds: &Thresholds) -> Result<InvarianceBundle> {
    for t in trajectories {
        if (t.end_time - horizon).abs() > 1e-9 * horizon.max(1.0) {
            return Err(argument(format!(
                "trajectory ends at {} but the horizon is {horizon}",
                t.end_time
            )));
        }
    }
    let samples: Vec<PathSample> = trajectories
        .iter()
        .map(|t| PathSample::from_trajectory(t, horizon))
        .collect();
    invariance_from_samples(&samples, horizon, thresholds)
}

/// Variance ratio `Var(X)/scale` with a normal-theory CI built from the
/// sample fourth moment.
fn variance_ratio(xs: &[f64], scale: f64, z: f64) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let m = mean(xs);
    let var = sample_variance(xs);
    let m4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    let se = ((m4 - var * var).max(0.0) / n).sqrt();
    (var / scale, (var - z * se) / scale, (var + z * se) / scale)
}

/// Same as [`invariance_report`] on pre-extracted positions.
pub fn invariance_from_samples(samples: &[PathSample], horizon: f64, thresholds: &Thresholds) -> Result<InvarianceBundle> {
    if samples.len() < 50 {
        return Err(argument(format!("need at least 50 replicates, got {}", samples.len())));
    }
    let n = samples.len() as u64;
    let z = thresholds.ci_z;
    let scale = (2.0 * horizon).sqrt();
    let scaled: Vec<f64> = samples.iter().map(|s| s.x_end as f64 / scale).collect();
    let ks = ks_against_standard_normal(&scaled, thresholds)?;
    let ks = TestReport {
        test_name: "invariance_ks_endpoint".into(),
        ..ks
    }
    .with("horizon", horizon);

    let mut variance_ratios = Vec::new();
    for (frac, pick) in [
        (0.25, (|s: &PathSample| s.x_quarter) as fn(&PathSample) -> i64),
        (0.5, |s: &PathSample| s.x_half),
        (1.0, |s: &PathSample| s.x_end),
    ] {
        let xs: Vec<f64> = samples.iter().map(|s| pick(s) as f64).collect();
        let (ratio, lo, hi) = variance_ratio(&xs, 2.0 * frac * horizon, z);
        let pass = ratio >= thresholds.var_ratio_low && ratio <= thresholds.var_ratio_high;
        variance_ratios.push(
            TestReport::new("invariance_variance_ratio", ratio, n, thresholds.var_ratio_low, pass)
                .with("t", frac)
                .with("horizon", horizon)
                .with("ci_low", lo)
                .with("ci_high", hi)
                .with("band_low", thresholds.var_ratio_low)
                .with("band_high", thresholds.var_ratio_high),
        );
    }

    let a: Vec<f64> = samples.iter().map(|s| s.x_half as f64).collect();
    let b: Vec<f64> = samples.iter().map(|s| (s.x_end - s.x_half) as f64).collect();
    let (ma, mb) = (mean(&a), mean(&b));
    let products: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).collect();
    let cov = products.iter().sum::<f64>() / (n as f64 - 1.0) / (2.0 * horizon);
    let se = (sample_variance(&products) / n as f64).sqrt() / (2.0 * horizon);
    let (lo, hi) = (cov - z * se, cov + z * se);
    let covariance = TestReport::new("invariance_increment_covariance", cov, n, 0.0, lo <= 0.0 && 0.0 <= hi)
        .with("ci_low", lo)
        .with("ci_high", hi)
        .with("horizon", horizon);

    let all_ratios = variance_ratios.iter().all(|r| r.pass);
    let overall = TestReport::new("invariance_overall", ks.p_value.unwrap_or(0.0), n, thresholds.ks_p_min, ks.pass && all_ratios)
        .with("ks_pass", ks.pass)
        .with("variance_ratios_pass", all_ratios)
        .with("covariance_ci_contains_zero", covariance.pass)
        .with("horizon", horizon);

    Ok(InvarianceBundle {
        ks,
        variance_ratios,
        covariance,
        overall,
    })
}

// ---------------------------------------------------------------------------
// Range statistics

/// Frequency of `R_t > multiplier * t` over trajectories started at time 1.
pub fn range_exceedance(trajectories: &[Trajectory], t: f64, multiplier: f64, thresholds: &Thresholds) -> Result<TestReport> {
    let ranges = trajectories
        .iter()
        .map(|traj| walker::range(traj, traj.start_time, t).map(|r| r as f64))
        .collect::<Result<Vec<_>>>()?;
    range_exceedance_from_ranges(&ranges, t, multiplier, thresholds)
}

pub fn range_exceedance_from_ranges(ranges: &[f64], t: f64, multiplier: f64, thresholds: &Thresholds) -> Result<TestReport> {
    if !(multiplier > 0.0) {
        return Err(argument("multiplier must be > 0"));
    }
    if ranges.is_empty() {
        return Err(argument("no ranges supplied"));
    }
    let bound = multiplier * t;
    let k = ranges.iter().filter(|&&r| r > bound).count() as u64;
    let n = ranges.len() as u64;
    let freq = k as f64 / n as f64;
    let (lo, hi) = wilson_interval(k, n, thresholds.ci_z);
    Ok(TestReport::new("range_exceedance", freq, n, thresholds.exceedance_max, freq <= thresholds.exceedance_max)
        .with("t", t)
        .with("multiplier", multiplier)
        .with("exceedances", k)
        .with("ci_low", lo)
        .with("ci_high", hi))
}

/// Medians of `R_{T^alpha, T^beta}` along a ladder of horizons.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntermediateRangeRung {
    pub horizon: f64,
    pub median_over_sqrt: f64,
    pub median_over_scale: f64,
    pub replicates: u64,
}

/// `ladder[k] = (T_k, trajectories at T_k)`.
pub fn intermediate_range_report(
    ladder: &[(f64, Vec<Trajectory>)],
    alpha: f64,
    beta: f64,
    epsilon: f64,
) -> Result<TestReport> {
    check_window(alpha, beta)?;
    let mut ranges = Vec::with_capacity(ladder.len());
    for (horizon, trajs) in ladder {
        let (t1, t2) = (horizon.powf(alpha), horizon.powf(beta));
        let rs = trajs
            .iter()
            .map(|tr| walker::range(tr, t1, t2).map(|r| r as f64))
            .collect::<Result<Vec<_>>>()?;
        ranges.push((*horizon, rs));
    }
    intermediate_range_from_ranges(&ranges, alpha, beta, epsilon)
}

fn check_window(alpha: f64, beta: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < beta && beta <= 1.0) {
        return Err(argument(format!("need 0 < alpha < beta <= 1, got alpha = {alpha}, beta = {beta}")));
    }
    Ok(())
}

/// Passes iff the medians of `R / sqrt(T)` strictly decrease along a ladder
/// of at least three horizons.
pub fn intermediate_range_from_ranges(ladder: &[(f64, Vec<f64>)], alpha: f64, beta: f64, epsilon: f64) -> Result<TestReport> {
    check_window(alpha, beta)?;
    if ladder.is_empty() || ladder.iter().any(|(_, r)| r.is_empty()) {
        return Err(argument("every rung needs at least one range"));
    }
    if !ladder.windows(2).all(|w| w[0].0 < w[1].0) {
        return Err(argument("horizons must increase along the ladder"));
    }
    let exponent = beta - alpha / 2.0 + epsilon;
    let rungs: Vec<IntermediateRangeRung> = ladder
        .iter()
        .map(|(h, rs)| {
            let over_sqrt: Vec<f64> = rs.iter().map(|r| r / h.sqrt()).collect();
            let over_scale: Vec<f64> = rs.iter().map(|r| r / h.powf(exponent)).collect();
            IntermediateRangeRung {
                horizon: *h,
                median_over_sqrt: median(&over_sqrt),
                median_over_scale: median(&over_scale),
                replicates: rs.len() as u64,
            }
        })
        .collect();
    let medians: Vec<f64> = rungs.iter().map(|r| r.median_over_sqrt).collect();
    let pass = rungs.len() >= 3 && strictly_decreasing(&medians);
    let last = *medians.last().expect("nonempty ladder");
    let n = rungs.iter().map(|r| r.replicates).sum();
    Ok(TestReport::new("intermediate_range_trend", last, n, 0.0, pass)
        .with("alpha", alpha)
        .with("beta", beta)
        .with("epsilon", epsilon)
        .with("rungs", serde_json::to_value(&rungs).expect("plain data")))
}

// ---------------------------------------------------------------------------
// Dispersion

/// Variance-to-mean ratio of event counts.
pub fn dispersion_index(counts: &[u64], expected_rate: f64, window: f64, thresholds: &Thresholds) -> Result<TestReport> {
    if counts.len() < 2 {
        return Err(argument("dispersion index needs at least two counts"));
    }
    let xs: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let m = mean(&xs);
    let ratio = if m > 0.0 { sample_variance(&xs) / m } else { 0.0 };
    let half = thresholds.ci_z * (2.0 / (xs.len() as f64 - 1.0)).sqrt();
    let pass = ratio >= thresholds.dispersion_low && ratio <= thresholds.dispersion_high;
    Ok(TestReport::new("dispersion_index", ratio, counts.len() as u64, thresholds.dispersion_low, pass)
        .with("ci_low", (ratio - half).max(0.0))
        .with("ci_high", ratio + half)
        .with("observed_mean", m)
        .with("expected_mean", expected_rate * window))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn erf_known_values() {
        assert_eq!(erf(0.0), 0.0);
        // erf(1), erf(0.5), erfc(3) from standard tables
        assert!((erf(1.0) - 0.842_700_792_949_714_9).abs() < 1e-15);
        assert!((erf(0.5) - 0.520_499_877_813_046_5).abs() < 1e-15);
        assert!((erfc(3.0) / 2.209_049_699_858_544e-5 - 1.0).abs() < 1e-12);
        assert!((erf(-1.0) + erf(1.0)).abs() < 1e-16);
        assert!((erfc(-2.0) - (2.0 - erfc(2.0))).abs() < 1e-16);
    }

    #[test]
    fn normal_cdf_symmetry() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-16);
        for z in [0.3, 1.0, 2.4, 2.6, 5.0] {
            assert!((normal_cdf(z) + normal_cdf(-z) - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn kolmogorov_limits() {
        assert_eq!(kolmogorov_survival(0.0), 1.0);
        assert!(kolmogorov_survival(0.05) > 0.999_999);
        // Q(1.36) ~ 0.049, the familiar 5% critical value
        assert!((kolmogorov_survival(1.358) - 0.05).abs() < 1e-3);
        assert!(kolmogorov_survival(5.0) < 1e-20);
    }

    #[test]
    fn ks_constant_zero_samples() {
        let zeros = vec![0.0; 100];
        let r = ks_against_standard_normal(&zeros, &Thresholds::default()).unwrap();
        assert!((r.statistic - 0.5).abs() < 1e-15);
        assert!(r.p_value.unwrap() < 1e-15);
        assert!(!r.pass);
    }

    #[test]
    fn ks_needs_fifty_samples() {
        assert!(ks_against_standard_normal(&[0.0; 49], &Thresholds::default()).is_err());
    }

    #[test]
    fn two_sample_identical_is_zero() {
        let a: Vec<f64> = (0..100).map(|i| i as f64).collect();
        assert_eq!(ks_two_sample_distance(&a, &a), 0.0);
        let b: Vec<f64> = (0..100).map(|i| i as f64 + 1000.0).collect();
        assert_eq!(ks_two_sample_distance(&a, &b), 1.0);
    }

    #[test]
    fn wilson_contains_estimate() {
        for (k, n) in [(0, 10), (10, 10), (3, 1000), (500, 1000)] {
            let (lo, hi) = wilson_interval(k, n, 1.96);
            let p = k as f64 / n as f64;
            assert!(lo <= p && p <= hi && lo >= 0.0 && hi <= 1.0);
        }
    }

    #[test]
    fn dispersion_constant_counts_fail() {
        let r = dispersion_index(&[5; 100], 1.0, 5.0, &Thresholds::default()).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!(!r.pass);
    }

    #[test]
    fn poisson_bound_spot_value() {
        let b = poisson_tail_bound(1.0, 10.0).unwrap();
        assert!((b - 1e-5).abs() < 1e-17);
        assert!(poisson_tail_bound(1.0, 5.0).is_err());
    }

    #[test]
    fn slope_of_line() {
        let pts = [(0.0, 1.0), (1.0, -1.0), (2.0, -3.0)];
        assert!((least_squares_slope(&pts).unwrap() + 2.0).abs() < 1e-12);
        assert!(least_squares_slope(&[(1.0, 1.0), (1.0, 2.0)]).is_none());
    }

    #[test]
    fn zero_paths_fail_invariance() {
        let samples = vec![PathSample { x_quarter: 0, x_half: 0, x_end: 0 }; 100];
        let b = invariance_from_samples(&samples, 1e4, &Thresholds::default()).unwrap();
        assert!(!b.overall.pass);
        assert!(b.variance_ratios.iter().all(|r| r.statistic == 0.0 && !r.pass));
    }

    #[test]
    fn range_exceedance_extremes() {
        let t = Thresholds::default();
        let zero = range_exceedance_from_ranges(&[0.0; 20], 100.0, 2.0, &t).unwrap();
        assert_eq!(zero.statistic, 0.0);
        let moved = range_exceedance_from_ranges(&[3.0; 20], 100.0, 0.001, &t).unwrap();
        assert_eq!(moved.statistic, 1.0);
        assert!(range_exceedance_from_ranges(&[3.0], 100.0, 0.0, &t).is_err());
    }

    #[test]
    fn intermediate_range_rejects_bad_window() {
        let ladder = vec![(1e3, vec![1.0])];
        assert!(intermediate_range_from_ranges(&ladder, 0.9, 0.9, 0.1).is_err());
        assert!(intermediate_range_from_ranges(&ladder, 0.5, 0.3, 0.1).is_err());
    }

    #[test]
    fn intermediate_range_trend() {
        let ladder = vec![
            (1e3, vec![10.0, 12.0, 14.0]),
            (1e4, vec![20.0, 22.0, 24.0]),
            (1e5, vec![40.0, 42.0, 44.0]),
        ];
        let r = intermediate_range_from_ranges(&ladder, 0.3, 0.9, 0.1).unwrap();
        assert!(r.pass);
        let short = intermediate_range_from_ranges(&ladder[..2], 0.3, 0.9, 0.1).unwrap();
        assert!(!short.pass);
    }
}
