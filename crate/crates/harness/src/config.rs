//! Experiment configuration: a flat TOML table with a fixed set of keys.
//!
//! Every key is optional except `experiment`, which may instead come from the
//! command line. Unknown keys are rejected. Errors name the offending line.

use std::fmt;

use crw_core::coupling::CouplingConfig;
use crw_core::env::RenewalSpec;
use crw_core::stats::Thresholds;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    EnvTail,
    Simulate,
    Invariance,
    Coupling,
    Range,
    IntermediateRange,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::EnvTail => "env-tail",
            Experiment::Simulate => "simulate",
            Experiment::Invariance => "invariance",
            Experiment::Coupling => "coupling",
            Experiment::Range => "range",
            Experiment::IntermediateRange => "intermediate-range",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            Experiment::EnvTail,
            Experiment::Simulate,
            Experiment::Invariance,
            Experiment::Coupling,
            Experiment::Range,
            Experiment::IntermediateRange,
        ]
        .into_iter()
        .find(|e| e.name() == s)
    }

    fn default_ladder(self) -> Vec<f64> {
        match self {
            Experiment::EnvTail => vec![],
            Experiment::Simulate | Experiment::Invariance => vec![1e4],
            Experiment::Range => vec![1e3],
            Experiment::Coupling | Experiment::IntermediateRange => vec![1e3, 1e4, 1e5],
        }
    }

    fn default_replicates(self) -> u64 {
        match self {
            Experiment::EnvTail => 10_000,
            Experiment::Simulate => 100,
            Experiment::Invariance => 2000,
            Experiment::Range => 1000,
            Experiment::Coupling | Experiment::IntermediateRange => 300,
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Fully resolved configuration. Serialized as the canonical form that the
/// config hash is computed from; worker count and output directory are
/// deliberately not part of it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub env: RenewalSpec,
    pub t_ladder: Vec<f64>,
    pub replicates: u64,
    pub gamma: f64,
    pub beta: f64,
    pub zeta: f64,
    pub epsilon: f64,
    pub alpha: f64,
    pub theta: Option<f64>,
    pub multiplier: f64,
    pub lengths: Vec<f64>,
    /// Constant checked against in `env-tail`; `None` only reports it.
    pub tail_c: Option<f64>,
    /// Largest tolerated deviation frequency at the longest `env-tail` length.
    pub tail_max: f64,
    pub master_seed: u64,
    pub write_trajectories: bool,
    pub jump_cap_factor: f64,
    pub thresholds: Thresholds,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    experiment: Option<String>,
    env_family: Option<String>,
    env_param: Option<f64>,
    t_ladder: Option<Vec<f64>>,
    replicates: Option<i64>,
    gamma: Option<f64>,
    beta: Option<f64>,
    zeta: Option<f64>,
    epsilon: Option<f64>,
    alpha: Option<f64>,
    theta: Option<f64>,
    multiplier: Option<f64>,
    lengths: Option<Vec<f64>>,
    tail_c: Option<f64>,
    tail_max: Option<f64>,
    master_seed: Option<u64>,
    workers: Option<i64>,
    output_dir: Option<String>,
    write_trajectories: Option<bool>,
    jump_cap_factor: Option<f64>,
    ks_p_min: Option<f64>,
    var_ratio_low: Option<f64>,
    var_ratio_high: Option<f64>,
    exceedance_max: Option<f64>,
    dispersion_low: Option<f64>,
    dispersion_high: Option<f64>,
    ci_z: Option<f64>,
    failure_max: Option<f64>,
    bound_quantile: Option<f64>,
    bias_slack: Option<f64>,
    degraded_fraction: Option<f64>,
}

/// Settings that steer execution but not results.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunSettings {
    pub workers: Option<usize>,
    pub output_dir: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "config line {line}: {}", self.message),
            None => write!(f, "config: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

/// 1-based line on which `key` is assigned, if any.
fn line_of(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|l| {
        let l = l.trim_start();
        l.strip_prefix(key)
            .is_some_and(|rest| rest.trim_start().starts_with('='))
    })
    .map(|i| i + 1)
}

struct Checker<'a> {
    text: &'a str,
}

impl Checker<'_> {
    fn fail(&self, key: &str, message: String) -> ConfigError {
        ConfigError {
            line: line_of(self.text, key),
            message,
        }
    }

    fn check(&self, ok: bool, key: &str, message: impl FnOnce() -> String) -> Result<(), ConfigError> {
        if ok {
            Ok(())
        } else {
            Err(self.fail(key, message()))
        }
    }
}

/// Parses `text`. `experiment` overrides (or supplies) the `experiment` key.
pub fn parse_config(text: &str, experiment: Option<Experiment>) -> Result<(ExperimentConfig, RunSettings), ConfigError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError {
        line: e.span().map(|s| text[..s.start].matches('\n').count() + 1),
        message: e.message().to_string(),
    })?;
    let c = Checker { text };

    let from_file = match &raw.experiment {
        Some(name) => Some(
            Experiment::parse(name).ok_or_else(|| c.fail("experiment", format!("unknown experiment `{name}`")))?,
        ),
        None => None,
    };
    let experiment = match (experiment, from_file) {
        (Some(cli), Some(file)) if cli != file => {
            return Err(c.fail("experiment", format!("config is for `{file}` but `{cli}` was requested")));
        }
        (Some(e), _) | (None, Some(e)) => e,
        (None, None) => {
            return Err(ConfigError {
                line: None,
                message: "no experiment given".into(),
            })
        }
    };

    let family = raw.env_family.as_deref().unwrap_or("exponential");
    let env = match family {
        "exponential" => {
            c.check(raw.env_param.is_none(), "env_param", || "the exponential family takes no env_param".into())?;
            RenewalSpec::Exponential
        }
        "gamma" => RenewalSpec::Gamma {
            shape: raw.env_param.unwrap_or(2.0),
        },
        "uniform-shifted" => RenewalSpec::UniformShifted {
            half_width: raw.env_param.unwrap_or(0.5),
        },
        "deterministic-jitter" => RenewalSpec::DeterministicJitter {
            jitter: raw.env_param.unwrap_or(0.0),
        },
        other => return Err(c.fail("env_family", format!("unknown env_family `{other}`"))),
    };
    env.validate()
        .map_err(|e| c.fail(if raw.env_param.is_some() { "env_param" } else { "env_family" }, e.to_string()))?;

    let d = Thresholds::default();
    let thresholds = Thresholds {
        ks_p_min: raw.ks_p_min.unwrap_or(d.ks_p_min),
        var_ratio_low: raw.var_ratio_low.unwrap_or(d.var_ratio_low),
        var_ratio_high: raw.var_ratio_high.unwrap_or(d.var_ratio_high),
        exceedance_max: raw.exceedance_max.unwrap_or(d.exceedance_max),
        dispersion_low: raw.dispersion_low.unwrap_or(d.dispersion_low),
        dispersion_high: raw.dispersion_high.unwrap_or(d.dispersion_high),
        ci_z: raw.ci_z.unwrap_or(d.ci_z),
        failure_max: raw.failure_max.unwrap_or(d.failure_max),
        bound_quantile: raw.bound_quantile.unwrap_or(d.bound_quantile),
        bias_slack: raw.bias_slack.unwrap_or(d.bias_slack),
        degraded_fraction: raw.degraded_fraction.unwrap_or(d.degraded_fraction),
    };

    let replicates = raw.replicates.unwrap_or(experiment.default_replicates() as i64);
    c.check(replicates > 0, "replicates", || format!("replicates must be positive, got {replicates}"))?;
    if let Some(w) = raw.workers {
        c.check(w > 0, "workers", || format!("workers must be positive, got {w}"))?;
    }

    let cfg = ExperimentConfig {
        experiment,
        env,
        t_ladder: raw.t_ladder.unwrap_or_else(|| experiment.default_ladder()),
        replicates: replicates as u64,
        gamma: raw.gamma.unwrap_or(0.4),
        beta: raw.beta.unwrap_or(0.9),
        zeta: raw.zeta.unwrap_or(6.0),
        epsilon: raw.epsilon.unwrap_or(0.1),
        alpha: raw.alpha.unwrap_or(0.3),
        theta: raw.theta,
        multiplier: raw.multiplier.unwrap_or(2.0),
        lengths: raw.lengths.unwrap_or_else(|| vec![1e2, 1e3, 1e4]),
        tail_c: raw.tail_c,
        tail_max: raw.tail_max.unwrap_or(1e-3),
        master_seed: raw.master_seed.unwrap_or(0),
        write_trajectories: raw.write_trajectories.unwrap_or(false),
        jump_cap_factor: raw.jump_cap_factor.unwrap_or(10.0),
        thresholds,
    };
    validate(&cfg, &c)?;
    Ok((
        cfg,
        RunSettings {
            workers: raw.workers.map(|w| w as usize),
            output_dir: raw.output_dir,
        },
    ))
}

fn validate(cfg: &ExperimentConfig, c: &Checker) -> Result<(), ConfigError> {
    let needs_ladder = cfg.experiment != Experiment::EnvTail;
    c.check(!needs_ladder || !cfg.t_ladder.is_empty(), "t_ladder", || "t_ladder must not be empty".into())?;
    c.check(
        cfg.t_ladder.iter().all(|&t| t.is_finite() && t > 1.0),
        "t_ladder",
        || "every horizon must be finite and > 1".into(),
    )?;
    c.check(
        cfg.t_ladder.windows(2).all(|w| w[0] < w[1]),
        "t_ladder",
        || "t_ladder must be strictly increasing".into(),
    )?;
    c.check(cfg.gamma > 0.0 && cfg.gamma < 0.5, "gamma", || {
        format!("gamma must lie in (0, 1/2), got {}", cfg.gamma)
    })?;
    c.check(cfg.zeta > 5.0, "zeta", || format!("zeta must be > 5, got {}", cfg.zeta))?;
    let floor = (2.0 * cfg.gamma).max(1.0 / (cfg.zeta - 1.0));
    c.check(cfg.beta > floor && cfg.beta < 1.0, "beta", || {
        format!(
            "beta must exceed max(2 gamma, 1/(zeta - 1)) = {floor} and be < 1, got {}",
            cfg.beta
        )
    })?;
    c.check(cfg.epsilon > 0.0 && cfg.epsilon < 0.5, "epsilon", || {
        format!("epsilon must lie in (0, 1/2), got {}", cfg.epsilon)
    })?;
    c.check(cfg.alpha > 0.0 && cfg.alpha < cfg.beta, "alpha", || {
        format!("alpha must lie in (0, beta), got {}", cfg.alpha)
    })?;
    c.check(cfg.multiplier > 0.0, "multiplier", || format!("multiplier must be > 0, got {}", cfg.multiplier))?;
    c.check(
        !cfg.lengths.is_empty() && cfg.lengths.iter().all(|&l| l.is_finite() && l >= 1.0),
        "lengths",
        || "lengths must be nonempty, finite and >= 1".into(),
    )?;
    c.check(cfg.tail_c.is_none_or(|v| v > 0.0), "tail_c", || "tail_c must be > 0".into())?;
    c.check(cfg.tail_max >= 0.0 && cfg.tail_max <= 1.0, "tail_max", || "tail_max must lie in [0, 1]".into())?;
    c.check(cfg.jump_cap_factor > 0.0, "jump_cap_factor", || "jump_cap_factor must be > 0".into())?;

    let t = &cfg.thresholds;
    let unit = |v: f64| (0.0..=1.0).contains(&v);
    c.check(unit(t.ks_p_min), "ks_p_min", || "ks_p_min must lie in [0, 1]".into())?;
    c.check(t.var_ratio_low <= t.var_ratio_high, "var_ratio_low", || "var_ratio_low exceeds var_ratio_high".into())?;
    c.check(t.dispersion_low <= t.dispersion_high, "dispersion_low", || "dispersion_low exceeds dispersion_high".into())?;
    c.check(unit(t.exceedance_max), "exceedance_max", || "exceedance_max must lie in [0, 1]".into())?;
    c.check(t.ci_z > 0.0, "ci_z", || "ci_z must be > 0".into())?;
    c.check(unit(t.failure_max), "failure_max", || "failure_max must lie in [0, 1]".into())?;
    c.check(unit(t.bound_quantile), "bound_quantile", || "bound_quantile must lie in [0, 1]".into())?;
    c.check(t.bias_slack > 0.0, "bias_slack", || "bias_slack must be > 0".into())?;
    c.check(unit(t.degraded_fraction), "degraded_fraction", || "degraded_fraction must lie in [0, 1]".into())?;
    Ok(())
}

impl ExperimentConfig {
    pub fn coupling(&self, horizon: f64) -> CouplingConfig {
        CouplingConfig {
            horizon,
            gamma: self.gamma,
            beta: self.beta,
            zeta: self.zeta,
            theta: self.theta,
            jump_cap: self.jump_cap(horizon),
        }
    }

    pub fn jump_cap(&self, horizon: f64) -> usize {
        (self.jump_cap_factor * horizon).ceil() as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig, ConfigError> {
        parse_config(text, None).map(|(c, _)| c)
    }

    #[test]
    fn empty_range_config_gets_defaults() {
        let cfg = parse("experiment = \"range\"\n").unwrap();
        assert_eq!(cfg.t_ladder, vec![1e3]);
        assert_eq!(cfg.replicates, 1000);
        assert_eq!((cfg.gamma, cfg.beta, cfg.zeta, cfg.epsilon), (0.4, 0.9, 6.0, 0.1));
        assert_eq!(cfg.env, RenewalSpec::Exponential);
        assert_eq!(cfg.thresholds, Thresholds::default());
    }

    #[test]
    fn gamma_above_half_is_rejected() {
        let err = parse("experiment = \"coupling\"\ngamma = 0.6\n").unwrap_err();
        assert_eq!(err.line, Some(2));
        assert!(err.message.contains("gamma"));
    }

    #[test]
    fn beta_below_two_gamma_is_rejected() {
        let err = parse("experiment = \"coupling\"\ngamma = 0.4\nbeta = 0.5\n").unwrap_err();
        assert_eq!(err.line, Some(3));
    }

    #[test]
    fn zero_replicates_is_rejected() {
        assert!(parse("experiment = \"simulate\"\nreplicates = 0\n").is_err());
    }

    #[test]
    fn unknown_keys_and_types_name_the_line() {
        let err = parse("experiment = \"range\"\n\nbogus = 1\n").unwrap_err();
        assert_eq!(err.line, Some(3));
        let err = parse("experiment = \"range\"\nreplicates = \"many\"\n").unwrap_err();
        assert_eq!(err.line, Some(2));
    }

    #[test]
    fn cli_experiment_must_agree() {
        assert!(parse_config("experiment = \"range\"\n", Some(Experiment::Coupling)).is_err());
        let (cfg, _) = parse_config("", Some(Experiment::Coupling)).unwrap();
        assert_eq!(cfg.t_ladder, vec![1e3, 1e4, 1e5]);
        assert!(parse("").is_err());
    }

    #[test]
    fn families_and_params() {
        let cfg = parse("experiment = \"simulate\"\nenv_family = \"gamma\"\nenv_param = 3.0\n").unwrap();
        assert_eq!(cfg.env, RenewalSpec::Gamma { shape: 3.0 });
        let err = parse("experiment = \"simulate\"\nenv_family = \"uniform-shifted\"\nenv_param = 1.5\n").unwrap_err();
        assert_eq!(err.line, Some(3));
        assert!(parse("experiment = \"simulate\"\nenv_family = \"pareto\"\n").is_err());
    }

    #[test]
    fn run_settings_are_separate() {
        let (cfg, run) = parse_config("experiment = \"range\"\nworkers = 3\noutput_dir = \"x\"\n", None).unwrap();
        assert_eq!(run.workers, Some(3));
        assert_eq!(run.output_dir.as_deref(), Some("x"));
        let (plain, _) = parse_config("experiment = \"range\"\n", None).unwrap();
        assert_eq!(cfg, plain);
    }
}
