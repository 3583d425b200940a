//! Flat `key = value` run configuration with dotted keys.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::harness::SweepConfig;
use crate::relaxed::{Scheme, SimPolicy};
use crate::spectral::{TorusGrid, DEFAULT_MAX_ORDER};
use crate::state::{scaled_params, PhysParams, StateSpaceBounds, TauRule};

pub const KEYS: [&str; 14] = [
    "grid.n",
    "params.epsilon",
    "params.gamma",
    "params.mu_bar",
    "params.lambda_bar",
    "params.kappa_bar",
    "params.tau_rule",
    "sim.T",
    "sim.scheme",
    "sim.cfl",
    "sim.sample_every",
    "norms.s",
    "sweep.eps_list",
    "seed",
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub n: usize,
    pub epsilon: f64,
    pub gamma: f64,
    pub mu_bar: f64,
    pub lambda_bar: f64,
    pub kappa_bar: f64,
    pub tau_rule: TauRule,
    pub t_end: f64,
    pub scheme: Scheme,
    pub cfl: f64,
    pub sample_every: usize,
    pub s: usize,
    pub eps_list: Vec<f64>,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n: 16,
            epsilon: 0.1,
            gamma: 5.0 / 3.0,
            mu_bar: 0.1,
            lambda_bar: 0.1,
            kappa_bar: 0.1,
            tau_rule: TauRule::Linear,
            t_end: 0.5,
            scheme: Scheme::RelaxExactSplit,
            cfl: 0.5,
            sample_every: 10,
            s: 2,
            eps_list: vec![0.2, 0.1, 0.05, 0.025],
            seed: 42,
        }
    }
}

fn invalid(name: &'static str, value: f64, reason: &'static str) -> Error {
    Error::InvalidParameter {
        name,
        value,
        reason,
    }
}

fn parse_value<T: FromStr>(line: usize, key: &str, raw: &str) -> Result<T> {
    raw.parse().map_err(|_| Error::Config {
        line,
        message: format!("cannot parse `{raw}` for `{key}`"),
    })
}

impl RunConfig {
    /// Parses config text over the defaults. Unknown or repeated keys are
    /// errors; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(Error::Config {
                    line,
                    message: format!("expected `key = value`, got `{content}`"),
                });
            };
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(Error::Config {
                    line,
                    message: format!("unknown key `{key}`"),
                });
            }
            if seen.contains(&key) {
                return Err(Error::Config {
                    line,
                    message: format!("duplicate key `{key}`"),
                });
            }
            seen.push(key);
            match key {
                "grid.n" => cfg.n = parse_value(line, key, value)?,
                "params.epsilon" => cfg.epsilon = parse_value(line, key, value)?,
                "params.gamma" => cfg.gamma = parse_value(line, key, value)?,
                "params.mu_bar" => cfg.mu_bar = parse_value(line, key, value)?,
                "params.lambda_bar" => cfg.lambda_bar = parse_value(line, key, value)?,
                "params.kappa_bar" => cfg.kappa_bar = parse_value(line, key, value)?,
                "params.tau_rule" => {
                    cfg.tau_rule = TauRule::parse(value).ok_or_else(|| Error::Config {
                        line,
                        message: format!("unknown tau rule `{value}`"),
                    })?
                }
                "sim.T" => cfg.t_end = parse_value(line, key, value)?,
                "sim.scheme" => cfg.scheme = parse_value(line, key, value)?,
                "sim.cfl" => cfg.cfl = parse_value(line, key, value)?,
                "sim.sample_every" => cfg.sample_every = parse_value(line, key, value)?,
                "norms.s" => cfg.s = parse_value(line, key, value)?,
                "sweep.eps_list" => {
                    cfg.eps_list = value
                        .split(',')
                        .map(|v| parse_value(line, key, v.trim()))
                        .collect::<Result<_>>()?
                }
                "seed" => cfg.seed = parse_value(line, key, value)?,
                _ => unreachable!(),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        TorusGrid::new(self.n).map_err(|_| invalid("grid.n", self.n as f64, "must be even and at least 4"))?;
        let positive = |name, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(name, v, "must be positive"))
            }
        };
        positive("params.epsilon", self.epsilon)?;
        if self.epsilon > 1.0 {
            return Err(invalid("params.epsilon", self.epsilon, "must not exceed 1"));
        }
        if !(self.gamma > 1.0) {
            return Err(invalid("params.gamma", self.gamma, "must exceed 1"));
        }
        positive("params.mu_bar", self.mu_bar)?;
        positive("params.lambda_bar", self.lambda_bar)?;
        positive("params.kappa_bar", self.kappa_bar)?;
        positive("sim.T", self.t_end)?;
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(invalid("sim.cfl", self.cfl, "must lie in (0, 1]"));
        }
        if self.sample_every == 0 {
            return Err(invalid("sim.sample_every", 0.0, "must be at least 1"));
        }
        if self.s + 1 > DEFAULT_MAX_ORDER {
            return Err(invalid("norms.s", self.s as f64, "must be at most 3"));
        }
        if self.eps_list.len() < 3 {
            return Err(invalid("sweep.eps_list", self.eps_list.len() as f64, "needs at least 3 values"));
        }
        for &e in &self.eps_list {
            if !(e > 0.0 && e <= 1.0) {
                return Err(invalid("sweep.eps_list", e, "values must lie in (0, 1]"));
            }
        }
        if !self.eps_list.windows(2).all(|w| w[1] < w[0]) {
            return Err(invalid("sweep.eps_list", self.eps_list[0], "must be strictly decreasing"));
        }
        self.params()?;
        Ok(())
    }

    pub fn params(&self) -> Result<PhysParams> {
        self.params_at(self.epsilon)
    }

    pub fn params_at(&self, epsilon: f64) -> Result<PhysParams> {
        scaled_params(
            epsilon,
            self.mu_bar,
            self.lambda_bar,
            self.kappa_bar,
            self.gamma,
            self.tau_rule,
        )
    }

    pub fn grid(&self) -> Result<TorusGrid> {
        TorusGrid::new(self.n)
    }

    pub fn policy(&self) -> SimPolicy {
        SimPolicy {
            scheme: self.scheme,
            cfl: self.cfl,
            sample_every: self.sample_every,
            dt: None,
            bounds: StateSpaceBounds::default(),
        }
    }

    pub fn sweep(&self) -> SweepConfig {
        SweepConfig {
            eps_list: self.eps_list.clone(),
            n: self.n,
            s: self.s,
            t_star: self.t_end,
            gamma: self.gamma,
            mu_bar: self.mu_bar,
            lambda_bar: self.lambda_bar,
            kappa_bar: self.kappa_bar,
            tau_rule: self.tau_rule,
            scheme: self.scheme,
            cfl: self.cfl,
            sample_every: self.sample_every,
            ..SweepConfig::default()
        }
    }

    /// Resolved configuration in its own syntax; parses back to `self`.
    pub fn render(&self) -> String {
        let eps: Vec<String> = self.eps_list.iter().map(|e| format!("{e:?}")).collect();
        let mut out = String::new();
        let mut put = |k: &str, v: String| writeln!(out, "{k} = {v}").unwrap();
        put("grid.n", self.n.to_string());
        put("params.epsilon", format!("{:?}", self.epsilon));
        put("params.gamma", format!("{:?}", self.gamma));
        put("params.mu_bar", format!("{:?}", self.mu_bar));
        put("params.lambda_bar", format!("{:?}", self.lambda_bar));
        put("params.kappa_bar", format!("{:?}", self.kappa_bar));
        put("params.tau_rule", self.tau_rule.to_string());
        put("sim.T", format!("{:?}", self.t_end));
        put("sim.scheme", self.scheme.to_string());
        put("sim.cfl", format!("{:?}", self.cfl));
        put("sim.sample_every", self.sample_every.to_string());
        put("norms.s", self.s.to_string());
        put("sweep.eps_list", eps.join(", "));
        put("seed", self.seed.to_string());
        out
    }
}
