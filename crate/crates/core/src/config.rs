//! Solver configuration and the `key = value` configuration file format.
//!
//! Lines are `key = value`; `#` starts a comment. A file may carry keys for
//! both solvers; each solver picks the keys it knows.

use std::path::Path;

use crate::solver::check_schedule;
use crate::{Error, Result};

/// Algorithm 1 settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Algo1Config {
    /// Spatial self-expressiveness weight.
    pub lambda1: f64,
    /// Temporal self-expressiveness weight.
    pub lambda2: f64,
    /// Nuclear weight on the spatial coefficients.
    pub lambda3: f64,
    /// Nuclear weight on the temporal coefficients.
    pub lambda4: f64,
    /// Nuclear weight on the reshuffled shape.
    pub gamma: f64,
    pub rho: f64,
    pub beta0: f64,
    pub beta_max: f64,
    pub epsilon: f64,
    pub ks: usize,
    pub kt: usize,
    pub ps: usize,
    pub pt: usize,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for Algo1Config {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 1e-2,
            lambda4: 1e-2,
            gamma: 1e-2,
            rho: 1.1,
            beta0: 1e-3,
            beta_max: 1e6,
            epsilon: 1e-12,
            ks: 2,
            kt: 1,
            ps: 6,
            pt: 2,
            max_iters: 300,
            seed: 0,
        }
    }
}

impl Algo1Config {
    pub const KEYS: &'static [&'static str] = &[
        "lambda1", "lambda2", "lambda3", "lambda4", "gamma", "rho", "beta0", "beta_max", "epsilon",
        "ks", "kt", "ps", "pt", "max_iters", "seed",
    ];

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("lambda4", self.lambda4),
            ("gamma", self.gamma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be a nonnegative number, got {v}")));
            }
        }
        check_schedule(self.beta0, self.beta_max, self.rho, self.epsilon)?;
        for (name, v) in [("ks", self.ks), ("kt", self.kt), ("ps", self.ps), ("pt", self.pt)] {
            if v == 0 {
                return Err(Error::InvalidParameter(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }

    /// Sets one field from its textual value. Returns `false` for keys this
    /// solver does not use.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "lambda1" => self.lambda1 = parse(key, value)?,
            "lambda2" => self.lambda2 = parse(key, value)?,
            "lambda3" => self.lambda3 = parse(key, value)?,
            "lambda4" => self.lambda4 = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "rho" => self.rho = parse(key, value)?,
            "beta0" => self.beta0 = parse(key, value)?,
            "beta_max" => self.beta_max = parse(key, value)?,
            "epsilon" => self.epsilon = parse(key, value)?,
            "ks" => self.ks = parse(key, value)?,
            "kt" => self.kt = parse(key, value)?,
            "ps" => self.ps = parse(key, value)?,
            "pt" => self.pt = parse(key, value)?,
            "max_iters" => self.max_iters = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn apply(&mut self, file: &ConfigFile) -> Result<()> {
        apply_entries(file, |k, v| self.set(k, v))
    }
}

/// Algorithm 2 settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Algo2Config {
    /// Self-expressiveness weight on the projected subspaces.
    pub beta1: f64,
    /// Nuclear weight on the reshuffled shape.
    pub beta2: f64,
    /// Nuclear weight on the coefficients.
    pub beta3: f64,
    pub beta0: f64,
    pub beta_max: f64,
    pub epsilon: f64,
    /// Penalty growth factor.
    pub growth: f64,
    pub k: usize,
    pub p: usize,
    /// Energy fraction that picks the projected dimension.
    pub tau: f64,
    /// Explicit projected dimension; overrides `tau`.
    pub dtilde: Option<usize>,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for Algo2Config {
    fn default() -> Self {
        Self {
            beta1: 1.0,
            beta2: 1e-1,
            beta3: 1e-2,
            beta0: 1e-2,
            beta_max: 1e8,
            epsilon: 1e-10,
            growth: 1.1,
            k: 2,
            p: 6,
            tau: 0.97,
            dtilde: None,
            max_iters: 300,
            seed: 0,
        }
    }
}

impl Algo2Config {
    pub const KEYS: &'static [&'static str] = &[
        "beta1", "beta2", "beta3", "beta0", "beta_max", "epsilon", "c", "k", "p", "tau", "dtilde",
        "max_iters", "seed",
    ];

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2), ("beta3", self.beta3)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be a nonnegative number, got {v}")));
            }
        }
        check_schedule(self.beta0, self.beta_max, self.growth, self.epsilon)?;
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::InvalidParameter(format!("tau must lie in (0, 1], got {}", self.tau)));
        }
        if self.k == 0 || self.p == 0 {
            return Err(Error::InvalidParameter("k and p must be at least 1".into()));
        }
        if self.dtilde == Some(0) {
            return Err(Error::InvalidParameter("dtilde must be at least 1".into()));
        }
        Ok(())
    }

    /// Sets one field from its textual value. Returns `false` for keys this
    /// solver does not use.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "beta3" => self.beta3 = parse(key, value)?,
            "beta0" => self.beta0 = parse(key, value)?,
            "beta_max" => self.beta_max = parse(key, value)?,
            "epsilon" => self.epsilon = parse(key, value)?,
            "c" => self.growth = parse(key, value)?,
            "k" => self.k = parse(key, value)?,
            "p" => self.p = parse(key, value)?,
            "tau" => self.tau = parse(key, value)?,
            "dtilde" => self.dtilde = Some(parse(key, value)?),
            "max_iters" => self.max_iters = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn apply(&mut self, file: &ConfigFile) -> Result<()> {
        apply_entries(file, |k, v| self.set(k, v))
    }
}

/// Parsed `key = value` entries with their line numbers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    pub entries: Vec<(usize, String, String)>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: format!("expected `key = value`, found `{line}`"),
            })?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() || v.is_empty() {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("empty key or value in `{line}`"),
                });
            }
            if !Algo1Config::KEYS.contains(&k) && !Algo2Config::KEYS.contains(&k) {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("unknown key `{k}`"),
                });
            }
            entries.push((i + 1, k.to_string(), v.to_string()));
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

fn apply_entries(file: &ConfigFile, mut set: impl FnMut(&str, &str) -> Result<bool>) -> Result<()> {
    for (line, k, v) in &file.entries {
        set(k, v).map_err(|e| Error::Parse {
            line: *line,
            message: e.to_string(),
        })?;
    }
    Ok(())
}

fn parse<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::InvalidParameter(format!("`{value}` is not a valid value for {key}")))
}
