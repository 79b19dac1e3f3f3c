use std::fmt;
use std::path::Path;

use crate::error::{LmeError, Result};
use crate::machine::DEFAULT_WEIGHT_CLAMP;

/// Settings for the one-dimensional scaling root solves.
#[derive(Debug, Clone, PartialEq)]
pub struct RootFinderConfig {
    /// Initial half-width of the search bracket around zero.
    pub bracket_start: f64,
    /// Factor applied to the bracket end on each expansion.
    pub bracket_expansion: f64,
    pub max_expansions: usize,
    /// Absolute tolerance on the step `γ`.
    pub root_tolerance: f64,
    /// Newton steps with bisection fallback; pure bisection when false.
    pub newton: bool,
}

impl Default for RootFinderConfig {
    fn default() -> Self {
        Self {
            bracket_start: 1.0,
            bracket_expansion: 2.0,
            max_expansions: 60,
            root_tolerance: 1e-10,
            newton: true,
        }
    }
}

/// Configuration of an EM-IS run.
#[derive(Debug, Clone, PartialEq)]
pub struct EmisConfig {
    /// Parallel scaling rounds per M-step (`S`).
    pub inner_steps: usize,
    /// Maximum number of M-steps.
    pub outer_iteration_cap: usize,
    /// Log-likelihood change (nats) below which the run may stop.
    pub ll_tolerance: f64,
    /// Largest constraint residual accepted as feasible.
    pub feasibility_tolerance: f64,
    /// Consecutive flat-likelihood but infeasible iterations before giving up.
    pub stall_window: usize,
    pub weight_clamp: f64,
    pub root: RootFinderConfig,
}

impl Default for EmisConfig {
    fn default() -> Self {
        Self {
            inner_steps: 4,
            outer_iteration_cap: 500,
            ll_tolerance: 1e-8,
            feasibility_tolerance: 1e-10,
            stall_window: 20,
            weight_clamp: DEFAULT_WEIGHT_CLAMP,
            root: RootFinderConfig::default(),
        }
    }
}

/// Keys accepted by [`EmisConfig::set`] and the config file reader.
pub const CONFIG_KEYS: &[&str] = &[
    "inner_steps",
    "outer_iteration_cap",
    "ll_tolerance",
    "feasibility_tolerance",
    "stall_window",
    "weight_clamp",
    "bracket_start",
    "bracket_expansion",
    "max_expansions",
    "root_tolerance",
    "newton",
];

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| LmeError::Config(format!("cannot parse {value:?} for key {key}")))
}

impl EmisConfig {
    pub fn with_inner_steps(mut self, s: usize) -> Self {
        self.inner_steps = s;
        self
    }

    /// Sets one field by name.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "inner_steps" => self.inner_steps = parse_value(key, value)?,
            "outer_iteration_cap" => self.outer_iteration_cap = parse_value(key, value)?,
            "ll_tolerance" => self.ll_tolerance = parse_value(key, value)?,
            "feasibility_tolerance" => self.feasibility_tolerance = parse_value(key, value)?,
            "stall_window" => self.stall_window = parse_value(key, value)?,
            "weight_clamp" => self.weight_clamp = parse_value(key, value)?,
            "bracket_start" => self.root.bracket_start = parse_value(key, value)?,
            "bracket_expansion" => self.root.bracket_expansion = parse_value(key, value)?,
            "max_expansions" => self.root.max_expansions = parse_value(key, value)?,
            "root_tolerance" => self.root.root_tolerance = parse_value(key, value)?,
            "newton" => self.root.newton = parse_value(key, value)?,
            other => {
                return Err(LmeError::Config(format!(
                    "unknown key {other:?}; valid keys: {}",
                    CONFIG_KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("ll_tolerance", self.ll_tolerance),
            ("feasibility_tolerance", self.feasibility_tolerance),
            ("weight_clamp", self.weight_clamp),
            ("bracket_start", self.root.bracket_start),
            ("root_tolerance", self.root.root_tolerance),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(LmeError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.inner_steps == 0 {
            return Err(LmeError::Config("inner_steps must be at least 1".into()));
        }
        if self.stall_window == 0 {
            return Err(LmeError::Config("stall_window must be at least 1".into()));
        }
        if !(self.root.bracket_expansion > 1.0) {
            return Err(LmeError::Config("bracket_expansion must exceed 1".into()));
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut config = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| LmeError::Parse {
                path: source.to_string(),
                line: i + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, found {line:?}")))?;
            config
                .set(key.trim(), value.trim())
                .map_err(|e| err(e.to_string()))?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }
}

impl fmt::Display for EmisConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "inner_steps = {}", self.inner_steps)?;
        writeln!(f, "outer_iteration_cap = {}", self.outer_iteration_cap)?;
        writeln!(f, "ll_tolerance = {:e}", self.ll_tolerance)?;
        writeln!(f, "feasibility_tolerance = {:e}", self.feasibility_tolerance)?;
        writeln!(f, "stall_window = {}", self.stall_window)?;
        writeln!(f, "weight_clamp = {}", self.weight_clamp)?;
        writeln!(f, "bracket_start = {}", self.root.bracket_start)?;
        writeln!(f, "bracket_expansion = {}", self.root.bracket_expansion)?;
        writeln!(f, "max_expansions = {}", self.root.max_expansions)?;
        writeln!(f, "root_tolerance = {:e}", self.root.root_tolerance)?;
        writeln!(f, "newton = {}", self.root.newton)
    }
}
