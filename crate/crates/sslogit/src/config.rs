//! Flat `key = value` run configuration. Files and `--set key=value`
//! overrides go through the same parser, and `echo` prints the resolved
//! values in a fixed order.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value {value:?} for `{key}`: {reason}")]
    Value { key: String, value: String, reason: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Estimator {
    StaticSs,
    DynamicPooled,
    Cmle,
    CmleRestricted,
    GmmRho,
    Cre,
}

impl Estimator {
    pub const ALL: [Estimator; 6] = [
        Self::StaticSs,
        Self::DynamicPooled,
        Self::Cmle,
        Self::CmleRestricted,
        Self::GmmRho,
        Self::Cre,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::StaticSs => "static-ss",
            Self::DynamicPooled => "dynamic-pooled",
            Self::Cmle => "cmle",
            Self::CmleRestricted => "cmle-restricted",
            Self::GmmRho => "gmm-rho",
            Self::Cre => "cre",
        }
    }
}

impl FromStr for Estimator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| format!("expected one of {}", Self::ALL.map(Estimator::name).join(", ")))
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Rolling windows in window-key units.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpec {
    pub width: i64,
    pub step: i64,
}

impl FromStr for WindowSpec {
    type Err = String;

    /// `width` or `width,step`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.split(',').map(str::trim);
        let width = parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or("expected `width` or `width,step`")?;
        let step = match parts.next() {
            Some(v) => v.parse().map_err(|_| "step must be an integer")?,
            None => 1,
        };
        if parts.next().is_some() {
            return Err("expected `width` or `width,step`".into());
        }
        Ok(Self { width, step })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub estimator: Estimator,
    pub input: Option<PathBuf>,
    /// Column whose values split the panel into groups.
    pub group_column: Option<String>,
    pub window_column: String,
    pub window: Option<WindowSpec>,
    /// Keep the truncated windows at both ends of the key range (flagged).
    pub window_edges: bool,
    pub bootstrap: Option<usize>,
    pub seed: u64,
    pub rho_low: f64,
    pub rho_high: f64,
    pub quad_order: usize,
    pub output: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            estimator: Estimator::CmleRestricted,
            input: None,
            group_column: None,
            window_column: "window_key".into(),
            window: None,
            window_edges: true,
            bootstrap: None,
            seed: 1,
            rho_low: -2.0,
            rho_high: 4.0,
            quad_order: 32,
            output: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::Value {
        key: key.into(),
        value: value.into(),
        reason: e.to_string(),
    })
}

fn optional(value: &str) -> Option<&str> {
    match value {
        "" | "none" => None,
        v => Some(v),
    }
}

impl RunConfig {
    pub const KEYS: [&'static str; 12] = [
        "estimator",
        "input",
        "group_column",
        "window_column",
        "window",
        "window_edges",
        "bootstrap",
        "seed",
        "rho_low",
        "rho_high",
        "quad_order",
        "output",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let value = value.trim();
        match key.trim() {
            "estimator" => self.estimator = parse(key, value)?,
            "input" => self.input = optional(value).map(PathBuf::from),
            "group_column" => self.group_column = optional(value).map(String::from),
            "window_column" => self.window_column = value.to_string(),
            "window" => self.window = optional(value).map(|v| parse(key, v)).transpose()?,
            "window_edges" => self.window_edges = parse(key, value)?,
            "bootstrap" => self.bootstrap = optional(value).map(|v| parse(key, v)).transpose()?,
            "seed" => self.seed = parse(key, value)?,
            "rho_low" => self.rho_low = parse(key, value)?,
            "rho_high" => self.rho_high = parse(key, value)?,
            "quad_order" => self.quad_order = parse(key, value)?,
            "output" => self.output = optional(value).map(PathBuf::from),
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Applies `key = value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                text: raw.to_string(),
            })?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        c.apply_text(&std::fs::read_to_string(path)?)?;
        Ok(c)
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<(), ConfigError> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: 0,
                text: o.to_string(),
            })?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if let Some(w) = self.window {
            if w.width < 1 || w.step < 1 {
                return Err(ConfigError::Invalid("window width and step must be at least 1".into()));
            }
        }
        if self.rho_low.partial_cmp(&self.rho_high) != Some(std::cmp::Ordering::Less) {
            return Err(ConfigError::Invalid("rho_low must be below rho_high".into()));
        }
        if matches!(self.bootstrap, Some(b) if b < 2) {
            return Err(ConfigError::Invalid("bootstrap needs at least 2 replicates".into()));
        }
        if self.quad_order == 0 {
            return Err(ConfigError::Invalid("quad_order must be positive".into()));
        }
        Ok(())
    }

    fn value_of(&self, key: &str) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map_or("none".to_string(), |p| p.display().to_string());
        match key {
            "estimator" => self.estimator.to_string(),
            "input" => path(&self.input),
            "group_column" => self.group_column.clone().unwrap_or_else(|| "none".into()),
            "window_column" => self.window_column.clone(),
            "window" => self.window.map_or("none".into(), |w| format!("{},{}", w.width, w.step)),
            "window_edges" => self.window_edges.to_string(),
            "bootstrap" => self.bootstrap.map_or("none".into(), |b| b.to_string()),
            "seed" => self.seed.to_string(),
            "rho_low" => self.rho_low.to_string(),
            "rho_high" => self.rho_high.to_string(),
            "quad_order" => self.quad_order.to_string(),
            "output" => path(&self.output),
            _ => unreachable!("every key in KEYS has a value"),
        }
    }

    /// Resolved configuration in the file format, one key per line.
    pub fn echo(&self) -> String {
        Self::KEYS.iter().map(|k| format!("{k} = {}\n", self.value_of(k))).collect()
    }
}
