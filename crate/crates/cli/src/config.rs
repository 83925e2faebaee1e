//! Run configuration: command-line flags over a `key = value` file over built-in defaults.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{CliError, CliResult};

/// Keys accepted in a configuration file. Dashes and underscores are interchangeable.
pub const KNOWN_KEYS: &[&str] = &[
    "seed", "threads", "d", "m", "s_u", "alpha", "loss", "xi_grid", "mode", "data", "candidates", "out", "u_out",
    "design", "n", "p", "scale", "reps", "preset", "j", "a", "x_new", "n_mc", "parts", "targets_out",
];

/// Environment variable overriding the thread count from the configuration file.
pub const THREADS_ENV: &str = "REPRO_THREADS";

/// Parsed `key = value` configuration file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

fn normalize(key: &str) -> String {
    key.trim().to_ascii_lowercase().replace('-', "_")
}

impl ConfigFile {
    /// Parses lines of `key = value`; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::input(format!("config line {}: expected key = value", i + 1)))?;
            let key = normalize(key);
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(CliError::input(format!("config line {}: unknown key '{key}'", i + 1)));
            }
            if values.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(CliError::input(format!("config line {}: key '{key}' given twice", i + 1)));
            }
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::input(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(&normalize(key)).map(String::as_str)
    }

    /// Typed value of `key`, if present.
    pub fn get<T: FromStr>(&self, key: &str) -> CliResult<Option<T>>
    where
        T::Err: Display,
    {
        self.raw(key)
            .map(|v| v.parse().map_err(|e| CliError::input(format!("config key '{key}': {e}"))))
            .transpose()
    }

    /// The flag value when given, else the file value.
    pub fn pick<T: FromStr>(&self, flag: Option<T>, key: &str) -> CliResult<Option<T>>
    where
        T::Err: Display,
    {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.get(key),
        }
    }

    /// Like [`ConfigFile::pick`] with a fallback default.
    pub fn pick_or<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> CliResult<T>
    where
        T::Err: Display,
    {
        Ok(self.pick(flag, key)?.unwrap_or(default))
    }
}

/// Thread count: flag, then `REPRO_THREADS`, then the file, then available parallelism.
pub fn resolve_threads(flag: Option<usize>, env: Option<&str>, file: &ConfigFile) -> CliResult<usize> {
    let threads = match (flag, env) {
        (Some(t), _) => t,
        (None, Some(v)) => v
            .trim()
            .parse()
            .map_err(|e| CliError::input(format!("{THREADS_ENV}='{v}': {e}")))?,
        (None, None) => match file.get::<usize>("threads")? {
            Some(t) => t,
            None => std::thread::available_parallelism().map_or(1, usize::from),
        },
    };
    if threads == 0 {
        return Err(CliError::input("threads must be at least 1"));
    }
    Ok(threads)
}

/// Comma-separated list of numbers, e.g. `0,0.5,1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NumberList(pub Vec<f64>);

impl FromStr for NumberList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let values = s
            .split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|e| format!("'{}': {e}", t.trim())))
            .collect::<Result<Vec<_>, _>>()?;
        if values.is_empty() {
            return Err("empty list".into());
        }
        Ok(Self(values))
    }
}

pub fn check_alpha(alpha: f64) -> CliResult<f64> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(alpha)
    } else {
        Err(CliError::input(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

pub fn check_positive(name: &str, v: usize) -> CliResult<usize> {
    if v >= 1 {
        Ok(v)
    } else {
        Err(CliError::input(format!("{name} must be at least 1")))
    }
}
