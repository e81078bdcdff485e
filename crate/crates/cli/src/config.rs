//! `key = value` run configuration, merged under command-line flags.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

pub const KEYS: &[&str] = &[
    "data",
    "out",
    "horizon",
    "levels",
    "train_fraction",
    "stride",
    "seed",
    "threads",
    "params",
    "paths",
    "steps",
    "dt",
    "scheme",
    "dynamics",
    "ito_correction",
    "s0",
    "k0",
    "rate_diff",
    "theta",
    "mu",
    "sigma_k",
    "sigma_s",
];

#[derive(Debug, Default)]
pub struct FileConfig {
    values: BTreeMap<String, String>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::input(
                "ConfigIo",
                format!("cannot read config {}: {e}", path.display()),
            )
        })?;
        Self::parse(&text)
            .map_err(|m| CliError::input("ConfigParse", format!("{}: {m}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected `key = value`", i + 1))?;
            let key = k.trim().replace('-', "_");
            let key = if key == "horizons" {
                "horizon".to_string()
            } else {
                key
            };
            if !KEYS.contains(&key.as_str()) {
                return Err(format!("line {}: unknown key `{key}`", i + 1));
            }
            if values.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(format!("line {}: duplicate key `{key}`", i + 1));
            }
        }
        Ok(Self { values })
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// Flag value if given, else the config value, else `None`.
    pub fn pick<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        self.raw(key).map(|v| parse_value(key, v)).transpose()
    }

    pub fn pick_list<T: FromStr>(
        &self,
        flag: Option<Vec<T>>,
        key: &str,
    ) -> Result<Option<Vec<T>>, CliError>
    where
        T::Err: Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        self.raw(key)
            .map(|v| v.split(',').map(|x| parse_value(key, x.trim())).collect())
            .transpose()
    }
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T, CliError>
where
    T::Err: Display,
{
    v.parse()
        .map_err(|e| CliError::input("ConfigValue", format!("config key `{key}` = `{v}`: {e}")))
}

/// Confidence level written as a fraction (`0.95`) or a percentage (`95%`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Level(pub f64);

impl FromStr for Level {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        let (num, divisor) = match s.strip_suffix('%') {
            Some(p) => (p, 100.0),
            None => (s, 1.0),
        };
        let v: f64 = num
            .trim()
            .parse()
            .map_err(|e| format!("bad level `{s}`: {e}"))?;
        Ok(Level(v / divisor))
    }
}

/// Year fraction written as a decimal (`0.0833`) or a ratio (`1/12`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YearFraction(pub f64);

impl FromStr for YearFraction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let bad = |e: std::num::ParseFloatError| format!("bad year fraction `{s}`: {e}");
        match s.split_once('/') {
            Some((a, b)) => {
                let (a, b): (f64, f64) = (
                    a.trim().parse().map_err(bad)?,
                    b.trim().parse().map_err(bad)?,
                );
                Ok(YearFraction(a / b))
            }
            None => s.trim().parse().map(YearFraction).map_err(bad),
        }
    }
}
