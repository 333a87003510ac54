//! Parameter resolution shared by all subcommands.
//!
//! Precedence per parameter: explicit flag, then the `--config` JSON file,
//! then the built-in default. Every resolved value is recorded for the run
//! manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde_json::Value;

pub struct Resolver {
    config: serde_json::Map<String, Value>,
    resolved: BTreeMap<String, Value>,
}

impl Resolver {
    pub fn new(config_path: Option<&Path>) -> Result<Resolver> {
        let config = match config_path {
            None => serde_json::Map::new(),
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                let value: Value = serde_json::from_str(&text)
                    .with_context(|| format!("parsing config {}", path.display()))?;
                match value {
                    Value::Object(map) => map,
                    _ => bail!("config {} must be a JSON object", path.display()),
                }
            }
        };
        Ok(Resolver {
            config,
            resolved: BTreeMap::new(),
        })
    }

    fn lookup(&self, key: &str) -> Option<&Value> {
        self.config.get(key)
    }

    pub fn f64(&mut self, key: &str, flag: Option<f64>, default: f64) -> Result<f64> {
        let value = match flag {
            Some(v) => v,
            None => match self.lookup(key) {
                Some(v) => v
                    .as_f64()
                    .ok_or_else(|| anyhow!("config key `{key}` must be a number"))?,
                None => default,
            },
        };
        self.resolved.insert(key.to_string(), value.into());
        Ok(value)
    }

    pub fn opt_f64(&mut self, key: &str, flag: Option<f64>) -> Result<Option<f64>> {
        let value = match flag {
            Some(v) => Some(v),
            None => match self.lookup(key) {
                Some(v) => Some(
                    v.as_f64()
                        .ok_or_else(|| anyhow!("config key `{key}` must be a number"))?,
                ),
                None => None,
            },
        };
        if let Some(v) = value {
            self.resolved.insert(key.to_string(), v.into());
        }
        Ok(value)
    }

    pub fn usize(&mut self, key: &str, flag: Option<usize>, default: usize) -> Result<usize> {
        let value = match flag {
            Some(v) => v,
            None => match self.lookup(key) {
                Some(v) => v
                    .as_u64()
                    .ok_or_else(|| anyhow!("config key `{key}` must be a non-negative integer"))?
                    as usize,
                None => default,
            },
        };
        self.resolved.insert(key.to_string(), (value as u64).into());
        Ok(value)
    }

    pub fn u64(&mut self, key: &str, flag: Option<u64>, default: u64) -> Result<u64> {
        let value = match flag {
            Some(v) => v,
            None => match self.lookup(key) {
                Some(v) => v
                    .as_u64()
                    .ok_or_else(|| anyhow!("config key `{key}` must be a non-negative integer"))?,
                None => default,
            },
        };
        self.resolved.insert(key.to_string(), value.into());
        Ok(value)
    }

    pub fn string(&mut self, key: &str, flag: Option<String>, default: &str) -> Result<String> {
        let value = match flag {
            Some(v) => v,
            None => match self.lookup(key) {
                Some(v) => v
                    .as_str()
                    .ok_or_else(|| anyhow!("config key `{key}` must be a string"))?
                    .to_string(),
                None => default.to_string(),
            },
        };
        self.resolved.insert(key.to_string(), value.clone().into());
        Ok(value)
    }

    pub fn opt_string(&mut self, key: &str, flag: Option<String>) -> Result<Option<String>> {
        let value = match flag {
            Some(v) => Some(v),
            None => match self.lookup(key) {
                Some(v) => Some(
                    v.as_str()
                        .ok_or_else(|| anyhow!("config key `{key}` must be a string"))?
                        .to_string(),
                ),
                None => None,
            },
        };
        if let Some(v) = &value {
            self.resolved.insert(key.to_string(), v.clone().into());
        }
        Ok(value)
    }

    /// Record a parameter that is not config-overridable (paths, etc.).
    pub fn note(&mut self, key: &str, value: impl Into<Value>) {
        self.resolved.insert(key.to_string(), value.into());
    }

    pub fn into_params(self) -> BTreeMap<String, Value> {
        self.resolved
    }
}

pub fn ensure_out_dir(out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))
}

/// Parse a comma-separated list of numbers, e.g. FPR targets "0.05,0.01".
pub fn parse_f64_list(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| anyhow!("bad number `{t}` in list"))
        })
        .collect()
}

/// Parse a comma-separated list of positive integers, e.g. set sizes.
pub fn parse_usize_list(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| anyhow!("bad integer `{t}` in list"))
        })
        .collect()
}

/// Parse an inclusive sweep spec `START:END:STEP`.
pub fn parse_sweep(text: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 3 {
        bail!("sweep must look like START:END:STEP, got `{text}`");
    }
    let start: f64 = parts[0].parse().map_err(|_| anyhow!("bad sweep start"))?;
    let end: f64 = parts[1].parse().map_err(|_| anyhow!("bad sweep end"))?;
    let step: f64 = parts[2].parse().map_err(|_| anyhow!("bad sweep step"))?;
    if step <= 0.0 || end < start {
        bail!("sweep needs END >= START and STEP > 0");
    }
    let mut values = Vec::new();
    let mut k = start;
    while k <= end + 1e-9 {
        values.push(k);
        k += step;
    }
    Ok(values)
}

/// Write pretty JSON with a trailing newline.
pub fn write_json(path: &PathBuf, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Trim a float for use in file names: `10` not `10.0`.
pub fn compact_f64(v: f64) -> String {
    format!("{v}")
}
