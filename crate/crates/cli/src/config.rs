//! Flat `key = value` run configuration (TOML subset without tables).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use toml::Value;

use crate::error::{CliError, Result};

const KEYS: &[&str] = &[
    "weights",
    "seed",
    "out",
    "image",
    "text",
    "method",
    "alpha",
    "temperature",
    "beta",
    "lambda",
    "scales",
    "retain",
    "steps",
    "levels",
    "seeds",
    "format",
    "repetitions",
    "scorer",
    "image_size",
    "patch_size",
    "d_model",
    "n_heads",
    "n_layers_v",
    "n_layers_t",
    "mlp_ratio",
    "d_shared",
    "vocab_size",
    "max_text_len",
    "ln_eps",
];

#[derive(Debug, Clone, Default)]
pub struct FileConfig {
    values: BTreeMap<String, Value>,
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
        let mut values = BTreeMap::new();
        for (k, v) in table {
            if !KEYS.contains(&k.as_str()) {
                return Err(CliError::Config(format!("unknown key {k:?}")));
            }
            if v.is_table() {
                return Err(CliError::Config(format!("{k}: tables are not supported")));
            }
            values.insert(k, v);
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    fn typed<T>(
        &self,
        key: &str,
        what: &str,
        f: impl Fn(&Value) -> Option<T>,
    ) -> Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => f(v)
                .map(Some)
                .ok_or_else(|| CliError::Config(format!("{key}: expected {what}, got {v}"))),
        }
    }

    pub fn string(&self, key: &str) -> Result<Option<String>> {
        self.typed(key, "a string", |v| v.as_str().map(str::to_string))
    }

    pub fn path(&self, key: &str) -> Result<Option<PathBuf>> {
        Ok(self.string(key)?.map(PathBuf::from))
    }

    pub fn float(&self, key: &str) -> Result<Option<f64>> {
        self.typed(key, "a number", |v| {
            v.as_float().or_else(|| v.as_integer().map(|i| i as f64))
        })
    }

    pub fn uint(&self, key: &str) -> Result<Option<u64>> {
        self.typed(key, "a non-negative integer", |v| {
            v.as_integer().and_then(|i| u64::try_from(i).ok())
        })
    }

    pub fn usize(&self, key: &str) -> Result<Option<usize>> {
        Ok(self.uint(key)?.map(|v| v as usize))
    }

    pub fn floats(&self, key: &str) -> Result<Option<Vec<f64>>> {
        self.typed(key, "an array of numbers", |v| {
            v.as_array()?
                .iter()
                .map(|x| x.as_float().or_else(|| x.as_integer().map(|i| i as f64)))
                .collect()
        })
    }

    /// Arrays of paths, or a single path.
    pub fn paths(&self, key: &str) -> Result<Option<Vec<PathBuf>>> {
        self.typed(key, "a path or array of paths", |v| match v {
            Value::String(s) => Some(vec![PathBuf::from(s)]),
            Value::Array(a) => a.iter().map(|x| x.as_str().map(PathBuf::from)).collect(),
            _ => None,
        })
    }

    /// Seed specs may be written as a string (`"0..20"`), an integer count or
    /// an array of integers.
    pub fn seeds(&self, key: &str) -> Result<Option<String>> {
        self.typed(key, "a seed list", |v| match v {
            Value::String(s) => Some(s.clone()),
            Value::Integer(i) if *i >= 0 => Some(i.to_string()),
            Value::Array(a) => {
                let parts: Option<Vec<String>> = a
                    .iter()
                    .map(|x| x.as_integer().filter(|i| *i >= 0).map(|i| i.to_string()))
                    .collect();
                parts.map(|p| p.join(","))
            }
            _ => None,
        })
    }

    /// Fraction lists may be an array of numbers or a comma-separated string.
    pub fn levels(&self, key: &str) -> Result<Option<String>> {
        self.typed(key, "a list of fractions", |v| match v {
            Value::String(s) => Some(s.clone()),
            Value::Array(a) => {
                let parts: Option<Vec<String>> = a
                    .iter()
                    .map(|x| {
                        x.as_float()
                            .or_else(|| x.as_integer().map(|i| i as f64))
                            .map(|f| f.to_string())
                    })
                    .collect();
                parts.map(|p| p.join(","))
            }
            _ => None,
        })
    }
}

/// `N` means seeds `0..N`, `A..B` a half-open range, `a,b,c` an explicit list.
pub fn parse_seeds(spec: &str) -> Result<Vec<u64>> {
    let bad = || CliError::Usage(format!("invalid --seeds {spec:?}"));
    let spec = spec.trim();
    let seeds: Vec<u64> = if let Some((a, b)) = spec.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        (a..b).collect()
    } else if spec.contains(',') {
        spec.split(',')
            .map(|s| s.trim().parse().map_err(|_| bad()))
            .collect::<Result<_>>()?
    } else {
        let n: u64 = spec.parse().map_err(|_| bad())?;
        (0..n).collect()
    };
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

pub fn parse_levels(spec: &str) -> Result<Vec<f64>> {
    let levels: Vec<f64> = spec
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Usage(format!("invalid --levels entry {s:?}")))
        })
        .collect::<Result<_>>()?;
    if let Some(l) = levels.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        return Err(CliError::Usage(format!(
            "parameter error: level {l} outside [0, 1]"
        )));
    }
    Ok(levels)
}
