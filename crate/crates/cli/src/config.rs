//! Flat key-value run configuration: file-sourced defaults, flag
//! overrides, and the effective-config echo written next to outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use evnoise_core::{Error, Result};

/// Key-value store backing `--config` files. Keys are the long option
/// names with dashes replaced by underscores; flags always win.
#[derive(Debug, Default, Clone)]
pub struct FileConfig {
    values: BTreeMap<String, String>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut values = BTreeMap::new();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)?;
            for (lineno, raw) in text.lines().enumerate() {
                let line = raw.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (k, v) = line.split_once('=').ok_or_else(|| {
                    Error::validation(format!(
                        "config line {}: expected `key = value`",
                        lineno + 1
                    ))
                })?;
                values.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        Ok(Self { values })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// Parses a typed value out of the config file if present.
    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                Error::validation(format!("config key `{key}` has invalid value `{raw}`"))
            }),
        }
    }
}

/// Collects the fully resolved settings of one run and writes them as a
/// sorted key-value echo file. Contents are deterministic (no clocks).
#[derive(Debug, Default)]
pub struct EffectiveConfig {
    values: BTreeMap<String, String>,
}

impl EffectiveConfig {
    pub fn new(subcommand: &str) -> Self {
        let mut e = Self::default();
        e.set("subcommand", subcommand);
        e
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn set_path(&mut self, key: &str, value: &Path) {
        self.values.insert(key.to_string(), value.display().to_string());
    }

    pub fn set_opt_path(&mut self, key: &str, value: &Option<PathBuf>) {
        if let Some(p) = value {
            self.set_path(key, p);
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::from("# evnoise effective configuration\n");
        for (k, v) in &self.values {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    /// Writes `<stem>.effective.cfg` next to the given output path or prefix.
    pub fn write_next_to(&self, out: &Path) -> Result<()> {
        let mut name = out
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".to_string());
        name.push_str(".effective.cfg");
        let target = out.with_file_name(name);
        std::fs::write(target, self.render())?;
        Ok(())
    }
}

/// Resolves an option: explicit flag beats config file beats default.
pub fn resolve<T: std::str::FromStr + Clone>(
    flag: Option<T>,
    cfg: &FileConfig,
    key: &str,
    default: T,
) -> Result<T> {
    Ok(flag.or(cfg.parse::<T>(key)?).unwrap_or(default))
}

/// Resolves an option that has no default and must be present.
pub fn resolve_required<T: std::str::FromStr + Clone>(
    flag: Option<T>,
    cfg: &FileConfig,
    key: &str,
) -> Result<T> {
    flag.or(cfg.parse::<T>(key)?)
        .ok_or_else(|| Error::validation(format!("missing required option `--{}`", key.replace('_', "-"))))
}
