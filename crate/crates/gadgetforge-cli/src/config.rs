//! Layered settings: command-line flag, then `GADGETFORGE_*` environment
//! variable, then config file, then the built-in default.
//!
//! The config file is line-oriented `key = value` under `[section]` headers;
//! a key belongs to the section above it, giving `section.key` lookup names.
//! Blank lines and `#` comment lines are ignored; values are taken verbatim
//! (no inline comments), so paths may contain any character but a newline.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context, Result};

#[derive(Debug, Default)]
pub struct Settings {
    file: BTreeMap<String, String>,
}

/// `section.key` → `GADGETFORGE_SECTION_KEY`.
fn env_name(key: &str) -> String {
    let mut name = String::from("GADGETFORGE_");
    for c in key.chars() {
        match c {
            '.' | '-' => name.push('_'),
            _ => name.push(c.to_ascii_uppercase()),
        }
    }
    name
}

fn parse_ini(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    let mut section = String::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
            section = name.trim().to_string();
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!(
                "config line {}: expected `key = value` or `[section]`",
                idx + 1
            );
        };
        let key = key.trim();
        if key.is_empty() {
            bail!("config line {}: empty key", idx + 1);
        }
        let full = if section.is_empty() {
            key.to_string()
        } else {
            format!("{section}.{key}")
        };
        map.insert(full, value.trim().to_string());
    }
    Ok(map)
}

impl Settings {
    /// Load the config file when given; a missing explicit path is an error.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Settings::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let file = parse_ini(&text).with_context(|| format!("in config {}", path.display()))?;
        Ok(Settings { file })
    }

    /// Raw lookup below flag level: environment first, then file.
    fn lookup(&self, key: &str) -> Option<String> {
        if let Ok(v) = std::env::var(env_name(key)) {
            return Some(v);
        }
        self.file.get(key).cloned()
    }

    /// Resolve an optional setting.
    pub fn get<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.lookup(key) {
            Some(raw) => {
                let value = raw
                    .parse()
                    .map_err(|_| anyhow::anyhow!("setting {key} has unusable value `{raw}`"))?;
                Ok(Some(value))
            }
            None => Ok(None),
        }
    }

    /// Resolve with a default for when nothing is set anywhere.
    pub fn get_or<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T> {
        Ok(self.get(flag, key)?.unwrap_or(default))
    }

    /// Resolve a setting that must come from somewhere.
    pub fn require<T: FromStr>(&self, flag: Option<T>, key: &str, flag_name: &str) -> Result<T> {
        self.get(flag, key)?
            .with_context(|| format!("missing required setting {key} (flag {flag_name})"))
    }

    /// Repeatable settings: the flag list wins outright; otherwise the config
    /// value is split on commas.
    pub fn get_list(&self, flags: &[String], key: &str) -> Vec<String> {
        if !flags.is_empty() {
            return flags.to_vec();
        }
        match self.lookup(key) {
            Some(raw) => raw
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect(),
            None => Vec::new(),
        }
    }
}
