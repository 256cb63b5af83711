//! `key = value` config files merged under command-line flags.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{Context, Result};

/// Bad invocation: unknown or conflicting options, missing required values.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn parse_config(text: &str, origin: &Path) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            usage(format!("{}:{}: expected `key = value`", origin.display(), n + 1))
        })?;
        let key = key.trim().replace('_', "-");
        if key.is_empty() {
            return Err(usage(format!("{}:{}: empty key", origin.display(), n + 1)));
        }
        if map.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(usage(format!(
                "{}:{}: duplicate key `{key}`",
                origin.display(),
                n + 1
            )));
        }
    }
    Ok(map)
}

/// Resolves each option from its flag, then the config file, then a default,
/// and remembers the outcome for the reproducibility header.
pub struct Resolver {
    file: BTreeMap<String, String>,
    origin: Option<PathBuf>,
    resolved: BTreeMap<String, String>,
}

impl Resolver {
    pub fn new(config: Option<&Path>) -> Result<Self> {
        let (file, origin) = match config {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| usage(format!("cannot read config {}: {e}", p.display())))?;
                (parse_config(&text, p)?, Some(p.to_path_buf()))
            }
            None => (BTreeMap::new(), None),
        };
        Ok(Self {
            file,
            origin,
            resolved: BTreeMap::new(),
        })
    }

    fn from_file<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        match self.file.get(key) {
            None => Ok(None),
            Some(v) => v.parse::<T>().map(Some).map_err(|e| {
                let origin = self.origin.as_deref().unwrap_or(Path::new("config"));
                usage(format!("{}: bad value for `{key}`: {e}", origin.display()))
            }),
        }
    }

    pub fn optional<T: FromStr + fmt::Display>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        let v = match flag {
            Some(v) => Some(v),
            None => self.from_file(key)?,
        };
        if let Some(v) = &v {
            self.resolved.insert(key.to_string(), v.to_string());
        }
        Ok(v)
    }

    pub fn value<T: FromStr + fmt::Display>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        let v = self.optional(key, flag)?.unwrap_or(default);
        self.resolved.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    pub fn required<T: FromStr + fmt::Display>(&mut self, key: &str, flag: Option<T>) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        self.optional(key, flag)?
            .ok_or_else(|| usage(format!("missing required option --{key}")))
    }

    pub fn path(&mut self, key: &str, flag: Option<PathBuf>) -> Result<Option<PathBuf>> {
        Ok(self
            .optional(key, flag.map(|p| p.display().to_string()))?
            .map(PathBuf::from))
    }

    pub fn required_path(&mut self, key: &str, flag: Option<PathBuf>) -> Result<PathBuf> {
        self.path(key, flag)?
            .ok_or_else(|| usage(format!("missing required option --{key}")))
    }

    /// Seed from flag, config, then `PMP_SEED`, defaulting to 0.
    pub fn seed(&mut self, flag: Option<u64>) -> Result<u64> {
        let env = match std::env::var("PMP_SEED") {
            Ok(s) => Some(
                s.trim()
                    .parse::<u64>()
                    .map_err(|e| usage(format!("PMP_SEED={s:?}: {e}")))?,
            ),
            Err(_) => None,
        };
        let v = match flag {
            Some(v) => v,
            None => self.from_file("seed")?.or(env).unwrap_or(0),
        };
        self.resolved.insert("seed".into(), v.to_string());
        Ok(v)
    }

    /// Fails on config keys no option consumed.
    pub fn finish(&self) -> Result<()> {
        let unknown: Vec<&str> = self
            .file
            .keys()
            .filter(|k| !self.resolved.contains_key(*k))
            .map(String::as_str)
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(usage(format!("unknown config key(s): {}", unknown.join(", "))))
        }
    }

    /// Reproducibility header; everything after the first line is itself a
    /// valid config file for the same subcommand.
    pub fn header(&self, command: &str) -> String {
        let mut out = format!("# pmp {} {command}\n", env!("CARGO_PKG_VERSION"));
        for (k, v) in &self.resolved {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}
