//! Flat key-value run configuration: a TOML file merged with `--key value`
//! overrides, plus the hash written into every output header.

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

/// Keys that do not affect output bytes and are left out of the hash.
const UNHASHED: &[&str] = &["workers", "out", "trace_out", "report_out"];

pub struct Config {
    table: Table,
    read: RefCell<BTreeSet<String>>,
}

impl Config {
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                text.parse::<Table>()
                    .with_context(|| format!("parsing config {}", p.display()))?
            }
            None => Table::new(),
        };
        for (k, v) in parse_overrides(overrides)? {
            table.insert(k, v);
        }
        Ok(Self {
            table,
            read: RefCell::new(BTreeSet::new()),
        })
    }

    #[cfg(test)]
    pub fn from_pairs(pairs: &[(&str, Value)]) -> Self {
        Self {
            table: pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
            read: RefCell::new(BTreeSet::new()),
        }
    }

    fn raw(&self, key: &str) -> Option<&Value> {
        self.read.borrow_mut().insert(key.to_string());
        self.table.get(key)
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        self.opt_f64(key).map(|v| v.unwrap_or(default))
    }

    pub fn opt_f64(&self, key: &str) -> Result<Option<f64>> {
        match self.raw(key) {
            None => Ok(None),
            Some(Value::Float(f)) => Ok(Some(*f)),
            Some(Value::Integer(i)) => Ok(Some(*i as f64)),
            Some(v) => bail!("`{key}` must be a number, got {v}"),
        }
    }

    pub fn opt_u64(&self, key: &str) -> Result<Option<u64>> {
        match self.raw(key) {
            None => Ok(None),
            Some(Value::Integer(i)) if *i >= 0 => Ok(Some(*i as u64)),
            Some(Value::Float(f)) if *f >= 0.0 && f.fract() == 0.0 && *f < 9.0e15 => Ok(Some(*f as u64)),
            Some(v) => bail!("`{key}` must be a nonnegative integer, got {v}"),
        }
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64> {
        self.opt_u64(key).map(|v| v.unwrap_or(default))
    }

    pub fn opt_usize(&self, key: &str) -> Result<Option<usize>> {
        Ok(self.opt_u64(key)?.map(|v| v as usize))
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        self.opt_usize(key).map(|v| v.unwrap_or(default))
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.raw(key) {
            None => Ok(default),
            Some(Value::Boolean(b)) => Ok(*b),
            Some(v) => bail!("`{key}` must be true or false, got {v}"),
        }
    }

    pub fn opt_str(&self, key: &str) -> Result<Option<String>> {
        match self.raw(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(v) => bail!("`{key}` must be a string, got {v}"),
        }
    }

    pub fn str_or(&self, key: &str, default: &str) -> Result<String> {
        self.opt_str(key).map(|v| v.unwrap_or_else(|| default.to_string()))
    }

    pub fn path(&self, key: &str) -> Result<PathBuf> {
        self.opt_str(key)?
            .map(PathBuf::from)
            .ok_or_else(|| anyhow!("missing required key `{key}`"))
    }

    pub fn opt_path(&self, key: &str) -> Result<Option<PathBuf>> {
        Ok(self.opt_str(key)?.map(PathBuf::from))
    }

    pub fn opt_f64_list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.raw(key) {
            None => Ok(None),
            Some(Value::Array(a)) => a
                .iter()
                .map(|v| match v {
                    Value::Float(f) => Ok(*f),
                    Value::Integer(i) => Ok(*i as f64),
                    other => bail!("`{key}` entries must be numbers, got {other}"),
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
            Some(Value::Float(f)) => Ok(Some(vec![*f])),
            Some(Value::Integer(i)) => Ok(Some(vec![*i as f64])),
            Some(v) => bail!("`{key}` must be a list of numbers, got {v}"),
        }
    }

    /// Rejects keys that no getter asked for.
    pub fn reject_unknown(&self) -> Result<()> {
        let read = self.read.borrow();
        let unknown: Vec<&String> = self.table.keys().filter(|k| !read.contains(*k)).collect();
        if !unknown.is_empty() {
            bail!("unknown config keys: {unknown:?}");
        }
        Ok(())
    }

    /// SHA-256 of the canonical TOML rendering of the hashed keys.
    pub fn hash(&self) -> String {
        let hashed: Table = self
            .table
            .iter()
            .filter(|(k, _)| !UNHASHED.contains(&k.as_str()))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        let text = toml::to_string(&hashed).unwrap_or_default();
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn normalize(key: &str) -> String {
    key.replace('-', "_")
}

/// Parses a literal as TOML when possible, otherwise as a bare string.
fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Accepts `--key value`, `--key=value`, and bare `--flag` (read as `true`).
fn parse_overrides(args: &[String]) -> Result<Vec<(String, Value)>> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < args.len() {
        let a = &args[i];
        let Some(body) = a.strip_prefix("--") else {
            bail!("unexpected argument `{a}`; overrides take the form --key value");
        };
        if body.is_empty() {
            bail!("empty override key");
        }
        if let Some((k, v)) = body.split_once('=') {
            out.push((normalize(k), parse_value(v)));
            i += 1;
        } else if i + 1 < args.len() && !is_key(&args[i + 1]) {
            out.push((normalize(body), parse_value(&args[i + 1])));
            i += 2;
        } else {
            out.push((normalize(body), Value::Boolean(true)));
            i += 1;
        }
    }
    Ok(out)
}

/// `--name` but not a negative number.
fn is_key(s: &str) -> bool {
    s.strip_prefix("--")
        .is_some_and(|rest| rest.chars().next().is_some_and(|c| c.is_ascii_alphabetic()))
}
