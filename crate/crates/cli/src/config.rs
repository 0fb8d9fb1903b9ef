//! Strict TOML loading with flag overrides and a content hash.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Scalar keys that command-line flags may override.
#[derive(Debug, Default, Clone, Copy)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub tol: Option<f64>,
    pub trials: Option<u64>,
}

impl Overrides {
    fn entries(&self) -> Vec<(&'static str, toml::Value)> {
        let mut out = Vec::new();
        if let Some(s) = self.seed {
            out.push(("seed", toml::Value::Integer(s as i64)));
        }
        if let Some(t) = self.tol {
            out.push(("tol", toml::Value::Float(t)));
        }
        if let Some(t) = self.trials {
            out.push(("trials", toml::Value::Integer(t as i64)));
        }
        out
    }
}

#[derive(Debug)]
pub struct Loaded<T> {
    pub value: T,
    /// Effective configuration after overrides, re-serialized.
    pub effective: String,
    /// SHA-256 of `effective`.
    pub hash: String,
}

/// Parses `path`, applies overrides and deserializes into `T`, failing with
/// the full list of keys `T` does not know.
pub fn load<T: DeserializeOwned + Serialize>(path: &Path, overrides: &Overrides) -> Result<Loaded<T>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    parse(&text, overrides).with_context(|| format!("config {}", path.display()))
}

pub fn parse<T: DeserializeOwned + Serialize>(text: &str, overrides: &Overrides) -> Result<Loaded<T>> {
    let mut table: toml::Table = text.parse()?;
    let flagged = overrides.entries();
    for (key, v) in &flagged {
        table.insert((*key).to_string(), v.clone());
    }
    let merged = toml::to_string(&table)?;
    let mut unknown = Vec::new();
    let value: T = serde_ignored::deserialize(toml::de::Deserializer::parse(&merged)?, |p| unknown.push(p.to_string()))
        .map_err(|e| anyhow::anyhow!("{}", e.to_string().trim_end()))?;
    if !unknown.is_empty() {
        let (flags, keys): (Vec<_>, Vec<_>) = unknown.into_iter().partition(|k| flagged.iter().any(|(f, _)| f == k));
        if !flags.is_empty() {
            let names: Vec<String> = flags.iter().map(|k| format!("--{k}")).collect();
            bail!("{} not accepted by this command", names.join(", "));
        }
        bail!("unknown config keys: {}", keys.join(", "));
    }
    let effective = toml::to_string(&value)?;
    let hash = hex::encode(Sha256::digest(effective.as_bytes()));
    Ok(Loaded { value, effective, hash })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Serialize, Deserialize, PartialEq)]
    struct Inner {
        a: f64,
    }

    #[derive(Debug, Serialize, Deserialize, PartialEq)]
    struct Demo {
        seed: u64,
        side: usize,
        inner: Inner,
    }

    #[test]
    fn overrides_and_unknown_keys() {
        let text = "seed = 1\nside = 8\n[inner]\na = 0.5\n";
        let l: Loaded<Demo> = parse(text, &Overrides { seed: Some(9), ..Default::default() }).unwrap();
        assert_eq!(l.value, Demo { seed: 9, side: 8, inner: Inner { a: 0.5 } });
        let again: Loaded<Demo> = parse(text, &Overrides { seed: Some(9), ..Default::default() }).unwrap();
        assert_eq!(l.hash, again.hash);

        let err = parse::<Demo>("seed = 1\nside = 8\nfoo = 2\n[inner]\na = 0.5\nbar = 1\n", &Overrides::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("foo") && msg.contains("inner.bar"), "{msg}");

        let err = parse::<Demo>(text, &Overrides { tol: Some(1e-3), ..Default::default() }).unwrap_err();
        assert!(err.to_string().contains("--tol"));

        let err = parse::<Demo>("seed = 1\nside = -4\n[inner]\na = 0.5\n", &Overrides::default()).unwrap_err();
        assert!(err.to_string().contains("side"), "{err}");
    }
}
