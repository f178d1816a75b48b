//! Flat `key = value` run configuration with dotted keys.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::CliError;

/// Every accepted key with its default. Unknown keys are rejected.
const DEFAULTS: &[(&str, &str)] = &[
    ("algebra", "su2"),
    ("space", "none"),
    ("a", "default"),
    ("b", "a"),
    ("j", "2"),
    ("grid.L", "20"),
    ("grid.N", "1024"),
    ("grid.acc", "6"),
    ("time.T", "1"),
    ("time.dt", "auto"),
    ("time.allow_unstable", "false"),
    ("init", "sech"),
    ("init.amp", "1"),
    ("init.k", "0"),
    ("init.file", ""),
    ("flow.curve", "false"),
    ("soliton.poles", "0+1i"),
    ("soliton.spans", "1,1"),
    ("soliton.curve", "false"),
    ("develop.direction", "roundtrip"),
    ("finite_type.k", "2"),
    ("finite_type.scale", "0.3"),
    ("output.snapshots", "10"),
    ("output.fields", "true"),
    ("seed", "20240917"),
    ("verify.suite", "all"),
];

/// Resolved configuration: defaults, then the file, then overrides.
#[derive(Clone, Debug)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

fn parse_line(line: &str, origin: &str) -> Result<Option<(String, String)>, CliError> {
    let line = line.split('#').next().unwrap_or("").trim();
    if line.is_empty() {
        return Ok(None);
    }
    let (k, v) = line
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("{origin}: expected key = value, got '{line}'")))?;
    Ok(Some((k.trim().to_string(), v.trim().to_string())))
}

impl RunConfig {
    pub fn defaults() -> Self {
        RunConfig {
            values: DEFAULTS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        if !self.values.contains_key(key) {
            return Err(CliError::Config(format!("unknown key '{key}'")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), CliError> {
        for (i, line) in text.lines().enumerate() {
            if let Some((k, v)) = parse_line(line, &format!("{origin}:{}", i + 1))? {
                self.set(&k, &v)?;
            }
        }
        Ok(())
    }

    pub fn load(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<Self, CliError> {
        let mut cfg = RunConfig::defaults();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
            cfg.apply_text(&text, &p.display().to_string())?;
        }
        for o in overrides {
            let (k, v) = parse_line(o, "--override")?
                .ok_or_else(|| CliError::Config("empty --override".into()))?;
            cfg.set(&k, &v)?;
        }
        if let Some(s) = seed {
            cfg.set("seed", &s.to_string())?;
        }
        Ok(cfg)
    }

    pub fn str(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).expect("key listed in DEFAULTS")
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError> {
        let raw = self.str(key);
        raw.parse()
            .map_err(|_| CliError::Config(format!("cannot parse {key} = '{raw}' as {}", std::any::type_name::<T>())))
    }

    pub fn flag(&self, key: &str) -> Result<bool, CliError> {
        match self.str(key) {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            other => Err(CliError::Config(format!("{key} must be true or false, got '{other}'"))),
        }
    }

    /// Sorted `key = value` lines; the hashed form.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.values {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// First 16 hex digits of the SHA-256 of the canonical form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::Value::Object(
            self.values
                .iter()
                .map(|(k, v)| (k.clone(), serde_json::Value::String(v.clone())))
                .collect(),
        )
    }
}
