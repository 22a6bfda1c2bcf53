use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::{Failure, RunManifest};

/// Flat key/value view of one command's configuration. Keys are flag names
/// without the leading dashes.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    command: &'static str,
    known: &'static [&'static str],
    values: BTreeMap<String, String>,
}

fn normalize_key(k: &str) -> String {
    k.trim().trim_start_matches("--").replace('_', "-")
}

impl Settings {
    pub fn new(
        command: &'static str,
        known: &'static [&'static str],
        defaults: &[(&str, &str)],
    ) -> Self {
        let values = defaults
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        Self {
            command,
            known,
            values,
        }
    }

    pub fn command(&self) -> &'static str {
        self.command
    }

    pub fn values(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<(), Failure> {
        let key = normalize_key(key);
        if !self.known.contains(&key.as_str()) {
            return Err(Failure::Usage(format!(
                "unknown setting '{key}' for {}",
                self.command
            )));
        }
        self.values.insert(key, value.into());
        Ok(())
    }

    pub fn merge<'a>(
        &mut self,
        pairs: impl IntoIterator<Item = (&'a str, Option<String>)>,
    ) -> Result<(), Failure> {
        for (k, v) in pairs {
            if let Some(v) = v {
                self.set(k, v)?;
            }
        }
        Ok(())
    }

    /// Loads a `key = value` file, or the config block of a JSON run
    /// manifest.
    pub fn merge_file(&mut self, path: &Path) -> Result<(), Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
        if text.trim_start().starts_with('{') {
            let m: RunManifest = serde_json::from_str(&text).map_err(|e| {
                Failure::Usage(format!("invalid manifest {}: {e}", path.display()))
            })?;
            for (k, v) in m.config {
                self.set(&k, v)?;
            }
            return Ok(());
        }
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Failure::Usage(format!(
                    "{}:{}: expected key = value",
                    path.display(),
                    i + 1
                )));
            };
            self.set(k, v.trim())?;
        }
        Ok(())
    }

    pub fn opt(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str, Failure> {
        self.opt(key)
            .ok_or_else(|| Failure::Usage(format!("{} needs --{key}", self.command)))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, Failure>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.require(key)?;
        raw.parse()
            .map_err(|e| Failure::Usage(format!("invalid --{key} '{raw}': {e}")))
    }

    pub fn path(&self, key: &str) -> Result<PathBuf, Failure> {
        Ok(PathBuf::from(self.require(key)?))
    }

    /// Rewrites path-valued settings as absolute paths so a manifest can be
    /// replayed from any working directory.
    pub fn absolutize(&mut self, keys: &[&str]) -> Result<(), Failure> {
        for k in keys {
            if let Some(v) = self.values.get_mut(*k) {
                let abs = std::path::absolute(&*v)
                    .map_err(|e| Failure::Usage(format!("bad path for --{k}: {e}")))?;
                *v = abs.to_string_lossy().into_owned();
            }
        }
        Ok(())
    }
}

pub fn parse_list<T: FromStr>(key: &str, raw: &str) -> Result<Vec<T>, Failure>
where
    T::Err: std::fmt::Display,
{
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|e| Failure::Usage(format!("invalid --{key} entry '{s}': {e}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const KNOWN: &[&str] = &["seed", "out", "lambda-th"];

    #[test]
    fn later_sources_win() {
        let mut s = Settings::new("x", KNOWN, &[("seed", "0"), ("lambda-th", "31")]);
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("c.txt");
        std::fs::write(&f, "# comment\nseed = 4\nlambda_th=10 # trailing\n").unwrap();
        s.merge_file(&f).unwrap();
        assert_eq!(s.get::<u64>("seed").unwrap(), 4);
        s.merge([("seed", Some("9".to_string())), ("out", None)]).unwrap();
        assert_eq!(s.get::<u64>("seed").unwrap(), 9);
        assert_eq!(s.get::<f64>("lambda-th").unwrap(), 10.0);
        assert!(s.opt("out").is_none());
    }

    #[test]
    fn unknown_keys_and_bad_values_are_usage_errors() {
        let mut s = Settings::new("x", KNOWN, &[]);
        assert!(matches!(s.set("bogus", "1"), Err(Failure::Usage(_))));
        s.set("seed", "abc").unwrap();
        assert!(matches!(s.get::<u64>("seed"), Err(Failure::Usage(_))));
        assert!(matches!(s.require("out"), Err(Failure::Usage(_))));
    }

    #[test]
    fn lists_parse() {
        assert_eq!(parse_list::<f64>("grid", "10, 31,100").unwrap(), vec![10.0, 31.0, 100.0]);
        assert!(parse_list::<f64>("grid", "10,x").is_err());
    }
}
