//! Config-file lookup and run manifests.
//!
//! Values resolve as command-line flag (or its `HIERSEARCH_*` environment variable),
//! then the config file's `[<command>]` table, then its top level, then the built-in
//! default. Every resolved value lands in the manifest snapshot.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

#[derive(Debug, Default)]
pub struct ConfigFile {
    table: toml::Table,
    path: Option<PathBuf>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(ConfigFile::default());
        };
        let text = fs::read_to_string(path).with_context(|| format!("config: cannot read {}", path.display()))?;
        let table = text
            .parse::<toml::Table>()
            .with_context(|| format!("config: {} is not valid TOML", path.display()))?;
        Ok(ConfigFile {
            table,
            path: Some(path.to_path_buf()),
        })
    }

    fn lookup(&self, section: &str, key: &str) -> Option<&toml::Value> {
        let key = key.replace('-', "_");
        self.table
            .get(section)
            .and_then(|s| s.as_table())
            .and_then(|s| s.get(&key))
            .or_else(|| self.table.get(&key).filter(|v| !v.is_table()))
    }
}

/// Resolves one command's settings and records what was used.
pub struct Resolver<'a> {
    file: &'a ConfigFile,
    section: String,
    snapshot: Map<String, Value>,
}

impl<'a> Resolver<'a> {
    pub fn new(file: &'a ConfigFile, command: &str) -> Self {
        let mut snapshot = Map::new();
        if let Some(p) = &file.path {
            snapshot.insert("config_file".into(), Value::String(p.display().to_string()));
        }
        Resolver {
            file,
            section: command.replace('-', "_"),
            snapshot,
        }
    }

    fn file_value<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>> {
        self.file
            .lookup(&self.section, key)
            .map(|v| {
                v.clone()
                    .try_into()
                    .map_err(|e| anyhow!("config: bad value for {}.{key}: {e}", self.section))
            })
            .transpose()
    }

    fn record<T: Serialize>(&mut self, key: &str, v: &T) {
        let v = serde_json::to_value(v).unwrap_or(Value::Null);
        self.snapshot.insert(key.replace('-', "_"), v);
    }

    pub fn opt<T: DeserializeOwned + Serialize>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>> {
        let v = match flag {
            Some(v) => Some(v),
            None => self.file_value(key)?,
        };
        self.record(key, &v);
        Ok(v)
    }

    pub fn get<T: DeserializeOwned + Serialize>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T> {
        let v = self.opt(key, flag)?.unwrap_or(default);
        self.record(key, &v);
        Ok(v)
    }

    pub fn req<T: DeserializeOwned + Serialize>(&mut self, key: &str, flag: Option<T>) -> Result<T> {
        match self.opt(key, flag)? {
            Some(v) => Ok(v),
            None => bail!(
                "{}: missing --{key} (or HIERSEARCH_{}, or `{key}` in the config file)",
                self.section,
                key.replace('-', "_").to_uppercase()
            ),
        }
    }

    pub fn snapshot(self) -> Value {
        Value::Object(self.snapshot)
    }
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Value,
    pub seed: u64,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub tool_version: String,
    pub duration_secs: f64,
}

pub fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

/// Tracks one command run and writes its manifest next to the primary output.
pub struct Run {
    pub command: &'static str,
    pub seed: u64,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    started: Instant,
}

impl Run {
    pub fn start(command: &'static str, seed: u64) -> Self {
        Run {
            command,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn input(&mut self, p: &Path) {
        self.inputs.push(p.to_path_buf());
    }

    pub fn output(&mut self, p: &Path) {
        self.outputs.push(p.to_path_buf());
    }

    /// Writes `<output>.manifest.json` for every recorded output.
    pub fn finish(self, config: Value) -> Result<()> {
        let show = |v: &[PathBuf]| v.iter().map(|p| p.display().to_string()).collect::<Vec<_>>();
        let manifest = RunManifest {
            command: self.command.to_string(),
            config,
            seed: self.seed,
            inputs: show(&self.inputs),
            outputs: show(&self.outputs),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            duration_secs: self.started.elapsed().as_secs_f64(),
        };
        let text = serde_json::to_string_pretty(&manifest)?;
        for out in &self.outputs {
            let path = manifest_path(out);
            fs::write(&path, &text).with_context(|| format!("manifest: cannot write {}", path.display()))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file(text: &str) -> ConfigFile {
        ConfigFile {
            table: text.parse().unwrap(),
            path: None,
        }
    }

    #[test]
    fn precedence() {
        let f = file("budget = 7\nseed = 3\n[search]\nbudget = 9\n");
        let mut r = Resolver::new(&f, "search");
        assert_eq!(r.get("budget", Some(1usize), 0).unwrap(), 1);
        assert_eq!(r.get("budget", None::<usize>, 0).unwrap(), 9);
        assert_eq!(r.get("seed", None::<u64>, 0).unwrap(), 3);
        assert_eq!(r.get("alpha", None::<f64>, 0.5).unwrap(), 0.5);
        let mut r = Resolver::new(&f, "eval");
        assert_eq!(r.get("budget", None::<usize>, 0).unwrap(), 7);
        assert!(r.req::<String>("corpus", None).is_err());
        let snap = r.snapshot();
        assert_eq!(snap["budget"], 7);
    }

    #[test]
    fn bad_types_are_reported() {
        let f = file("[search]\nbudget = \"many\"\n");
        let mut r = Resolver::new(&f, "search");
        let e = r.get("budget", None::<usize>, 0).unwrap_err();
        assert!(e.to_string().contains("search.budget"));
    }

    #[test]
    fn manifest_sits_next_to_output() {
        assert_eq!(manifest_path(Path::new("out/a.csv")), PathBuf::from("out/a.csv.manifest.json"));
    }
}
