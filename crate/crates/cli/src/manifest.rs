//! Per-stage run manifest. The digest covers the stage, library version,
//! resolved settings, input and output content hashes and diagnostics;
//! timings, thread count and paths are recorded but left out of it.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use pcinf_core::Diagnostic;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::failure::{Failure, Outcome, StageExt};

fn sha256(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Serialize)]
struct Body<'a> {
    stage: &'a str,
    version: &'a str,
    config: &'a BTreeMap<String, Value>,
    inputs: &'a BTreeMap<String, String>,
    outputs: &'a BTreeMap<String, String>,
    diagnostics: &'a [Diagnostic],
}

#[derive(Serialize)]
struct Manifest<'a> {
    digest: String,
    #[serde(flatten)]
    body: Body<'a>,
    timings_ms: &'a BTreeMap<String, f64>,
    jobs: usize,
}

pub struct Recorder {
    stage: &'static str,
    out_dir: PathBuf,
    config: BTreeMap<String, Value>,
    inputs: BTreeMap<String, String>,
    input_paths: Vec<PathBuf>,
    outputs: BTreeMap<String, String>,
    diagnostics: Vec<Diagnostic>,
    timings: BTreeMap<String, f64>,
}

impl Recorder {
    pub fn new(stage: &'static str, out_dir: &Path) -> Outcome<Self> {
        std::fs::create_dir_all(out_dir).map_err(|e| Failure::io(stage, out_dir.display(), e))?;
        Ok(Self {
            stage,
            out_dir: out_dir.to_path_buf(),
            config: BTreeMap::new(),
            inputs: BTreeMap::new(),
            input_paths: Vec::new(),
            outputs: BTreeMap::new(),
            diagnostics: Vec::new(),
            timings: BTreeMap::new(),
        })
    }

    pub fn stage(&self) -> &'static str {
        self.stage
    }

    pub fn setting(&mut self, key: &str, value: impl Serialize) {
        let value = serde_json::to_value(value).unwrap_or(Value::Null);
        self.config.insert(key.to_string(), value);
    }

    /// Reads a whole input file and records its hash.
    pub fn read_input(&mut self, role: &str, path: &Path) -> Outcome<Vec<u8>> {
        let bytes = std::fs::read(path).map_err(|e| Failure::io(self.stage, path.display(), e))?;
        self.inputs.insert(role.to_string(), sha256(&bytes));
        self.input_paths.push(std::fs::canonicalize(path).unwrap_or_else(|_| path.to_path_buf()));
        Ok(bytes)
    }

    /// Renders an output into memory, hashes it and writes it to the
    /// output directory. Refuses to overwrite an input.
    pub fn write(
        &mut self,
        name: &str,
        render: impl FnOnce(&mut Vec<u8>) -> pcinf_core::Result<()>,
    ) -> Outcome<()> {
        let mut bytes = Vec::new();
        render(&mut bytes).stage(self.stage)?;
        let path = self.out_dir.join(name);
        if let Ok(existing) = std::fs::canonicalize(&path) {
            if self.input_paths.contains(&existing) {
                return Err(Failure::config(
                    self.stage,
                    format!("output {} would overwrite an input", path.display()),
                ));
            }
        }
        std::fs::write(&path, &bytes).map_err(|e| Failure::io(self.stage, path.display(), e))?;
        log::info!("wrote {} ({} bytes)", path.display(), bytes.len());
        self.outputs.insert(name.to_string(), sha256(&bytes));
        Ok(())
    }

    pub fn timed<T>(&mut self, label: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let value = f();
        self.timings
            .insert(label.to_string(), start.elapsed().as_secs_f64() * 1e3);
        value
    }

    pub fn diagnose(&mut self, diagnostics: impl IntoIterator<Item = Diagnostic>) {
        for d in diagnostics {
            log::warn!("{d}");
            self.diagnostics.push(d);
        }
    }

    /// Writes `manifest_<stage>.json` and returns the digest.
    pub fn finish(self, jobs: usize) -> Outcome<String> {
        let body = Body {
            stage: self.stage,
            version: env!("CARGO_PKG_VERSION"),
            config: &self.config,
            inputs: &self.inputs,
            outputs: &self.outputs,
            diagnostics: &self.diagnostics,
        };
        let digest = sha256(&serde_json::to_vec(&body).expect("manifest body serializes"));
        let manifest = Manifest {
            digest: digest.clone(),
            body,
            timings_ms: &self.timings,
            jobs,
        };
        let path = self.out_dir.join(format!("manifest_{}.json", self.stage));
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Failure::io(self.stage, path.display(), e))?;
        Ok(digest)
    }
}
