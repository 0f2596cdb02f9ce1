use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Serialize)]
pub struct Artifact {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct ConfigEcho {
    /// `None` when the built-in example was used.
    pub path: Option<String>,
    pub sha256: String,
}

/// Record of one command run, written as `manifest.json` in the output
/// directory.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub versions: BTreeMap<&'static str, String>,
    pub command: Vec<String>,
    pub config: Option<ConfigEcho>,
    pub params: Option<serde_json::Value>,
    pub seed: Option<u64>,
    pub threads: usize,
    pub artifacts: Vec<Artifact>,
    pub timings_s: BTreeMap<String, f64>,
    pub checks: BTreeMap<String, bool>,
    pub status: &'static str,
    pub failure: Option<String>,
    #[serde(skip)]
    out: PathBuf,
}

impl RunManifest {
    pub fn new(out: &Path) -> Self {
        let mut versions = BTreeMap::new();
        versions.insert("fxmm", env!("CARGO_PKG_VERSION").to_string());
        versions.insert("control_cache", fxmm_core::io::CACHE_VERSION.to_string());
        Self {
            tool: "fxmm",
            versions,
            command: std::env::args().collect(),
            config: None,
            params: None,
            seed: None,
            threads: rayon::current_num_threads(),
            artifacts: Vec::new(),
            timings_s: BTreeMap::new(),
            checks: BTreeMap::new(),
            status: "ok",
            failure: None,
            out: out.to_path_buf(),
        }
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    /// Write `bytes` to `name` inside the output directory and list it.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> anyhow::Result<PathBuf> {
        let path = self.out.join(name);
        fs::write(&path, bytes).map_err(|e| anyhow::anyhow!("writing {}: {e}", path.display()))?;
        self.artifacts.push(Artifact {
            path: name.to_string(),
            bytes: bytes.len() as u64,
            sha256: sha256_hex(bytes),
        });
        Ok(path)
    }

    pub fn time(&mut self, phase: &str, seconds: f64) {
        self.timings_s.insert(phase.to_string(), seconds);
    }

    pub fn check(&mut self, name: &str, ok: bool) {
        self.checks.insert(name.to_string(), ok);
        if !ok && self.failure.is_none() {
            self.fail(format!("check failed: {name}"));
        }
    }

    pub fn fail(&mut self, reason: String) {
        self.status = "failed";
        self.failure.get_or_insert(reason);
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    pub fn finish(&self) -> anyhow::Result<()> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        fs::write(self.out.join("manifest.json"), text)?;
        Ok(())
    }
}
