//! Artifact assembly. Everything is built in memory and written only after the
//! run succeeds, so a failed run leaves no partial outputs.

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::error::CliResult;

pub const DIGEST_PREFIX: &str = "# config_sha256=";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Content hash of the resolved configuration of a run.
pub fn config_digest<T: Serialize>(command: &str, cfg: &T) -> CliResult<String> {
    let canonical = serde_json::to_vec(&json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "config": cfg,
    }))?;
    Ok(sha256_hex(&canonical))
}

/// Outputs of one run, plus the derived quantities recorded in the manifest.
#[derive(Debug, Default)]
pub struct Outputs {
    pub files: Vec<(String, Vec<u8>)>,
    pub derived: Map<String, Value>,
    digest: String,
}

impl Outputs {
    pub fn new(digest: &str) -> Self {
        Self {
            digest: digest.to_string(),
            ..Self::default()
        }
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    /// CSV with a leading digest comment and a header row.
    pub fn csv<R: Serialize>(&mut self, name: &str, rows: impl IntoIterator<Item = R>) -> CliResult<()> {
        let mut buf = format!("{DIGEST_PREFIX}{}\n", self.digest).into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            for r in rows {
                w.serialize(r)?;
            }
            w.flush()?;
        }
        self.files.push((name.to_string(), buf));
        Ok(())
    }

    pub fn json<V: Serialize>(&mut self, name: &str, value: &V) -> CliResult<()> {
        let mut buf = serde_json::to_vec_pretty(&json!({
            "config_sha256": self.digest,
            "result": value,
        }))?;
        buf.push(b'\n');
        self.files.push((name.to_string(), buf));
        Ok(())
    }

    pub fn derive<V: Serialize>(&mut self, key: &str, value: V) -> CliResult<()> {
        self.derived.insert(key.to_string(), serde_json::to_value(value)?);
        Ok(())
    }
}

/// `--out`, else `SHFLAB_OUT`, else `./shflab-out`.
pub fn resolve_out(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os("SHFLAB_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("shflab-out"))
}

pub struct ManifestInfo<'a, C: Serialize> {
    pub command: &'a str,
    pub config: &'a C,
    pub seed: u64,
}

/// Writes the artifacts followed by `manifest.json`.
pub fn write_run<C: Serialize>(dir: &Path, out: &Outputs, info: ManifestInfo<C>) -> CliResult<()> {
    std::fs::create_dir_all(dir)?;
    let mut artifacts = Vec::new();
    for (name, bytes) in &out.files {
        std::fs::write(dir.join(name), bytes)?;
        artifacts.push(json!({ "name": name, "sha256": sha256_hex(bytes) }));
    }
    let manifest = json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "command": info.command,
        "config_sha256": out.digest,
        "config": info.config,
        "seed": info.seed,
        "derived": out.derived,
        "artifacts": artifacts,
    });
    let mut buf = serde_json::to_vec_pretty(&manifest)?;
    buf.push(b'\n');
    std::fs::write(dir.join("manifest.json"), buf)?;
    Ok(())
}
