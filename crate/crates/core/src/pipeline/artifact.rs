//! Artifact files stamped with the resolved configuration, the seed and a
//! git-style content hash.
//!
//! JSON artifacts are objects with `artifact`, `seed`, `content_sha256`,
//! `config` and `data` keys; the hash covers the compact JSON of `data`.
//! Delimited-text artifacts carry the same metadata as leading `#` lines and
//! the hash covers the body below them.

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use super::config::PipelineConfig;
use crate::error::{Error, Result};

/// SHA-256 of `blob <len>\0<bytes>`, as `git hash-object` computes with
/// SHA-256 object format.
pub fn git_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone)]
pub struct ArtifactWriter {
    dir: PathBuf,
    config: serde_json::Value,
    seed: u64,
}

impl ArtifactWriter {
    pub fn new(cfg: &PipelineConfig) -> Result<Self> {
        std::fs::create_dir_all(&cfg.workdir).map_err(|e| Error::io(&cfg.workdir, e))?;
        Ok(Self {
            dir: cfg.workdir.clone(),
            config: serde_json::to_value(cfg)?,
            seed: cfg.seed,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn put(&self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.path(name);
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        log::info!("wrote {}", path.display());
        Ok(path)
    }

    pub fn json<T: Serialize>(&self, name: &str, data: &T) -> Result<PathBuf> {
        let data = serde_json::to_value(data)?;
        let hash = git_hash(&serde_json::to_vec(&data)?);
        let doc = json!({
            "artifact": name,
            "seed": self.seed,
            "content_sha256": hash,
            "config": self.config,
            "data": data,
        });
        let mut bytes = serde_json::to_vec_pretty(&doc)?;
        bytes.push(b'\n');
        self.put(name, &bytes)
    }

    /// Writes `body` below the metadata lines plus any extra `key: value`
    /// lines.
    pub fn text(&self, name: &str, body: &[u8], extra: &[(&str, String)]) -> Result<PathBuf> {
        let mut out = String::new();
        out.push_str(&format!("# artifact: {name}\n# seed: {}\n", self.seed));
        out.push_str(&format!("# content_sha256: {}\n", git_hash(body)));
        out.push_str(&format!("# config: {}\n", serde_json::to_string(&self.config)?));
        for (k, v) in extra {
            out.push_str(&format!("# {k}: {v}\n"));
        }
        let mut bytes = out.into_bytes();
        bytes.extend_from_slice(body);
        self.put(name, &bytes)
    }

    /// Binary files get a `<name>.meta.json` sidecar with the metadata, the
    /// hash of the file and an optional hash of the inputs it was built from.
    pub fn binary(&self, name: &str, bytes: &[u8], inputs_sha256: Option<&str>) -> Result<PathBuf> {
        let path = self.put(name, bytes)?;
        let meta = json!({
            "artifact": name,
            "seed": self.seed,
            "content_sha256": git_hash(bytes),
            "inputs_sha256": inputs_sha256,
            "config": self.config,
        });
        let mut m = serde_json::to_vec_pretty(&meta)?;
        m.push(b'\n');
        self.put(&format!("{name}.meta.json"), &m)?;
        Ok(path)
    }
}

/// Reads `inputs_sha256` from the sidecar of a binary artifact.
pub fn sidecar_inputs_hash(path: &Path) -> Option<String> {
    let mut meta = path.as_os_str().to_owned();
    meta.push(".meta.json");
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(meta).ok()?).ok()?;
    v.get("inputs_sha256")?.as_str().map(str::to_string)
}
