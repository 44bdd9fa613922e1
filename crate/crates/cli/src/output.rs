//! Run manifests and atomic output files.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use cobra_core::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};
use tempfile::NamedTempFile;

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// Provenance block embedded in every report.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config: serde_json::Value,
    pub inputs: Vec<InputDigest>,
    pub seed: Option<u64>,
    pub started_at: String,
    pub finished_at: String,
}

/// Current time, or `SOURCE_DATE_EPOCH` when set so reports are reproducible.
pub fn timestamp() -> String {
    let fixed = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.trim().parse::<i64>().ok())
        .and_then(|secs| DateTime::<Utc>::from_timestamp(secs, 0));
    fixed
        .unwrap_or_else(Utc::now)
        .to_rfc3339_opts(SecondsFormat::Secs, true)
}

pub fn digest(path: &Path) -> Result<InputDigest> {
    let bytes = fs::read(path).map_err(|e| Error::Io {
        context: format!("cannot read {}", path.display()),
        source: e,
    })?;
    Ok(InputDigest {
        path: path.display().to_string(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

pub struct ManifestBuilder {
    command: String,
    config: serde_json::Value,
    inputs: Vec<InputDigest>,
    seed: Option<u64>,
    started_at: String,
}

impl ManifestBuilder {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            config: serde_json::Value::Null,
            inputs: Vec::new(),
            seed: None,
            started_at: timestamp(),
        }
    }

    pub fn config(&mut self, config: &impl Serialize) -> &mut Self {
        self.config = serde_json::to_value(config).expect("config serialises");
        self
    }

    pub fn seed(&mut self, seed: u64) -> &mut Self {
        self.seed = Some(seed);
        self
    }

    pub fn input(&mut self, path: &Path) -> Result<&mut Self> {
        self.inputs.push(digest(path)?);
        Ok(self)
    }

    pub fn finish(&self) -> RunManifest {
        RunManifest {
            command: self.command.clone(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config: self.config.clone(),
            inputs: self.inputs.clone(),
            seed: self.seed,
            started_at: self.started_at.clone(),
            finished_at: timestamp(),
        }
    }
}

/// Output directory; every file is written to a temporary file and renamed.
pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| Error::Io {
            context: format!("cannot create {}", root.display()),
            source: e,
        })?;
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&self, name: &str, body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
        let target = self.path(name);
        let io_err = |e: std::io::Error| Error::Io {
            context: format!("cannot write {}", target.display()),
            source: e,
        };
        let tmp = temp_file(&self.root).map_err(io_err)?;
        {
            let mut w = BufWriter::new(tmp.as_file());
            body(&mut w)?;
            w.flush().map_err(io_err)?;
        }
        tmp.as_file().sync_all().map_err(io_err)?;
        tmp.persist(&target).map_err(|e| io_err(e.error))?;
        Ok(())
    }

    pub fn write_json(&self, name: &str, value: &impl Serialize) -> Result<()> {
        let text =
            serde_json::to_string_pretty(value).map_err(|e| Error::Config(format!("cannot serialise {name}: {e}")))?;
        self.write(name, |w| {
            w.write_all(text.as_bytes())
                .and_then(|_| w.write_all(b"\n"))
                .map_err(|e| Error::Io {
                    context: format!("cannot write {name}"),
                    source: e,
                })
        })
    }

    pub fn write_csv(&self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        self.write(name, |w| {
            let mut out = csv::Writer::from_writer(w);
            let fail = |e: csv::Error| Error::Io {
                context: format!("cannot write {name}"),
                source: std::io::Error::other(e.to_string()),
            };
            out.write_record(header).map_err(fail)?;
            for row in rows {
                out.write_record(row).map_err(fail)?;
            }
            out.flush().map_err(|e| Error::Io {
                context: format!("cannot write {name}"),
                source: e,
            })
        })
    }
}

#[cfg(unix)]
fn temp_file(dir: &Path) -> std::io::Result<NamedTempFile> {
    use std::os::unix::fs::PermissionsExt;
    tempfile::Builder::new()
        .prefix(".cobra-")
        .permissions(fs::Permissions::from_mode(0o644))
        .tempfile_in(dir)
}

#[cfg(not(unix))]
fn temp_file(dir: &Path) -> std::io::Result<NamedTempFile> {
    tempfile::Builder::new().prefix(".cobra-").tempfile_in(dir)
}

/// Report body with the manifest in front.
#[derive(Serialize)]
pub struct Report<'a, T: Serialize> {
    pub manifest: &'a RunManifest,
    #[serde(flatten)]
    pub body: T,
}
