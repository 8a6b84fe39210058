//! Explicit dataset download. Nothing else in the project touches the
//! network.
//!
//! The manifest is TOML listing files to fetch into the data root:
//!
//! ```toml
//! [[file]]
//! url = "https://example.org/train-images-idx3-ubyte.gz"
//! sha256 = "<hex digest of the downloaded bytes>"
//! dest = "mnist/train-images-idx3-ubyte"
//! extract = "gunzip"   # none | gunzip | tar-gz (dest is then a directory)
//! ```

use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Extract {
    #[default]
    None,
    Gunzip,
    TarGz,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub url: String,
    pub sha256: String,
    pub dest: PathBuf,
    #[serde(default)]
    pub extract: Extract,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub file: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let m: Manifest = toml::from_str(text).map_err(|e| HarnessError::Config(format!("manifest: {e}")))?;
        for e in &m.file {
            if e.sha256.len() != 64 || !e.sha256.chars().all(|c| c.is_ascii_hexdigit()) {
                return Err(HarnessError::Config(format!("{}: sha256 must be 64 hex digits", e.url)));
            }
            if e.dest.is_absolute() || e.dest.components().any(|c| matches!(c, std::path::Component::ParentDir)) {
                return Err(HarnessError::Config(format!("{}: dest must be relative to the data root", e.url)));
            }
        }
        Ok(m)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn verify_checksum(bytes: &[u8], expected: &str, what: &str) -> Result<()> {
    let actual = sha256_hex(bytes);
    if actual.eq_ignore_ascii_case(expected) {
        Ok(())
    } else {
        Err(HarnessError::Other(format!("checksum mismatch for {what}: expected {expected}, got {actual}")))
    }
}

/// Writes verified bytes into place under `root`.
pub fn install(bytes: &[u8], entry: &ManifestEntry, root: &Path) -> Result<()> {
    let dest = root.join(&entry.dest);
    let io = |e| HarnessError::io(format!("installing {}", dest.display()), e);
    match entry.extract {
        Extract::TarGz => {
            std::fs::create_dir_all(&dest).map_err(io)?;
            tar::Archive::new(GzDecoder::new(bytes)).unpack(&dest).map_err(io)
        }
        Extract::Gunzip | Extract::None => {
            if let Some(parent) = dest.parent() {
                std::fs::create_dir_all(parent).map_err(io)?;
            }
            let data = if entry.extract == Extract::Gunzip {
                let mut out = Vec::new();
                GzDecoder::new(bytes).read_to_end(&mut out).map_err(io)?;
                out
            } else {
                bytes.to_vec()
            };
            std::fs::write(&dest, data).map_err(io)
        }
    }
}

fn download(url: &str) -> Result<Vec<u8>> {
    let resp = ureq::get(url)
        .call()
        .map_err(|e| HarnessError::Other(format!("GET {url}: {e}")))?;
    let mut bytes = Vec::new();
    resp.into_reader()
        .read_to_end(&mut bytes)
        .map_err(|e| HarnessError::io(format!("reading {url}"), e))?;
    Ok(bytes)
}

/// Downloads, verifies and installs every manifest entry whose destination
/// is missing (or all of them with `force`).
pub fn fetch(manifest: &Manifest, root: &Path, force: bool) -> Result<usize> {
    let mut fetched = 0;
    for entry in &manifest.file {
        if !force && root.join(&entry.dest).exists() {
            log::info!("{} present, skipping", entry.dest.display());
            continue;
        }
        log::info!("fetching {}", entry.url);
        let bytes = download(&entry.url)?;
        verify_checksum(&bytes, &entry.sha256, &entry.url)?;
        install(&bytes, entry, root)?;
        fetched += 1;
    }
    Ok(fetched)
}
