use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nvphasor::lineshape::QuadratureSpectrum;
use nvphasor::report::{InputDigest, Provenance};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::failure::Failure;

pub const TOOL: &str = "nvphasor";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// A file read once, kept with its digest for provenance.
pub struct Input {
    pub path: PathBuf,
    pub text: String,
    pub sha256: String,
}

impl Input {
    pub fn read(path: &Path) -> Result<Self, Failure> {
        let bytes = fs::read(path).map_err(|e| Failure::read(path, e))?;
        let sha256 = sha256_hex(&bytes);
        let text = String::from_utf8(bytes).map_err(|_| {
            Failure::parse(
                path,
                nvphasor::Error::Parse {
                    line: 0,
                    message: "file is not valid UTF-8".into(),
                },
            )
        })?;
        Ok(Self {
            path: path.to_path_buf(),
            text,
            sha256,
        })
    }

    pub fn digest(&self) -> InputDigest {
        InputDigest {
            path: self.path.display().to_string(),
            sha256: self.sha256.clone(),
        }
    }

    pub fn spectrum(&self) -> Result<QuadratureSpectrum, Failure> {
        nvphasor::io::parse_spectrum_csv(&self.text).map_err(|e| Failure::parse(&self.path, e))
    }

    /// File name without directories and without `suffix` (or the last
    /// extension when `suffix` does not match).
    pub fn stem(&self, suffix: &str) -> String {
        let name = self
            .path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        match name.strip_suffix(suffix) {
            Some(s) if !s.is_empty() => s.to_string(),
            _ => self
                .path
                .file_stem()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or(name),
        }
    }
}

pub fn provenance(config: &Input, inputs: &[&Input]) -> Provenance {
    Provenance {
        tool: TOOL.into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        config_sha256: config.sha256.clone(),
        inputs: inputs.iter().map(|i| i.digest()).collect(),
    }
}

/// Output directory, created on demand.
pub struct OutDir(PathBuf);

impl OutDir {
    pub fn create(path: &Path) -> Result<Self, Failure> {
        fs::create_dir_all(path).map_err(|e| Failure::write(path, e))?;
        Ok(Self(path.to_path_buf()))
    }

    pub fn join(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }

    /// Writes through a temporary file in the same directory and renames it
    /// into place, so readers never see a partial file.
    pub fn write(&self, name: &str, contents: &[u8]) -> Result<PathBuf, Failure> {
        let target = self.join(name);
        let mut tmp =
            tempfile::NamedTempFile::new_in(&self.0).map_err(|e| Failure::write(&target, e))?;
        tmp.write_all(contents)
            .map_err(|e| Failure::write(&target, e))?;
        tmp.as_file()
            .sync_all()
            .map_err(|e| Failure::write(&target, e))?;
        tmp.persist(&target)
            .map_err(|e| Failure::write(&target, e.error))?;
        Ok(target)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, Failure> {
        let mut text = serde_json::to_string_pretty(value).map_err(nvphasor::Error::from)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }
}
