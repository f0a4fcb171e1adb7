//! Output directory handling: CSV files with a provenance header, summary
//! JSON and the run manifest.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn config_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Everything that identifies a run. The timestamp is informational only and
/// never written into data files.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config_hash: String,
    pub base_seed: u64,
    pub version: String,
    pub timestamp: u64,
}

impl RunManifest {
    pub fn new(subcommand: &str, config_text: &str, base_seed: u64) -> Self {
        RunManifest {
            subcommand: subcommand.to_string(),
            config_hash: config_hash(config_text),
            base_seed,
            version: format!("cavcool {}", env!("CARGO_PKG_VERSION")),
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        }
    }

    fn header(&self) -> String {
        format!(
            "# {} {} config_sha256={} seed={}",
            self.version, self.subcommand, self.config_hash, self.base_seed
        )
    }
}

pub struct Output {
    dir: PathBuf,
    pub manifest: RunManifest,
    written: Vec<PathBuf>,
}

impl Output {
    pub fn create(dir: &Path, manifest: RunManifest) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Output { dir: dir.to_path_buf(), manifest, written: Vec::new() })
    }

    /// Writes `rows` under a header comment and the column-name row.
    pub fn csv<R: AsRef<[String]>>(&mut self, name: &str, columns: &[&str], rows: &[R]) -> io::Result<()> {
        let mut text = String::new();
        writeln!(text, "{}", self.manifest.header()).unwrap();
        writeln!(text, "{}", columns.join(",")).unwrap();
        for r in rows {
            writeln!(text, "{}", r.as_ref().join(",")).unwrap();
        }
        self.write(name, &text)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> io::Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
        text.push('\n');
        self.write(name, &text)
    }

    fn write(&mut self, name: &str, text: &str) -> io::Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, text)?;
        self.written.push(path);
        Ok(())
    }

    pub fn finish(self) -> io::Result<Vec<PathBuf>> {
        let mut text = serde_json::to_string_pretty(&self.manifest).map_err(io::Error::other)?;
        text.push('\n');
        fs::write(self.dir.join("manifest.json"), text)?;
        Ok(self.written)
    }
}

/// Shortest round-trip formatting; infinite values print as `inf`.
pub fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}
