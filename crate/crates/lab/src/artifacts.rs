//! Atomic file output, hashing, metric reports and run manifests.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{LabError, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of the compact JSON encoding of `value`.
pub fn json_hash<T: Serialize>(value: &T) -> String {
    sha256_hex(&serde_json::to_vec(value).expect("serializable value"))
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| LabError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| LabError::io(path, e))?;
    tmp.persist(path).map_err(|e| LabError::io(path, e.error))?;
    Ok(())
}

pub fn to_pretty_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("serializable value");
    v.push(b'\n');
    v
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| LabError::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|source| LabError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Seconds since the Unix epoch, taken from `SOURCE_DATE_EPOCH` when set so
/// reruns can be made byte-identical.
pub fn timestamp() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or_else(|| {
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map_or(0, |d| d.as_secs())
        })
}

/// One measured quantity with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    /// Scalar, list or object, depending on the metric.
    pub payload: serde_json::Value,
    /// Hash of everything that determines the payload.
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    /// Unix seconds. Not part of `config_hash`.
    pub timestamp: u64,
}

impl MetricReport {
    pub fn new<C: Serialize>(
        metric: &str,
        payload: serde_json::Value,
        config: &C,
        seeds: &[(&str, u64)],
    ) -> Self {
        MetricReport {
            metric: metric.to_string(),
            payload,
            config_hash: json_hash(&(metric, config)),
            seeds: seeds.iter().map(|&(k, v)| (k.to_string(), v)).collect(),
            timestamp: timestamp(),
        }
    }
}

/// Record of one command invocation and the files it produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub flags: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    pub git_describe: String,
    /// File name (relative to the output directory) to sha256.
    pub outputs: BTreeMap<String, String>,
}

/// `git describe --always --dirty`, or `"unknown"` outside a work tree.
pub fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

/// Collects outputs of one command and writes them with a manifest.
#[derive(Debug)]
pub struct OutputDir {
    dir: PathBuf,
    outputs: BTreeMap<String, String>,
}

impl OutputDir {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        OutputDir {
            dir: dir.into(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        write_atomic(&path, bytes)?;
        self.outputs.insert(name.to_string(), sha256_hex(bytes));
        Ok(path)
    }

    /// Lists a file written by other means under its known hash.
    pub fn record(&mut self, name: &str, sha256: &str) {
        self.outputs.insert(name.to_string(), sha256.to_string());
    }

    /// Lists an existing file in the output directory, hashing it.
    pub fn record_file(&mut self, name: &str) -> Result<()> {
        let path = self.dir.join(name);
        let bytes = std::fs::read(&path).map_err(|e| LabError::io(&path, e))?;
        self.record(name, &sha256_hex(&bytes));
        Ok(())
    }

    /// Writes a report; its hash covers everything but the timestamp.
    pub fn write_report(&mut self, name: &str, report: &MetricReport) -> Result<PathBuf> {
        let path = self.dir.join(name);
        write_atomic(&path, &to_pretty_json(report))?;
        let stable = MetricReport {
            timestamp: 0,
            ..report.clone()
        };
        self.outputs
            .insert(name.to_string(), sha256_hex(&to_pretty_json(&stable)));
        Ok(path)
    }

    pub fn finish(
        self,
        command: &str,
        flags: BTreeMap<String, String>,
        seeds: BTreeMap<String, u64>,
    ) -> Result<Manifest> {
        let manifest = Manifest {
            command: command.to_string(),
            flags,
            seeds,
            git_describe: git_describe(),
            outputs: self.outputs,
        };
        write_atomic(&self.dir.join("manifest.json"), &to_pretty_json(&manifest))?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn report_hash_ignores_timestamp() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = MetricReport::new("m", serde_json::json!(1.5), &("cfg", 3), &[("seed", 3)]);
        let mut out = OutputDir::new(dir.path());
        out.write_report("a.json", &a).unwrap();
        a.timestamp += 100;
        out.write_report("b.json", &a).unwrap();
        let m = out
            .finish("test", BTreeMap::new(), BTreeMap::new())
            .unwrap();
        assert_eq!(m.outputs["a.json"], m.outputs["b.json"]);
        let back: MetricReport = read_json(&dir.path().join("b.json")).unwrap();
        assert_eq!(back, a);
    }
}
