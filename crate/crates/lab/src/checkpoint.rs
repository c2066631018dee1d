//! Checkpoints: parameter tensors in one binary file plus a JSON sidecar
//! (`<file>.json`) holding the network spec and integrity hashes.

use std::path::{Path, PathBuf};

use bplab_core::{Network, NetworkSpec};
use serde::{Deserialize, Serialize};

use crate::artifacts::{json_hash, read_json, sha256_hex, to_pretty_json, write_atomic};
use crate::error::{LabError, Result};
use crate::tensor_io::{decode_tensors, encode_tensors};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub format_version: u32,
    pub spec: NetworkSpec,
    pub spec_hash: String,
    /// sha256 of the binary parameter file.
    pub checksum: String,
    pub tensors: usize,
}

pub fn spec_hash(spec: &NetworkSpec) -> String {
    json_hash(spec)
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Binary parameter file contents and its sidecar.
pub fn encode_checkpoint(net: &Network) -> (Vec<u8>, Sidecar) {
    let params = net.parameters();
    let bytes = encode_tensors(&params);
    let sidecar = Sidecar {
        format_version: FORMAT_VERSION,
        spec: net.spec().clone(),
        spec_hash: spec_hash(net.spec()),
        checksum: sha256_hex(&bytes),
        tensors: params.len(),
    };
    (bytes, sidecar)
}

/// Writes `path` and `path.json`; returns the parameter checksum.
pub fn save_checkpoint(net: &Network, path: &Path) -> Result<String> {
    let (bytes, sidecar) = encode_checkpoint(net);
    write_atomic(path, &bytes)?;
    write_atomic(&sidecar_path(path), &to_pretty_json(&sidecar))?;
    Ok(sidecar.checksum)
}

pub fn load_checkpoint(path: &Path) -> Result<Network> {
    let sidecar: Sidecar = read_json(&sidecar_path(path))?;
    load_with_sidecar(path, &sidecar)
}

/// Loads a checkpoint and insists it was saved for `spec`.
pub fn load_checkpoint_for(path: &Path, spec: &NetworkSpec) -> Result<Network> {
    let sidecar: Sidecar = read_json(&sidecar_path(path))?;
    let expected = spec_hash(spec);
    if sidecar.spec_hash != expected {
        return Err(LabError::SpecMismatch {
            expected,
            found: sidecar.spec_hash,
        });
    }
    load_with_sidecar(path, &sidecar)
}

fn load_with_sidecar(path: &Path, sidecar: &Sidecar) -> Result<Network> {
    if sidecar.format_version != FORMAT_VERSION {
        return Err(LabError::format(
            path,
            format!("unsupported format version {}", sidecar.format_version),
        ));
    }
    let actual = spec_hash(&sidecar.spec);
    if actual != sidecar.spec_hash {
        return Err(LabError::SpecMismatch {
            expected: sidecar.spec_hash.clone(),
            found: actual,
        });
    }
    let bytes = std::fs::read(path).map_err(|e| LabError::io(path, e))?;
    if sha256_hex(&bytes) != sidecar.checksum {
        return Err(LabError::format(
            path,
            "parameter checksum does not match sidecar",
        ));
    }
    let tensors = decode_tensors(&bytes, path)?;
    let mut net = bplab_core::network::build(&sidecar.spec)?;
    net.set_parameters(&tensors)
        .map_err(|e| LabError::format(path, format!("parameters do not fit the spec: {e}")))?;
    Ok(net)
}
