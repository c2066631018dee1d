//! Network spec files. The reference architectures ship with the crate
//! and can be named by file name or preset name.

use std::path::Path;

use bplab_core::NetworkSpec;

use crate::artifacts::read_json;
use crate::error::{LabError, Result};

/// Shipped spec files, by file name.
pub const SHIPPED: [(&str, &str); 4] = [
    (
        "toy-vgg-baseline.json",
        include_str!("../specs/toy-vgg-baseline.json"),
    ),
    (
        "toy-vgg-aa-rect2.json",
        include_str!("../specs/toy-vgg-aa-rect2.json"),
    ),
    (
        "toy-vgg-aa-tri3.json",
        include_str!("../specs/toy-vgg-aa-tri3.json"),
    ),
    (
        "toy-vgg-aa-bin5.json",
        include_str!("../specs/toy-vgg-aa-bin5.json"),
    ),
];

pub fn parse_spec(text: &str, origin: &Path) -> Result<NetworkSpec> {
    serde_json::from_str(text).map_err(|source| LabError::Json {
        path: origin.to_path_buf(),
        source,
    })
}

/// Reads `arg` as a path when it exists, otherwise as the name of a shipped
/// spec (with or without `.json`).
pub fn load_spec(arg: &str) -> Result<NetworkSpec> {
    let path = Path::new(arg);
    if path.exists() {
        return read_json(path);
    }
    let file = path.file_name().and_then(|f| f.to_str()).unwrap_or(arg);
    let file = if file.ends_with(".json") {
        file.to_string()
    } else {
        format!("{file}.json")
    };
    SHIPPED
        .iter()
        .find(|(name, _)| *name == file)
        .map(|(name, text)| parse_spec(text, Path::new(name)))
        .unwrap_or_else(|| {
            Err(LabError::usage(
                "--spec",
                format!("no such file or shipped spec: {arg}"),
            ))
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use bplab_core::network::presets::preset;

    #[test]
    fn shipped_files_match_presets() {
        for (file, text) in SHIPPED {
            let spec = parse_spec(text, Path::new(file)).unwrap();
            assert_eq!(Some(&spec), preset(&spec.name).as_ref(), "{file}");
            assert_eq!(format!("{}.json", spec.name), file);
        }
    }

    #[test]
    fn unknown_spec_is_a_usage_error() {
        assert!(matches!(
            load_spec("nope.json"),
            Err(LabError::Usage { .. })
        ));
        assert_eq!(
            load_spec("toy-vgg-aa-tri3").unwrap().name,
            "toy-vgg-aa-tri3"
        );
    }
}
