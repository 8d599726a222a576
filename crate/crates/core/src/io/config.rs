//! Strict JSON run configuration.

use std::path::Path;

use crate::error::{Error, Result};
use crate::training::trainer::TrainConfig;

/// Parses and validates a training config. Missing keys take their
/// defaults; unknown keys and type errors are reported with a JSON pointer.
pub fn parse_config(json: &str) -> Result<TrainConfig> {
    let de = &mut serde_json::Deserializer::from_str(json);
    let cfg: TrainConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::Schema {
            pointer: pointer_of(&path),
            msg: e.into_inner().to_string(),
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// `model.layers[2].kind` -> `/model/layers/2/kind`; `.` (root) -> ``.
fn pointer_of(path: &str) -> String {
    if path == "." {
        return String::new();
    }
    let mut out = String::new();
    for seg in path.split('.') {
        let mut rest = seg;
        while let Some(i) = rest.find('[') {
            if i > 0 {
                out.push('/');
                out.push_str(&rest[..i]);
            }
            let j = rest[i..].find(']').map(|j| i + j).unwrap_or(rest.len());
            out.push('/');
            out.push_str(&rest[i + 1..j]);
            rest = rest.get(j + 1..).unwrap_or("");
        }
        if !rest.is_empty() {
            out.push('/');
            out.push_str(rest);
        }
    }
    out
}

pub fn load_config(path: &Path) -> Result<TrainConfig> {
    parse_config(&std::fs::read_to_string(path)?)
}
