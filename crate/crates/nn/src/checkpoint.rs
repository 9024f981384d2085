//! JSON checkpoints. Every file starts with a `format_version` field; floats
//! are written in shortest round-trip form so reloading is bit-exact.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    format_version: u32,
    #[serde(flatten)]
    body: T,
}

pub fn to_json<T: Serialize>(body: &T) -> Result<String> {
    serde_json::to_string_pretty(&Envelope { format_version: FORMAT_VERSION, body })
        .map_err(|e| NnError::Checkpoint(e.to_string()))
}

pub fn from_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    let env: Envelope<T> = serde_json::from_str(text).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    if env.format_version != FORMAT_VERSION {
        return Err(NnError::Checkpoint(format!(
            "unsupported format_version {} (expected {FORMAT_VERSION})",
            env.format_version
        )));
    }
    Ok(env.body)
}

pub fn save<T: Serialize>(path: &Path, body: &T) -> Result<()> {
    std::fs::write(path, to_json(body)?).map_err(|e| NnError::Checkpoint(format!("{}: {e}", path.display())))
}

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| NnError::Checkpoint(format!("{}: {e}", path.display())))?;
    from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Mlp, NetSpec, OutputActivation};

    #[test]
    fn round_trip_is_exact() {
        let net = Mlp::new(NetSpec::mlp(3, &[5], 2, OutputActivation::TanhUnit), 11).unwrap();
        let text = to_json(&net).unwrap();
        assert!(text.contains("\"format_version\": 1"));
        let back: Mlp = from_json(&text).unwrap();
        assert_eq!(back.params.to_flat(), net.params.to_flat());
        assert_eq!(back.spec, net.spec);
    }

    #[test]
    fn wrong_version_rejected() {
        let err = from_json::<serde_json::Value>("{\"format_version\": 7}").unwrap_err();
        assert!(err.to_string().contains("format_version 7"));
    }
}
