use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    format_version: u32,
    kind: String,
    payload: T,
}

#[derive(Deserialize)]
struct Header {
    format_version: u32,
    kind: String,
}

/// Writes a JSON checkpoint `{format_version, kind, payload}`.
pub fn save_checkpoint<T: Serialize>(path: &Path, kind: &str, payload: &T) -> Result<()> {
    let env = Envelope {
        format_version: FORMAT_VERSION,
        kind: kind.to_string(),
        payload,
    };
    let text = serde_json::to_string(&env).map_err(|e| Error::serde(path, e))?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads a checkpoint written by [`save_checkpoint`], checking version and kind.
pub fn load_checkpoint<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let header: Header = serde_json::from_str(&text).map_err(|e| Error::serde(path, e))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::serde(
            path,
            format!("unsupported format_version {}", header.format_version),
        ));
    }
    if header.kind != kind {
        return Err(Error::serde(path, format!("expected `{kind}` checkpoint, found `{}`", header.kind)));
    }
    let env: Envelope<T> = serde_json::from_str(&text).map_err(|e| Error::serde(path, e))?;
    Ok(env.payload)
}
