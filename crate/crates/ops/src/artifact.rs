//! Checksummed text artifacts.
//!
//! Every file written by this crate starts with one header line
//!
//! ```text
//! # pebble:<kind> version=<n> sha256=<hex>
//! ```
//!
//! where the digest covers every byte after the newline that ends the
//! header. Readers reject a wrong kind, an unsupported version or a digest
//! mismatch before parsing the body.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{OpsError, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn header(kind: &str, version: u32, body: &[u8]) -> String {
    format!("# pebble:{kind} version={version} sha256={}\n", sha256_hex(body))
}

/// Header plus body, ready to write.
pub fn encode(kind: &str, version: u32, body: &[u8]) -> Vec<u8> {
    let mut out = header(kind, version, body).into_bytes();
    out.extend_from_slice(body);
    out
}

pub fn write(path: &Path, kind: &str, version: u32, body: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| OpsError::io(dir, e))?;
    }
    fs::write(path, encode(kind, version, body)).map_err(|e| OpsError::io(path, e))
}

/// Splits and verifies an encoded artifact, returning its body.
pub fn decode<'a>(path: &Path, kind: &str, version: u32, bytes: &'a [u8]) -> Result<&'a [u8]> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| OpsError::format(path, "missing artifact header"))?;
    let head = std::str::from_utf8(&bytes[..nl]).map_err(|e| OpsError::format(path, e))?;
    let body = &bytes[nl + 1..];
    let mut parts = head.split_whitespace();
    let tag = (parts.next(), parts.next());
    let expected_tag = format!("pebble:{kind}");
    if tag != (Some("#"), Some(expected_tag.as_str())) {
        return Err(OpsError::format(path, format!("expected a `{expected_tag}` artifact, found `{head}`")));
    }
    let mut found_version = None;
    let mut digest = None;
    for field in parts {
        match field.split_once('=') {
            Some(("version", v)) => found_version = v.parse::<u32>().ok(),
            Some(("sha256", d)) => digest = Some(d.to_string()),
            _ => return Err(OpsError::format(path, format!("unexpected header field `{field}`"))),
        }
    }
    match found_version {
        Some(v) if v == version => {}
        Some(v) => {
            return Err(OpsError::format(path, format!("schema version {v} is not supported (expected {version})")));
        }
        None => return Err(OpsError::format(path, "header has no version")),
    }
    let expected = digest.ok_or_else(|| OpsError::format(path, "header has no sha256"))?;
    let actual = sha256_hex(body);
    if expected != actual {
        return Err(OpsError::Checksum {
            path: path.to_path_buf(),
            expected,
            actual,
        });
    }
    Ok(body)
}

pub fn read(path: &Path, kind: &str, version: u32) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| OpsError::io(path, e))?;
    decode(path, kind, version, &bytes).map(<[u8]>::to_vec)
}

/// JSON body helpers for artifacts whose payload is a serde value.
pub fn write_json<T: serde::Serialize>(path: &Path, kind: &str, version: u32, value: &T) -> Result<()> {
    let body = serde_json::to_vec_pretty(value).map_err(|e| OpsError::format(path, e))?;
    write(path, kind, version, &body)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path, kind: &str, version: u32) -> Result<T> {
    let body = read(path, kind, version)?;
    serde_json::from_slice(&body).map_err(|e| OpsError::format(path, e))
}
