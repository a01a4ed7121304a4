//! Single-file container: a JSON header followed by a raw `f64` payload.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! bytes 0..8    magic  b"SQCXv1\0\0"
//! bytes 8..16   u64    header length H in bytes
//! bytes 16..16+H       UTF-8 JSON header
//! then                 payload, f64 little-endian, row-major
//! ```
//!
//! The payload length is implied by the remaining bytes and must be a
//! multiple of 8.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SQCXv1\0\0";

pub fn encode<H: Serialize>(header: &H, payload: &[f64]) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header)?;
    let mut out = Vec::with_capacity(16 + json.len() + payload.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode<H: DeserializeOwned>(bytes: &[u8]) -> Result<(H, Vec<f64>)> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = &bytes[16..];
    if hlen > body.len() {
        return Err(Error::Format(format!("header length {hlen} exceeds file")));
    }
    let header = serde_json::from_slice(&body[..hlen])?;
    let raw = &body[hlen..];
    if !raw.len().is_multiple_of(8) {
        return Err(Error::Format("payload is not a whole number of f64 values".into()));
    }
    let payload = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((header, payload))
}

pub fn write<H: Serialize>(path: &Path, header: &H, payload: &[f64]) -> Result<()> {
    std::fs::write(path, encode(header, payload)?).map_err(|e| Error::io(path, e))
}

pub fn read<H: DeserializeOwned>(path: &Path) -> Result<(H, Vec<f64>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip(payload in proptest::collection::vec(proptest::num::f64::ANY, 0..64), tag in "[a-z]{0,12}") {
            let bytes = encode(&serde_json::json!({ "tag": tag }), &payload).unwrap();
            let (h, back): (serde_json::Value, Vec<f64>) = decode(&bytes).unwrap();
            prop_assert_eq!(h["tag"].as_str().unwrap(), tag.as_str());
            prop_assert_eq!(back.len(), payload.len());
            for (a, b) in back.iter().zip(&payload) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn rejects_truncated_input() {
        let bytes = encode(&serde_json::json!({}), &[1.0, 2.0]).unwrap();
        assert!(decode::<serde_json::Value>(&bytes[..bytes.len() - 3]).is_err());
        assert!(decode::<serde_json::Value>(b"nope").is_err());
    }
}
