//! Versioned binary container: `FDYN` magic, a little-endian `u32` header
//! length, a JSON header, then little-endian `f64` arrays back to back.
//!
//! The header always carries `fairdyn_schema`, a `kind` tag and the length of
//! every array, so a reader can reject foreign or truncated files before
//! touching the payload.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::SCHEMA_VERSION;

pub const MAGIC: &[u8; 4] = b"FDYN";

#[derive(Serialize, Deserialize)]
struct Envelope<H> {
    fairdyn_schema: u32,
    kind: String,
    array_lengths: Vec<usize>,
    meta: H,
}

pub fn encode<H: Serialize>(kind: &str, meta: &H, arrays: &[&[f64]]) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&Envelope {
        fairdyn_schema: SCHEMA_VERSION,
        kind: kind.to_string(),
        array_lengths: arrays.iter().map(|a| a.len()).collect(),
        meta,
    })?;
    let payload: usize = arrays.iter().map(|a| a.len() * 8).sum();
    let mut out = Vec::with_capacity(8 + header.len() + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for a in arrays {
        for v in *a {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode<H: DeserializeOwned>(kind: &str, bytes: &[u8], path: &Path) -> Result<(H, Vec<Vec<f64>>)> {
    let bad = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(bad("missing FDYN magic".into()));
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().expect("four bytes")) as usize;
    let body = bytes
        .get(8..8 + header_len)
        .ok_or_else(|| bad("truncated header".into()))?;
    let envelope: Envelope<serde_json::Value> =
        serde_json::from_slice(body).map_err(|e| bad(format!("bad header: {e}")))?;
    if envelope.fairdyn_schema != SCHEMA_VERSION {
        return Err(bad(format!(
            "schema version {} (expected {SCHEMA_VERSION})",
            envelope.fairdyn_schema
        )));
    }
    if envelope.kind != kind {
        return Err(bad(format!("contains `{}`, expected `{kind}`", envelope.kind)));
    }
    let mut rest = &bytes[8 + header_len..];
    let expected: usize = envelope.array_lengths.iter().map(|n| n * 8).sum();
    if rest.len() != expected {
        return Err(bad(format!("payload is {} bytes, header implies {expected}", rest.len())));
    }
    let mut arrays = Vec::with_capacity(envelope.array_lengths.len());
    for n in envelope.array_lengths {
        let (chunk, tail) = rest.split_at(n * 8);
        arrays.push(
            chunk
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
                .collect(),
        );
        rest = tail;
    }
    let meta = serde_json::from_value(envelope.meta).map_err(|e| bad(format!("bad header: {e}")))?;
    Ok((meta, arrays))
}

pub fn write_file<H: Serialize>(path: &Path, kind: &str, meta: &H, arrays: &[&[f64]]) -> Result<()> {
    let bytes = encode(kind, meta, arrays)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_file<H: DeserializeOwned>(path: &Path, kind: &str) -> Result<(H, Vec<Vec<f64>>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(kind, &bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Meta {
        dims: Vec<usize>,
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let a = [1.0, -0.0, f64::MIN_POSITIVE, 1e300];
        let b = [std::f64::consts::PI];
        let bytes = encode("thing", &Meta { dims: vec![4, 1] }, &[&a, &b]).unwrap();
        let (meta, arrays): (Meta, _) = decode("thing", &bytes, Path::new("mem")).unwrap();
        assert_eq!(meta.dims, vec![4, 1]);
        assert_eq!(arrays[0].iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                   a.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(arrays[1], b.to_vec());
    }

    #[test]
    fn foreign_and_truncated_files_are_rejected() {
        let bytes = encode("thing", &Meta { dims: vec![] }, &[&[1.0, 2.0]]).unwrap();
        let p = Path::new("mem");
        assert!(decode::<Meta>("other", &bytes, p).is_err());
        assert!(decode::<Meta>("thing", &bytes[..bytes.len() - 1], p).is_err());
        assert!(decode::<Meta>("thing", b"NOPE1234", p).is_err());
        let needle = b"\"fairdyn_schema\":1";
        let at = bytes.windows(needle.len()).position(|w| w == needle).unwrap();
        let mut tampered = bytes.clone();
        tampered[at + needle.len() - 1] = b'2';
        assert!(matches!(
            decode::<Meta>("thing", &tampered, p),
            Err(Error::Format { message, .. }) if message.contains("schema version 2")
        ));
    }
}
