//! Checksummed binary container shared by datasets and checkpoints.
//!
//! ```text
//! magic "ORYXDS\0" | u16 version | u32 header_len | header (canonical JSON)
//! | payload | u32 CRC32 of everything before it
//! ```
//!
//! All integers are little-endian. The header is a JSON object with sorted
//! keys; it always carries `kind`, `precision` and `payload_bytes`, which
//! lets a short file be reported as truncated rather than corrupt.

use std::fs;
use std::path::Path;

use serde_json::{Map, Value};

use crate::error::{OryxError, Result};

pub const MAGIC: &[u8; 7] = b"ORYXDS\0";
pub const FORMAT_VERSION: u16 = 1;
pub const PRECISION: &str = "f64";

const PREFIX: usize = 7 + 2 + 4;

/// Serialises `header` (which must be a JSON object) with the container keys
/// added, then appends `payload` and the checksum.
pub fn encode(kind: &str, header: Value, payload: &[u8]) -> Result<Vec<u8>> {
    let Value::Object(mut map) = header else {
        return Err(OryxError::Header("header must be a JSON object".into()));
    };
    map.insert("kind".into(), kind.into());
    map.insert("precision".into(), PRECISION.into());
    map.insert("payload_bytes".into(), (payload.len() as u64).into());
    let json = serde_json::to_vec(&Value::Object(sorted(map)))
        .map_err(|e| OryxError::Header(e.to_string()))?;
    let mut out = Vec::with_capacity(PREFIX + json.len() + payload.len() + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(payload);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

fn sorted(map: Map<String, Value>) -> Map<String, Value> {
    let mut entries: Vec<(String, Value)> = map.into_iter().collect();
    entries.sort_by(|a, b| a.0.cmp(&b.0));
    entries.into_iter().map(|(k, v)| (k, canonical(v))).collect()
}

/// Recursively sorts object keys so serialisation is byte-stable.
pub fn canonical(v: Value) -> Value {
    match v {
        Value::Object(inner) => Value::Object(sorted(inner)),
        Value::Array(items) => Value::Array(items.into_iter().map(canonical).collect()),
        other => other,
    }
}

/// Validates a container and returns its header (container keys removed)
/// and payload.
pub fn decode(bytes: &[u8], path: &Path, kind: &str) -> Result<(Map<String, Value>, Vec<u8>)> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(OryxError::BadMagic(path.to_path_buf()));
    }
    if bytes.len() < PREFIX {
        return Err(OryxError::Truncated("file ends inside the fixed prefix".into()));
    }
    let version = u16::from_le_bytes([bytes[7], bytes[8]]);
    if version != FORMAT_VERSION {
        return Err(OryxError::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let hlen = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
    let header_end = PREFIX + hlen;
    if bytes.len() < header_end {
        return Err(OryxError::Truncated(format!(
            "header of {hlen} bytes but only {} remain",
            bytes.len() - PREFIX
        )));
    }
    let header: Value = serde_json::from_slice(&bytes[PREFIX..header_end])
        .map_err(|e| OryxError::Header(e.to_string()))?;
    let Value::Object(mut map) = header else {
        return Err(OryxError::Header("header is not a JSON object".into()));
    };
    let precision = take_str(&mut map, "precision")?;
    if precision != PRECISION {
        return Err(OryxError::Precision {
            found: precision,
            expected: PRECISION.into(),
        });
    }
    let found_kind = take_str(&mut map, "kind")?;
    if found_kind != kind {
        return Err(OryxError::Header(format!(
            "expected a {kind} file, found {found_kind}"
        )));
    }
    let payload_bytes = map
        .remove("payload_bytes")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| OryxError::Header("missing payload_bytes".into()))? as usize;
    let expected = header_end + payload_bytes + 4;
    if bytes.len() < expected {
        return Err(OryxError::Truncated(format!(
            "expected {expected} bytes, found {}",
            bytes.len()
        )));
    }
    if bytes.len() > expected {
        return Err(OryxError::Header(format!(
            "{} trailing bytes after checksum",
            bytes.len() - expected
        )));
    }
    let body_end = expected - 4;
    let stored = u32::from_le_bytes(bytes[body_end..].try_into().unwrap());
    let computed = crc32fast::hash(&bytes[..body_end]);
    if stored != computed {
        return Err(OryxError::Checksum { stored, computed });
    }
    Ok((map, bytes[header_end..body_end].to_vec()))
}

fn take_str(map: &mut Map<String, Value>, key: &str) -> Result<String> {
    match map.remove(key) {
        Some(Value::String(s)) => Ok(s),
        _ => Err(OryxError::Header(format!("missing string field `{key}`"))),
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| OryxError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| OryxError::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| OryxError::io(path, e))
}

/// Sequential little-endian reader over a payload.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(OryxError::Header(
                "payload shorter than the header declares".into(),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn u32s(&mut self, n: usize) -> Result<Vec<u32>> {
        let raw = self.take(n * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn finished(&self) -> bool {
        self.pos == self.buf.len()
    }
}

pub(crate) fn put_f64s(out: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}
