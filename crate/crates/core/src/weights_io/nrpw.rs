//! `.nrpw` weights container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! 0..4        magic "NRPW"
//! 4..8        u32 format version (1)
//! 8..16       u64 header length L
//! 16..16+L    UTF-8 JSON array: {"dtype","in","kh","kw","len","name","offset","out"}
//! 16+L..      payload: raw f32, row-major [out][in][kh][kw]
//! ```
//!
//! `offset`/`len` are byte positions relative to the start of the payload.
//! The regions must tile the payload exactly: no gaps, no overlap, nothing
//! after the last tensor.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LayerTensor, ModelWeights, WeightsError};

pub const MAGIC: &[u8; 4] = b"NRPW";
pub const VERSION: u32 = 1;
const FIXED_HEADER: usize = 16;

/// One header record. Field order is alphabetical so that serde emits the
/// canonical (sorted-key) form.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderEntry {
    dtype: String,
    #[serde(rename = "in")]
    in_channels: u64,
    kh: u64,
    kw: u64,
    len: u64,
    name: String,
    offset: u64,
    out: u64,
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<ModelWeights, WeightsError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| WeightsError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_weights(&bytes)
}

pub fn write_weights(weights: &ModelWeights, path: impl AsRef<Path>) -> Result<(), WeightsError> {
    let path = path.as_ref();
    fs::write(path, serialize_weights(weights)).map_err(|source| WeightsError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Canonical byte encoding. Two calls on equal models give identical bytes.
pub fn serialize_weights(weights: &ModelWeights) -> Vec<u8> {
    let mut offset = 0u64;
    let header: Vec<HeaderEntry> = weights
        .layers()
        .iter()
        .map(|t| {
            let len = (t.values().len() * 4) as u64;
            let entry = HeaderEntry {
                dtype: "f32".to_string(),
                in_channels: t.in_channels() as u64,
                kh: t.kh() as u64,
                kw: t.kw() as u64,
                len,
                name: t.name().to_string(),
                offset,
                out: t.out_channels() as u64,
            };
            offset += len;
            entry
        })
        .collect();
    let header_bytes = serde_json::to_vec(&header).expect("header serialization is infallible");

    let mut out = Vec::with_capacity(FIXED_HEADER + header_bytes.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    for t in weights.layers() {
        for v in t.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Parse a complete `.nrpw` image. Never panics; every malformed input maps
/// to a [`WeightsError`].
pub fn parse_weights(bytes: &[u8]) -> Result<ModelWeights, WeightsError> {
    if bytes.len() < FIXED_HEADER {
        return Err(WeightsError::ShortFile {
            expected: FIXED_HEADER as u64,
            actual: bytes.len() as u64,
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if &magic != MAGIC {
        return Err(WeightsError::BadMagic { found: magic });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(WeightsError::Version { found: version });
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let available = (bytes.len() - FIXED_HEADER) as u64;
    if header_len > available {
        return Err(WeightsError::ShortFile {
            expected: FIXED_HEADER as u64 + header_len,
            actual: bytes.len() as u64,
        });
    }
    let header_end = FIXED_HEADER + header_len as usize;
    let header_bytes = &bytes[FIXED_HEADER..header_end];
    let header: Vec<HeaderEntry> =
        serde_json::from_slice(header_bytes).map_err(|e| WeightsError::Header {
            offset: FIXED_HEADER as u64 + json_error_offset(header_bytes, &e),
            message: e.to_string(),
        })?;

    let payload = &bytes[header_end..];
    let payload_start = header_end as u64;

    // Shape checks and expected byte lengths.
    let mut expected_lens = Vec::with_capacity(header.len());
    for entry in &header {
        if entry.dtype != "f32" {
            return Err(WeightsError::InvalidLayer {
                layer: entry.name.clone(),
                message: format!("unsupported dtype {:?}", entry.dtype),
            });
        }
        let elems = [entry.out, entry.in_channels, entry.kh, entry.kw]
            .iter()
            .try_fold(1u64, |acc, &d| {
                if d == 0 {
                    None
                } else {
                    acc.checked_mul(d)
                }
            })
            .ok_or_else(|| WeightsError::InvalidLayer {
                layer: entry.name.clone(),
                message: "dimensions must be positive and their product must fit in 64 bits"
                    .to_string(),
            })?;
        let expected = elems.checked_mul(4).ok_or_else(|| WeightsError::InvalidLayer {
            layer: entry.name.clone(),
            message: "tensor byte size overflows".to_string(),
        })?;
        if entry.len != expected {
            return Err(WeightsError::LengthMismatch {
                layer: entry.name.clone(),
                declared: entry.len,
                expected,
            });
        }
        expected_lens.push(expected);
    }

    // Regions must tile [0, payload.len()) exactly.
    let mut order: Vec<usize> = (0..header.len()).collect();
    order.sort_by_key(|&i| (header[i].offset, i));
    let mut cursor = 0u64;
    for &i in &order {
        let entry = &header[i];
        if entry.offset < cursor {
            return Err(WeightsError::Overlap {
                layer: entry.name.clone(),
                offset: payload_start + entry.offset,
            });
        }
        if entry.offset > cursor {
            return Err(WeightsError::Gap {
                layer: entry.name.clone(),
                offset: payload_start + cursor,
            });
        }
        cursor = entry.offset.checked_add(entry.len).ok_or(WeightsError::ShortFile {
            expected: u64::MAX,
            actual: bytes.len() as u64,
        })?;
    }
    let payload_len = payload.len() as u64;
    if cursor > payload_len {
        return Err(WeightsError::ShortFile {
            expected: payload_start + cursor,
            actual: bytes.len() as u64,
        });
    }
    if cursor < payload_len {
        return Err(WeightsError::TrailingBytes {
            offset: payload_start + cursor,
            count: payload_len - cursor,
        });
    }

    let mut layers = Vec::with_capacity(header.len());
    for entry in header {
        let start = entry.offset as usize;
        let region = &payload[start..start + entry.len as usize];
        let mut values = Vec::with_capacity(region.len() / 4);
        for (j, chunk) in region.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(WeightsError::NonFinite {
                    layer: entry.name,
                    index: j as u64,
                    offset: payload_start + entry.offset + 4 * j as u64,
                });
            }
            values.push(v);
        }
        layers.push(LayerTensor::new(
            entry.name,
            entry.out as usize,
            entry.in_channels as usize,
            entry.kh as usize,
            entry.kw as usize,
            values,
        )?);
    }
    ModelWeights::new(layers)
}

/// Byte offset of a serde_json error within `src` (line/column are 1-based).
fn json_error_offset(src: &[u8], err: &serde_json::Error) -> u64 {
    let line = err.line();
    if line == 0 {
        return 0;
    }
    let mut offset = 0usize;
    for (i, l) in src.split(|&b| b == b'\n').enumerate() {
        if i + 1 == line {
            return (offset + err.column().saturating_sub(1)) as u64;
        }
        offset += l.len() + 1;
    }
    src.len() as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_layer() -> ModelWeights {
        let t = LayerTensor::new("a", 2, 1, 1, 1, vec![1.0, 2.0]).unwrap();
        ModelWeights::new(vec![t]).unwrap()
    }

    #[test]
    fn minimal_file_round_trips() {
        let bytes = serialize_weights(&one_layer());
        let back = parse_weights(&bytes).unwrap();
        assert_eq!(back.layers().len(), 1);
        assert_eq!(back.layers()[0].values(), &[1.0, 2.0]);
        assert_eq!(back, one_layer());
    }

    #[test]
    fn canonical_header_text() {
        let bytes = serialize_weights(&one_layer());
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header = std::str::from_utf8(&bytes[16..16 + len]).unwrap();
        assert_eq!(
            header,
            r#"[{"dtype":"f32","in":1,"kh":1,"kw":1,"len":8,"name":"a","offset":0,"out":2}]"#
        );
    }

    #[test]
    fn empty_model_has_no_payload() {
        let bytes = serialize_weights(&ModelWeights::new(vec![]).unwrap());
        assert_eq!(&bytes[16..], b"[]");
        assert!(parse_weights(&bytes).unwrap().layers().is_empty());
    }

    #[test]
    fn truncated_data_reports_byte_counts() {
        let bytes = serialize_weights(&one_layer());
        let cut = &bytes[..bytes.len() - 3];
        match parse_weights(cut) {
            Err(WeightsError::ShortFile { expected, actual }) => {
                assert_eq!(expected, bytes.len() as u64);
                assert_eq!(actual, cut.len() as u64);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn trailing_garbage_rejected() {
        let mut bytes = serialize_weights(&one_layer());
        let end = bytes.len() as u64;
        bytes.extend_from_slice(&[0, 0]);
        match parse_weights(&bytes) {
            Err(WeightsError::TrailingBytes { offset, count }) => {
                assert_eq!(offset, end);
                assert_eq!(count, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = serialize_weights(&one_layer());
        bytes[0] = b'X';
        assert!(matches!(parse_weights(&bytes), Err(WeightsError::BadMagic { .. })));
        let mut bytes = serialize_weights(&one_layer());
        bytes[4] = 2;
        assert!(matches!(
            parse_weights(&bytes),
            Err(WeightsError::Version { found: 2 })
        ));
    }

    #[test]
    fn non_finite_value_names_offset() {
        let mut bytes = serialize_weights(&one_layer());
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        match parse_weights(&bytes) {
            Err(WeightsError::NonFinite { layer, index, offset }) => {
                assert_eq!(layer, "a");
                assert_eq!(index, 1);
                assert_eq!(offset, (n - 4) as u64);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn header_length_disagreeing_with_shape() {
        let header = br#"[{"dtype":"f32","in":1,"kh":1,"kw":1,"len":4,"name":"a","offset":0,"out":2}]"#;
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
        bytes.extend_from_slice(header);
        bytes.extend_from_slice(&1.0f32.to_le_bytes());
        assert!(matches!(
            parse_weights(&bytes),
            Err(WeightsError::LengthMismatch { declared: 4, expected: 8, .. })
        ));
    }
}
