//! Versioned binary dataset file. All integers and floats are little-endian.
//!
//! ```text
//! magic        8 bytes  "MASSLDS\0"
//! version      u32
//! count        u32
//! height       u32
//! width        u32
//! payload_len  u64      bytes following this field
//! per sample:
//!   id_len     u32
//!   id         id_len bytes, UTF-8
//!   image      height*width f32
//!   has_mask   u8       0 or 1
//!   mask       height*width u8 (only when has_mask = 1)
//! ```

use std::fs;
use std::path::Path;

use super::{DataError, Sample};

pub const DATASET_MAGIC: &[u8; 8] = b"MASSLDS\0";
pub const DATASET_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 * 4 + 8;

pub fn encode_dataset(samples: &[Sample]) -> Result<Vec<u8>, DataError> {
    let (height, width) = samples.first().map_or((0, 0), |s| (s.height, s.width));
    let n = height * width;
    let mut payload = Vec::new();
    for s in samples {
        if (s.height, s.width) != (height, width) || s.image.len() != n {
            return Err(DataError::Corrupt(format!(
                "sample `{}` has inconsistent extents",
                s.id
            )));
        }
        payload.extend_from_slice(&(s.id.len() as u32).to_le_bytes());
        payload.extend_from_slice(s.id.as_bytes());
        for v in &s.image {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        match &s.mask {
            Some(mask) if mask.len() == n => {
                payload.push(1);
                payload.extend_from_slice(mask);
            }
            Some(_) => return Err(DataError::Corrupt(format!("sample `{}` mask has wrong length", s.id))),
            None => payload.push(0),
        }
    }
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(DATASET_MAGIC);
    for v in [DATASET_VERSION, samples.len() as u32, height as u32, width as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DataError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                DataError::Header(format!(
                    "record at payload offset {} runs past the declared payload length",
                    self.pos
                ))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Walks record boundaries only. An invalid mask flag is assumed to precede a
/// mask so that a damaged flag is reported as record corruption, not framing.
fn framing_matches(payload: &[u8], count: usize, n: usize) -> bool {
    let mut pos = 0usize;
    for _ in 0..count {
        let Some(id_len) = pos.checked_add(4).and_then(|end| payload.get(pos..end)) else {
            return false;
        };
        let id_len = u32::from_le_bytes(id_len.try_into().expect("4 bytes")) as usize;
        pos = pos.saturating_add(4 + id_len).saturating_add(4 * n);
        match payload.get(pos) {
            Some(0) => pos += 1,
            Some(_) => pos = pos.saturating_add(1 + n),
            None => return false,
        }
    }
    pos == payload.len()
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Vec<Sample>, DataError> {
    if bytes.len() < DATASET_MAGIC.len() || &bytes[..8] != DATASET_MAGIC {
        return Err(if DATASET_MAGIC.starts_with(bytes) {
            DataError::Truncated {
                expected: HEADER_LEN as u64,
                found: bytes.len() as u64,
            }
        } else {
            DataError::BadMagic
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(DataError::Truncated {
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    let word = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().expect("4 bytes"));
    let version = word(0);
    if version != DATASET_VERSION {
        return Err(DataError::Version(version));
    }
    let (count, height, width) = (word(1) as usize, word(2) as usize, word(3) as usize);
    let payload_len = u64::from_le_bytes(bytes[24..32].try_into().expect("8 bytes"));
    let available = (bytes.len() - HEADER_LEN) as u64;
    if available < payload_len {
        return Err(DataError::Truncated {
            expected: HEADER_LEN as u64 + payload_len,
            found: bytes.len() as u64,
        });
    }
    if available > payload_len {
        return Err(DataError::Header(format!(
            "{} bytes follow the declared payload",
            available - payload_len
        )));
    }
    let n = height
        .checked_mul(width)
        .ok_or_else(|| DataError::Header("extents overflow".into()))?;
    let min_record = 4 + 4 * n as u64 + 1;
    if count > 0 && (n == 0 || (count as u64).saturating_mul(min_record) > payload_len) {
        return Err(DataError::Header(format!(
            "{count} samples of {height}x{width} cannot fit in {payload_len} payload bytes"
        )));
    }

    if !framing_matches(&bytes[HEADER_LEN..], count, n) {
        return Err(DataError::Header(format!(
            "{count} records of {height}x{width} do not tile the {payload_len}-byte payload"
        )));
    }

    let mut cur = Cursor {
        buf: &bytes[HEADER_LEN..],
        pos: 0,
    };
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let id_len = cur.u32()? as usize;
        let id = std::str::from_utf8(cur.take(id_len)?)
            .map_err(|_| DataError::Corrupt("sample id is not UTF-8".into()))?
            .to_string();
        let image = cur
            .take(4 * n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let mask = match cur.take(1)?[0] {
            0 => None,
            1 => {
                let m = cur.take(n)?.to_vec();
                if m.iter().any(|&v| v > 1) {
                    return Err(DataError::Corrupt(format!("sample `{id}` mask is not binary")));
                }
                Some(m)
            }
            flag => return Err(DataError::Corrupt(format!("sample `{id}` has mask flag {flag}"))),
        };
        samples.push(Sample {
            id,
            height,
            width,
            image,
            mask,
        });
    }
    if cur.pos != cur.buf.len() {
        return Err(DataError::Header(format!(
            "{} payload bytes left after {count} samples",
            cur.buf.len() - cur.pos
        )));
    }
    Ok(samples)
}

pub fn write_dataset(path: &Path, samples: &[Sample]) -> Result<(), DataError> {
    let bytes = encode_dataset(samples)?;
    fs::write(path, bytes).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_dataset(path: &Path) -> Result<Vec<Sample>, DataError> {
    let bytes = fs::read(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_dataset(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_synthetic;

    fn samples() -> Vec<Sample> {
        let mut s = generate_synthetic(3, 8, 8, 2);
        s[1] = s[1].without_mask();
        s
    }

    #[test]
    fn round_trip_preserves_samples_and_bytes() {
        let s = samples();
        let bytes = encode_dataset(&s).unwrap();
        let back = decode_dataset(&bytes).unwrap();
        assert_eq!(back, s);
        assert_eq!(encode_dataset(&back).unwrap(), bytes);
    }

    #[test]
    fn truncation_is_reported() {
        let bytes = encode_dataset(&samples()).unwrap();
        for len in [0, 5, 20, HEADER_LEN + 10, bytes.len() - 1] {
            let err = decode_dataset(&bytes[..len]).unwrap_err();
            assert!(matches!(err, DataError::Truncated { .. }), "len {len}: {err}");
        }
    }

    #[test]
    fn extent_mismatch_is_header_error() {
        let mut bytes = encode_dataset(&samples()).unwrap();
        bytes[16..20].copy_from_slice(&9u32.to_le_bytes());
        assert!(matches!(decode_dataset(&bytes), Err(DataError::Header(_))));
        let mut bytes = encode_dataset(&samples()).unwrap();
        bytes[20..24].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(decode_dataset(&bytes), Err(DataError::Header(_))));
    }

    #[test]
    fn magic_version_and_flags_are_checked() {
        let good = encode_dataset(&samples()).unwrap();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode_dataset(&bad), Err(DataError::BadMagic)));
        let mut bad = good.clone();
        bad[8..12].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(decode_dataset(&bad), Err(DataError::Version(2))));
        let mut bad = good.clone();
        // First sample: id_len(4) + id + 64 floats, then the mask flag.
        let id_len = u32::from_le_bytes(bad[32..36].try_into().unwrap()) as usize;
        let flag_at = 36 + id_len + 4 * 64;
        bad[flag_at] = 7;
        assert!(matches!(decode_dataset(&bad), Err(DataError::Corrupt(_))));
    }
}
