//! MEMF binary layout for id-tagged dense f32 vectors.
//!
//! ```text
//! 0..4    magic "MEMF"
//! 4..6    version u16 LE (= 1)
//! 6..8    flags   u16 LE (= 0)
//! 8..12   dim     u32 LE
//! 12..20  count   u64 LE
//! then `count` records: id_len u16 LE, id UTF-8, dim x f32 LE
//! then CRC32 (u32 LE) over every preceding byte
//! ```

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MEMF";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 20;
pub const TRAILER_LEN: usize = 4;

/// Raw contents of a MEMF file.
#[derive(Debug, Clone, PartialEq)]
pub struct MemfData {
    pub dim: usize,
    pub ids: Vec<String>,
    pub vectors: Vec<f32>,
}

impl MemfData {
    pub fn count(&self) -> usize {
        self.ids.len()
    }

    /// Exact size in bytes of the encoded file.
    pub fn encoded_len(&self) -> usize {
        HEADER_LEN
            + self.ids.iter().map(|id| 2 + id.len()).sum::<usize>()
            + self.vectors.len() * 4
            + TRAILER_LEN
    }

    fn check(&self) -> Result<()> {
        if self.dim == 0 || self.dim > u32::MAX as usize {
            return Err(Error::Argument(format!("unsupported dim {}", self.dim)));
        }
        if self.vectors.len() != self.ids.len() * self.dim {
            return Err(Error::Shape(format!(
                "{} ids x dim {} does not match {} values",
                self.ids.len(),
                self.dim,
                self.vectors.len()
            )));
        }
        let mut seen = HashSet::with_capacity(self.ids.len());
        for id in &self.ids {
            if id.len() > u16::MAX as usize {
                return Err(Error::Argument(format!("id longer than 65535 bytes: {id:.32}...")));
            }
            if !seen.insert(id.as_str()) {
                return Err(Error::Integrity(format!("duplicate id {id:?}")));
            }
        }
        if let Some(pos) = self.vectors.iter().position(|v| !v.is_finite()) {
            return Err(Error::Argument(format!(
                "non-finite value {} in row {} ({:?})",
                self.vectors[pos],
                pos / self.dim,
                self.ids[pos / self.dim]
            )));
        }
        Ok(())
    }
}

pub fn encode(data: &MemfData) -> Result<Vec<u8>> {
    data.check()?;
    let mut out = Vec::with_capacity(data.encoded_len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&(data.dim as u32).to_le_bytes());
    out.extend_from_slice(&(data.count() as u64).to_le_bytes());
    for (id, row) in data.ids.iter().zip(data.vectors.chunks_exact(data.dim)) {
        out.extend_from_slice(&(id.len() as u16).to_le_bytes());
        out.extend_from_slice(id.as_bytes());
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Corruption(format!(
                "truncated body while reading {what} at byte {}",
                self.pos
            ))),
        }
    }
}

pub fn decode(bytes: &[u8]) -> Result<MemfData> {
    if bytes.len() < HEADER_LEN || &bytes[0..4] != MAGIC {
        return Err(Error::Format("missing MEMF magic".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported MEMF version {version}")));
    }
    let flags = u16::from_le_bytes([bytes[6], bytes[7]]);
    if flags != 0 {
        return Err(Error::Format(format!("unsupported MEMF flags {flags:#06x}")));
    }
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    if dim == 0 {
        return Err(Error::Format("dim must be positive".into()));
    }
    if bytes.len() < HEADER_LEN + TRAILER_LEN {
        return Err(Error::Corruption("missing checksum trailer".into()));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - TRAILER_LEN);

    // Every record needs at least 2 + 4*dim bytes; reject absurd counts before allocating.
    let min_record = 2 + 4 * dim as u64;
    if count.saturating_mul(min_record) > (body.len() - HEADER_LEN) as u64 {
        return Err(Error::Corruption(format!(
            "header declares {count} records but body holds {} bytes",
            body.len() - HEADER_LEN
        )));
    }
    let count = count as usize;

    let mut cur = Cursor {
        buf: body,
        pos: HEADER_LEN,
    };
    let mut ids = Vec::with_capacity(count);
    let mut vectors = Vec::with_capacity(count * dim);
    let mut seen = HashSet::with_capacity(count);
    for _ in 0..count {
        let len = cur.take(2, "id length")?;
        let len = u16::from_le_bytes([len[0], len[1]]) as usize;
        let id = std::str::from_utf8(cur.take(len, "id")?)
            .map_err(|e| Error::Corruption(format!("id is not UTF-8: {e}")))?
            .to_owned();
        if !seen.insert(id.clone()) {
            return Err(Error::Integrity(format!("duplicate id {id:?}")));
        }
        let raw = cur.take(4 * dim, "vector")?;
        vectors.extend(
            raw.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap())),
        );
        ids.push(id);
    }
    if cur.pos != body.len() {
        return Err(Error::Corruption(format!(
            "{} unexpected bytes after the last record",
            body.len() - cur.pos
        )));
    }
    let stored = u32::from_le_bytes(trailer.try_into().unwrap());
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(Error::Corruption(format!(
            "checksum mismatch: stored {stored:08x}, computed {actual:08x}"
        )));
    }
    if vectors.iter().any(|v| !v.is_finite()) {
        return Err(Error::Corruption("non-finite value in stored vectors".into()));
    }
    Ok(MemfData { dim, ids, vectors })
}

/// Checksum stored in the trailer of an encoded file.
pub fn trailer_crc(bytes: &[u8]) -> Option<u32> {
    let n = bytes.len();
    (n >= HEADER_LEN + TRAILER_LEN).then(|| u32::from_le_bytes(bytes[n - 4..].try_into().unwrap()))
}

pub fn write(path: &Path, data: &MemfData) -> Result<u32> {
    let bytes = encode(data)?;
    std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(trailer_crc(&bytes).unwrap())
}

pub fn read(path: &Path) -> Result<MemfData> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> MemfData {
        MemfData {
            dim: 2,
            ids: vec!["a".into(), "bb".into(), "ccc".into()],
            vectors: vec![1.0, -2.0, 0.5, 0.25, 3.0, -0.0],
        }
    }

    #[test]
    fn encoded_size_follows_layout() {
        let data = sample();
        let bytes = encode(&data).unwrap();
        // 20-byte header, ids (2+1)+(2+2)+(2+3), 3*2*4 floats, 4-byte crc
        assert_eq!(bytes.len(), 20 + 12 + 24 + 4);
        assert_eq!(bytes.len(), data.encoded_len());
        assert_eq!(&bytes[0..4], b"MEMF");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(&bytes[8..12], &[2, 0, 0, 0]);
        assert_eq!(&bytes[12..20], &[3, 0, 0, 0, 0, 0, 0, 0]);
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = encode(&sample()).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(Error::Format(_))));
        let mut bytes = encode(&sample()).unwrap();
        bytes[4] = 2;
        assert!(matches!(decode(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn flipped_payload_bit_fails_checksum() {
        let mut bytes = encode(&sample()).unwrap();
        bytes[30] ^= 0x01;
        assert!(matches!(decode(&bytes), Err(Error::Corruption(_))));
    }

    #[test]
    fn duplicate_ids_rejected_both_ways() {
        let mut data = sample();
        data.ids[2] = "a".into();
        assert!(matches!(encode(&data), Err(Error::Integrity(_))));
    }
}
