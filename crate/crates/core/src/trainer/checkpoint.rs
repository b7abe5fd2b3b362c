//! Checkpoint container.
//!
//! Layout (little-endian): magic `OACK`, u8 version, u64 config hash,
//! u32 record count, then per record a u16 name length, the UTF-8 name,
//! u8 rank, `rank` u32 dims and the f32 payload.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"OACK";
pub const CHECKPOINT_VERSION: u8 = 1;
pub const CHECKPOINT_EXTENSION: &str = "oack";

#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl TensorRecord {
    pub fn new(name: impl Into<String>, dims: &[usize], data: Vec<f32>) -> Self {
        TensorRecord {
            name: name.into(),
            dims: dims.to_vec(),
            data,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: u64,
    pub records: Vec<TensorRecord>,
}

struct Reader<'b> {
    bytes: &'b [u8],
    pos: usize,
    path: &'b Path,
}

impl<'b> Reader<'b> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'b [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Truncated {
                path: self.path.to_path_buf(),
                detail: format!("{what} at byte {}", self.pos),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn format(&self, detail: String) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            detail,
        }
    }
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&TensorRecord> {
        self.records.iter().find(|r| r.name == name)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.push(CHECKPOINT_VERSION);
        out.extend_from_slice(&self.config_hash.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&(r.name.len() as u16).to_le_bytes());
            out.extend_from_slice(r.name.as_bytes());
            out.push(r.dims.len() as u8);
            for &d in &r.dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &r.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::Magic {
                path: path.to_path_buf(),
                expected: "OACK",
            });
        }
        let mut r = Reader {
            bytes,
            pos: 4,
            path,
        };
        let version = r.u8("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                path: path.to_path_buf(),
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let hash = r.take(8, "config hash")?;
        let config_hash = u64::from_le_bytes(hash.try_into().expect("8 bytes"));
        let count = r.u32("record count")? as usize;
        let mut records = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = usize::from(r.u16("name length")?);
            let name = std::str::from_utf8(r.take(len, "record name")?)
                .map_err(|_| r.format("record name is not UTF-8".into()))?
                .to_string();
            let rank = usize::from(r.u8("rank")?);
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(r.u32("dims")? as usize);
            }
            let numel = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .and_then(|n| n.checked_mul(4).map(|_| n))
                .ok_or_else(|| r.format(format!("record {name} is too large")))?;
            let payload = r.take(4 * numel, "tensor payload")?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            records.push(TensorRecord { name, dims, data });
        }
        if r.pos != bytes.len() {
            return Err(r.format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint {
            config_hash,
            records,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            config_hash: 0x0123_4567_89ab_cdef,
            records: vec![
                TensorRecord::new("g.w", &[2, 3], vec![1.0, -2.0, 3.5, 0.0, f32::MIN_POSITIVE, 7.0]),
                TensorRecord::new("step", &[], vec![12.0]),
            ],
        }
    }

    #[test]
    fn byte_layout() {
        let bytes = sample().encode();
        assert_eq!(&bytes[..5], b"OACK\x01");
        assert_eq!(&bytes[5..13], &0x0123_4567_89ab_cdefu64.to_le_bytes());
        assert_eq!(&bytes[13..17], &2u32.to_le_bytes());
        assert_eq!(&bytes[17..19], &3u16.to_le_bytes());
        assert_eq!(&bytes[19..22], b"g.w");
        assert_eq!(bytes[22], 2);
        let len = 17 + (2 + 3 + 1 + 8 + 24) + (2 + 4 + 1 + 4);
        assert_eq!(bytes.len(), len);
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.oack");
        sample().save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, sample());
        assert_eq!(back.encode(), sample().encode());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let p = Path::new("c.oack");
        let good = sample().encode();
        for cut in [3, 5, 12, 20, good.len() - 1] {
            let err = Checkpoint::decode(&good[..cut], p).unwrap_err();
            assert!(
                matches!(err, Error::Truncated { .. } | Error::Magic { .. }),
                "{cut}: {err}"
            );
        }
        let mut bad = good.clone();
        bad[4] = 9;
        assert!(matches!(Checkpoint::decode(&bad, p), Err(Error::Version { found: 9, .. })));
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::decode(&bad, p), Err(Error::Magic { .. })));
        let mut bad = good;
        bad.push(0);
        assert!(matches!(Checkpoint::decode(&bad, p), Err(Error::Format { .. })));
    }
}
