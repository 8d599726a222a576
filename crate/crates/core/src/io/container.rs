//! Dataset container: `TTFSDS1\0`, u32 count, u32 ndims, u32 dims, f32 LE
//! samples, u16 LE labels, then a CRC32 of everything between the magic and
//! the checksum.

use std::path::Path;

use crate::data::Dataset;
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 8] = b"TTFSDS1\0";

pub fn encode_dataset(d: &Dataset) -> Vec<u8> {
    let mut out =
        Vec::with_capacity(16 + 4 * d.dims.len() + 4 * d.data.len() + 2 * d.labels.len() + 4);
    out.extend_from_slice(DATASET_MAGIC);
    out.extend((d.len() as u32).to_le_bytes());
    out.extend((d.dims.len() as u32).to_le_bytes());
    for &x in &d.dims {
        out.extend((x as u32).to_le_bytes());
    }
    for v in &d.data {
        out.extend(v.to_le_bytes());
    }
    for l in &d.labels {
        out.extend(l.to_le_bytes());
    }
    let crc = crc32fast::hash(&out[8..]);
    out.extend(crc.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Parse {
                offset: self.pos,
                msg: format!("truncated: need {n} bytes"),
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() < 12 || &bytes[..8] != DATASET_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            msg: "not a dataset container".into(),
        });
    }
    let body = &bytes[8..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(Error::Integrity("dataset checksum mismatch".into()));
    }
    let mut r = Reader {
        bytes: body,
        pos: 0,
    };
    let count = r.u32()?;
    let ndims = r.u32()?;
    let dims: Vec<usize> = (0..ndims).map(|_| r.u32()).collect::<Result<_>>()?;
    let per: usize = dims.iter().product();
    let n = count.checked_mul(per).ok_or_else(|| Error::Parse {
        offset: 8,
        msg: "sample count overflows".into(),
    })?;
    let data = r
        .take(n.saturating_mul(4))?
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let labels = r
        .take(count * 2)?
        .chunks_exact(2)
        .map(|b| u16::from_le_bytes([b[0], b[1]]))
        .collect();
    if r.pos != body.len() {
        return Err(Error::Parse {
            offset: 8 + r.pos,
            msg: format!("{} trailing bytes", body.len() - r.pos),
        });
    }
    Dataset::new(dims, data, labels)
}

pub fn write_dataset(path: &Path, d: &Dataset) -> Result<()> {
    std::fs::write(path, encode_dataset(d))?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    decode_dataset(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Dataset {
        Dataset::new(
            vec![2, 3],
            (0..12).map(|i| i as f32 * 0.37 - 1.0).collect(),
            vec![4, 65535],
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let d = sample();
        let bytes = encode_dataset(&d);
        assert_eq!(&bytes[..8], DATASET_MAGIC);
        assert_eq!(decode_dataset(&bytes).unwrap(), d);
        let empty = Dataset::new(vec![4, 4], vec![], vec![]).unwrap();
        assert_eq!(decode_dataset(&encode_dataset(&empty)).unwrap(), empty);
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = encode_dataset(&sample());
        bytes[30] ^= 0x10;
        assert!(matches!(decode_dataset(&bytes), Err(Error::Integrity(_))));
        let bytes = encode_dataset(&sample());
        assert!(matches!(
            decode_dataset(&bytes[..bytes.len() - 9]),
            Err(Error::Integrity(_))
        ));
        assert!(matches!(
            decode_dataset(b"TTFSDS2\0abcd"),
            Err(Error::Parse { .. })
        ));
    }
}
