//! IDX files (the MNIST / Fashion-MNIST distribution format): big-endian
//! header, unsigned byte payload.

use std::path::Path;

use crate::data::Dataset;
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Parse {
            offset,
            msg: "truncated header".into(),
        })
}

/// Parses an unsigned-byte IDX buffer, returning `(dims, payload)`.
pub fn parse_idx(bytes: &[u8], expected_magic: u32) -> Result<(Vec<usize>, &[u8])> {
    let magic = be_u32(bytes, 0)?;
    if magic != expected_magic {
        return Err(Error::Parse {
            offset: 0,
            msg: format!("bad magic {magic:#010x}, expected {expected_magic:#010x}"),
        });
    }
    let ndims = (magic & 0xff) as usize;
    let dims: Vec<usize> = (0..ndims)
        .map(|i| be_u32(bytes, 4 + 4 * i).map(|d| d as usize))
        .collect::<Result<_>>()?;
    let start = 4 + 4 * ndims;
    let len: usize = dims.iter().product();
    let payload = &bytes[start.min(bytes.len())..];
    if payload.len() != len {
        return Err(Error::Parse {
            offset: start + payload.len().min(len),
            msg: format!("payload has {} bytes, header declares {len}", payload.len()),
        });
    }
    Ok((dims, payload))
}

/// Builds a dataset from IDX image and label buffers; pixels scaled to
/// `[0, 1]`.
pub fn parse_idx_pair(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let (dims, pixels) = parse_idx(images, IMAGES_MAGIC)?;
    let (ldims, lab) = parse_idx(labels, LABELS_MAGIC)?;
    if dims[0] != ldims[0] {
        return Err(Error::Dataset(format!(
            "{} images but {} labels",
            dims[0], ldims[0]
        )));
    }
    Dataset::new(
        dims[1..].to_vec(),
        pixels.iter().map(|&p| p as f32 / 255.0).collect(),
        lab.iter().map(|&l| l as u16).collect(),
    )
}

pub fn read_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    parse_idx_pair(&std::fs::read(images)?, &std::fs::read(labels)?)
}

/// Encodes an unsigned-byte IDX buffer.
pub fn encode_idx(magic: u32, dims: &[usize], payload: &[u8]) -> Vec<u8> {
    let mut out = magic.to_be_bytes().to_vec();
    for &d in dims {
        out.extend((d as u32).to_be_bytes());
    }
    out.extend_from_slice(payload);
    out
}

/// Looks for the standard `train-images-idx3-ubyte` / `t10k-...` files in
/// `dir`, returning `(train, test)`.
pub fn read_mnist_dir(dir: &Path) -> Result<(Dataset, Dataset)> {
    let load = |prefix: &str| {
        read_idx(
            &dir.join(format!("{prefix}-images-idx3-ubyte")),
            &dir.join(format!("{prefix}-labels-idx1-ubyte")),
        )
    };
    Ok((load("train")?, load("t10k")?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_header_and_scaling() {
        let img = encode_idx(
            IMAGES_MAGIC,
            &[2, 2, 3],
            &[0, 255, 51, 0, 0, 0, 1, 2, 3, 4, 5, 6],
        );
        let lab = encode_idx(LABELS_MAGIC, &[2], &[7, 9]);
        let d = parse_idx_pair(&img, &lab).unwrap();
        assert_eq!(d.dims, vec![2, 3]);
        assert_eq!(d.labels, vec![7, 9]);
        assert_eq!(&d.data[..3], &[0.0, 1.0, 0.2]);
    }

    #[test]
    fn mnist_header_dims() {
        let mut img = encode_idx(IMAGES_MAGIC, &[60000, 28, 28], &[]);
        img.resize(img.len() + 60000 * 784, 0);
        let (dims, _) = parse_idx(&img, IMAGES_MAGIC).unwrap();
        assert_eq!(dims, vec![60000, 28, 28]);
    }

    #[test]
    fn corrupt_inputs_are_typed_errors() {
        let mut img = encode_idx(IMAGES_MAGIC, &[1, 2, 2], &[1, 2, 3, 4]);
        img[3] = 0x04;
        assert!(matches!(
            parse_idx(&img, IMAGES_MAGIC),
            Err(Error::Parse { offset: 0, .. })
        ));
        let short = encode_idx(IMAGES_MAGIC, &[1, 2, 2], &[1, 2, 3]);
        assert!(matches!(
            parse_idx(&short, IMAGES_MAGIC),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            parse_idx(&[0, 0], IMAGES_MAGIC),
            Err(Error::Parse { .. })
        ));
        let img = encode_idx(IMAGES_MAGIC, &[2, 1, 1], &[1, 2]);
        let lab = encode_idx(LABELS_MAGIC, &[3], &[1, 2, 3]);
        assert!(matches!(parse_idx_pair(&img, &lab), Err(Error::Dataset(_))));
    }
}
