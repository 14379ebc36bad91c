//! Reader for the IDX format used by MNIST-style corpora.
//!
//! Big-endian header: a 4-byte magic (`0x00000803` for unsigned-byte image
//! stacks, `0x00000801` for label vectors) followed by one `u32` per dimension,
//! then the raw bytes.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::checkpoint::ByteReader;
use crate::nn::Matrix;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq)]
pub enum IdxData {
    /// One row per image, pixels scaled to `[0, 1]`.
    Images {
        rows: usize,
        cols: usize,
        pixels: Matrix,
    },
    Labels(Vec<u8>),
}

pub fn load_idx(path: impl AsRef<Path>) -> Result<IdxData> {
    parse_idx(&fs::read(path)?)
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxData> {
    let mut r = ByteReader::new(bytes);
    let magic = r.u32_be("magic")?;
    match magic {
        IMAGES_MAGIC => {
            let n = r.u32_be("image count")? as usize;
            let rows = r.u32_be("row count")? as usize;
            let cols = r.u32_be("column count")? as usize;
            let body = &bytes[16..];
            let need = n * rows * cols;
            if body.len() < need {
                return Err(Error::format(
                    16 + body.len() as u64,
                    format!("truncated pixel data: need {need} bytes, have {}", body.len()),
                ));
            }
            if body.len() > need {
                return Err(Error::format(16 + need as u64, "trailing bytes"));
            }
            let data = body.iter().map(|&p| f64::from(p) / 255.0).collect();
            Ok(IdxData::Images {
                rows,
                cols,
                pixels: Matrix::from_vec(n, rows * cols, data)?,
            })
        }
        LABELS_MAGIC => {
            let n = r.u32_be("label count")? as usize;
            let body = &bytes[8..];
            if body.len() < n {
                return Err(Error::format(
                    8 + body.len() as u64,
                    format!("truncated labels: need {n} bytes, have {}", body.len()),
                ));
            }
            if body.len() > n {
                return Err(Error::format(8 + n as u64, "trailing bytes"));
            }
            Ok(IdxData::Labels(body.to_vec()))
        }
        other => Err(Error::format(0, format!("unknown IDX magic {other:#010x}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image_fixture() -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
        b.extend_from_slice(&1u32.to_be_bytes());
        b.extend_from_slice(&2u32.to_be_bytes());
        b.extend_from_slice(&2u32.to_be_bytes());
        b.extend_from_slice(&[0, 1, 2, 3]);
        b
    }

    #[test]
    fn parses_tiny_image_file() {
        match parse_idx(&image_fixture()).unwrap() {
            IdxData::Images { rows, cols, pixels } => {
                assert_eq!((rows, cols), (2, 2));
                assert_eq!(pixels.row(0), &[0.0, 1.0 / 255.0, 2.0 / 255.0, 3.0 / 255.0]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncated_file_reports_offset() {
        let b = image_fixture();
        match parse_idx(&b[..18]) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 18),
            other => panic!("{other:?}"),
        }
        match parse_idx(&b[..10]) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 10),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_magic_is_rejected() {
        let mut b = image_fixture();
        b[3] = 0x09;
        assert!(matches!(parse_idx(&b), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn labels_keep_order() {
        let mut b = Vec::new();
        b.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
        b.extend_from_slice(&5u32.to_be_bytes());
        b.extend_from_slice(&[7, 2, 1, 0, 4]);
        assert_eq!(parse_idx(&b).unwrap(), IdxData::Labels(vec![7, 2, 1, 0, 4]));
    }
}
