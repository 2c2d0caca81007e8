//! The IDX container: a big-endian `u32` magic (`0x0000_08TT` with type
//! `0x08` = unsigned byte in the third byte and the rank in the fourth), one
//! big-endian `u32` per dimension, then the row-major payload.
//!
//! Only unsigned-byte images (rank 3) and labels (rank 1) are supported.

use std::path::Path;

use super::LabeledDataset;
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq)]
pub enum IdxData {
    /// `count` images of `rows x cols` pixels, each scaled to `byte / 255`.
    Images {
        count: usize,
        rows: usize,
        cols: usize,
        pixels: Vec<f64>,
    },
    Labels(Vec<u8>),
}

fn read_u32(bytes: &[u8], at: usize, what: &'static str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(Error::Truncated {
            what,
            expected: at + 4,
            actual: bytes.len(),
        })
}

fn payload(bytes: &[u8], header: usize, len: usize) -> Result<&[u8]> {
    let expected = header + len;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            what: "payload",
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::TrailingBytes {
            expected,
            extra: bytes.len() - expected,
        });
    }
    Ok(&bytes[header..])
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxData> {
    match read_u32(bytes, 0, "header")? {
        IMAGES_MAGIC => {
            let count = read_u32(bytes, 4, "header")? as usize;
            let rows = read_u32(bytes, 8, "header")? as usize;
            let cols = read_u32(bytes, 12, "header")? as usize;
            let data = payload(bytes, 16, count * rows * cols)?;
            Ok(IdxData::Images {
                count,
                rows,
                cols,
                pixels: data.iter().map(|&b| f64::from(b) / 255.0).collect(),
            })
        }
        LABELS_MAGIC => {
            let count = read_u32(bytes, 4, "header")? as usize;
            Ok(IdxData::Labels(payload(bytes, 8, count)?.to_vec()))
        }
        observed => Err(Error::BadMagic { observed }),
    }
}

/// Serialises images; pixel values are rounded from the `/255` scale back
/// to bytes.
pub fn write_idx_images(count: usize, rows: usize, cols: usize, pixels: &[f64]) -> Result<Vec<u8>> {
    if pixels.len() != count * rows * cols {
        return Err(Error::invalid("pixel count does not match the image shape"));
    }
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGES_MAGIC, count as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    for &p in pixels {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid(format!("pixel {p} outside [0, 1]")));
        }
        out.push((p * 255.0).round() as u8);
    }
    Ok(out)
}

pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Reads an image file and a label file into one dataset, optionally keeping
/// only the first `limit` rows.
pub fn load_idx_dataset(
    images: &Path,
    labels: &Path,
    classes: usize,
    limit: Option<usize>,
) -> Result<LabeledDataset> {
    let IdxData::Images {
        count,
        rows,
        cols,
        mut pixels,
    } = parse_idx(&std::fs::read(images)?)?
    else {
        return Err(Error::invalid(format!("{} is not an IDX image file", images.display())));
    };
    let IdxData::Labels(mut label_bytes) = parse_idx(&std::fs::read(labels)?)? else {
        return Err(Error::invalid(format!("{} is not an IDX label file", labels.display())));
    };
    if label_bytes.len() != count {
        return Err(Error::invalid(format!(
            "{count} images but {} labels",
            label_bytes.len()
        )));
    }
    let keep = limit.map_or(count, |l| l.min(count));
    pixels.truncate(keep * rows * cols);
    label_bytes.truncate(keep);
    LabeledDataset::new(
        pixels,
        rows * cols,
        label_bytes.into_iter().map(usize::from).collect(),
        classes,
    )
}
