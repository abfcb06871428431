use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::LabeledDataset;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format(format!("{what}: truncated header")))
}

/// Reads an IDX image/label file pair (uncompressed). Pixels are scaled by
/// 1/255; the class count is one more than the largest label.
pub fn load_idx(images: &Path, labels: &Path) -> Result<LabeledDataset> {
    let img = std::fs::read(images)?;
    let lab = std::fs::read(labels)?;
    parse_idx(&img, &lab)
}

pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<LabeledDataset> {
    let magic = be_u32(images, 0, "images")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!("images: bad magic {magic:#010x}")));
    }
    let n = be_u32(images, 4, "images")? as usize;
    let rows = be_u32(images, 8, "images")? as usize;
    let cols = be_u32(images, 12, "images")? as usize;

    let magic = be_u32(labels, 0, "labels")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!("labels: bad magic {magic:#010x}")));
    }
    let n_labels = be_u32(labels, 4, "labels")? as usize;
    if n != n_labels {
        return Err(Error::Format(format!("{n} images but {n_labels} labels")));
    }

    let d = rows * cols;
    let pixels = images
        .get(16..16 + n * d)
        .ok_or_else(|| Error::Format("images: truncated pixel data".into()))?;
    let label_bytes = labels
        .get(8..8 + n)
        .ok_or_else(|| Error::Format("labels: truncated label data".into()))?;

    let features = Tensor::matrix(n, d, pixels.iter().map(|&p| p as f64 / 255.0).collect())?;
    let labels: Vec<usize> = label_bytes.iter().map(|&b| b as usize).collect();
    let classes = labels.iter().copied().max().map_or(2, |m| (m + 1).max(2));
    LabeledDataset::new(features, labels, classes)
}

/// Encodes raw pixel bytes and labels as an IDX pair.
pub fn write_idx(pixels: &[u8], labels: &[u8], rows: u32, cols: u32) -> (Vec<u8>, Vec<u8>) {
    let n = labels.len() as u32;
    let mut img = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGES_MAGIC, n, rows, cols] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend_from_slice(pixels);
    let mut lab = Vec::with_capacity(8 + labels.len());
    for v in [IDX_LABELS_MAGIC, n] {
        lab.extend_from_slice(&v.to_be_bytes());
    }
    lab.extend_from_slice(labels);
    (img, lab)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crafted_single_image() {
        let (img, lab) = write_idx(&[0, 255, 0, 255], &[7], 2, 2);
        assert_eq!(&img[..4], &[0, 0, 8, 3]);
        let ds = parse_idx(&img, &lab).unwrap();
        assert_eq!(ds.features().values(), &[0.0, 1.0, 0.0, 1.0]);
        assert_eq!(ds.labels(), &[7]);
        assert_eq!(ds.dim(), 4);
    }

    #[test]
    fn count_mismatch_is_a_format_error() {
        let (img, _) = write_idx(&[0; 8], &[1, 2], 2, 2);
        let (_, lab) = write_idx(&[0; 4], &[1], 2, 2);
        assert!(matches!(parse_idx(&img, &lab), Err(Error::Format(_))));
    }

    #[test]
    fn bad_magic_and_truncation() {
        let (mut img, lab) = write_idx(&[0; 4], &[1], 2, 2);
        assert!(matches!(parse_idx(&lab, &lab), Err(Error::Format(_))));
        img.pop();
        assert!(matches!(parse_idx(&img, &lab), Err(Error::Format(_))));
        assert!(matches!(parse_idx(&img[..6], &lab), Err(Error::Format(_))));
    }
}
