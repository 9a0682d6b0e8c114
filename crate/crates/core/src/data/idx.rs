use std::path::Path;

use super::{DataError, ImageGrid};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone)]
pub struct LabeledImages {
    pub images: Vec<ImageGrid>,
    pub labels: Vec<u8>,
}

impl LabeledImages {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// The first `n` examples.
    pub fn take(&self, n: usize) -> LabeledImages {
        let n = n.min(self.len());
        LabeledImages {
            images: self.images[..n].to_vec(),
            labels: self.labels[..n].to_vec(),
        }
    }
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32, DataError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| DataError::format(offset as u64, "header ends early"))
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<(), DataError> {
    let magic = be_u32(bytes, 0)?;
    if magic != expected {
        return Err(DataError::format(
            0,
            format!("bad magic {magic:#010x}, expected {expected:#010x}"),
        ));
    }
    Ok(())
}

/// Parses an unsigned-byte IDX image file (`0x00000803`, dims `n × h × w`).
pub fn parse_idx_images(bytes: &[u8]) -> Result<Vec<ImageGrid>, DataError> {
    check_magic(bytes, IMAGES_MAGIC)?;
    let n = be_u32(bytes, 4)? as usize;
    let h = be_u32(bytes, 8)? as usize;
    let w = be_u32(bytes, 12)? as usize;
    let size = h * w;
    let expected = 16 + n * size;
    if bytes.len() < expected {
        return Err(DataError::format(
            bytes.len() as u64,
            format!("payload truncated: {n} images of {h}x{w} need {expected} bytes"),
        ));
    }
    if bytes.len() > expected {
        return Err(DataError::format(expected as u64, "trailing bytes after payload"));
    }
    bytes[16..]
        .chunks_exact(size)
        .map(|px| ImageGrid::new(h, w, 1, px.iter().map(|&b| b as f64 / 255.0).collect()))
        .collect()
}

/// Parses an unsigned-byte IDX label file (`0x00000801`).
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>, DataError> {
    check_magic(bytes, LABELS_MAGIC)?;
    let n = be_u32(bytes, 4)? as usize;
    if bytes.len() < 8 + n {
        return Err(DataError::format(
            bytes.len() as u64,
            format!("payload truncated: {n} labels need {} bytes", 8 + n),
        ));
    }
    if bytes.len() > 8 + n {
        return Err(DataError::format((8 + n) as u64, "trailing bytes after payload"));
    }
    Ok(bytes[8..].to_vec())
}

/// Loads matching image and label files.
pub fn load_idx(images: &Path, labels: &Path) -> Result<LabeledImages, DataError> {
    let images = parse_idx_images(&std::fs::read(images)?)?;
    let labels = parse_idx_labels(&std::fs::read(labels)?)?;
    if images.len() != labels.len() {
        return Err(DataError::format(
            4,
            format!("{} images but {} labels", images.len(), labels.len()),
        ));
    }
    Ok(LabeledImages { images, labels })
}
