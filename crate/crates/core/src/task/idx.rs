//! The IDX container: a big-endian header of a magic number and dimension
//! sizes followed by unsigned bytes.

use alloc::vec::Vec;

use crate::tensor::Matrix;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
pub enum IdxError {
    #[error("bad magic: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("truncated file: need {needed} bytes, have {actual}")]
    Truncated { needed: usize, actual: usize },
    #[error("count mismatch: {images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
}

/// Decoded image tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    /// Flattens to `count x (rows*cols)` with values scaled into [0, 1].
    pub fn to_matrix(&self) -> Matrix {
        let data = self.pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
        Matrix::from_vec(self.count, self.rows * self.cols, data)
    }
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32, IdxError> {
    let chunk = bytes.get(at..at + 4).ok_or(IdxError::Truncated {
        needed: at + 4,
        actual: bytes.len(),
    })?;
    Ok(u32::from_be_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]))
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<(), IdxError> {
    let found = read_u32(bytes, 0)?;
    if found != expected {
        return Err(IdxError::BadMagic { expected, found });
    }
    Ok(())
}

fn payload(bytes: &[u8], header: usize, len: usize) -> Result<&[u8], IdxError> {
    let needed = header + len;
    bytes.get(header..needed).ok_or(IdxError::Truncated {
        needed,
        actual: bytes.len(),
    })
}

pub fn decode_images(bytes: &[u8]) -> Result<IdxImages, IdxError> {
    check_magic(bytes, IMAGES_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    // Headers can claim sizes whose product overflows; such files cannot be complete.
    let len = count.checked_mul(rows).and_then(|n| n.checked_mul(cols)).unwrap_or(usize::MAX - 16);
    let pixels = payload(bytes, 16, len)?.to_vec();
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels,
    })
}

pub fn decode_labels(bytes: &[u8]) -> Result<Vec<u8>, IdxError> {
    check_magic(bytes, LABELS_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    Ok(payload(bytes, 8, count)?.to_vec())
}

/// Decodes a matching image/label pair into a feature matrix and labels.
pub fn decode_pair(images: &[u8], labels: &[u8]) -> Result<(Matrix, Vec<usize>), IdxError> {
    let images = decode_images(images)?;
    let labels = decode_labels(labels)?;
    if images.count != labels.len() {
        return Err(IdxError::CountMismatch {
            images: images.count,
            labels: labels.len(),
        });
    }
    Ok((images.to_matrix(), labels.into_iter().map(usize::from).collect()))
}

pub fn encode_images(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let per = rows * cols;
    assert!(per > 0 && pixels.len().is_multiple_of(per), "pixel count must be a multiple of rows*cols");
    let count = pixels.len() / per;
    let mut out = Vec::with_capacity(16 + pixels.len());
    for word in [IMAGES_MAGIC, count as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&word.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_image_fixture() {
        let bytes = [
            0x00, 0x00, 0x08, 0x03, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2, 0, 51, 102, 255, 1, 2, 3, 4,
        ];
        let labels = [0x00, 0x00, 0x08, 0x01, 0, 0, 0, 2, 7, 3];
        let (x, y) = decode_pair(&bytes, &labels).unwrap();
        assert_eq!(x.shape(), (2, 4));
        assert_eq!(x.row(0), &[0.0, 51.0 / 255.0, 102.0 / 255.0, 1.0]);
        assert_eq!(x.row(1), &[1.0 / 255.0, 2.0 / 255.0, 3.0 / 255.0, 4.0 / 255.0]);
        assert_eq!(y, alloc::vec![7, 3]);
    }

    #[test]
    fn labels_with_image_magic() {
        let bad = encode_images(1, 1, &[1, 2]);
        assert_eq!(
            decode_labels(&bad),
            Err(IdxError::BadMagic {
                expected: LABELS_MAGIC,
                found: IMAGES_MAGIC
            })
        );
    }

    #[test]
    fn count_mismatch() {
        let images = encode_images(1, 2, &[0; 6]);
        let labels = encode_labels(&[0, 1]);
        assert_eq!(
            decode_pair(&images, &labels),
            Err(IdxError::CountMismatch { images: 3, labels: 2 })
        );
    }

    #[test]
    fn truncated() {
        let images = encode_images(2, 2, &[9; 8]);
        assert!(matches!(decode_images(&images[..20]), Err(IdxError::Truncated { needed: 24, actual: 20 })));
        assert!(matches!(decode_labels(&[0, 0, 8]), Err(IdxError::Truncated { .. })));
    }
}
