//! IDX image/label file parsing (big-endian headers).
//!
//! Images: magic 0x00000803, then u32 count/rows/cols, then one byte per
//! pixel. Labels: magic 0x00000801, then u32 count, then one byte per
//! label. Pixels are scaled to `[0, 1]` by division by 255.

use std::io::Cursor;
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt};

use super::{DataError, LabeledDataset};
use crate::numerics::Matrix;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

pub fn load_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<LabeledDataset, DataError> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let (n_images, dim, pixels) = read_images(images_path)?;
    let labels = read_labels(labels_path)?;
    if n_images != labels.len() {
        return Err(DataError::CountMismatch {
            images_path: images_path.to_path_buf(),
            images: n_images,
            labels_path: labels_path.to_path_buf(),
            labels: labels.len(),
        });
    }
    let features = Matrix::from_vec(
        n_images,
        dim,
        pixels.iter().map(|&b| b as f64 / 255.0).collect(),
    );
    let k = labels.iter().cloned().max().map_or(0, |m| m + 1);
    let name = images_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "idx".into());
    Ok(LabeledDataset::new(features, labels, k, name))
}

fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    std::fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_u32(cursor: &mut Cursor<&[u8]>, path: &Path) -> Result<u32, DataError> {
    let offset = cursor.position() as usize;
    cursor
        .read_u32::<BigEndian>()
        .map_err(|_| DataError::Truncated {
            path: path.to_path_buf(),
            offset,
            needed: 4,
            available: cursor.get_ref().len().saturating_sub(offset),
        })
}

fn read_images(path: &Path) -> Result<(usize, usize, Vec<u8>), DataError> {
    let bytes = read_file(path)?;
    let mut cursor = Cursor::new(bytes.as_slice());
    let magic = read_u32(&mut cursor, path)?;
    if magic != IMAGE_MAGIC {
        return Err(DataError::BadMagic {
            path: path.to_path_buf(),
            expected: IMAGE_MAGIC,
            found: magic,
        });
    }
    let count = read_u32(&mut cursor, path)? as usize;
    let rows = read_u32(&mut cursor, path)? as usize;
    let cols = read_u32(&mut cursor, path)? as usize;
    let offset = cursor.position() as usize;
    let needed = count * rows * cols;
    let payload = &bytes[offset.min(bytes.len())..];
    if payload.len() < needed {
        return Err(DataError::Truncated {
            path: path.to_path_buf(),
            offset,
            needed,
            available: payload.len(),
        });
    }
    Ok((count, rows * cols, payload[..needed].to_vec()))
}

fn read_labels(path: &Path) -> Result<Vec<usize>, DataError> {
    let bytes = read_file(path)?;
    let mut cursor = Cursor::new(bytes.as_slice());
    let magic = read_u32(&mut cursor, path)?;
    if magic != LABEL_MAGIC {
        return Err(DataError::BadMagic {
            path: path.to_path_buf(),
            expected: LABEL_MAGIC,
            found: magic,
        });
    }
    let count = read_u32(&mut cursor, path)? as usize;
    let offset = cursor.position() as usize;
    let payload = &bytes[offset.min(bytes.len())..];
    if payload.len() < count {
        return Err(DataError::Truncated {
            path: path.to_path_buf(),
            offset,
            needed: count,
            available: payload.len(),
        });
    }
    Ok(payload[..count].iter().map(|&b| b as usize).collect())
}
