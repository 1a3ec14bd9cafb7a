//! On-disk format for prepared complementary datasets.
//!
//! Layout (all little-endian):
//! - 8-byte magic `WCLLCDS1`
//! - u32 K, u32 n, u32 d
//! - n x u16 hidden true labels
//! - n x u16 complementary labels
//! - n*d x f64 features, row-major

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{ComplementaryDataset, DataError};
use crate::numerics::Matrix;

const MAGIC: &[u8; 8] = b"WCLLCDS1";

pub fn save_complementary(
    dataset: &ComplementaryDataset,
    path: impl AsRef<Path>,
) -> Result<(), DataError> {
    let path = path.as_ref();
    let io_err = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    (|| -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(dataset.k() as u32)?;
        w.write_u32::<LittleEndian>(dataset.len() as u32)?;
        w.write_u32::<LittleEndian>(dataset.dim() as u32)?;
        for &t in dataset.true_labels_hidden() {
            w.write_u16::<LittleEndian>(t as u16)?;
        }
        for &c in dataset.comp_labels() {
            w.write_u16::<LittleEndian>(c as u16)?;
        }
        for &v in dataset.features().data() {
            w.write_f64::<LittleEndian>(v)?;
        }
        w.flush()
    })()
    .map_err(io_err)
}

pub fn load_complementary(path: impl AsRef<Path>) -> Result<ComplementaryDataset, DataError> {
    let path = path.as_ref();
    let io_err = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::open(path).map_err(io_err)?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(DataError::BadMagic {
            path: path.to_path_buf(),
            expected: u32::from_be_bytes([MAGIC[0], MAGIC[1], MAGIC[2], MAGIC[3]]),
            found: u32::from_be_bytes([magic[0], magic[1], magic[2], magic[3]]),
        });
    }
    (|| -> std::io::Result<ComplementaryDataset> {
        let k = r.read_u32::<LittleEndian>()? as usize;
        let n = r.read_u32::<LittleEndian>()? as usize;
        let d = r.read_u32::<LittleEndian>()? as usize;
        let mut true_labels = Vec::with_capacity(n);
        for _ in 0..n {
            true_labels.push(r.read_u16::<LittleEndian>()? as usize);
        }
        let mut comp_labels = Vec::with_capacity(n);
        for _ in 0..n {
            comp_labels.push(r.read_u16::<LittleEndian>()? as usize);
        }
        let mut data = vec![0.0f64; n * d];
        r.read_f64_into::<LittleEndian>(&mut data)?;
        Ok(ComplementaryDataset::new(
            Matrix::from_vec(n, d, data),
            comp_labels,
            true_labels,
            k,
        ))
    })()
    .map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{assign_complementary, AlphaVector, LabelingMode};
    use crate::numerics::SeededRng;

    #[test]
    fn roundtrip_preserves_everything() {
        let source = crate::datasets::LabeledDataset::new(
            Matrix::from_vec(6, 2, (0..12).map(|i| i as f64 * 0.25).collect()),
            vec![0, 1, 2, 0, 1, 2],
            3,
            "toy",
        );
        let alpha = AlphaVector::from_dataset(&source);
        let mut rng = SeededRng::new(1, 0);
        let ds = assign_complementary(&source, &alpha, LabelingMode::PerInstance, &mut rng)
            .unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.bin");
        save_complementary(&ds, &path).unwrap();
        let back = load_complementary(&path).unwrap();

        assert_eq!(back.k(), ds.k());
        assert_eq!(back.comp_labels(), ds.comp_labels());
        assert_eq!(back.true_labels_hidden(), ds.true_labels_hidden());
        assert_eq!(back.features().data(), ds.features().data());
    }

    #[test]
    fn wrong_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.bin");
        std::fs::write(&path, b"NOTWCLL!xxxxxxxxxxxx").unwrap();
        assert!(matches!(
            load_complementary(&path),
            Err(DataError::BadMagic { .. })
        ));
    }
}
