//! CIFAR-10 binary batches: 3073-byte records of one label byte followed by
//! 3072 pixel bytes (3x32x32). Rows are filtered to `keep_classes` and the
//! kept labels re-indexed densely in ascending order.

use std::collections::BTreeSet;
use std::path::Path;

use super::{DataError, LabeledDataset};
use crate::numerics::Matrix;

const RECORD_BYTES: usize = 3073;
const PIXELS: usize = 3072;

pub fn load_cifar10_bin<P: AsRef<Path>>(
    paths: &[P],
    keep_classes: &BTreeSet<usize>,
) -> Result<LabeledDataset, DataError> {
    assert!(
        !keep_classes.is_empty() && keep_classes.iter().all(|&c| c < 10),
        "keep_classes must be a nonempty subset of 0..10"
    );
    // Dense re-index: i-th smallest kept class becomes class i.
    let mut dense = [usize::MAX; 10];
    for (i, &c) in keep_classes.iter().enumerate() {
        dense[c] = i;
    }

    let mut pixels: Vec<f64> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    for path in paths {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if bytes.len() % RECORD_BYTES != 0 {
            return Err(DataError::CifarRecordSize {
                path: path.to_path_buf(),
                len: bytes.len(),
            });
        }
        for (record, chunk) in bytes.chunks_exact(RECORD_BYTES).enumerate() {
            let label = chunk[0];
            if label >= 10 {
                return Err(DataError::CifarLabel {
                    path: path.to_path_buf(),
                    record,
                    label,
                });
            }
            let mapped = dense[label as usize];
            if mapped == usize::MAX {
                continue;
            }
            labels.push(mapped);
            pixels.extend(chunk[1..].iter().map(|&b| b as f64 / 255.0));
        }
    }
    let features = Matrix::from_vec(labels.len(), PIXELS, pixels);
    Ok(LabeledDataset::new(
        features,
        labels,
        keep_classes.len(),
        "cifar10",
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(label: u8, fill: u8) -> Vec<u8> {
        let mut r = vec![fill; RECORD_BYTES];
        r[0] = label;
        r
    }

    #[test]
    fn keep_subset_filters_and_reindexes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("batch.bin");
        let mut bytes = record(3, 10);
        bytes.extend(record(1, 20));
        bytes.extend(record(7, 30));
        bytes.extend(record(1, 40));
        std::fs::write(&path, bytes).unwrap();

        let keep: BTreeSet<usize> = [1, 7].into();
        let ds = load_cifar10_bin(&[&path], &keep).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.k(), 2);
        assert_eq!(ds.labels(), &[0, 1, 0]); // 1 -> 0, 7 -> 1
        assert!((ds.features().get(0, 0) - 20.0 / 255.0).abs() < 1e-15);
        assert!((ds.features().get(1, 0) - 30.0 / 255.0).abs() < 1e-15);
    }

    #[test]
    fn two_record_fixture_keep_one_class() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("batch.bin");
        let mut bytes = record(0, 1);
        bytes.extend(record(1, 2));
        std::fs::write(&path, bytes).unwrap();

        let ds = load_cifar10_bin(&[&path], &[1].into()).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.labels(), &[0]);
        assert_eq!(ds.dim(), PIXELS);
    }

    #[test]
    fn keep_all_leaves_labels_unchanged() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("batch.bin");
        let mut bytes = Vec::new();
        for label in [4u8, 9, 0, 2] {
            bytes.extend(record(label, label));
        }
        std::fs::write(&path, bytes).unwrap();

        let ds = load_cifar10_bin(&[&path], &(0..10).collect()).unwrap();
        assert_eq!(ds.labels(), &[4, 9, 0, 2]);
        assert_eq!(ds.k(), 10);
    }

    #[test]
    fn bad_record_size_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("batch.bin");
        std::fs::write(&path, vec![0u8; RECORD_BYTES + 1]).unwrap();
        let err = load_cifar10_bin(&[&path], &(0..10).collect()).unwrap_err();
        assert!(matches!(err, DataError::CifarRecordSize { len, .. } if len == RECORD_BYTES + 1));
    }

    #[test]
    fn out_of_range_label_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("batch.bin");
        std::fs::write(&path, record(12, 0)).unwrap();
        let err = load_cifar10_bin(&[&path], &(0..10).collect()).unwrap_err();
        assert!(matches!(err, DataError::CifarLabel { label: 12, .. }));
    }
}
