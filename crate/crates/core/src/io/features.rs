//! Per-video feature and label files.
//!
//! Features: magic `CLOTFEAT`, version `u32`, `N u32`, `D u32`, then `N·D`
//! little-endian `f32` values row-major. Computation happens in `f64`, so a
//! matrix written here reads back rounded to single precision.

use std::fs;
use std::path::Path;

use crate::error::{ClotError, Result};
use crate::numeric::DenseMatrix;

pub const FEATURE_MAGIC: &[u8; 8] = b"CLOTFEAT";
pub const FEATURE_VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

pub fn features_to_bytes(x: &DenseMatrix) -> Result<Vec<u8>> {
    let dim = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| ClotError::Input(format!("feature {what} {v} does not fit the file header")))
    };
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * x.as_slice().len());
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&dim(x.rows(), "row count")?.to_le_bytes());
    out.extend_from_slice(&dim(x.cols(), "dimension")?.to_le_bytes());
    for &v in x.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn features_from_bytes(bytes: &[u8]) -> Result<DenseMatrix> {
    let fmt = |offset: usize, message: String| ClotError::Format { offset: offset as u64, message };
    if bytes.len() < HEADER_LEN {
        return Err(fmt(bytes.len(), format!("truncated header: expected {HEADER_LEN} bytes, found {}", bytes.len())));
    }
    if &bytes[..8] != FEATURE_MAGIC {
        return Err(fmt(0, "not a feature file (bad magic)".into()));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
    let version = word(8);
    if version != FEATURE_VERSION {
        return Err(fmt(8, format!("unsupported feature file version {version}")));
    }
    let (n, d) = (word(12) as usize, word(16) as usize);
    let expected = n
        .checked_mul(d)
        .and_then(|c| c.checked_mul(4))
        .ok_or_else(|| fmt(12, format!("feature shape {n}×{d} overflows")))?;
    let found = bytes.len() - HEADER_LEN;
    if found != expected {
        let what = if found < expected { "truncated payload" } else { "trailing bytes after payload" };
        return Err(fmt(HEADER_LEN + found.min(expected), format!("{what}: expected {expected} bytes, found {found}")));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
        .collect();
    DenseMatrix::from_vec(n, d, data)
}

pub fn write_features(path: &Path, x: &DenseMatrix) -> Result<()> {
    fs::write(path, features_to_bytes(x)?)?;
    Ok(())
}

pub fn read_features(path: &Path) -> Result<DenseMatrix> {
    features_from_bytes(&fs::read(path)?)
}

/// One nonnegative integer per line; blank lines are not allowed except a
/// final newline.
pub fn parse_labels(text: &str) -> Result<Vec<usize>> {
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            line.trim()
                .parse::<usize>()
                .map_err(|_| ClotError::Input(format!("line {}: expected a nonnegative integer label, found {line:?}", i + 1)))
        })
        .collect()
}

pub fn labels_to_string(labels: &[usize]) -> String {
    let mut s = String::with_capacity(labels.len() * 3);
    for l in labels {
        s.push_str(&l.to_string());
        s.push('\n');
    }
    s
}

pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    fs::write(path, labels_to_string(labels))?;
    Ok(())
}

pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    parse_labels(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn small_matrix_round_trips() {
        let x = DenseMatrix::from_rows(&[[1.0, -2.5], [0.125, 3.0], [-0.0, 1e-3]]).unwrap();
        let back = features_from_bytes(&features_to_bytes(&x).unwrap()).unwrap();
        assert_eq!(back.shape(), (3, 2));
        for (a, b) in back.as_slice().iter().zip(x.as_slice()) {
            assert_eq!(*a, f64::from(*b as f32));
        }
        assert_eq!(features_to_bytes(&back).unwrap(), features_to_bytes(&x).unwrap());
    }

    #[test]
    fn truncated_payload_names_byte_counts() {
        let x = DenseMatrix::zeros(3, 2);
        let mut b = features_to_bytes(&x).unwrap();
        b.truncate(b.len() - 5);
        match features_from_bytes(&b) {
            Err(ClotError::Format { offset, message }) => {
                assert_eq!(offset, 39);
                assert!(message.contains("expected 24 bytes, found 19"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_magic_and_version() {
        let mut b = features_to_bytes(&DenseMatrix::zeros(1, 1)).unwrap();
        b[9] = 7;
        assert!(matches!(features_from_bytes(&b), Err(ClotError::Format { offset: 8, .. })));
        b[0] = b'X';
        assert!(matches!(features_from_bytes(&b), Err(ClotError::Format { offset: 0, .. })));
        assert!(matches!(features_from_bytes(b"CLOT"), Err(ClotError::Format { offset: 4, .. })));
    }

    #[test]
    fn label_text() {
        assert_eq!(parse_labels("0\n2\n 1 \n").unwrap(), vec![0, 2, 1]);
        assert!(parse_labels("0\n-1\n").is_err());
        assert!(parse_labels("0\n\n1").is_err());
        assert_eq!(labels_to_string(&[3, 0]), "3\n0\n");
    }

    proptest! {
        #[test]
        fn single_precision_values_round_trip_bit_exact(
            n in 0usize..6, d in 1usize..5, vals in proptest::collection::vec(
                prop::num::f32::NORMAL | prop::num::f32::SUBNORMAL | prop::num::f32::ZERO | prop::num::f32::INFINITE,
                30,
            )
        ) {
            let data: Vec<f64> = (0..n * d).map(|i| f64::from(vals[i])).collect();
            let x = DenseMatrix::from_vec(n, d, data.clone()).unwrap();
            let back = features_from_bytes(&features_to_bytes(&x).unwrap()).unwrap();
            let bits = |v: &[f64]| v.iter().map(|f| f.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(back.shape(), (n, d));
            prop_assert_eq!(bits(back.as_slice()), bits(&data));
            prop_assert_eq!(features_to_bytes(&back).unwrap(), features_to_bytes(&x).unwrap());
        }

        #[test]
        fn labels_round_trip(labels in proptest::collection::vec(0usize..100, 0..50)) {
            prop_assert_eq!(parse_labels(&labels_to_string(&labels)).unwrap(), labels);
        }
    }
}
