//! Binary feature dump.
//!
//! Layout, all little-endian: magic `VQDRFEAT`, version `u16`, kind `u8`,
//! rows `u32`, dim `u32`, hop seconds `f64`, window seconds `f64`, then
//! `rows * dim` `f32` values row-major.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{FeatureKind, FeatureMatrix};

pub const FEATURE_MAGIC: &[u8; 8] = b"VQDRFEAT";
pub const FEATURE_VERSION: u16 = 1;
const HEADER_LEN: usize = 8 + 2 + 1 + 4 + 4 + 8 + 8;

#[derive(Debug, Error)]
pub enum FeatureFileError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{0} is not a feature dump")]
    BadMagic(PathBuf),
    #[error("{path}: unsupported feature dump version {found}")]
    VersionMismatch { path: PathBuf, found: u16 },
    #[error("{path}: truncated, expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("{path}: {detail}")]
    Invalid { path: PathBuf, detail: String },
}

pub fn encode_features(m: &FeatureMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + m.as_slice().len() * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.push(m.kind.code());
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.dim() as u32).to_le_bytes());
    out.extend_from_slice(&m.frame_hop_s.to_le_bytes());
    out.extend_from_slice(&m.frame_len_s.to_le_bytes());
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_features(bytes: &[u8], path: &Path) -> Result<FeatureMatrix, FeatureFileError> {
    if bytes.len() < 10 || &bytes[..8] != FEATURE_MAGIC {
        return Err(FeatureFileError::BadMagic(path.to_owned()));
    }
    let version = u16::from_le_bytes([bytes[8], bytes[9]]);
    if version != FEATURE_VERSION {
        return Err(FeatureFileError::VersionMismatch {
            path: path.to_owned(),
            found: version,
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(FeatureFileError::Truncated {
            path: path.to_owned(),
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let kind = FeatureKind::from_code(bytes[10]).ok_or_else(|| FeatureFileError::Invalid {
        path: path.to_owned(),
        detail: format!("unknown feature kind code {}", bytes[10]),
    })?;
    let rows = u32_at(11);
    let dim = u32_at(15);
    let hop = f64_at(19);
    let win = f64_at(27);
    let expected = HEADER_LEN + rows * dim * 4;
    if bytes.len() != expected {
        return Err(FeatureFileError::Truncated {
            path: path.to_owned(),
            expected,
            found: bytes.len(),
        });
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    FeatureMatrix::new(data, dim, kind, hop, win).map_err(|e| FeatureFileError::Invalid {
        path: path.to_owned(),
        detail: e.to_string(),
    })
}

pub fn write_features(path: impl AsRef<Path>, m: &FeatureMatrix) -> Result<(), FeatureFileError> {
    let path = path.as_ref();
    fs::write(path, encode_features(m)).map_err(|source| FeatureFileError::Io {
        path: path.to_owned(),
        source,
    })
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureMatrix, FeatureFileError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| FeatureFileError::Io {
        path: path.to_owned(),
        source,
    })?;
    decode_features(&bytes, path)
}

/// Debug CSV: header `frame,c0,c1,...`, one row per frame.
pub fn write_features_csv(mut w: impl Write, m: &FeatureMatrix) -> io::Result<()> {
    let header: Vec<String> = (0..m.dim()).map(|i| format!("c{i}")).collect();
    writeln!(w, "frame,{}", header.join(","))?;
    for (t, row) in m.iter_rows().enumerate() {
        let vals: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{t},{}", vals.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn dump_round_trip(rows in 1usize..20, dim in 1usize..12, seed in any::<u32>()) {
            let data: Vec<f32> = (0..rows * dim)
                .map(|i| ((i as u32).wrapping_mul(2654435761).wrapping_add(seed) as f32) * 1e-9)
                .collect();
            let m = FeatureMatrix::new(data, dim, FeatureKind::External, 0.01, 0.025).unwrap();
            let back = decode_features(&encode_features(&m), Path::new("mem")).unwrap();
            prop_assert_eq!(back, m);
        }
    }

    #[test]
    fn header_errors() {
        let m = FeatureMatrix::new(vec![1.0; 6], 3, FeatureKind::Mfcc, 0.01, 0.025).unwrap();
        let bytes = encode_features(&m);
        let p = Path::new("x.feat");
        assert!(matches!(decode_features(&bytes[..5], p), Err(FeatureFileError::BadMagic(_))));
        assert!(matches!(
            decode_features(&bytes[..bytes.len() - 1], p),
            Err(FeatureFileError::Truncated { .. })
        ));
        let mut v2 = bytes.clone();
        v2[8] = 9;
        assert!(matches!(
            decode_features(&v2, p),
            Err(FeatureFileError::VersionMismatch { found: 9, .. })
        ));
        let mut csv = Vec::new();
        write_features_csv(&mut csv, &m).unwrap();
        assert!(String::from_utf8(csv).unwrap().starts_with("frame,c0,c1,c2\n0,1,1,1\n"));
    }
}
