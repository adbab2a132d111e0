//! Frame-level acoustic features: log-Mel spectrogram, MFCC and YIN F0.
//!
//! Every framed routine produces `1 + floor((N - win) / hop)` frames for an
//! input of `N` samples.

mod f0;
mod featfile;
mod mel;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub use f0::{estimate_f0, F0Config, F0Track};
pub use featfile::{
    read_features, write_features, write_features_csv, FeatureFileError, FEATURE_MAGIC,
    FEATURE_VERSION,
};
pub use mel::{hz_to_mel, log_mel, mel_to_hz, mfcc, MelConfig, MelExtractor, MelFilter};

#[derive(Debug, Error, PartialEq)]
pub enum DspError {
    #[error("audio has {samples} samples, at least {needed} required")]
    AudioTooShort { samples: usize, needed: usize },
    #[error("invalid feature configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid F0 search band [{f_min}, {f_max}] Hz at {sample_rate} Hz")]
    InvalidBand {
        f_min: f64,
        f_max: f64,
        sample_rate: u32,
    },
    #[error("invalid feature matrix: {0}")]
    InvalidFeatures(String),
}

pub type Result<T, E = DspError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    LogMel,
    Mfcc,
    /// Externally computed frame features (bottleneck features, embeddings).
    External,
}

impl FeatureKind {
    pub fn code(self) -> u8 {
        match self {
            FeatureKind::LogMel => 0,
            FeatureKind::Mfcc => 1,
            FeatureKind::External => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(FeatureKind::LogMel),
            1 => Some(FeatureKind::Mfcc),
            2 => Some(FeatureKind::External),
            _ => None,
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureKind::LogMel => "log_mel",
            FeatureKind::Mfcc => "mfcc",
            FeatureKind::External => "external",
        })
    }
}

impl FromStr for FeatureKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "log_mel" | "logmel" | "mel" => Ok(FeatureKind::LogMel),
            "mfcc" => Ok(FeatureKind::Mfcc),
            "external" => Ok(FeatureKind::External),
            other => Err(format!("unknown feature kind `{other}`")),
        }
    }
}

/// Row-major `T x D` matrix of frame features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Vec<f32>,
    rows: usize,
    dim: usize,
    pub frame_hop_s: f64,
    pub frame_len_s: f64,
    pub kind: FeatureKind,
}

impl FeatureMatrix {
    pub fn new(
        data: Vec<f32>,
        dim: usize,
        kind: FeatureKind,
        frame_hop_s: f64,
        frame_len_s: f64,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(DspError::InvalidFeatures("dimension must be positive".into()));
        }
        if data.is_empty() || data.len() % dim != 0 {
            return Err(DspError::InvalidFeatures(format!(
                "{} values do not form rows of width {dim}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(DspError::InvalidFeatures(format!(
                "non-finite value at row {}, column {}",
                pos / dim,
                pos % dim
            )));
        }
        Ok(Self {
            rows: data.len() / dim,
            data,
            dim,
            frame_hop_s,
            frame_len_s,
            kind,
        })
    }

    /// Builds a matrix from rows of equal width.
    pub fn from_rows<R: AsRef<[f32]>>(
        rows: &[R],
        kind: FeatureKind,
        frame_hop_s: f64,
        frame_len_s: f64,
    ) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        if rows.iter().any(|r| r.as_ref().len() != dim) {
            return Err(DspError::InvalidFeatures("ragged rows".into()));
        }
        let data = rows.iter().flat_map(|r| r.as_ref().iter().copied()).collect();
        Self::new(data, dim, kind, frame_hop_s, frame_len_s)
    }

    /// Stacks matrices of equal width; metadata is taken from the first.
    pub fn concat(parts: &[FeatureMatrix]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| DspError::InvalidFeatures("nothing to concatenate".into()))?;
        if let Some(bad) = parts.iter().find(|p| p.dim != first.dim) {
            return Err(DspError::InvalidFeatures(format!(
                "dimension mismatch: {} vs {}",
                first.dim, bad.dim
            )));
        }
        let data = parts.iter().flat_map(|p| p.data.iter().copied()).collect();
        Self::new(data, first.dim, first.kind, first.frame_hop_s, first.frame_len_s)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Copy with only columns `range`, e.g. dropping c0 from MFCCs.
    pub fn columns(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.dim {
            return Err(DspError::InvalidFeatures(format!(
                "column range {range:?} outside 0..{}",
                self.dim
            )));
        }
        let data = self
            .iter_rows()
            .flat_map(|r| r[range.clone()].iter().copied())
            .collect();
        Self::new(
            data,
            range.len(),
            self.kind,
            self.frame_hop_s,
            self.frame_len_s,
        )
    }
}

/// Number of frames of length `win` at stride `hop` in `n` samples.
pub fn frame_count(n: usize, win: usize, hop: usize) -> Option<usize> {
    if n < win || hop == 0 {
        None
    } else {
        Some(1 + (n - win) / hop)
    }
}
