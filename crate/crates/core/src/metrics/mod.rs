//! Objective evaluation of quantized speech features.

mod bottleneck;
mod dtw;
mod embedding;
mod mcd;
mod prosody;
mod stats;
mod sweep;

use thiserror::Error;

use crate::dsp::DspError;
use crate::vq::VqError;

pub use bottleneck::{bottleneck_report, pearson, BottleneckInput, BottleneckReport};
pub use dtw::{dtw_align, dtw_align_with, euclidean, DtwResult};
pub use embedding::{cosine_similarity, project_2d, Projection};
pub use mcd::{frame_mcd, mcd, McdOptions, MCD_SCALE};
pub use prosody::{
    percentile, profile_audio, prosody_delta, prosody_stats, trim_silence, ProsodyConfig,
    ProsodyDelta, ProsodyProfile,
};
pub use stats::{
    anova_oneway, f_sf, incomplete_beta, ln_gamma, paired_t_test, t_sf, AnovaResult, TTestResult,
    Tail,
};
pub use sweep::{codebook_sweep, SweepConfig, SweepReport, SweepRow};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("empty input")]
    EmptyInput,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("{0} features cannot be scored as cepstra")]
    WrongKind(crate::dsp::FeatureKind),
    #[error("no comparable pairs ({skipped} skipped for missing F0)")]
    NoComparablePairs { skipped: usize },
    #[error("zero vector")]
    ZeroVector,
    #[error("{found} points given, at least {needed} required")]
    TooFewPoints { found: usize, needed: usize },
    #[error("perplexity {perplexity} must be positive and below (N - 1) / 3 = {limit}")]
    BadPerplexity { perplexity: f64, limit: f64 },
    #[error("degenerate variance: {0}")]
    DegenerateVariance(String),
    #[error("need at least 2 groups, got {0}")]
    TooFewGroups(usize),
    #[error("need at least 2 values per sample, got {0}")]
    TooFewValues(usize),
    #[error("invalid sweep configuration: {0}")]
    InvalidSweep(String),
    #[error(transparent)]
    Vq(#[from] VqError),
    #[error(transparent)]
    Dsp(#[from] DspError),
}

pub type Result<T, E = MetricsError> = std::result::Result<T, E>;
