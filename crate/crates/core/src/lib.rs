//! Discrete speech-unit toolbench.
//!
//! Frame-level speech features are clustered with k-means, every frame is
//! replaced by its nearest codeword, and adjacent repeats are collapsed into
//! runs. The crate also carries the evaluation side of that pipeline:
//!
//! - [`corpus`]: WAV ingestion, TSV manifests, deterministic splits, parallel pairs
//! - [`dsp`]: log-Mel, MFCC and YIN F0 extraction, plus the binary feature dump
//! - [`vq`]: codebook training, quantization, duplicate removal and inversion
//! - [`metrics`]: DTW, mel cepstral distortion, codebook sweeps, prosody deltas,
//!   embedding similarity and projection, bottleneck diagnostics, ANOVA and t-tests
//! - [`testbench`]: counterbalanced AB/ABX listening-test plans and response aggregation
//! - [`synth`]: a small source-filter speech synthesizer used to build desk corpora
//!
//! Everything here is synchronous and free of shared mutable state; the HTTP
//! response collector lives in the `vqdr-service` crate.

pub mod corpus;
pub mod dsp;
pub mod metrics;
pub mod synth;
pub mod testbench;
pub mod vq;

pub use corpus::{AudioBuffer, CorpusManifest, ManifestEntry, UtterancePair};
pub use dsp::{F0Track, FeatureKind, FeatureMatrix};
pub use vq::{CodeSequence, Codebook, RunLengthSequence};

/// Sample rate every DSP routine assumes after ingestion.
pub const TARGET_SAMPLE_RATE: u32 = 16_000;
