//! Audio ingestion, corpus manifests, splits and parallel pairing.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::TARGET_SAMPLE_RATE;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("unsupported audio format in {path}: {detail}")]
    UnsupportedFormat { path: PathBuf, detail: String },
    #[error("corrupt WAV header in {path}: {detail}")]
    CorruptHeader { path: PathBuf, detail: String },
    #[error("no audio samples in {0}")]
    EmptyAudio(PathBuf),
    #[error("non-finite sample in audio buffer")]
    NonFiniteSample,
    #[error("invalid sample rate {0}")]
    InvalidSampleRate(u32),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("manifest line {line}: {detail}")]
    BadManifest { line: usize, detail: String },
    #[error("duplicate manifest entry for speaker {speaker_id}, utterance {utt_id}")]
    DuplicateEntry { speaker_id: String, utt_id: String },
    #[error("manifest references missing file {0}")]
    MissingFile(PathBuf),
    #[error("speaker {speaker_id} has {available} utterances, split needs {requested}")]
    InsufficientUtterances {
        speaker_id: String,
        available: usize,
        requested: usize,
    },
    #[error("unknown speaker {0}")]
    UnknownSpeaker(String),
    #[error("speakers {0} and {1} share no utterance ids")]
    NoCommonUtterances(String, String),
    #[error("cannot pair speaker {0} with itself")]
    SameSpeaker(String),
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

/// Mono audio with samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(CorpusError::InvalidSampleRate(sample_rate));
        }
        if samples.is_empty() {
            return Err(CorpusError::EmptyAudio(PathBuf::new()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(CorpusError::NonFiniteSample);
        }
        let samples = samples.into_iter().map(|s| s.clamp(-1.0, 1.0)).collect();
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Copy of `range` as a new buffer. Returns `None` for an empty range.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Option<Self> {
        let s = self.samples.get(range)?;
        if s.is_empty() {
            return None;
        }
        Some(Self {
            samples: s.to_vec(),
            sample_rate: self.sample_rate,
        })
    }

    /// Linear-interpolation resampling. Output length is
    /// `round(len * target / source)`, never less than one sample.
    pub fn resample_linear(&self, target_rate: u32) -> Result<Self> {
        if target_rate == 0 {
            return Err(CorpusError::InvalidSampleRate(target_rate));
        }
        if target_rate == self.sample_rate {
            return Ok(self.clone());
        }
        let ratio = self.sample_rate as f64 / target_rate as f64;
        let out_len = ((self.samples.len() as f64 / ratio).round() as usize).max(1);
        let last = self.samples.len() - 1;
        let samples = (0..out_len)
            .map(|n| {
                let pos = n as f64 * ratio;
                let i = (pos.floor() as usize).min(last);
                let frac = pos - i as f64;
                let a = self.samples[i] as f64;
                let b = self.samples[(i + 1).min(last)] as f64;
                (a + (b - a) * frac) as f32
            })
            .collect();
        Ok(Self {
            samples,
            sample_rate: target_rate,
        })
    }
}

/// Reads a RIFF/WAVE file holding PCM16 or float32 samples. Multi-channel
/// input is downmixed by channel mean; the sample rate is preserved.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_owned(),
        source,
    })?;
    // the file opened, so any read failure from here on is a malformed stream
    let reader = hound::WavReader::new(io::BufReader::new(file)).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(CorpusError::CorruptHeader {
            path: path.to_owned(),
            detail: "zero channels".into(),
        });
    }
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (fmt, bits) => {
            return Err(CorpusError::UnsupportedFormat {
                path: path.to_owned(),
                detail: format!("{fmt:?} with {bits} bits per sample"),
            })
        }
    };
    if interleaved.len() < channels {
        return Err(CorpusError::EmptyAudio(path.to_owned()));
    }
    let mono: Vec<f32> = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f32>() / channels as f32)
        .collect();
    AudioBuffer::new(mono, spec.sample_rate).map_err(|e| match e {
        CorpusError::EmptyAudio(_) => CorpusError::EmptyAudio(path.to_owned()),
        other => other,
    })
}

/// [`load_wav`] followed by resampling to 16 kHz when needed.
pub fn load_wav_16k(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    load_wav(path)?.resample_linear(TARGET_SAMPLE_RATE)
}

/// Writes a mono PCM16 WAV. Samples are scaled by 32768 and saturated to the `i16` range.
pub fn write_wav_pcm16(path: impl AsRef<Path>, audio: &AudioBuffer) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: audio.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let io_err = |e: hound::Error| CorpusError::Io {
        path: path.to_owned(),
        source: match e {
            hound::Error::IoError(source) => source,
            other => io::Error::other(other.to_string()),
        },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(io_err)?;
    for &s in &audio.samples {
        let v = (s as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(v).map_err(io_err)?;
    }
    writer.finalize().map_err(io_err)
}

fn map_hound(path: &Path, err: hound::Error) -> CorpusError {
    let path = path.to_owned();
    match err {
        hound::Error::IoError(source) => CorpusError::CorruptHeader {
            path,
            detail: source.to_string(),
        },
        hound::Error::FormatError(detail) => CorpusError::CorruptHeader {
            path,
            detail: detail.to_string(),
        },
        hound::Error::Unsupported => CorpusError::UnsupportedFormat {
            path,
            detail: "codec not supported".into(),
        },
        other => CorpusError::UnsupportedFormat {
            path,
            detail: other.to_string(),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub utt_id: String,
    pub speaker_id: String,
    pub path: PathBuf,
    pub text: Option<String>,
}

/// Utterance listing. `(speaker_id, utt_id)` is unique; the same `utt_id`
/// recurring across speakers marks parallel text.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
}

const MANIFEST_HEADER: &str = "utt_id\tspeaker_id\tpath\ttext";

impl CorpusManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert((e.speaker_id.as_str(), e.utt_id.as_str())) {
                return Err(CorpusError::DuplicateEntry {
                    speaker_id: e.speaker_id.clone(),
                    utt_id: e.utt_id.clone(),
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn parse_tsv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, header)) if header.trim_end_matches('\r') == MANIFEST_HEADER => {}
            _ => {
                return Err(CorpusError::BadManifest {
                    line: 1,
                    detail: format!("expected header `{}`", MANIFEST_HEADER.replace('\t', "<TAB>")),
                })
            }
        }
        let mut entries = Vec::new();
        for (idx, raw) in lines {
            let line = raw.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if !(3..=4).contains(&fields.len()) {
                return Err(CorpusError::BadManifest {
                    line: idx + 1,
                    detail: format!("expected 4 tab-separated fields, got {}", fields.len()),
                });
            }
            if fields[..3].iter().any(|f| f.is_empty()) {
                return Err(CorpusError::BadManifest {
                    line: idx + 1,
                    detail: "utt_id, speaker_id and path must be non-empty".into(),
                });
            }
            let text = fields.get(3).filter(|t| !t.is_empty()).map(|t| t.to_string());
            entries.push(ManifestEntry {
                utt_id: fields[0].to_string(),
                speaker_id: fields[1].to_string(),
                path: PathBuf::from(fields[2]),
                text,
            });
        }
        Self::new(entries)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::parse_tsv(&text)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from(MANIFEST_HEADER);
        out.push('\n');
        for e in &self.entries {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                e.utt_id,
                e.speaker_id,
                e.path.display(),
                e.text.as_deref().unwrap_or("")
            ));
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_tsv()).map_err(|source| CorpusError::Io {
            path: path.to_owned(),
            source,
        })
    }

    /// Absolute location of an entry's audio: relative paths are joined onto `root`.
    pub fn resolve(entry: &ManifestEntry, root: &Path) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            root.join(&entry.path)
        }
    }

    /// Checks every referenced file exists under `root`.
    pub fn validate(&self, root: &Path) -> Result<()> {
        for e in &self.entries {
            let p = Self::resolve(e, root);
            if !p.is_file() {
                return Err(CorpusError::MissingFile(p));
            }
        }
        Ok(())
    }

    pub fn speakers(&self) -> BTreeSet<&str> {
        self.entries.iter().map(|e| e.speaker_id.as_str()).collect()
    }

    fn by_speaker(&self) -> BTreeMap<&str, BTreeMap<&str, &ManifestEntry>> {
        let mut map: BTreeMap<&str, BTreeMap<&str, &ManifestEntry>> = BTreeMap::new();
        for e in &self.entries {
            map.entry(e.speaker_id.as_str())
                .or_default()
                .insert(e.utt_id.as_str(), e);
        }
        map
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

/// Result of [`split_corpus`]. `unused` holds entries beyond the requested
/// sizes so that the four parts always partition the input.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CorpusSplit {
    pub train: CorpusManifest,
    pub val: CorpusManifest,
    pub test: CorpusManifest,
    pub unused: CorpusManifest,
}

/// Per-speaker split driven by one seeded shuffle of the sorted global
/// `utt_id` list, so parallel utterances land in the same partition for
/// every speaker.
pub fn split_corpus(manifest: &CorpusManifest, sizes: SplitSizes, seed: u64) -> Result<CorpusSplit> {
    let by_speaker = manifest.by_speaker();
    for (spk, utts) in &by_speaker {
        if utts.len() < sizes.total() {
            return Err(CorpusError::InsufficientUtterances {
                speaker_id: spk.to_string(),
                available: utts.len(),
                requested: sizes.total(),
            });
        }
    }

    let mut order: Vec<&str> = manifest
        .entries
        .iter()
        .map(|e| e.utt_id.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let mut split = CorpusSplit::default();
    for utts in by_speaker.values() {
        let mut taken = 0usize;
        for utt in &order {
            let Some(entry) = utts.get(utt) else { continue };
            let bucket = if taken < sizes.train {
                &mut split.train
            } else if taken < sizes.train + sizes.val {
                &mut split.val
            } else if taken < sizes.total() {
                &mut split.test
            } else {
                &mut split.unused
            };
            bucket.entries.push((*entry).clone());
            taken += 1;
        }
    }
    for part in [
        &mut split.train,
        &mut split.val,
        &mut split.test,
        &mut split.unused,
    ] {
        part.entries
            .sort_by(|a, b| (&a.speaker_id, &a.utt_id).cmp(&(&b.speaker_id, &b.utt_id)));
    }
    Ok(split)
}

/// Two recordings of the same text by different speakers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UtterancePair {
    pub a: ManifestEntry,
    pub b: ManifestEntry,
}

/// One pair per `utt_id` recorded by both speakers, sorted by `utt_id`.
pub fn pair_parallel(
    manifest: &CorpusManifest,
    speaker_a: &str,
    speaker_b: &str,
) -> Result<Vec<UtterancePair>> {
    if speaker_a == speaker_b {
        return Err(CorpusError::SameSpeaker(speaker_a.to_string()));
    }
    let by_speaker = manifest.by_speaker();
    let a = by_speaker
        .get(speaker_a)
        .ok_or_else(|| CorpusError::UnknownSpeaker(speaker_a.to_string()))?;
    let b = by_speaker
        .get(speaker_b)
        .ok_or_else(|| CorpusError::UnknownSpeaker(speaker_b.to_string()))?;
    let pairs: Vec<UtterancePair> = a
        .iter()
        .filter_map(|(utt, ea)| {
            b.get(utt).map(|eb| UtterancePair {
                a: (*ea).clone(),
                b: (*eb).clone(),
            })
        })
        .collect();
    if pairs.is_empty() {
        return Err(CorpusError::NoCommonUtterances(
            speaker_a.to_string(),
            speaker_b.to_string(),
        ));
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn entry(utt: &str, spk: &str) -> ManifestEntry {
        ManifestEntry {
            utt_id: utt.into(),
            speaker_id: spk.into(),
            path: PathBuf::from(format!("{spk}/{utt}.wav")),
            text: None,
        }
    }

    fn corpus(speakers: &[&str], n: usize) -> CorpusManifest {
        let mut entries = Vec::new();
        for spk in speakers {
            for i in 0..n {
                entries.push(entry(&format!("a{:04}", i + 1), spk));
            }
        }
        CorpusManifest::new(entries).unwrap()
    }

    /// Hand-assembled RIFF header followed by raw sample bytes.
    fn riff(format_tag: u16, channels: u16, rate: u32, bits: u16, data: &[u8]) -> Vec<u8> {
        let block = channels * bits / 8;
        let mut v = Vec::new();
        v.extend_from_slice(b"RIFF");
        v.extend_from_slice(&(36 + data.len() as u32).to_le_bytes());
        v.extend_from_slice(b"WAVEfmt ");
        v.extend_from_slice(&16u32.to_le_bytes());
        v.extend_from_slice(&format_tag.to_le_bytes());
        v.extend_from_slice(&channels.to_le_bytes());
        v.extend_from_slice(&rate.to_le_bytes());
        v.extend_from_slice(&(rate * block as u32).to_le_bytes());
        v.extend_from_slice(&block.to_le_bytes());
        v.extend_from_slice(&bits.to_le_bytes());
        v.extend_from_slice(b"data");
        v.extend_from_slice(&(data.len() as u32).to_le_bytes());
        v.extend_from_slice(data);
        v
    }

    fn write_bytes(bytes: &[u8]) -> tempfile::NamedTempFile {
        let f = tempfile::NamedTempFile::new().unwrap();
        fs::write(f.path(), bytes).unwrap();
        f
    }

    #[test]
    fn pcm16_silence_reads_as_zeros() {
        let f = write_bytes(&riff(1, 1, 16000, 16, &vec![0u8; 32000]));
        let audio = load_wav(f.path()).unwrap();
        assert_eq!(audio.len(), 16000);
        assert_eq!(audio.sample_rate(), 16000);
        assert!(audio.samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn stereo_antiphase_downmixes_to_zero() {
        let mut data = Vec::new();
        for i in 0..800i16 {
            let x = (i * 37) % 20000 - 10000;
            data.extend_from_slice(&x.to_le_bytes());
            data.extend_from_slice(&(-x).to_le_bytes());
        }
        let f = write_bytes(&riff(1, 2, 16000, 16, &data));
        let audio = load_wav(f.path()).unwrap();
        assert_eq!(audio.len(), 800);
        assert!(audio.samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn full_scale_square_wave_bytes() {
        let mut data = Vec::new();
        for i in 0..64 {
            let v: i16 = if i % 2 == 0 { 32767 } else { -32767 };
            data.extend_from_slice(&v.to_le_bytes());
        }
        let f = write_bytes(&riff(1, 1, 16000, 16, &data));
        let audio = load_wav(f.path()).unwrap();
        for (i, &s) in audio.samples().iter().enumerate() {
            let expected = if i % 2 == 0 { 32767.0 / 32768.0 } else { -32767.0 / 32768.0 };
            assert_eq!(s, expected as f32);
        }
    }

    #[test]
    fn float32_wav_is_read() {
        let mut data = Vec::new();
        for v in [0.5f32, -0.25, 0.0, 1.0] {
            data.extend_from_slice(&v.to_le_bytes());
        }
        let f = write_bytes(&riff(3, 1, 22050, 32, &data));
        let audio = load_wav(f.path()).unwrap();
        assert_eq!(audio.samples(), &[0.5, -0.25, 0.0, 1.0]);
        assert_eq!(audio.sample_rate(), 22050);
    }

    #[test]
    fn wav_errors() {
        let compressed = write_bytes(&riff(0x55, 1, 16000, 16, &[0u8; 16]));
        assert!(matches!(
            load_wav(compressed.path()),
            Err(CorpusError::UnsupportedFormat { .. })
        ));
        let garbage = write_bytes(b"RIFF\x10\x00\x00\x00WAVEjunkjunk");
        let err = load_wav(garbage.path());
        assert!(matches!(err, Err(CorpusError::CorruptHeader { .. })), "{err:?}");
        let empty = write_bytes(&riff(1, 1, 16000, 16, &[]));
        assert!(matches!(load_wav(empty.path()), Err(CorpusError::EmptyAudio(_))));
    }

    #[test]
    fn resample_preserves_endpoints_and_length() {
        let a = AudioBuffer::new((0..8000).map(|i| i as f32 / 8000.0).collect(), 8000).unwrap();
        let r = a.resample_linear(16000).unwrap();
        assert_eq!(r.len(), 16000);
        assert_eq!(r.sample_rate(), 16000);
        assert_eq!(r.samples()[0], 0.0);
        // a linear ramp stays linear under linear interpolation
        assert!((r.samples()[1001] - 500.5 / 8000.0).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn pcm16_round_trip_within_quantization(samples in prop::collection::vec(-1.0f32..1.0, 1..400)) {
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("x.wav");
            let a = AudioBuffer::new(samples.clone(), 16000).unwrap();
            write_wav_pcm16(&p, &a).unwrap();
            let b = load_wav(&p).unwrap();
            prop_assert_eq!(b.len(), samples.len());
            for (x, y) in samples.iter().zip(b.samples()) {
                prop_assert!((x - y).abs() <= 1.0 / 32768.0 + 1e-7);
            }
        }

        #[test]
        fn split_partitions_input(seed in any::<u64>(), train in 0usize..10, val in 0usize..5) {
            let m = corpus(&["bdl", "tlv", "rms"], 15);
            let sizes = SplitSizes { train, val, test: 15 - train - val };
            let s = split_corpus(&m, sizes, seed).unwrap();
            let mut all: Vec<_> = [&s.train, &s.val, &s.test, &s.unused]
                .iter()
                .flat_map(|p| p.entries.iter().map(|e| (e.speaker_id.clone(), e.utt_id.clone())))
                .collect();
            let n = all.len();
            all.sort();
            all.dedup();
            prop_assert_eq!(n, all.len());
            prop_assert_eq!(n, m.entries.len());
            prop_assert!(s.unused.entries.is_empty());
        }
    }

    #[test]
    fn split_1032_50_50() {
        let m = corpus(&["bdl", "njs"], 1132);
        let s = split_corpus(&m, SplitSizes { train: 1032, val: 50, test: 50 }, 7).unwrap();
        for spk in ["bdl", "njs"] {
            let count = |p: &CorpusManifest| p.entries.iter().filter(|e| e.speaker_id == spk).count();
            assert_eq!(count(&s.train), 1032);
            assert_eq!(count(&s.val), 50);
            assert_eq!(count(&s.test), 50);
        }
        // parallel preservation: identical utt_id sets per split for both speakers
        let ids = |p: &CorpusManifest, spk: &str| -> BTreeSet<String> {
            p.entries.iter().filter(|e| e.speaker_id == spk).map(|e| e.utt_id.clone()).collect()
        };
        assert_eq!(ids(&s.val, "bdl"), ids(&s.val, "njs"));
        assert_eq!(ids(&s.test, "bdl"), ids(&s.test, "njs"));
    }

    #[test]
    fn split_degenerate_and_deterministic() {
        let m = corpus(&["bdl"], 12);
        let s = split_corpus(&m, SplitSizes { train: 12, val: 0, test: 0 }, 3).unwrap();
        assert_eq!(s.train, m);
        assert!(s.val.entries.is_empty() && s.test.entries.is_empty());

        let sizes = SplitSizes { train: 6, val: 3, test: 3 };
        assert_eq!(split_corpus(&m, sizes, 9).unwrap(), split_corpus(&m, sizes, 9).unwrap());
        assert!(matches!(
            split_corpus(&m, SplitSizes { train: 10, val: 2, test: 1 }, 0),
            Err(CorpusError::InsufficientUtterances { .. })
        ));
    }

    #[test]
    fn pairing() {
        let m = CorpusManifest::new(vec![
            entry("a0001", "bdl"),
            entry("a0002", "bdl"),
            entry("a0003", "bdl"),
            entry("a0002", "tlv"),
            entry("a0001", "tlv"),
            entry("b0001", "ebvs"),
        ])
        .unwrap();
        let pairs = pair_parallel(&m, "bdl", "tlv").unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].a.utt_id, "a0001");
        assert_eq!(pairs[1].b.utt_id, "a0002");
        assert!(pairs.iter().all(|p| p.a.speaker_id == "bdl" && p.b.speaker_id == "tlv"));
        assert!(matches!(
            pair_parallel(&m, "bdl", "ebvs"),
            Err(CorpusError::NoCommonUtterances(..))
        ));
        assert!(matches!(pair_parallel(&m, "bdl", "bdl"), Err(CorpusError::SameSpeaker(_))));
        assert!(matches!(pair_parallel(&m, "bdl", "zzz"), Err(CorpusError::UnknownSpeaker(_))));
    }

    #[test]
    fn manifest_tsv_round_trip_and_validation() {
        let text = "utt_id\tspeaker_id\tpath\ttext\na0001\tbdl\tbdl/a0001.wav\tAuthor of the danger trail\na0002\tbdl\tbdl/a0002.wav\t\n";
        let m = CorpusManifest::parse_tsv(text).unwrap();
        assert_eq!(m.entries.len(), 2);
        assert_eq!(m.entries[1].text, None);
        assert_eq!(CorpusManifest::parse_tsv(&m.to_tsv()).unwrap(), m);

        assert!(matches!(
            CorpusManifest::parse_tsv("utt\tspk\n"),
            Err(CorpusError::BadManifest { line: 1, .. })
        ));
        let dup = "utt_id\tspeaker_id\tpath\ttext\na\tx\tp\t\na\tx\tq\t\n";
        assert!(matches!(
            CorpusManifest::parse_tsv(dup),
            Err(CorpusError::DuplicateEntry { .. })
        ));
        let dir = tempfile::tempdir().unwrap();
        match m.validate(dir.path()) {
            Err(CorpusError::MissingFile(p)) => assert!(p.ends_with("bdl/a0001.wav")),
            other => panic!("expected MissingFile, got {other:?}"),
        }
    }
}
