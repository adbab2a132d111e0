//! Codebook learning, frame quantization and adjacent-duplicate removal.
//!
//! A [`Codebook`] is trained with k-means++ seeding followed by Lloyd
//! iterations. [`quantize`] maps every frame to its nearest codeword,
//! [`remove_duplicates`] collapses repeated adjacent codes into runs, and
//! [`expand`] / [`invert`] undo those steps for evaluation.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::dsp::{FeatureKind, FeatureMatrix};

pub const CODEBOOK_MAGIC: &[u8; 8] = b"VQDRCODE";
pub const CODEBOOK_VERSION: u16 = 1;
pub const DEFAULT_CODEBOOK_SIZE: usize = 128;

#[derive(Debug, Error)]
pub enum VqError {
    #[error("codebook size must be at least 1")]
    InvalidK,
    #[error("{points} training rows cannot support {k} codewords")]
    TooFewPoints { points: usize, k: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite value in training data")]
    NonFiniteInput,
    #[error("code {code} out of range for a codebook of size {k}")]
    CodeOutOfRange { code: u32, k: usize },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{0} is not a codebook file")]
    BadMagic(PathBuf),
    #[error("{path}: unsupported codebook version {found}")]
    VersionMismatch { path: PathBuf, found: u16 },
    #[error("{path}: truncated codebook file")]
    Truncated { path: PathBuf },
    #[error("bad run-length CSV at line {line}: {detail}")]
    BadCsv { line: usize, detail: String },
}

pub type Result<T, E = VqError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
    /// Training stops once `(prev - cur) / prev` drops below this.
    pub rel_tol: f64,
    /// Independent runs seeded `seed, seed + 1, ...`; the lowest final
    /// distortion wins.
    pub restarts: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_CODEBOOK_SIZE,
            seed: 0,
            max_iters: 100,
            rel_tol: 1e-5,
            restarts: 1,
        }
    }
}

impl KMeansConfig {
    pub fn with_k(k: usize, seed: u64) -> Self {
        Self {
            k,
            seed,
            ..Self::default()
        }
    }
}

/// `k x dim` centroid table plus training metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    centroids: Vec<f32>,
    k: usize,
    dim: usize,
    pub seed: u64,
    pub iterations_run: u32,
    /// Mean squared distance of the training rows to their codewords.
    pub final_distortion: f64,
    /// Mean squared distance after initial assignment and after every
    /// accepted Lloyd iteration.
    pub distortion_history: Vec<f64>,
}

impl Codebook {
    pub fn from_centroids(centroids: Vec<f32>, dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 || centroids.is_empty() || centroids.len() % dim != 0 {
            return Err(VqError::InvalidK);
        }
        if centroids.iter().any(|v| !v.is_finite()) {
            return Err(VqError::NonFiniteInput);
        }
        Ok(Self {
            k: centroids.len() / dim,
            centroids,
            dim,
            seed,
            iterations_run: 0,
            final_distortion: f64::NAN,
            distortion_history: Vec::new(),
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn centroid(&self, j: usize) -> &[f32] {
        &self.centroids[j * self.dim..(j + 1) * self.dim]
    }

    pub fn centroids(&self) -> &[f32] {
        &self.centroids
    }

    /// Nearest codeword and its squared distance; ties go to the lower index.
    pub fn nearest(&self, row: &[f32]) -> (u32, f64) {
        nearest(&self.centroids, self.dim, row)
    }
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

fn nearest(centroids: &[f32], dim: usize, row: &[f32]) -> (u32, f64) {
    let mut best = (0u32, f64::INFINITY);
    for (j, c) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(row, c);
        if d < best.1 {
            best = (j as u32, d);
        }
    }
    best
}

fn assign_all(data: &FeatureMatrix, centroids: &[f32]) -> Vec<(u32, f64)> {
    let dim = data.dim();
    data.as_slice()
        .par_chunks_exact(dim)
        .map(|row| nearest(centroids, dim, row))
        .collect()
}

fn mean_distortion(assign: &[(u32, f64)]) -> f64 {
    assign.iter().map(|a| a.1).sum::<f64>() / assign.len() as f64
}

fn kmeans_pp(data: &FeatureMatrix, k: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let n = data.rows();
    let dim = data.dim();
    let mut chosen = Vec::with_capacity(k);
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    chosen.push(first);
    centroids.extend_from_slice(data.row(first));
    let mut d2: Vec<f64> = data.iter_rows().map(|r| sq_dist(r, data.row(first))).collect();

    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave `target` past the final partial sum
            pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).unwrap())
        } else {
            // fewer distinct rows than k: reuse an unchosen row
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(pick);
        let row = data.row(pick).to_vec();
        centroids.extend_from_slice(&row);
        for (dst, r) in d2.iter_mut().zip(data.iter_rows()) {
            *dst = dst.min(sq_dist(r, &row));
        }
    }
    centroids
}

/// Centroid update: cluster means, with every empty cluster moved onto the
/// row farthest from its own updated centroid.
fn update_centroids(data: &FeatureMatrix, assign: &[(u32, f64)], k: usize) -> Vec<f32> {
    let dim = data.dim();
    let mut sums = vec![0.0f64; k * dim];
    let mut counts = vec![0usize; k];
    for (row, &(c, _)) in data.iter_rows().zip(assign) {
        let c = c as usize;
        counts[c] += 1;
        for (s, &v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(row) {
            *s += v as f64;
        }
    }
    let mut centroids: Vec<f32> = sums
        .chunks_exact(dim)
        .zip(&counts)
        .flat_map(|(s, &n)| s.iter().map(move |v| if n > 0 { (v / n as f64) as f32 } else { 0.0 }))
        .collect();

    let empty: Vec<usize> = (0..k).filter(|&j| counts[j] == 0).collect();
    if !empty.is_empty() {
        let mut far: Vec<(usize, f64)> = data
            .iter_rows()
            .zip(assign)
            .enumerate()
            .map(|(i, (row, &(c, _)))| {
                let c = c as usize;
                (i, sq_dist(row, &centroids[c * dim..(c + 1) * dim]))
            })
            .collect();
        far.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        for (j, (i, _)) in empty.into_iter().zip(far) {
            centroids[j * dim..(j + 1) * dim].copy_from_slice(data.row(i));
        }
    }
    centroids
}

fn lloyd(data: &FeatureMatrix, config: &KMeansConfig, seed: u64) -> Codebook {
    let k = config.k;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp(data, k, &mut rng);
    let mut assign = assign_all(data, &centroids);
    let mut distortion = mean_distortion(&assign);
    let mut history = vec![distortion];
    let mut iterations = 0u32;

    for iter in 1..=config.max_iters {
        let next = update_centroids(data, &assign, k);
        let next_assign = assign_all(data, &next);
        let next_distortion = mean_distortion(&next_assign);
        // f32 rounding of the means can cost more than a converged step gains
        if next_distortion > distortion {
            break;
        }
        centroids = next;
        assign = next_assign;
        history.push(next_distortion);
        iterations = iter as u32;
        let improved = distortion - next_distortion;
        distortion = next_distortion;
        if improved <= config.rel_tol * history[history.len() - 2] {
            break;
        }
    }

    Codebook {
        centroids,
        k,
        dim: data.dim(),
        seed,
        iterations_run: iterations,
        final_distortion: distortion,
        distortion_history: history,
    }
}

/// k-means codebook over the rows of `features`.
pub fn train_codebook(features: &FeatureMatrix, config: &KMeansConfig) -> Result<Codebook> {
    if config.k == 0 {
        return Err(VqError::InvalidK);
    }
    if features.rows() < config.k {
        return Err(VqError::TooFewPoints {
            points: features.rows(),
            k: config.k,
        });
    }
    if features.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(VqError::NonFiniteInput);
    }
    let mut best: Option<Codebook> = None;
    for r in 0..config.restarts.max(1) {
        let cb = lloyd(features, config, config.seed.wrapping_add(r as u64));
        if best
            .as_ref()
            .is_none_or(|b| cb.final_distortion < b.final_distortion)
        {
            best = Some(cb);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Training rows given as separate utterances of equal width.
pub fn train_codebook_on(parts: &[FeatureMatrix], config: &KMeansConfig) -> Result<Codebook> {
    let dim = parts.first().map(FeatureMatrix::dim).unwrap_or(0);
    if let Some(bad) = parts.iter().find(|p| p.dim() != dim) {
        return Err(VqError::DimensionMismatch {
            expected: dim,
            found: bad.dim(),
        });
    }
    let all = FeatureMatrix::concat(parts).map_err(|_| VqError::TooFewPoints {
        points: 0,
        k: config.k,
    })?;
    train_codebook(&all, config)
}

/// Per-dimension z-scoring fitted on training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(features: &FeatureMatrix) -> Self {
        let n = features.rows() as f64;
        let dim = features.dim();
        let mut mean = vec![0.0; dim];
        for row in features.iter_rows() {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v as f64 / n;
            }
        }
        let mut var = vec![0.0; dim];
        for row in features.iter_rows() {
            for ((s, &v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v as f64 - m).powi(2) / n;
            }
        }
        let std = var.into_iter().map(|v| if v > 0.0 { v.sqrt() } else { 1.0 }).collect();
        Self { mean, std }
    }

    pub fn apply(&self, features: &FeatureMatrix) -> Result<FeatureMatrix> {
        self.map(features, |v, m, s| (v - m) / s)
    }

    pub fn invert(&self, features: &FeatureMatrix) -> Result<FeatureMatrix> {
        self.map(features, |v, m, s| v * s + m)
    }

    fn map(&self, features: &FeatureMatrix, f: impl Fn(f64, f64, f64) -> f64) -> Result<FeatureMatrix> {
        if features.dim() != self.mean.len() {
            return Err(VqError::DimensionMismatch {
                expected: self.mean.len(),
                found: features.dim(),
            });
        }
        let data = features
            .iter_rows()
            .flat_map(|row| {
                row.iter()
                    .zip(self.mean.iter().zip(&self.std))
                    .map(|(&v, (&m, &s))| f(v as f64, m, s) as f32)
                    .collect::<Vec<_>>()
            })
            .collect();
        FeatureMatrix::new(
            data,
            features.dim(),
            features.kind,
            features.frame_hop_s,
            features.frame_len_s,
        )
        .map_err(|_| VqError::NonFiniteInput)
    }
}

/// One codeword index per source frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeSequence {
    pub codes: Vec<u32>,
    pub frame_hop_s: OrderedHop,
}

/// Frame hop in seconds, compared bitwise so sequences stay `Eq`.
#[derive(Debug, Clone, Copy, Default)]
pub struct OrderedHop(pub f64);

impl PartialEq for OrderedHop {
    fn eq(&self, other: &Self) -> bool {
        self.0.to_bits() == other.0.to_bits()
    }
}

impl Eq for OrderedHop {}

impl CodeSequence {
    pub fn new(codes: Vec<u32>, frame_hop_s: f64) -> Self {
        Self {
            codes,
            frame_hop_s: OrderedHop(frame_hop_s),
        }
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }
}

/// Duplicate-free code sequence with the frame count of every run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunLengthSequence {
    pub codes: Vec<u32>,
    pub durations: Vec<u32>,
    pub frame_hop_s: OrderedHop,
}

impl RunLengthSequence {
    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    /// Frame count of the sequence this was collapsed from.
    pub fn total_frames(&self) -> usize {
        self.durations.iter().map(|&d| d as usize).sum()
    }
}

pub fn quantize(features: &FeatureMatrix, codebook: &Codebook) -> Result<CodeSequence> {
    if features.dim() != codebook.dim {
        return Err(VqError::DimensionMismatch {
            expected: codebook.dim,
            found: features.dim(),
        });
    }
    let codes = assign_all(features, &codebook.centroids)
        .into_iter()
        .map(|(c, _)| c)
        .collect();
    Ok(CodeSequence::new(codes, features.frame_hop_s))
}

pub fn remove_duplicates(seq: &CodeSequence) -> RunLengthSequence {
    let mut codes: Vec<u32> = Vec::new();
    let mut durations: Vec<u32> = Vec::new();
    for &c in &seq.codes {
        match codes.last() {
            Some(&last) if last == c => *durations.last_mut().unwrap() += 1,
            _ => {
                codes.push(c);
                durations.push(1);
            }
        }
    }
    RunLengthSequence {
        codes,
        durations,
        frame_hop_s: seq.frame_hop_s,
    }
}

pub fn expand(rls: &RunLengthSequence) -> CodeSequence {
    let codes = rls
        .codes
        .iter()
        .zip(&rls.durations)
        .flat_map(|(&c, &d)| std::iter::repeat_n(c, d as usize))
        .collect();
    CodeSequence {
        codes,
        frame_hop_s: rls.frame_hop_s,
    }
}

/// Replaces every code by its centroid.
pub fn invert(seq: &CodeSequence, codebook: &Codebook, kind: FeatureKind) -> Result<FeatureMatrix> {
    if let Some(&bad) = seq.codes.iter().find(|&&c| c as usize >= codebook.k) {
        return Err(VqError::CodeOutOfRange {
            code: bad,
            k: codebook.k,
        });
    }
    if seq.codes.is_empty() {
        return Err(VqError::TooFewPoints { points: 0, k: codebook.k });
    }
    let data = seq
        .codes
        .iter()
        .flat_map(|&c| codebook.centroid(c as usize).iter().copied())
        .collect();
    let hop = seq.frame_hop_s.0;
    FeatureMatrix::new(data, codebook.dim, kind, hop, hop).map_err(|_| VqError::NonFiniteInput)
}

pub fn encode_codebook(cb: &Codebook) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + cb.centroids.len() * 4);
    out.extend_from_slice(CODEBOOK_MAGIC);
    out.extend_from_slice(&CODEBOOK_VERSION.to_le_bytes());
    out.extend_from_slice(&(cb.k as u32).to_le_bytes());
    out.extend_from_slice(&(cb.dim as u32).to_le_bytes());
    out.extend_from_slice(&cb.seed.to_le_bytes());
    for v in &cb.centroids {
        out.extend_from_slice(&v.to_le_bytes());
    }
    // training trailer
    out.extend_from_slice(&cb.iterations_run.to_le_bytes());
    out.extend_from_slice(&cb.final_distortion.to_le_bytes());
    out.extend_from_slice(&(cb.distortion_history.len() as u32).to_le_bytes());
    for d in &cb.distortion_history {
        out.extend_from_slice(&d.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(s)
    }
    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }
    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }
    fn f64(&mut self) -> Option<f64> {
        self.u64().map(f64::from_bits)
    }
}

pub fn decode_codebook(bytes: &[u8], path: &Path) -> Result<Codebook> {
    if bytes.len() < 10 || &bytes[..8] != CODEBOOK_MAGIC {
        return Err(VqError::BadMagic(path.to_owned()));
    }
    let version = u16::from_le_bytes([bytes[8], bytes[9]]);
    if version != CODEBOOK_VERSION {
        return Err(VqError::VersionMismatch {
            path: path.to_owned(),
            found: version,
        });
    }
    let truncated = || VqError::Truncated { path: path.to_owned() };
    let mut cur = Cursor { bytes, pos: 10 };
    let k = cur.u32().ok_or_else(truncated)? as usize;
    let dim = cur.u32().ok_or_else(truncated)? as usize;
    let seed = cur.u64().ok_or_else(truncated)?;
    let raw = cur.take(k * dim * 4).ok_or_else(truncated)?;
    let centroids = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut cb = Codebook::from_centroids(centroids, dim, seed)?;
    cb.iterations_run = cur.u32().ok_or_else(truncated)?;
    cb.final_distortion = cur.f64().ok_or_else(truncated)?;
    let n = cur.u32().ok_or_else(truncated)? as usize;
    cb.distortion_history = (0..n)
        .map(|_| cur.f64().ok_or_else(truncated))
        .collect::<Result<_>>()?;
    if cur.pos != bytes.len() {
        return Err(truncated());
    }
    Ok(cb)
}

pub fn save_codebook(cb: &Codebook, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_codebook(cb)).map_err(|source| VqError::Io {
        path: path.to_owned(),
        source,
    })
}

pub fn load_codebook(path: impl AsRef<Path>) -> Result<Codebook> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| VqError::Io {
        path: path.to_owned(),
        source,
    })?;
    decode_codebook(&bytes, path)
}

/// `code,duration_frames` CSV.
pub fn rls_to_csv(rls: &RunLengthSequence) -> String {
    let mut out = String::from("code,duration_frames\n");
    for (c, d) in rls.codes.iter().zip(&rls.durations) {
        let _ = writeln!(out, "{c},{d}");
    }
    out
}

pub fn rls_from_csv(text: &str, frame_hop_s: f64) -> Result<RunLengthSequence> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "code,duration_frames")) => {}
        _ => {
            return Err(VqError::BadCsv {
                line: 1,
                detail: "expected header `code,duration_frames`".into(),
            })
        }
    }
    let mut codes = Vec::new();
    let mut durations = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let bad = |detail: &str| VqError::BadCsv {
            line: i + 1,
            detail: detail.to_string(),
        };
        let (c, d) = line.split_once(',').ok_or_else(|| bad("expected two fields"))?;
        let c: u32 = c.trim().parse().map_err(|_| bad("code is not an integer"))?;
        let d: u32 = d.trim().parse().map_err(|_| bad("duration is not an integer"))?;
        if d == 0 {
            return Err(bad("zero duration"));
        }
        if codes.last() == Some(&c) {
            return Err(bad("adjacent duplicate code"));
        }
        codes.push(c);
        durations.push(d);
    }
    Ok(RunLengthSequence {
        codes,
        durations,
        frame_hop_s: OrderedHop(frame_hop_s),
    })
}

/// `frame,code` CSV for undeduplicated sequences.
pub fn codes_to_csv(seq: &CodeSequence) -> String {
    let mut out = String::from("frame,code\n");
    for (t, c) in seq.codes.iter().enumerate() {
        let _ = writeln!(out, "{t},{c}");
    }
    out
}
