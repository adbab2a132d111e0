use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{frame_count, DspError, FeatureKind, FeatureMatrix, Result};
use crate::corpus::AudioBuffer;

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MelConfig {
    /// Frame length in seconds.
    pub window_s: f64,
    /// Frame shift in seconds.
    pub hop_s: f64,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    /// First-order pre-emphasis coefficient; 0 disables it.
    pub pre_emphasis: f64,
    /// Mel energies are clamped to this value before the log.
    pub log_floor: f64,
    /// Number of cepstral coefficients kept by [`mfcc`], c0 included.
    pub n_mfcc: usize,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            window_s: 0.025,
            hop_s: 0.010,
            n_mels: 80,
            f_min: 0.0,
            f_max: 8000.0,
            pre_emphasis: 0.97,
            log_floor: 1e-10,
            n_mfcc: 40,
        }
    }
}

/// Triangular filter stored as its first nonzero bin plus weights.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilter {
    pub center_hz: f64,
    pub start_bin: usize,
    pub weights: Vec<f64>,
}

/// Precomputed window, filterbank, DCT basis and FFT plan for one
/// sample rate and configuration.
pub struct MelExtractor {
    config: MelConfig,
    sample_rate: u32,
    win: usize,
    hop: usize,
    n_fft: usize,
    window: Vec<f64>,
    filters: Vec<MelFilter>,
    dct: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl MelExtractor {
    pub fn new(config: MelConfig, sample_rate: u32) -> Result<Self> {
        let sr = sample_rate as f64;
        let win = (config.window_s * sr).round() as usize;
        let hop = (config.hop_s * sr).round() as usize;
        if sample_rate == 0 || win == 0 || hop == 0 {
            return Err(DspError::InvalidConfig("window and hop must be positive".into()));
        }
        if hop > win {
            return Err(DspError::InvalidConfig(format!(
                "hop ({hop} samples) exceeds window ({win} samples)"
            )));
        }
        if config.n_mels == 0 {
            return Err(DspError::InvalidConfig("zero mel bands".into()));
        }
        if config.n_mfcc == 0 || config.n_mfcc > config.n_mels {
            return Err(DspError::InvalidConfig(format!(
                "n_mfcc must lie in 1..={}",
                config.n_mels
            )));
        }
        if !(config.f_min >= 0.0 && config.f_min < config.f_max && config.f_max <= sr / 2.0) {
            return Err(DspError::InvalidConfig(format!(
                "mel band edges [{}, {}] Hz invalid at {sample_rate} Hz",
                config.f_min, config.f_max
            )));
        }
        if !(config.log_floor > 0.0) {
            return Err(DspError::InvalidConfig("log floor must be positive".into()));
        }

        let n_fft = win.next_power_of_two();
        let window = (0..win)
            .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / (win - 1).max(1) as f64).cos())
            .collect();
        let filters = build_filterbank(&config, sample_rate, n_fft);
        let dct = dct_basis(config.n_mels, config.n_mfcc);
        let fft = FftPlanner::new().plan_fft_forward(n_fft);
        Ok(Self {
            config,
            sample_rate,
            win,
            hop,
            n_fft,
            window,
            filters,
            dct,
            fft,
        })
    }

    pub fn config(&self) -> &MelConfig {
        &self.config
    }

    pub fn filters(&self) -> &[MelFilter] {
        &self.filters
    }

    pub fn window_samples(&self) -> usize {
        self.win
    }

    pub fn hop_samples(&self) -> usize {
        self.hop
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    fn check_audio(&self, audio: &AudioBuffer) -> Result<usize> {
        if audio.sample_rate() != self.sample_rate {
            return Err(DspError::InvalidConfig(format!(
                "extractor built for {} Hz, audio is {} Hz",
                self.sample_rate,
                audio.sample_rate()
            )));
        }
        frame_count(audio.len(), self.win, self.hop).ok_or(DspError::AudioTooShort {
            samples: audio.len(),
            needed: self.win,
        })
    }

    fn log_mel_rows(&self, audio: &AudioBuffer) -> Result<Vec<Vec<f64>>> {
        let frames = self.check_audio(audio)?;
        let x = audio.samples();
        let coef = self.config.pre_emphasis;
        let emphasized: Vec<f64> = (0..x.len())
            .map(|n| {
                let prev = if n == 0 { 0.0 } else { x[n - 1] as f64 };
                x[n] as f64 - coef * prev
            })
            .collect();

        let mut buf = vec![Complex::new(0.0, 0.0); self.n_fft];
        let mut power = vec![0.0; self.n_fft / 2 + 1];
        let mut rows = Vec::with_capacity(frames);
        for t in 0..frames {
            let start = t * self.hop;
            for (i, slot) in buf.iter_mut().enumerate() {
                *slot = if i < self.win {
                    Complex::new(emphasized[start + i] * self.window[i], 0.0)
                } else {
                    Complex::new(0.0, 0.0)
                };
            }
            self.fft.process(&mut buf);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            let row = self
                .filters
                .iter()
                .map(|f| {
                    let energy: f64 = f
                        .weights
                        .iter()
                        .zip(&power[f.start_bin..])
                        .map(|(w, p)| w * p)
                        .sum();
                    energy.max(self.config.log_floor).ln()
                })
                .collect();
            rows.push(row);
        }
        Ok(rows)
    }

    pub fn log_mel(&self, audio: &AudioBuffer) -> Result<FeatureMatrix> {
        let rows = self.log_mel_rows(audio)?;
        self.to_matrix(rows, FeatureKind::LogMel)
    }

    pub fn mfcc(&self, audio: &AudioBuffer) -> Result<FeatureMatrix> {
        let rows = self
            .log_mel_rows(audio)?
            .into_iter()
            .map(|r| self.dct_row(&r))
            .collect();
        self.to_matrix(rows, FeatureKind::Mfcc)
    }

    /// Orthonormal DCT-II of one log-mel row, truncated to `n_mfcc`.
    pub fn dct_row(&self, log_mel: &[f64]) -> Vec<f64> {
        let m = self.config.n_mels;
        self.dct
            .chunks_exact(m)
            .map(|basis| basis.iter().zip(log_mel).map(|(b, v)| b * v).sum())
            .collect()
    }

    fn to_matrix(&self, rows: Vec<Vec<f64>>, kind: FeatureKind) -> Result<FeatureMatrix> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        let data = rows.into_iter().flatten().map(|v| v as f32).collect();
        let sr = self.sample_rate as f64;
        FeatureMatrix::new(data, dim, kind, self.hop as f64 / sr, self.win as f64 / sr)
    }
}

fn build_filterbank(config: &MelConfig, sample_rate: u32, n_fft: usize) -> Vec<MelFilter> {
    let lo = hz_to_mel(config.f_min);
    let hi = hz_to_mel(config.f_max);
    let step = (hi - lo) / (config.n_mels + 1) as f64;
    let edges: Vec<f64> = (0..config.n_mels + 2)
        .map(|i| mel_to_hz(lo + step * i as f64))
        .collect();
    let bin_hz = sample_rate as f64 / n_fft as f64;
    let n_bins = n_fft / 2 + 1;

    edges
        .windows(3)
        .map(|e| {
            let (left, center, right) = (e[0], e[1], e[2]);
            let weight = |k: usize| {
                let f = k as f64 * bin_hz;
                if f > left && f < center {
                    (f - left) / (center - left)
                } else if f >= center && f < right {
                    (right - f) / (right - center)
                } else {
                    0.0
                }
            };
            let nonzero: Vec<usize> = (0..n_bins).filter(|&k| weight(k) > 0.0).collect();
            match (nonzero.first(), nonzero.last()) {
                (Some(&a), Some(&b)) => MelFilter {
                    center_hz: center,
                    start_bin: a,
                    weights: (a..=b).map(weight).collect(),
                },
                _ => MelFilter {
                    center_hz: center,
                    start_bin: 0,
                    weights: Vec::new(),
                },
            }
        })
        .collect()
}

fn dct_basis(n_in: usize, n_out: usize) -> Vec<f64> {
    let mut basis = Vec::with_capacity(n_in * n_out);
    for k in 0..n_out {
        let scale = if k == 0 {
            (1.0 / n_in as f64).sqrt()
        } else {
            (2.0 / n_in as f64).sqrt()
        };
        for n in 0..n_in {
            basis.push(scale * (PI * k as f64 * (2 * n + 1) as f64 / (2 * n_in) as f64).cos());
        }
    }
    basis
}

/// Log-Mel spectrogram with a one-off extractor.
pub fn log_mel(audio: &AudioBuffer, config: &MelConfig) -> Result<FeatureMatrix> {
    MelExtractor::new(config.clone(), audio.sample_rate())?.log_mel(audio)
}

/// MFCCs (orthonormal DCT-II of the log-Mel rows) with a one-off extractor.
pub fn mfcc(audio: &AudioBuffer, config: &MelConfig) -> Result<FeatureMatrix> {
    MelExtractor::new(config.clone(), audio.sample_rate())?.mfcc(audio)
}
