//! YIN fundamental frequency tracking.
//!
//! Each frame holds an integration window of one period of `f_min` followed by
//! `tau_max` samples of lag context. The cumulative-mean-normalized
//! difference is searched for its first dip below `threshold`, the dip is
//! followed to its local minimum, and the lag is refined with a parabola
//! through the neighbouring values.

use super::{frame_count, DspError, Result};
use crate::corpus::AudioBuffer;

#[derive(Debug, Clone, PartialEq)]
pub struct F0Config {
    pub f_min: f64,
    pub f_max: f64,
    pub threshold: f64,
    pub hop_s: f64,
    /// Frames quieter than this RMS are unvoiced without running YIN.
    pub min_rms: f64,
}

impl Default for F0Config {
    fn default() -> Self {
        Self {
            f_min: 70.0,
            f_max: 400.0,
            threshold: 0.15,
            hop_s: 0.010,
            min_rms: 1e-5,
        }
    }
}

/// Per-frame F0 in Hz; `values[i] > 0` exactly when `voiced[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct F0Track {
    pub values: Vec<f64>,
    pub voiced: Vec<bool>,
    pub frame_hop_s: f64,
}

impl F0Track {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn voiced_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values
            .iter()
            .zip(&self.voiced)
            .filter(|(_, &v)| v)
            .map(|(&f, _)| f)
    }

    pub fn voiced_fraction(&self) -> f64 {
        if self.voiced.is_empty() {
            0.0
        } else {
            self.voiced.iter().filter(|&&v| v).count() as f64 / self.voiced.len() as f64
        }
    }
}

struct YinGeometry {
    window: usize,
    tau_min: usize,
    tau_max: usize,
    hop: usize,
}

impl YinGeometry {
    fn new(config: &F0Config, sample_rate: u32) -> Result<Self> {
        let sr = sample_rate as f64;
        let band_ok = config.f_min > 0.0
            && config.f_min < config.f_max
            && config.f_max <= sr / 2.0
            && config.f_max.is_finite();
        if !band_ok {
            return Err(DspError::InvalidBand {
                f_min: config.f_min,
                f_max: config.f_max,
                sample_rate,
            });
        }
        if !(config.threshold > 0.0 && config.threshold < 1.0) {
            return Err(DspError::InvalidConfig(format!(
                "YIN threshold {} outside (0, 1)",
                config.threshold
            )));
        }
        let hop = (config.hop_s * sr).round() as usize;
        if hop == 0 {
            return Err(DspError::InvalidConfig("F0 hop must be positive".into()));
        }
        let tau_max = (sr / config.f_min).ceil() as usize;
        let tau_min = ((sr / config.f_max).floor() as usize).max(2);
        Ok(Self {
            window: tau_max,
            tau_min,
            tau_max,
            hop,
        })
    }

    fn frame_len(&self) -> usize {
        self.window + self.tau_max + 1
    }
}

pub fn estimate_f0(audio: &AudioBuffer, config: &F0Config) -> Result<F0Track> {
    let sr = audio.sample_rate() as f64;
    let geo = YinGeometry::new(config, audio.sample_rate())?;
    let frames = frame_count(audio.len(), geo.frame_len(), geo.hop).ok_or(
        DspError::AudioTooShort {
            samples: audio.len(),
            needed: geo.frame_len(),
        },
    )?;
    let x: Vec<f64> = audio.samples().iter().map(|&s| s as f64).collect();

    let mut diff = vec![0.0; geo.tau_max + 2];
    let mut cmnd = vec![0.0; geo.tau_max + 2];
    let mut values = Vec::with_capacity(frames);
    let mut voiced = Vec::with_capacity(frames);
    for t in 0..frames {
        let frame = &x[t * geo.hop..t * geo.hop + geo.frame_len()];
        let f0 = yin_frame(frame, &geo, config, sr, &mut diff, &mut cmnd)
            .filter(|f| *f >= config.f_min && *f <= config.f_max);
        values.push(f0.unwrap_or(0.0));
        voiced.push(f0.is_some());
    }
    Ok(F0Track {
        values,
        voiced,
        frame_hop_s: geo.hop as f64 / sr,
    })
}

fn yin_frame(
    frame: &[f64],
    geo: &YinGeometry,
    config: &F0Config,
    sr: f64,
    diff: &mut [f64],
    cmnd: &mut [f64],
) -> Option<f64> {
    let w = geo.window;
    let energy: f64 = frame[..w].iter().map(|v| v * v).sum();
    if (energy / w as f64).sqrt() < config.min_rms {
        return None;
    }

    let last = geo.tau_max + 1;
    diff[0] = 0.0;
    for tau in 1..=last {
        diff[tau] = (0..w)
            .map(|j| {
                let d = frame[j] - frame[j + tau];
                d * d
            })
            .sum();
    }
    cmnd[0] = 1.0;
    let mut running = 0.0;
    for tau in 1..=last {
        running += diff[tau];
        cmnd[tau] = if running > 0.0 {
            diff[tau] * tau as f64 / running
        } else {
            1.0
        };
    }

    let mut tau = geo.tau_min;
    while tau <= geo.tau_max {
        if cmnd[tau] < config.threshold {
            while tau < geo.tau_max && cmnd[tau + 1] < cmnd[tau] {
                tau += 1;
            }
            let refined = parabolic_min(cmnd, tau);
            return Some(sr / refined);
        }
        tau += 1;
    }
    None
}

fn parabolic_min(y: &[f64], i: usize) -> f64 {
    if i == 0 || i + 1 >= y.len() {
        return i as f64;
    }
    let (a, b, c) = (y[i - 1], y[i], y[i + 1]);
    let denom = a - 2.0 * b + c;
    if denom.abs() < f64::EPSILON {
        return i as f64;
    }
    let shift = 0.5 * (a - c) / denom;
    i as f64 + shift.clamp(-1.0, 1.0)
}
