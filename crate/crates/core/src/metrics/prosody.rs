use super::{MetricsError, Result};
use crate::corpus::AudioBuffer;
use crate::dsp::{estimate_f0, F0Config, F0Track};

/// Utterance-level prosody. F0 fields are `None` when no frame is voiced.
#[derive(Debug, Clone, PartialEq)]
pub struct ProsodyProfile {
    pub duration_s: f64,
    pub f0_avg_hz: Option<f64>,
    /// 95th minus 5th percentile of voiced F0.
    pub f0_range_hz: Option<f64>,
    pub voiced_fraction: f64,
}

/// Mean absolute differences over a set of profile pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct ProsodyDelta {
    pub d_duration_ms: f64,
    pub d_f0_avg_hz: f64,
    pub d_f0_range_hz: f64,
    pub pairs_used: usize,
    pub pairs_skipped: usize,
}

impl ProsodyDelta {
    pub fn to_csv(&self) -> String {
        format!(
            "d_duration_ms,d_f0_avg_hz,d_f0_range_hz,pairs_used,pairs_skipped\n{:.4},{:.4},{:.4},{},{}\n",
            self.d_duration_ms,
            self.d_f0_avg_hz,
            self.d_f0_range_hz,
            self.pairs_used,
            self.pairs_skipped
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProsodyConfig {
    pub f0: F0Config,
    /// Strip leading and trailing low-energy frames before measuring.
    pub trim: bool,
    /// Frames more than this many dB below the loudest frame count as silence.
    pub trim_db: f64,
}

impl Default for ProsodyConfig {
    fn default() -> Self {
        Self {
            f0: F0Config::default(),
            trim: true,
            trim_db: 40.0,
        }
    }
}

/// Linear-interpolation percentile of `sorted` (ascending), `q` in `[0, 100]`.
pub fn percentile(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let pos = q.clamp(0.0, 100.0) / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64))
}

pub fn prosody_stats(f0: &F0Track, duration_s: f64) -> ProsodyProfile {
    let mut voiced: Vec<f64> = f0.voiced_values().collect();
    voiced.sort_by(f64::total_cmp);
    let avg = (!voiced.is_empty()).then(|| voiced.iter().sum::<f64>() / voiced.len() as f64);
    let range = percentile(&voiced, 95.0)
        .zip(percentile(&voiced, 5.0))
        .map(|(hi, lo)| (hi - lo).max(0.0));
    ProsodyProfile {
        duration_s,
        f0_avg_hz: avg,
        f0_range_hz: range,
        voiced_fraction: f0.voiced_fraction(),
    }
}

/// Sample range left after dropping 25 ms / 10 ms frames more than
/// `threshold_db` below the loudest frame from both ends. Silent or
/// too-short audio is returned whole.
pub fn trim_silence(audio: &AudioBuffer, threshold_db: f64) -> std::ops::Range<usize> {
    let sr = audio.sample_rate() as f64;
    let win = (0.025 * sr).round() as usize;
    let hop = (0.010 * sr).round().max(1.0) as usize;
    let x = audio.samples();
    if x.len() < win || win == 0 {
        return 0..x.len();
    }
    let frames = 1 + (x.len() - win) / hop;
    let energy: Vec<f64> = (0..frames)
        .map(|t| {
            x[t * hop..t * hop + win]
                .iter()
                .map(|&s| (s as f64).powi(2))
                .sum::<f64>()
                / win as f64
        })
        .collect();
    let peak = energy.iter().copied().fold(0.0, f64::max);
    if peak <= 0.0 {
        return 0..x.len();
    }
    let floor = peak * 10f64.powf(-threshold_db / 10.0);
    let first = energy.iter().position(|&e| e >= floor).unwrap();
    let last = energy.iter().rposition(|&e| e >= floor).unwrap();
    first * hop..(last * hop + win).min(x.len())
}

/// Duration and F0 statistics of one utterance.
pub fn profile_audio(audio: &AudioBuffer, config: &ProsodyConfig) -> Result<ProsodyProfile> {
    let trimmed = if config.trim {
        let range = trim_silence(audio, config.trim_db);
        audio.slice(range).unwrap_or_else(|| audio.clone())
    } else {
        audio.clone()
    };
    let f0 = estimate_f0(&trimmed, &config.f0)?;
    Ok(prosody_stats(&f0, trimmed.duration_s()))
}

pub fn prosody_delta(pairs: &[(ProsodyProfile, ProsodyProfile)]) -> Result<ProsodyDelta> {
    let mut used = 0usize;
    let mut sums = [0.0f64; 3];
    for (a, b) in pairs {
        let (Some(fa), Some(fb), Some(ra), Some(rb)) =
            (a.f0_avg_hz, b.f0_avg_hz, a.f0_range_hz, b.f0_range_hz)
        else {
            continue;
        };
        used += 1;
        sums[0] += (a.duration_s - b.duration_s).abs() * 1000.0;
        sums[1] += (fa - fb).abs();
        sums[2] += (ra - rb).abs();
    }
    let skipped = pairs.len() - used;
    if used == 0 {
        return Err(MetricsError::NoComparablePairs { skipped });
    }
    let n = used as f64;
    Ok(ProsodyDelta {
        d_duration_ms: sums[0] / n,
        d_f0_avg_hz: sums[1] / n,
        d_f0_range_hz: sums[2] / n,
        pairs_used: used,
        pairs_skipped: skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn track(values: Vec<f64>) -> F0Track {
        let voiced = values.iter().map(|&v| v > 0.0).collect();
        F0Track {
            values,
            voiced,
            frame_hop_s: 0.01,
        }
    }

    fn profile(duration_s: f64, avg: f64, range: f64) -> ProsodyProfile {
        ProsodyProfile {
            duration_s,
            f0_avg_hz: Some(avg),
            f0_range_hz: Some(range),
            voiced_fraction: 1.0,
        }
    }

    #[test]
    fn constant_track() {
        let p = prosody_stats(&track(vec![200.0; 150]), 1.5);
        assert_eq!(p.f0_avg_hz, Some(200.0));
        assert_eq!(p.f0_range_hz, Some(0.0));
        assert_eq!(p.duration_s, 1.5);
        assert_eq!(p.voiced_fraction, 1.0);
    }

    #[test]
    fn unvoiced_track() {
        let p = prosody_stats(&track(vec![0.0; 50]), 0.5);
        assert_eq!(p.f0_avg_hz, None);
        assert_eq!(p.f0_range_hz, None);
        assert_eq!(p.voiced_fraction, 0.0);
    }

    #[test]
    fn uniform_track_range() {
        let values: Vec<f64> = (0..=200).map(|i| 100.0 + i as f64).collect();
        let p = prosody_stats(&track(values.clone()), 2.0);
        // oracle: nearest-rank percentiles on the generated values
        let n = values.len();
        let p95 = values[((0.95 * n as f64).ceil() as usize) - 1];
        let p5 = values[((0.05 * n as f64).ceil() as usize) - 1];
        let range = p.f0_range_hz.unwrap();
        assert!((range - (p95 - p5)).abs() <= 1.0, "{range} vs {}", p95 - p5);
        assert!((range - 180.0).abs() < 1e-9);
    }

    #[test]
    fn deltas() {
        let a = profile(1.0, 150.0, 40.0);
        let same = prosody_delta(&[(a.clone(), a.clone())]).unwrap();
        assert_eq!((same.d_duration_ms, same.d_f0_avg_hz, same.d_f0_range_hz), (0.0, 0.0, 0.0));

        let pairs = [
            (profile(1.0, 100.0, 10.0), profile(0.99, 110.0, 30.0)),
            (profile(2.0, 100.0, 10.0), profile(2.03, 90.0, 10.0)),
        ];
        let d = prosody_delta(&pairs).unwrap();
        assert!((d.d_duration_ms - 20.0).abs() < 1e-9);
        assert!((d.d_f0_avg_hz - 10.0).abs() < 1e-12);
        assert!((d.d_f0_range_hz - 10.0).abs() < 1e-12);

        let unvoiced = ProsodyProfile { f0_avg_hz: None, f0_range_hz: None, ..a.clone() };
        let mixed = prosody_delta(&[(a.clone(), unvoiced.clone()), (a.clone(), a.clone())]).unwrap();
        assert_eq!((mixed.pairs_used, mixed.pairs_skipped), (1, 1));
        assert!(matches!(
            prosody_delta(&[(a, unvoiced)]),
            Err(MetricsError::NoComparablePairs { skipped: 1 })
        ));
    }

    #[test]
    fn trim_removes_padding() {
        let sr = 16000usize;
        let mut s = vec![0.0f32; sr / 2];
        s.extend((0..sr).map(|i| (0.5 * (2.0 * std::f64::consts::PI * 200.0 * i as f64 / sr as f64).sin()) as f32));
        s.extend(vec![0.0f32; sr / 2]);
        let audio = AudioBuffer::new(s, 16000).unwrap();
        let r = trim_silence(&audio, 40.0);
        let kept = (r.end - r.start) as f64 / sr as f64;
        // edge frames that overlap the tone at all are kept: at most one window per side
        assert!((1.0..=1.05).contains(&kept), "{kept}");
        let p = profile_audio(&audio, &ProsodyConfig::default()).unwrap();
        assert!((1.0..=1.05).contains(&p.duration_s));
        assert!((p.f0_avg_hz.unwrap() - 200.0).abs() < 2.0);
        let untrimmed = profile_audio(&audio, &ProsodyConfig { trim: false, ..ProsodyConfig::default() }).unwrap();
        assert_eq!(untrimmed.duration_s, 2.0);
    }
}
