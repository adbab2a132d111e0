//! Seeded test signals: pure tones and a small formant synthesizer that
//! produces speech-like utterances for desk-scale experiments.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{AudioBuffer, CorpusError};
use crate::TARGET_SAMPLE_RATE;

/// Sine tone of `duration_s` seconds.
pub fn tone(freq_hz: f64, duration_s: f64, amplitude: f32, sample_rate: u32) -> Result<AudioBuffer, CorpusError> {
    let n = (duration_s * sample_rate as f64).round() as usize;
    let samples = (0..n)
        .map(|i| amplitude * (2.0 * PI * freq_hz * i as f64 / sample_rate as f64).sin() as f32)
        .collect();
    AudioBuffer::new(samples, sample_rate)
}

pub fn silence(duration_s: f64, sample_rate: u32) -> Result<AudioBuffer, CorpusError> {
    let n = (duration_s * sample_rate as f64).round() as usize;
    AudioBuffer::new(vec![0.0; n], sample_rate)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Source {
    Voiced,
    Frication { center_hz: f64, bandwidth_hz: f64 },
    /// Voiced fricative: both sources at once.
    Mixed { center_hz: f64, bandwidth_hz: f64 },
    /// Closure followed by a short burst.
    Stop { burst_hz: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Phone {
    symbol: &'static str,
    formants: [f64; 3],
    amplitude: f64,
    source: Source,
    vowel: bool,
}

const fn vowel(symbol: &'static str, f1: f64, f2: f64, f3: f64) -> Phone {
    Phone { symbol, formants: [f1, f2, f3], amplitude: 1.0, source: Source::Voiced, vowel: true }
}

const fn sonorant(symbol: &'static str, f1: f64, f2: f64, f3: f64, amplitude: f64) -> Phone {
    Phone { symbol, formants: [f1, f2, f3], amplitude, source: Source::Voiced, vowel: false }
}

const fn fricative(symbol: &'static str, center_hz: f64, bandwidth_hz: f64, amplitude: f64, voiced: bool) -> Phone {
    let source = if voiced {
        Source::Mixed { center_hz, bandwidth_hz }
    } else {
        Source::Frication { center_hz, bandwidth_hz }
    };
    Phone { symbol, formants: [400.0, 1500.0, 2500.0], amplitude, source, vowel: false }
}

const fn stop(symbol: &'static str, burst_hz: f64) -> Phone {
    Phone { symbol, formants: [400.0, 1500.0, 2500.0], amplitude: 0.5, source: Source::Stop { burst_hz }, vowel: false }
}

/// Adult male formant targets in Hz.
const INVENTORY: &[Phone] = &[
    vowel("iy", 270.0, 2290.0, 3010.0),
    vowel("ih", 390.0, 1990.0, 2550.0),
    vowel("eh", 530.0, 1840.0, 2480.0),
    vowel("ae", 660.0, 1720.0, 2410.0),
    vowel("aa", 730.0, 1090.0, 2440.0),
    vowel("ao", 570.0, 840.0, 2410.0),
    vowel("uh", 440.0, 1020.0, 2240.0),
    vowel("uw", 300.0, 870.0, 2240.0),
    vowel("ah", 520.0, 1190.0, 2390.0),
    vowel("er", 490.0, 1350.0, 1690.0),
    sonorant("m", 250.0, 1100.0, 2300.0, 0.35),
    sonorant("n", 250.0, 1700.0, 2600.0, 0.35),
    sonorant("l", 360.0, 1300.0, 2700.0, 0.6),
    sonorant("r", 420.0, 1300.0, 1600.0, 0.6),
    sonorant("w", 300.0, 610.0, 2200.0, 0.6),
    sonorant("y", 280.0, 2250.0, 2900.0, 0.6),
    fricative("s", 6000.0, 2000.0, 0.25, false),
    fricative("sh", 3200.0, 1500.0, 0.3, false),
    fricative("f", 4500.0, 5000.0, 0.08, false),
    fricative("th", 5500.0, 4000.0, 0.06, false),
    fricative("z", 6000.0, 2000.0, 0.2, true),
    fricative("v", 4500.0, 5000.0, 0.1, true),
    stop("p", 1000.0),
    stop("t", 4500.0),
    stop("k", 2500.0),
];

/// Number of distinct phone units the synthesizer draws from.
pub fn inventory_size() -> usize {
    INVENTORY.len()
}

/// Voice parameters. `formant_scale` models vocal tract length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Voice {
    pub f0_hz: f64,
    pub formant_scale: f64,
    /// Relative F0 excursion on accented vowels.
    pub f0_accent: f64,
    pub speaking_rate: f64,
}

impl Voice {
    pub fn male() -> Self {
        Self { f0_hz: 110.0, formant_scale: 1.0, f0_accent: 0.18, speaking_rate: 1.0 }
    }

    pub fn female() -> Self {
        Self { f0_hz: 200.0, formant_scale: 1.17, f0_accent: 0.2, speaking_rate: 1.05 }
    }

    /// A voice drawn around the male or female template.
    pub fn random(rng: &mut impl Rng) -> Self {
        let base = if rng.random_bool(0.5) { Self::male() } else { Self::female() };
        Self {
            f0_hz: base.f0_hz * rng.random_range(0.85..1.15),
            formant_scale: base.formant_scale * rng.random_range(0.95..1.05),
            f0_accent: base.f0_accent * rng.random_range(0.6..1.4),
            speaking_rate: rng.random_range(0.85..1.2),
        }
    }
}

struct Segment {
    phone: Phone,
    samples: usize,
    accent: f64,
}

/// Two-pole resonator with unity gain at DC.
#[derive(Default)]
struct Resonator {
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn step(&mut self, x: f64, freq: f64, bw: f64, sr: f64) -> f64 {
        let r = (-PI * bw / sr).exp();
        let c = -r * r;
        let b = 2.0 * r * (2.0 * PI * freq / sr).cos();
        let a = 1.0 - b - c;
        let y = a * x + b * self.y1 + c * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

fn plan_segments(voice: &Voice, syllables: usize, sr: f64, rng: &mut ChaCha8Rng) -> Vec<Segment> {
    let vowels: Vec<&Phone> = INVENTORY.iter().filter(|p| p.vowel).collect();
    let consonants: Vec<&Phone> = INVENTORY.iter().filter(|p| !p.vowel).collect();
    let ms = |lo: f64, hi: f64, rng: &mut ChaCha8Rng| (rng.random_range(lo..hi) / 1000.0 / voice.speaking_rate * sr) as usize;
    let mut out = Vec::new();
    for s in 0..syllables {
        if s > 0 && rng.random_bool(0.08) {
            out.push(Segment { phone: stop("_", 0.0), samples: ms(120.0, 250.0, rng), accent: 0.0 });
        }
        if rng.random_bool(0.8) {
            let c = *consonants[rng.random_range(0..consonants.len())];
            out.push(Segment { phone: c, samples: ms(50.0, 110.0, rng), accent: 0.0 });
        }
        let v = *vowels[rng.random_range(0..vowels.len())];
        let accent = if rng.random_bool(0.35) { rng.random_range(0.5..1.0) } else { 0.0 };
        out.push(Segment { phone: v, samples: ms(80.0, 200.0, rng) + (accent * 0.04 * sr) as usize, accent });
        if rng.random_bool(0.3) {
            let c = *consonants[rng.random_range(0..consonants.len())];
            out.push(Segment { phone: c, samples: ms(50.0, 100.0, rng), accent: 0.0 });
        }
    }
    out
}

/// A speech-like utterance of `syllables` random CV(C) syllables with
/// leading and trailing silence. The length is `400 + 160 m` samples at
/// 16 kHz, a whole number of 25 ms / 10 ms frames.
pub fn synth_utterance(voice: &Voice, syllables: usize, seed: u64) -> AudioBuffer {
    let sr = TARGET_SAMPLE_RATE as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let segments = plan_segments(voice, syllables.max(1), sr, &mut rng);
    let lead = (rng.random_range(0.08..0.2) * sr) as usize;
    let body: usize = segments.iter().map(|s| s.samples).sum();
    let tail_min = (0.08 * sr) as usize;
    let total = lead + body + tail_min;
    let frames = (total.saturating_sub(400)).div_ceil(160);
    let len = 400 + 160 * frames;

    // per-sample targets with linear transitions between segments
    let transition = (0.025 * sr) as usize;
    let mut out = vec![0.0f64; len];
    let mut resonators: [Resonator; 5] = Default::default();
    let mut noise_res: [Resonator; 2] = Default::default();
    let mut tilt = [0.0f64; 2];
    let mut phase = 0.0f64;
    let mut pos = lead;
    let n_seg = segments.len();
    let body_len = body.max(1) as f64;
    let mut prev_formants = segments[0].phone.formants;
    let jitter_scale = rng.random_range(0.004..0.012);
    for (si, seg) in segments.iter().enumerate() {
        let next_formants = if si + 1 < n_seg { segments[si + 1].phone.formants } else { seg.phone.formants };
        for i in 0..seg.samples {
            let t = pos + i;
            // formant trajectory: glide in from the previous target and out toward the next
            let mut f = seg.phone.formants;
            if i < transition {
                let w = 0.5 + 0.5 * i as f64 / transition as f64;
                for k in 0..3 {
                    f[k] = prev_formants[k] * (1.0 - w) + f[k] * w;
                }
            } else if seg.samples - i < transition {
                let w = 0.5 * (transition - (seg.samples - i)) as f64 / transition as f64;
                for k in 0..3 {
                    f[k] = f[k] * (1.0 - w) + next_formants[k] * w;
                }
            }
            let progress = (t - lead) as f64 / body_len;
            let declination = 1.1 - 0.2 * progress;
            let bump = seg.accent * voice.f0_accent * (PI * i as f64 / seg.samples as f64).sin();
            let f0 = voice.f0_hz * declination * (1.0 + bump) * (1.0 + jitter_scale * gaussian(&mut rng) * 0.1);

            let ramp = {
                let edge = (0.01 * sr) as usize;
                let d = i.min(seg.samples - 1 - i);
                if d < edge { d as f64 / edge as f64 } else { 1.0 }
            };
            let env = seg.phone.amplitude * ramp.max(0.2);

            let mut voiced_src = 0.0;
            let voicing = match seg.phone.source {
                Source::Voiced => 1.0,
                Source::Mixed { .. } => 0.5,
                _ => 0.0,
            };
            phase += f0 / sr;
            if phase >= 1.0 {
                phase -= 1.0;
                voiced_src = 1.0;
            }
            // two one-pole lowpasses for spectral tilt, then a difference to drop DC
            let prev = tilt[1];
            tilt[0] = 0.97 * tilt[0] + voiced_src;
            tilt[1] = 0.9 * tilt[1] + tilt[0];
            let glottal = (tilt[1] - prev) * voicing;

            let mut y = 0.0;
            if voicing > 0.0 {
                let mut x = glottal + 0.02 * voicing * gaussian(&mut rng);
                let scale = voice.formant_scale;
                let bws = [60.0, 90.0, 130.0, 200.0, 280.0];
                let freqs = [f[0] * scale, f[1] * scale, f[2] * scale, 3500.0 * scale, 4500.0 * scale];
                for (k, r) in resonators.iter_mut().enumerate() {
                    x = r.step(x, freqs[k].min(sr * 0.45), bws[k], sr);
                }
                y += x * env * voicing;
            }
            match seg.phone.source {
                Source::Frication { center_hz, bandwidth_hz } | Source::Mixed { center_hz, bandwidth_hz } => {
                    let n = gaussian(&mut rng);
                    let a = noise_res[0].step(n, center_hz.min(sr * 0.45), bandwidth_hz, sr);
                    let b = noise_res[1].step(a, center_hz.min(sr * 0.45), bandwidth_hz, sr);
                    y += 2.0 * b * env;
                }
                Source::Stop { burst_hz } if burst_hz > 0.0 => {
                    let burst_start = seg.samples * 3 / 4;
                    if i >= burst_start {
                        let n = gaussian(&mut rng);
                        let a = noise_res[0].step(n, burst_hz, 1500.0, sr);
                        let decay = (-((i - burst_start) as f64) / (0.004 * sr)).exp();
                        y += 1.5 * a * decay * seg.phone.amplitude;
                    }
                }
                _ => {}
            }
            out[t] = y;
        }
        prev_formants = seg.phone.formants;
        pos += seg.samples;
    }

    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let gain = if peak > 0.0 { 0.7 / peak } else { 1.0 };
    let samples: Vec<f32> = out
        .iter()
        .map(|v| (v * gain + 1e-4 * gaussian(&mut rng)) as f32)
        .collect();
    AudioBuffer::new(samples, TARGET_SAMPLE_RATE).expect("synthesized samples are finite")
}

/// One generated utterance with its bookkeeping ids.
#[derive(Debug, Clone)]
pub struct SynthUtterance {
    pub utt_id: String,
    pub speaker_id: String,
    pub audio: AudioBuffer,
}

/// `n_speakers` random voices speaking `utts_per_speaker` utterances of
/// 4 to 12 syllables each.
pub fn desk_corpus(n_speakers: usize, utts_per_speaker: usize, seed: u64) -> Vec<SynthUtterance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let voices: Vec<Voice> = (0..n_speakers).map(|_| Voice::random(&mut rng)).collect();
    let mut out = Vec::with_capacity(n_speakers * utts_per_speaker);
    for (s, voice) in voices.iter().enumerate() {
        for u in 0..utts_per_speaker {
            let syllables = rng.random_range(4..=12);
            let utt_seed: u64 = rng.random();
            out.push(SynthUtterance {
                utt_id: format!("utt{u:03}"),
                speaker_id: format!("spk{s:02}"),
                audio: synth_utterance(voice, syllables, utt_seed),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{estimate_f0, F0Config};

    #[test]
    fn tone_length_and_peak() {
        let t = tone(440.0, 0.5, 0.5, 16000).unwrap();
        assert_eq!(t.len(), 8000);
        let peak = t.samples().iter().fold(0.0f32, |m, v| m.max(v.abs()));
        assert!((peak - 0.5).abs() < 1e-3);
        assert!(silence(0.1, 16000).unwrap().samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn utterance_is_frame_aligned_and_deterministic() {
        let v = Voice::male();
        let a = synth_utterance(&v, 6, 9);
        assert_eq!((a.len() - 400) % 160, 0);
        assert_eq!(a.samples(), synth_utterance(&v, 6, 9).samples());
        assert_ne!(a.samples(), synth_utterance(&v, 6, 10).samples());
        assert!(a.samples().iter().all(|s| s.abs() <= 1.0));
    }

    #[test]
    fn pitch_follows_voice() {
        for (voice, lo, hi) in [(Voice::male(), 80.0, 150.0), (Voice::female(), 150.0, 280.0)] {
            let a = synth_utterance(&voice, 10, 4);
            let f0 = estimate_f0(&a, &F0Config::default()).unwrap();
            let mut v: Vec<f64> = f0.voiced_values().collect();
            assert!(v.len() > 20);
            v.sort_by(f64::total_cmp);
            let median = v[v.len() / 2];
            assert!((lo..hi).contains(&median), "median {median}");
        }
    }

    #[test]
    fn corpus_ids() {
        let c = desk_corpus(2, 3, 1);
        assert_eq!(c.len(), 6);
        assert_eq!(c[4].speaker_id, "spk01");
        assert_eq!(c[4].utt_id, "utt001");
        let durations: std::collections::BTreeSet<usize> = c.iter().map(|u| u.audio.len()).collect();
        assert!(durations.len() >= 3);
    }
}
