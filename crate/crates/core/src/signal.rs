//! Seeded speech-like test signal generator.
//!
//! Produces a deterministic pseudo-speech signal: glottal-pulse excitation
//! with pitch drift, jitter, and shimmer, shaped by slowly wandering
//! formant resonators, organized into syllables with raised-cosine
//! envelopes and short inter-syllable gaps; roughly every fifth syllable
//! is an unvoiced noise burst. The spectral occupancy and amplitude
//! dynamics are close enough to running speech to exercise the adaptive
//! filter and the change detector without a recorded corpus.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

/// Two-pole resonator with unity-ish gain at its center frequency.
struct Resonator {
    a1: f64,
    a2: f64,
    b0: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new(freq: f64, bandwidth: f64, fs: f64) -> Self {
        let r = (-PI * bandwidth / fs).exp();
        let theta = 2.0 * PI * freq / fs;
        Self {
            a1: 2.0 * r * theta.cos(),
            a2: -r * r,
            b0: (1.0 - r * r) * theta.sin().max(0.05),
            y1: 0.0,
            y2: 0.0,
        }
    }

    #[inline]
    fn tick(&mut self, x: f64) -> f64 {
        let y = self.b0 * x + self.a1 * self.y1 + self.a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// Generates `duration_s` seconds of speech-like signal at `sample_rate`,
/// peak-normalized; identical output for identical arguments.
pub fn synthetic_speech(duration_s: f64, sample_rate: f64, seed: u64) -> Vec<f64> {
    let fs = sample_rate;
    let total = (duration_s * fs).round() as usize;
    let mut out = vec![0.0f64; total];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut pos = 0usize;
    let mut syllable_index = 0usize;
    while pos < total {
        let voiced = syllable_index % 5 != 4;
        let syl_len = (rng.gen_range(0.14..0.34) * fs) as usize;
        let gap_len = (rng.gen_range(0.04..0.13) * fs) as usize;
        let end = (pos + syl_len).min(total);
        let level = 10f64.powf(rng.gen_range(-0.6..0.0));

        let attack = (0.035 * fs) as usize;
        let release = (0.055 * fs) as usize;
        let envelope = |i: usize, len: usize| -> f64 {
            let rise = if i < attack {
                0.5 * (1.0 - (PI * i as f64 / attack as f64).cos())
            } else {
                1.0
            };
            let fall = if len > release && i > len - release {
                let j = len - i;
                0.5 * (1.0 - (PI * j as f64 / release as f64).cos())
            } else {
                1.0
            };
            rise * fall
        };

        let len = end - pos;
        let mut buf = vec![0.0f64; len];
        if voiced {
            let mut f0 = rng.gen_range(95.0..220.0);
            let f0_drift = rng.gen_range(-0.25..0.25); // Hz per ms
            let mut formants = [
                Resonator::new(rng.gen_range(300.0..850.0), rng.gen_range(60.0..120.0), fs),
                Resonator::new(rng.gen_range(900.0..2300.0), rng.gen_range(80.0..160.0), fs),
                Resonator::new(rng.gen_range(2400.0..3400.0), rng.gen_range(120.0..250.0), fs),
            ];
            // Glottal pulse train with jitter and shimmer plus aspiration.
            let mut next_pulse = 0usize;
            let mut pulse_amp = 1.0;
            let mut lp1 = 0.0f64;
            let mut lp2 = 0.0f64;
            for (i, b) in buf.iter_mut().enumerate() {
                f0 += f0_drift / fs * 1000.0;
                f0 = f0.clamp(80.0, 260.0);
                let mut x = 0.0;
                if i >= next_pulse {
                    x = pulse_amp;
                    let period = fs / f0 * rng.gen_range(0.97..1.03);
                    next_pulse = i + period.max(2.0) as usize;
                    pulse_amp = rng.gen_range(0.85..1.15);
                }
                x += 0.015 * rng.gen_range(-1.0f64..1.0);
                // -12 dB/oct source roll-off from two leaky integrators.
                lp1 = 0.88 * lp1 + x;
                lp2 = 0.88 * lp2 + lp1;
                let mut y = lp2;
                for f in formants.iter_mut() {
                    y = f.tick(y) + 0.15 * y;
                }
                *b = y;
            }
        } else {
            let mut band = Resonator::new(
                rng.gen_range(1600.0..4500.0),
                rng.gen_range(700.0..1800.0),
                fs,
            );
            for b in buf.iter_mut() {
                *b = band.tick(rng.gen_range(-1.0f64..1.0));
            }
        }

        // Level is applied to the syllable's own RMS so loudness does not
        // depend on source timbre.
        let rms = (buf.iter().map(|v| v * v).sum::<f64>() / len.max(1) as f64).sqrt();
        if rms > 0.0 {
            let target = 0.15 * level * if voiced { 1.0 } else { 0.45 };
            let scale = target / rms;
            for (i, &b) in buf.iter().enumerate() {
                out[pos + i] = envelope(i, len) * scale * b;
            }
        }

        pos = end + gap_len;
        syllable_index += 1;
    }

    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        let scale = 0.95 / peak;
        for v in out.iter_mut() {
            *v *= scale;
        }
    }
    out
}
