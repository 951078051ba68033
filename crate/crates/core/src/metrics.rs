//! Objective evaluation: segmental signal-to-reverberation ratio,
//! log-spectral distance, reverberation time from Schroeder backward
//! integration, and filter-deviation diagnostics.
//!
//! Windowed scores use 2 s windows with 75% overlap so convergence curves
//! are directly comparable across runs.

use crate::stft::{analyze, StftConfig};
use num_complex::Complex64;
use std::io::{self, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("length mismatch: {got} vs {expected}")]
    LengthMismatch { got: usize, expected: usize },
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("impulse response has no energy")]
    ZeroSignal,
    #[error("decay curve has no negative slope")]
    NoDecay,
    #[error(transparent)]
    Stft(#[from] crate::stft::StftError),
}

/// Sliding-window geometry for score curves.
#[derive(Debug, Clone)]
pub struct ScoreGeometry {
    pub window_s: f64,
    /// Fractional overlap between consecutive windows.
    pub overlap: f64,
    pub sample_rate: f64,
}

impl Default for ScoreGeometry {
    fn default() -> Self {
        Self {
            window_s: 2.0,
            overlap: 0.75,
            sample_rate: 16000.0,
        }
    }
}

impl ScoreGeometry {
    fn window_samples(&self) -> usize {
        (self.window_s * self.sample_rate).round() as usize
    }

    fn hop_samples(&self) -> usize {
        (self.window_s * (1.0 - self.overlap) * self.sample_rate).round() as usize
    }

    fn validate(&self) -> Result<(), MetricsError> {
        if !(self.window_s > 0.0) || !(self.sample_rate > 0.0) {
            return Err(MetricsError::InvalidGeometry(
                "window_s and sample_rate must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(MetricsError::InvalidGeometry(
                "overlap must be in [0, 1)".into(),
            ));
        }
        if self.hop_samples() == 0 || self.window_samples() == 0 {
            return Err(MetricsError::InvalidGeometry("degenerate window grid".into()));
        }
        Ok(())
    }
}

/// Per-window scalar scores with their window start times. A score is
/// absent where the window was unscorable (for example a silent
/// reference).
#[derive(Debug, Clone)]
pub struct ScoreSeries {
    pub window_s: f64,
    pub overlap: f64,
    pub times: Vec<f64>,
    pub scores: Vec<Option<f64>>,
}

impl ScoreSeries {
    /// Present `(time, score)` pairs.
    pub fn present(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.times
            .iter()
            .zip(&self.scores)
            .filter_map(|(&t, s)| s.map(|v| (t, v)))
    }

    /// Mean of the present scores whose window start lies in `[from, to)`.
    pub fn mean_in(&self, from: f64, to: f64) -> Option<f64> {
        let vals: Vec<f64> = self
            .present()
            .filter(|(t, _)| *t >= from && *t < to)
            .map(|(_, v)| v)
            .collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "time_s,score")?;
        for (t, v) in self.present() {
            writeln!(w, "{t:.6},{v:.6}")?;
        }
        Ok(())
    }
}

/// Direct-plus-early scoring reference.
#[derive(Debug, Clone)]
pub struct ReferenceSignal {
    pub samples: Vec<f64>,
}

impl ReferenceSignal {
    pub fn from_samples(samples: Vec<f64>) -> Self {
        Self { samples }
    }

    /// Clean signal convolved with the impulse response truncated
    /// `early_window_s` after its direct-path peak, cut to the clean
    /// signal's length so it aligns with the scene.
    pub fn direct_plus_early(
        clean: &[f64],
        rir: &[f64],
        sample_rate: f64,
        early_window_s: f64,
    ) -> Self {
        let early = truncate_after_peak(rir, early_window_s, sample_rate);
        let mut samples = crate::room::fft_convolve(clean, &early);
        samples.truncate(clean.len());
        Self { samples }
    }
}

/// Keeps an impulse response up to `window_s` seconds past its largest
/// absolute peak.
pub fn truncate_after_peak(rir: &[f64], window_s: f64, sample_rate: f64) -> Vec<f64> {
    let peak = rir
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let keep = peak + (window_s * sample_rate).round() as usize + 1;
    rir[..keep.min(rir.len())].to_vec()
}

const SRR_CLAMP_LO: f64 = -30.0;
const SRR_CLAMP_HI: f64 = 40.0;

/// Segmental signal-to-reverberation ratio in dB: per window,
/// `10 log10(sum ref^2 / sum (test - ref)^2)`, clamped to [-30, +40].
/// Windows with a silent reference are skipped.
pub fn segmental_srr(
    reference: &ReferenceSignal,
    test: &[f64],
    geom: &ScoreGeometry,
) -> Result<ScoreSeries, MetricsError> {
    geom.validate()?;
    let r = &reference.samples;
    if r.len() != test.len() {
        return Err(MetricsError::LengthMismatch {
            got: test.len(),
            expected: r.len(),
        });
    }
    let win = geom.window_samples();
    let hop = geom.hop_samples();
    let mut times = Vec::new();
    let mut scores = Vec::new();
    let mut start = 0usize;
    while start + win <= r.len() {
        let ref_e: f64 = r[start..start + win].iter().map(|v| v * v).sum();
        let res_e: f64 = r[start..start + win]
            .iter()
            .zip(&test[start..start + win])
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        times.push(start as f64 / geom.sample_rate);
        scores.push(if ref_e == 0.0 {
            None
        } else if res_e == 0.0 {
            Some(SRR_CLAMP_HI)
        } else {
            Some((10.0 * (ref_e / res_e).log10()).clamp(SRR_CLAMP_LO, SRR_CLAMP_HI))
        });
        start += hop;
    }
    Ok(ScoreSeries {
        window_s: geom.window_s,
        overlap: geom.overlap,
        times,
        scores,
    })
}

/// Log-spectral distance in dB: per window, the RMS over STFT frames and
/// bins of `20 (log10(|ref| + e0) - log10(|test| + e0))` with `e0 = 1e-10`.
pub fn log_spectral_distance(
    reference: &[f64],
    test: &[f64],
    stft_cfg: &StftConfig,
    geom: &ScoreGeometry,
) -> Result<ScoreSeries, MetricsError> {
    geom.validate()?;
    if reference.len() != test.len() {
        return Err(MetricsError::LengthMismatch {
            got: test.len(),
            expected: reference.len(),
        });
    }
    const EPS: f64 = 1e-10;
    let spec_r = analyze(&[reference.to_vec()], stft_cfg)?;
    let spec_t = analyze(&[test.to_vec()], stft_cfg)?;
    let win = geom.window_samples();
    let hop = geom.hop_samples();

    let mut times = Vec::new();
    let mut scores = Vec::new();
    let mut start = 0usize;
    while start + win <= reference.len() {
        // Frames fully inside this window.
        let first = start.div_ceil(stft_cfg.hop);
        let mut acc = 0.0;
        let mut count = 0usize;
        let mut n = first;
        while n < spec_r.frames() && n * stft_cfg.hop + stft_cfg.block_size <= start + win {
            for k in 0..spec_r.bins() {
                let lr = (spec_r.at(n, k, 0).norm() + EPS).log10();
                let lt = (spec_t.at(n, k, 0).norm() + EPS).log10();
                let d = 20.0 * (lr - lt);
                acc += d * d;
                count += 1;
            }
            n += 1;
        }
        times.push(start as f64 / geom.sample_rate);
        scores.push(if count == 0 {
            None
        } else {
            Some((acc / count as f64).sqrt())
        });
        start += hop;
    }
    Ok(ScoreSeries {
        window_s: geom.window_s,
        overlap: geom.overlap,
        times,
        scores,
    })
}

/// Schroeder backward-integrated energy decay in dB, normalized to 0 dB
/// at the start. Monotone non-increasing by construction.
pub fn schroeder_decay_db(rir: &[f64]) -> Vec<f64> {
    let mut energy: Vec<f64> = rir.iter().rev().map(|v| v * v).collect();
    let mut acc = 0.0;
    for e in energy.iter_mut() {
        acc += *e;
        *e = acc;
    }
    energy.reverse();
    let total = energy.first().copied().unwrap_or(0.0);
    energy
        .iter()
        .map(|&e| {
            if e > 0.0 && total > 0.0 {
                10.0 * (e / total).log10()
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect()
}

/// Reverberation-time estimate from the decay curve.
#[derive(Debug, Clone, Copy)]
pub struct T60Estimate {
    pub seconds: f64,
    /// Set when the decay never reaches -35 dB and the line was fitted
    /// over a shorter span.
    pub reduced_range: bool,
}

/// T60 from a line fit of the Schroeder decay between -5 dB and -35 dB,
/// extrapolated to -60 dB. Falls back to the available span (flagged)
/// when the decay range is shorter than 30 dB.
pub fn schroeder_t60(rir: &[f64], sample_rate: f64) -> Result<T60Estimate, MetricsError> {
    if rir.iter().all(|&v| v == 0.0) {
        return Err(MetricsError::ZeroSignal);
    }
    let decay = schroeder_decay_db(rir);
    fit_t60_from_decay(&decay, sample_rate)
}

/// The -5 dB to -35 dB line fit behind [`schroeder_t60`], usable on any
/// decay curve sampled at `sample_rate`.
pub fn fit_t60_from_decay(decay: &[f64], sample_rate: f64) -> Result<T60Estimate, MetricsError> {
    let first_at = |threshold: f64| decay.iter().position(|&d| d <= threshold);
    let i5 = first_at(-5.0).ok_or(MetricsError::NoDecay)?;
    let (i_end, reduced_range) = match first_at(-35.0) {
        Some(i) => (i, false),
        None => {
            let last_finite = decay
                .iter()
                .rposition(|d| d.is_finite())
                .ok_or(MetricsError::NoDecay)?;
            (last_finite, true)
        }
    };
    if i_end <= i5 {
        return Err(MetricsError::NoDecay);
    }

    // Least-squares line through the fit span.
    let n = (i_end - i5 + 1) as f64;
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (i, &d) in decay.iter().enumerate().take(i_end + 1).skip(i5) {
        let t = i as f64 / sample_rate;
        sx += t;
        sy += d;
        sxy += t * d;
        sxx += t * t;
    }
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    if slope >= 0.0 {
        return Err(MetricsError::NoDecay);
    }
    Ok(T60Estimate {
        seconds: -60.0 / slope,
        reduced_range,
    })
}

/// Squared-norm deviation between an estimated filter and a reference.
pub fn weight_deviation(w_hat: &[Complex64], w_ref: &[Complex64]) -> Result<f64, MetricsError> {
    if w_hat.len() != w_ref.len() {
        return Err(MetricsError::LengthMismatch {
            got: w_hat.len(),
            expected: w_ref.len(),
        });
    }
    Ok(w_hat
        .iter()
        .zip(w_ref)
        .map(|(a, b)| (b - a).norm_sqr())
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn geom() -> ScoreGeometry {
        ScoreGeometry::default()
    }

    #[test]
    fn srr_of_identical_signals_clamps_high() {
        let x = noise(64000, 1);
        let series = segmental_srr(&ReferenceSignal::from_samples(x.clone()), &x, &geom()).unwrap();
        assert!(!series.scores.is_empty());
        for (_, v) in series.present() {
            assert_eq!(v, 40.0);
        }
    }

    #[test]
    fn window_grid_matches_formula() {
        for len in [32000usize, 64000, 100000, 31999] {
            let x = vec![1.0; len];
            let series =
                segmental_srr(&ReferenceSignal::from_samples(x.clone()), &x, &geom()).unwrap();
            let win = 32000;
            let hop = 8000;
            let expected = if len < win { 0 } else { (len - win) / hop + 1 };
            assert_eq!(series.scores.len(), expected, "len {len}");
        }
    }

    #[test]
    fn srr_matches_injected_snr() {
        let reference = noise(96000, 2);
        let interference = noise(96000, 3);
        // Scale the interference for a global power ratio of exactly 10 dB.
        let p_ref: f64 = reference.iter().map(|v| v * v).sum();
        let p_int: f64 = interference.iter().map(|v| v * v).sum();
        let scale = (p_ref / (p_int * 10.0)).sqrt();
        let test: Vec<f64> = reference
            .iter()
            .zip(&interference)
            .map(|(r, n)| r + scale * n)
            .collect();
        let series =
            segmental_srr(&ReferenceSignal::from_samples(reference), &test, &geom()).unwrap();
        for (t, v) in series.present() {
            assert!((v - 10.0).abs() <= 0.1, "window at {t}: {v} dB");
        }
    }

    #[test]
    fn srr_extremes_clamp_and_silent_reference_is_skipped() {
        let mut reference = noise(96000, 4);
        // Silence 2.5 s in the middle so some windows are unscorable.
        for v in reference[40000..80000].iter_mut() {
            *v = 0.0;
        }
        // A zeroed test leaves the residual equal to the reference: 0 dB.
        let zeros = vec![0.0; reference.len()];
        let series = segmental_srr(
            &ReferenceSignal::from_samples(reference.clone()),
            &zeros,
            &geom(),
        )
        .unwrap();
        let mut skipped = 0;
        for s in &series.scores {
            match s {
                Some(v) => assert_eq!(*v, 0.0),
                None => skipped += 1,
            }
        }
        assert!(skipped > 0, "no silent windows were skipped");

        // A wildly wrong test drives the ratio below the -30 dB clamp.
        let wrong: Vec<f64> = reference.iter().map(|v| 100.0 * v).collect();
        let series = segmental_srr(
            &ReferenceSignal::from_samples(reference),
            &wrong,
            &geom(),
        )
        .unwrap();
        for (_, v) in series.present() {
            assert_eq!(v, -30.0);
        }
    }

    #[test]
    fn lsd_of_identical_signals_is_zero() {
        let x = noise(64000, 5);
        let series =
            log_spectral_distance(&x, &x, &StftConfig::default(), &geom()).unwrap();
        for (_, v) in series.present() {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn lsd_of_constant_gain_is_the_gain_in_db() {
        let x = noise(64000, 6);
        let double: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let series =
            log_spectral_distance(&x, &double, &StftConfig::default(), &geom()).unwrap();
        let expected = 20.0 * 2.0f64.log10();
        let mut count = 0;
        for (t, v) in series.present() {
            assert!((v - expected).abs() <= 1e-4, "window {t}: {v}");
            count += 1;
        }
        assert!(count > 0);
    }

    #[test]
    fn lsd_orders_noise_above_identity() {
        let speech = crate::signal::synthetic_speech(4.0, 16000.0, 8);
        let other = noise(speech.len(), 9);
        let series =
            log_spectral_distance(&speech, &other, &StftConfig::default(), &geom()).unwrap();
        for (t, v) in series.present() {
            assert!(v > 1.0, "window {t}: {v} dB not clearly positive");
        }
    }

    #[test]
    fn schroeder_recovers_synthetic_decay() {
        // Amplitude envelope exp(-3 ln(10) t / T60) decays 60 dB in T60.
        let fs = 16000.0;
        let t60 = 0.5;
        let rate = 3.0 * 10f64.ln() / t60;
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let rir: Vec<f64> = (0..16000)
            .map(|i| {
                let t = i as f64 / fs;
                (-rate * t).exp() * rng.gen_range(-1.0f64..1.0)
            })
            .collect();
        let est = schroeder_t60(&rir, fs).unwrap();
        assert!(!est.reduced_range);
        assert!(
            (est.seconds - t60).abs() <= 0.05 * t60,
            "estimate {} vs {t60}",
            est.seconds
        );

        // Scale invariance.
        let doubled: Vec<f64> = rir.iter().map(|v| 2.0 * v).collect();
        let est2 = schroeder_t60(&doubled, fs).unwrap();
        assert!((est2.seconds - est.seconds).abs() < 1e-12);
    }

    #[test]
    fn schroeder_decay_is_monotone() {
        let rir = noise(4000, 11);
        let decay = schroeder_decay_db(&rir);
        for pair in decay.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12);
        }
        assert!(decay[0].abs() < 1e-12);
    }

    #[test]
    fn short_slow_decay_sets_reduced_range_flag() {
        // 200 samples with barely any decay: the curve never reaches
        // -35 dB before the integration tail.
        let rir: Vec<f64> = (0..200)
            .map(|i| (1.0 - 0.3 * i as f64 / 200.0) * if i % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        let est = schroeder_t60(&rir, 16000.0).unwrap();
        assert!(est.reduced_range);
    }

    #[test]
    fn zero_rir_is_rejected() {
        assert!(matches!(
            schroeder_t60(&[0.0; 100], 16000.0),
            Err(MetricsError::ZeroSignal)
        ));
    }

    #[test]
    fn weight_deviation_matches_brute_force() {
        let c = |re: f64, im: f64| Complex64::new(re, im);
        let a = vec![c(1.0, 2.0), c(-0.5, 0.1)];
        assert_eq!(weight_deviation(&a, &a).unwrap(), 0.0);

        let zero = vec![c(0.0, 0.0); 2];
        let norm: f64 = a.iter().map(|v| v.norm_sqr()).sum();
        assert!((weight_deviation(&zero, &a).unwrap() - norm).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let w1: Vec<Complex64> = (0..16)
            .map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let w2: Vec<Complex64> = (0..16)
            .map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let mut brute = 0.0;
        for i in 0..16 {
            let dr = w2[i].re - w1[i].re;
            let di = w2[i].im - w1[i].im;
            brute += dr * dr + di * di;
        }
        assert!((weight_deviation(&w1, &w2).unwrap() - brute).abs() < 1e-12);
        assert!(weight_deviation(&w1, &w2[..3]).is_err());
    }

    #[test]
    fn truncate_after_peak_keeps_direct_and_early_part() {
        let mut rir = vec![0.0; 4000];
        rir[100] = 1.0;
        rir[900] = 0.4; // 50 ms later at 16 kHz
        rir[2000] = 0.3;
        let early = truncate_after_peak(&rir, 0.05, 16000.0);
        assert_eq!(early.len(), 100 + 800 + 1);
        assert_eq!(early[100], 1.0);
        assert_eq!(early[900], 0.4);
    }
}
