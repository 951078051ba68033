//! Short-time Fourier transform front end.
//!
//! Analysis frames a real signal with a hop-advanced Hann window and keeps
//! the nonnegative-frequency bins; synthesis is weighted overlap-add with
//! the same window and an explicit overlap-sum normalization, which gives
//! perfect reconstruction on the fully overlapped interior of the signal.

use num_complex::Complex64;
use rustfft::FftPlanner;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StftError {
    #[error("no input channels")]
    NoChannels,
    #[error("channel {index} has {got} samples, expected {expected}")]
    ChannelLengthMismatch {
        index: usize,
        got: usize,
        expected: usize,
    },
    #[error("input too short: {len} samples, need at least {need}")]
    InputTooShort { len: usize, need: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("spectrogram has {got} bins, config implies {expected}")]
    BinCountMismatch { got: usize, expected: usize },
}

/// Analysis/synthesis window family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[non_exhaustive]
pub enum WindowKind {
    Hann,
}

/// Framing geometry for analysis and synthesis.
#[derive(Debug, Clone)]
pub struct StftConfig {
    pub block_size: usize,
    pub hop: usize,
    pub window: WindowKind,
    pub sample_rate: f64,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            block_size: 512,
            hop: 128,
            window: WindowKind::Hann,
            sample_rate: 16000.0,
        }
    }
}

impl StftConfig {
    /// Number of nonnegative-frequency bins, `block_size / 2 + 1`.
    pub fn bins(&self) -> usize {
        self.block_size / 2 + 1
    }

    /// Frame advance in seconds.
    pub fn hop_seconds(&self) -> f64 {
        self.hop as f64 / self.sample_rate
    }

    /// Number of full analysis frames for a signal of `len` samples.
    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.block_size {
            0
        } else {
            (len - self.block_size) / self.hop + 1
        }
    }

    pub fn validate(&self) -> Result<(), StftError> {
        if self.block_size == 0 || self.hop == 0 {
            return Err(StftError::InvalidConfig(
                "block_size and hop must be positive".into(),
            ));
        }
        if self.hop >= self.block_size {
            return Err(StftError::InvalidConfig(format!(
                "hop {} must be smaller than block_size {}",
                self.hop, self.block_size
            )));
        }
        if self.block_size % self.hop != 0 {
            return Err(StftError::InvalidConfig(format!(
                "block_size {} must be divisible by hop {}",
                self.block_size, self.hop
            )));
        }
        if self.block_size % 2 != 0 {
            return Err(StftError::InvalidConfig(
                "block_size must be even".into(),
            ));
        }
        if self.sample_rate <= 0.0 {
            return Err(StftError::InvalidConfig("sample_rate must be positive".into()));
        }
        Ok(())
    }

    /// Analysis window samples (periodic form, length `block_size`).
    pub fn window_samples(&self) -> Vec<f64> {
        let n = self.block_size;
        match self.window {
            WindowKind::Hann => (0..n)
                .map(|i| 0.5 * (1.0 - (2.0 * PI * i as f64 / n as f64).cos()))
                .collect(),
        }
    }
}

/// Complex STFT frames indexed `(frame, bin, channel)`.
///
/// Storage is frame-major with the channels of one `(frame, bin)` cell
/// contiguous, so a per-bin multichannel snapshot is a plain slice.
#[derive(Debug, Clone)]
pub struct MultichannelSpectrogram {
    data: Vec<Complex64>,
    frames: usize,
    bins: usize,
    channels: usize,
}

impl MultichannelSpectrogram {
    pub fn zeroed(frames: usize, bins: usize, channels: usize) -> Self {
        Self {
            data: vec![Complex64::new(0.0, 0.0); frames * bins * channels],
            frames,
            bins,
            channels,
        }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    fn index(&self, frame: usize, bin: usize, channel: usize) -> usize {
        (frame * self.bins + bin) * self.channels + channel
    }

    #[inline]
    pub fn at(&self, frame: usize, bin: usize, channel: usize) -> Complex64 {
        self.data[self.index(frame, bin, channel)]
    }

    #[inline]
    pub fn set(&mut self, frame: usize, bin: usize, channel: usize, value: Complex64) {
        let i = self.index(frame, bin, channel);
        self.data[i] = value;
    }

    /// All `bins * channels` values of one frame, bin-major.
    pub fn frame(&self, frame: usize) -> &[Complex64] {
        let start = frame * self.bins * self.channels;
        &self.data[start..start + self.bins * self.channels]
    }

    /// The `channels` values of one `(frame, bin)` cell.
    pub fn bin_channels(&self, frame: usize, bin: usize) -> &[Complex64] {
        let start = self.index(frame, bin, 0);
        &self.data[start..start + self.channels]
    }
}

/// Forward STFT of per-channel real sample sequences.
///
/// Frame `n` covers samples `[n*hop, n*hop + block_size)`; the analysis
/// window is applied before the transform and only nonnegative-frequency
/// bins are kept.
pub fn analyze(
    channels: &[Vec<f64>],
    cfg: &StftConfig,
) -> Result<MultichannelSpectrogram, StftError> {
    cfg.validate()?;
    if channels.is_empty() {
        return Err(StftError::NoChannels);
    }
    let len = channels[0].len();
    for (i, ch) in channels.iter().enumerate() {
        if ch.len() != len {
            return Err(StftError::ChannelLengthMismatch {
                index: i,
                got: ch.len(),
                expected: len,
            });
        }
    }
    if len < cfg.block_size {
        return Err(StftError::InputTooShort {
            len,
            need: cfg.block_size,
        });
    }

    let frames = cfg.frame_count(len);
    let bins = cfg.bins();
    let window = cfg.window_samples();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(cfg.block_size);

    let mut spec = MultichannelSpectrogram::zeroed(frames, bins, channels.len());
    let mut buf = vec![Complex64::new(0.0, 0.0); cfg.block_size];

    for (m, ch) in channels.iter().enumerate() {
        for n in 0..frames {
            let start = n * cfg.hop;
            for ((b, &w), &x) in buf.iter_mut().zip(&window).zip(&ch[start..start + cfg.block_size]) {
                *b = Complex64::new(w * x, 0.0);
            }
            fft.process(&mut buf);
            for (k, &v) in buf.iter().take(bins).enumerate() {
                spec.set(n, k, m, v);
            }
        }
    }
    Ok(spec)
}

/// Inverse STFT by weighted overlap-add.
///
/// The synthesis window equals the analysis window; the accumulated signal
/// is divided by the summed squared-window envelope. Output length is
/// `(frames - 1) * hop + block_size`; reconstruction is exact (to roundoff)
/// wherever the window overlap is complete.
pub fn synthesize(
    spec: &MultichannelSpectrogram,
    cfg: &StftConfig,
) -> Result<Vec<Vec<f64>>, StftError> {
    cfg.validate()?;
    let bins = cfg.bins();
    if spec.bins() != bins {
        return Err(StftError::BinCountMismatch {
            got: spec.bins(),
            expected: bins,
        });
    }
    let frames = spec.frames();
    let block = cfg.block_size;
    let out_len = if frames == 0 {
        0
    } else {
        (frames - 1) * cfg.hop + block
    };
    let window = cfg.window_samples();

    // Summed squared-window envelope shared by all channels.
    let mut envelope = vec![0.0f64; out_len];
    for n in 0..frames {
        let start = n * cfg.hop;
        for (e, &w) in envelope[start..start + block].iter_mut().zip(&window) {
            *e += w * w;
        }
    }

    let mut planner = FftPlanner::new();
    let ifft = planner.plan_fft_inverse(block);
    let scale = 1.0 / block as f64;

    let mut out = vec![vec![0.0f64; out_len]; spec.channels()];
    let mut buf = vec![Complex64::new(0.0, 0.0); block];

    for (m, ch_out) in out.iter_mut().enumerate() {
        for n in 0..frames {
            for k in 0..bins {
                buf[k] = spec.at(n, k, m);
            }
            // Conjugate symmetry for the negative-frequency half.
            for k in 1..bins - 1 {
                buf[block - k] = buf[k].conj();
            }
            ifft.process(&mut buf);
            let start = n * cfg.hop;
            for ((o, &w), b) in ch_out[start..start + block].iter_mut().zip(&window).zip(&buf) {
                *o += w * b.re * scale;
            }
        }
        for (o, &e) in ch_out.iter_mut().zip(&envelope) {
            if e > 1e-12 {
                *o /= e;
            }
        }
    }
    Ok(out)
}
