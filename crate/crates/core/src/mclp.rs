//! Per-bin multichannel linear prediction with recursive least squares.
//!
//! Every frequency bin owns a prediction filter over the last
//! `prediction_order` frames of all channels, delayed by
//! `prediction_delay` frames to protect the direct sound and early
//! reflections. The filter is tracked by an exponentially weighted RLS
//! recursion whose error is normalized by a running estimate of the
//! desired-signal variance; the prediction residual of the reference
//! channel is the dereverberated output. A closed-form weighted
//! least-squares solver over the full history provides an independent
//! route to the same weights for verification.

use crate::detector::{relative_change, Detector, DetectorConfig, TraceRecord};
use crate::linalg;
use crate::stft::MultichannelSpectrogram;
use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MclpError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("forgetting factor {0} outside (0, 1]")]
    InvalidLambda(f64),
    #[error("frame has {got} values, engine expects {expected}")]
    FrameSizeMismatch { got: usize, expected: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("length mismatch: {got} vs {expected}")]
    LengthMismatch { got: usize, expected: usize },
    #[error("normal-equation matrix is singular")]
    SingularSystem,
    #[error(transparent)]
    Detector(#[from] crate::detector::DetectorError),
}

/// Prediction-filter geometry and adaptation constants.
#[derive(Debug, Clone)]
pub struct EngineConfig {
    /// Number of input channels M.
    pub channels: usize,
    /// Prediction delay D in frames.
    pub prediction_delay: usize,
    /// Prediction order L_w in frames per channel.
    pub prediction_order: usize,
    /// Scale of the initial inverse-correlation matrix `P(0) = alpha_p * I`.
    pub alpha_p: f64,
    /// Recursive smoothing factor of the desired-signal variance.
    pub beta: f64,
    /// Zero-based index of the channel that is predicted and output.
    pub reference_channel: usize,
    /// Lower bound keeping the variance estimate away from zero.
    pub variance_floor: f64,
}

impl EngineConfig {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            prediction_delay: 2,
            prediction_order: 40,
            alpha_p: 100.0,
            beta: 0.6,
            reference_channel: 0,
            variance_floor: 1e-12,
        }
    }

    /// Total filter length `channels * prediction_order`.
    pub fn taps(&self) -> usize {
        self.channels * self.prediction_order
    }

    pub fn validate(&self) -> Result<(), MclpError> {
        if self.channels == 0 {
            return Err(MclpError::InvalidConfig("need at least one channel".into()));
        }
        if self.prediction_delay == 0 {
            return Err(MclpError::InvalidConfig("prediction_delay must be >= 1".into()));
        }
        if self.prediction_order == 0 {
            return Err(MclpError::InvalidConfig("prediction_order must be >= 1".into()));
        }
        if !(self.alpha_p > 0.0) {
            return Err(MclpError::InvalidConfig("alpha_p must be positive".into()));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(MclpError::InvalidConfig("beta must be in (0, 1)".into()));
        }
        if self.reference_channel >= self.channels {
            return Err(MclpError::InvalidConfig(format!(
                "reference_channel {} out of range for {} channels",
                self.reference_channel, self.channels
            )));
        }
        if !(self.variance_floor > 0.0) {
            return Err(MclpError::InvalidConfig("variance_floor must be positive".into()));
        }
        Ok(())
    }
}

/// Stacked delayed observation: the last `prediction_order` multichannel
/// frames, newest first, channels contiguous within each frame block.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedObservation {
    values: Vec<Complex64>,
}

impl StackedObservation {
    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Adaptive state of one frequency bin.
#[derive(Debug, Clone)]
pub struct BinState {
    /// Prediction filter, length `taps`.
    pub w: Vec<Complex64>,
    /// Inverse correlation matrix, `taps x taps`, row-major, Hermitian.
    pub p: Vec<Complex64>,
    /// Desired-signal variance estimate.
    pub sigma2: f64,
    taps: usize,
}

impl BinState {
    pub fn new(taps: usize, alpha_p: f64) -> Self {
        let mut p = vec![Complex64::new(0.0, 0.0); taps * taps];
        for i in 0..taps {
            p[i * taps + i] = Complex64::new(alpha_p, 0.0);
        }
        Self {
            w: vec![Complex64::new(0.0, 0.0); taps],
            p,
            sigma2: 0.0,
            taps,
        }
    }

    pub fn taps(&self) -> usize {
        self.taps
    }

    /// Largest deviation from Hermitian symmetry in `p`.
    pub fn p_hermitian_error(&self) -> f64 {
        let n = self.taps;
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                worst = worst.max((self.p[i * n + j] - self.p[j * n + i].conj()).norm());
            }
        }
        worst
    }

    /// Positive-definiteness of `p` via a Cholesky attempt.
    pub fn p_is_positive_definite(&self) -> bool {
        linalg::hermitian_is_positive_definite(&self.p, self.taps)
    }
}

/// Ring buffer of recent multichannel frames, per-bin addressable.
///
/// Holds the last `prediction_order + prediction_delay` frames; frame
/// indices before the start of the signal read as zero.
#[derive(Debug, Clone)]
pub struct FrameHistory {
    data: Vec<Complex64>,
    bins: usize,
    channels: usize,
    capacity: usize,
    /// Absolute index of the most recent frame, or none before any push.
    latest: Option<usize>,
}

impl FrameHistory {
    pub fn new(bins: usize, channels: usize, capacity: usize) -> Self {
        Self {
            data: vec![Complex64::new(0.0, 0.0); capacity * bins * channels],
            bins,
            channels,
            capacity,
            latest: None,
        }
    }

    pub fn latest(&self) -> Option<usize> {
        self.latest
    }

    /// Appends the next frame; `frame` is bin-major with channels inner,
    /// exactly the layout of [`MultichannelSpectrogram::frame`].
    pub fn push(&mut self, frame: &[Complex64]) {
        debug_assert_eq!(frame.len(), self.bins * self.channels);
        let next = match self.latest {
            None => 0,
            Some(n) => n + 1,
        };
        let slot = next % self.capacity;
        let start = slot * self.bins * self.channels;
        self.data[start..start + frame.len()].copy_from_slice(frame);
        self.latest = Some(next);
    }

    /// The `channels` values of bin `k` at absolute frame `index`, or
    /// `None` when the frame predates the signal (reads as zero).
    fn bin_at(&self, index: isize, k: usize) -> Option<&[Complex64]> {
        if index < 0 {
            return None;
        }
        let index = index as usize;
        let latest = self.latest.expect("history is empty");
        debug_assert!(
            index <= latest && latest - index < self.capacity,
            "frame {index} outside retained window ending at {latest}"
        );
        let slot = index % self.capacity;
        let start = (slot * self.bins + k) * self.channels;
        Some(&self.data[start..start + self.channels])
    }
}

/// Builds the stacked delayed observation for bin `k` at frame `n`:
/// frames `n - D`, `n - D - 1`, ..., `n - D - L_w + 1`, each contributing
/// its `channels` values; frames before the signal start contribute zeros.
pub fn stack_delayed(
    history: &FrameHistory,
    n: usize,
    k: usize,
    cfg: &EngineConfig,
) -> StackedObservation {
    debug_assert_eq!(history.channels, cfg.channels);
    let m = cfg.channels;
    let mut values = vec![Complex64::new(0.0, 0.0); cfg.taps()];
    for lag in 0..cfg.prediction_order {
        let index = n as isize - cfg.prediction_delay as isize - lag as isize;
        if let Some(src) = history.bin_at(index, k) {
            values[lag * m..(lag + 1) * m].copy_from_slice(src);
        }
    }
    StackedObservation { values }
}

/// Recursive variance update of the desired signal:
/// `sigma2 <- max(beta * sigma2 + (1 - beta) * |x_ref|^2, floor)`.
pub fn update_variance(state: &mut BinState, x_ref: Complex64, beta: f64, floor: f64) -> f64 {
    state.sigma2 = (beta * state.sigma2 + (1.0 - beta) * x_ref.norm_sqr()).max(floor);
    state.sigma2
}

/// One RLS update of a bin: returns the dereverberated reference-channel
/// value and advances `w` and `p` in place.
///
/// The gain uses the current variance estimate, the residual uses the
/// prior weights, and the inverse-correlation update is written as a
/// symmetric rank-1 downdate so `p` stays exactly Hermitian (equivalent to
/// the gain-form update followed by averaging with its conjugate
/// transpose).
pub fn rls_step(
    state: &mut BinState,
    xt: &StackedObservation,
    x_ref: Complex64,
    lambda: f64,
) -> Result<Complex64, MclpError> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(MclpError::InvalidLambda(lambda));
    }
    if !x_ref.is_finite() || xt.values.iter().any(|v| !v.is_finite()) {
        return Err(MclpError::NonFinite("rls_step input".into()));
    }
    let n = state.taps;
    debug_assert_eq!(xt.values.len(), n);
    debug_assert!(state.sigma2 > 0.0, "variance not seeded before rls_step");

    let inv_lambda = 1.0 / lambda;

    // Silent frame: gain vanishes, weights hold, p just rescales.
    if xt.values.iter().all(|v| v.re == 0.0 && v.im == 0.0) {
        for v in state.p.iter_mut() {
            *v *= inv_lambda;
        }
        return Ok(x_ref);
    }

    // pu = P * conj(xt); q = xt^T * pu (real for Hermitian P).
    let mut pu = vec![Complex64::new(0.0, 0.0); n];
    for (i, out) in pu.iter_mut().enumerate() {
        let row = &state.p[i * n..(i + 1) * n];
        let mut acc = Complex64::new(0.0, 0.0);
        for (pij, xj) in row.iter().zip(&xt.values) {
            acc += pij * xj.conj();
        }
        *out = acc;
    }
    let q: f64 = pu
        .iter()
        .zip(&xt.values)
        .map(|(pu_i, x_i)| (pu_i * x_i).re)
        .sum();

    // Gain denominator from the variance-normalized cost.
    let denom = lambda * state.sigma2 + q;

    // Residual against the prior weights.
    let pred: Complex64 = state.w.iter().zip(&xt.values).map(|(w, x)| w * x).sum();
    let d = x_ref - pred;

    // Weight update w += k * d with k = pu / denom.
    let gain_scale = d / denom;
    for (w, pu_i) in state.w.iter_mut().zip(&pu) {
        *w += pu_i * gain_scale;
    }

    // P <- (P - pu * pu^H / denom) / lambda, upper triangle mirrored.
    let inv_denom = 1.0 / denom;
    for i in 0..n {
        let pu_i = pu[i];
        let diag = (state.p[i * n + i].re - (pu_i.norm_sqr() * inv_denom)) * inv_lambda;
        state.p[i * n + i] = Complex64::new(diag, 0.0);
        for j in i + 1..n {
            let v = (state.p[i * n + j] - pu_i * pu[j].conj() * inv_denom) * inv_lambda;
            state.p[i * n + j] = v;
            state.p[j * n + i] = v.conj();
        }
    }

    if !d.is_finite() {
        return Err(MclpError::NonFinite("rls_step output".into()));
    }
    Ok(d)
}

/// Closed-form weighted least-squares solution over a full per-bin
/// history, the independent counterpart of iterating [`rls_step`].
///
/// `frames[j]` holds the `channels` observed values of the bin at frame
/// `j`; `sigma2_seq[j]` must be the variance trajectory the recursion
/// used. `alpha_reg` is the ridge term that decays with the forgetting
/// factor; matching a recursion initialized with `P(0) = alpha_p * I`
/// requires `alpha_reg = 1 / alpha_p`.
pub fn closed_form_solve(
    frames: &[Vec<Complex64>],
    cfg: &EngineConfig,
    lambda: f64,
    alpha_reg: f64,
    sigma2_seq: &[f64],
) -> Result<Vec<Complex64>, MclpError> {
    cfg.validate()?;
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(MclpError::InvalidLambda(lambda));
    }
    if !(alpha_reg > 0.0) {
        return Err(MclpError::InvalidConfig("alpha_reg must be positive".into()));
    }
    if sigma2_seq.len() != frames.len() {
        return Err(MclpError::LengthMismatch {
            got: sigma2_seq.len(),
            expected: frames.len(),
        });
    }
    let m = cfg.channels;
    let order = cfg.prediction_order;
    let delay = cfg.prediction_delay as isize;
    let n = cfg.taps();

    let mut psi = vec![Complex64::new(0.0, 0.0); n * n];
    for i in 0..n {
        psi[i * n + i] = Complex64::new(alpha_reg, 0.0);
    }
    let mut z = vec![Complex64::new(0.0, 0.0); n];
    let mut stacked = vec![Complex64::new(0.0, 0.0); n];

    for (j, frame) in frames.iter().enumerate() {
        if frame.len() != m {
            return Err(MclpError::LengthMismatch {
                got: frame.len(),
                expected: m,
            });
        }
        let sigma2 = sigma2_seq[j];
        if !(sigma2 > 0.0) {
            return Err(MclpError::InvalidConfig(format!(
                "sigma2_seq[{j}] = {sigma2} must be positive"
            )));
        }

        // Stack the delayed observation straight from the slice history.
        for v in stacked.iter_mut() {
            *v = Complex64::new(0.0, 0.0);
        }
        for lag in 0..order {
            let idx = j as isize - delay - lag as isize;
            if idx >= 0 {
                stacked[lag * m..(lag + 1) * m].copy_from_slice(&frames[idx as usize]);
            }
        }

        let x_ref = frame[cfg.reference_channel];
        let inv_sigma2 = 1.0 / sigma2;
        for i in 0..n {
            let left = stacked[i].conj() * inv_sigma2;
            let row = &mut psi[i * n..(i + 1) * n];
            for (p, xj) in row.iter_mut().zip(&stacked) {
                *p = *p * lambda + left * xj;
            }
            z[i] = z[i] * lambda + left * x_ref;
        }
    }

    linalg::solve_dense(&psi, &z, n).ok_or(MclpError::SingularSystem)
}

/// How the per-frame forgetting factor is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaPolicy {
    /// Detector-driven time-varying forgetting factor.
    Adaptive,
    /// Constant forgetting factor; the detector still runs for tracing.
    Fixed(f64),
}

/// Output of one engine frame.
#[derive(Debug, Clone)]
pub struct FrameOutput {
    /// Dereverberated reference-channel values, one per bin.
    pub dereverbed: Vec<Complex64>,
    pub trace: TraceRecord,
}

/// Full-band dereverberation engine: per-bin RLS state, shared frame
/// history, and the change detector that sets the forgetting factor.
#[derive(Debug, Clone)]
pub struct Engine {
    cfg: EngineConfig,
    bins: usize,
    states: Vec<BinState>,
    history: FrameHistory,
    detector: Detector,
    policy: LambdaPolicy,
    frame_index: usize,
}

impl Engine {
    pub fn new(
        cfg: EngineConfig,
        detector_cfg: DetectorConfig,
        bins: usize,
        policy: LambdaPolicy,
    ) -> Result<Self, MclpError> {
        cfg.validate()?;
        if bins == 0 {
            return Err(MclpError::InvalidConfig("need at least one bin".into()));
        }
        if let LambdaPolicy::Fixed(v) = policy {
            if !(v > 0.0 && v <= 1.0) {
                return Err(MclpError::InvalidLambda(v));
            }
        }
        let detector = Detector::new(detector_cfg)?;
        let taps = cfg.taps();
        let states = (0..bins).map(|_| BinState::new(taps, cfg.alpha_p)).collect();
        let history = FrameHistory::new(
            bins,
            cfg.channels,
            cfg.prediction_order + cfg.prediction_delay,
        );
        Ok(Self {
            cfg,
            bins,
            states,
            history,
            detector,
            policy,
            frame_index: 0,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn detector(&self) -> &Detector {
        &self.detector
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn bin_state(&self, k: usize) -> &BinState {
        &self.states[k]
    }

    pub fn frames_processed(&self) -> usize {
        self.frame_index
    }

    /// Forgetting factor that will be applied to the next frame.
    pub fn lambda_next(&self) -> f64 {
        match self.policy {
            LambdaPolicy::Adaptive => self.detector.lambda_next(),
            LambdaPolicy::Fixed(v) => v,
        }
    }

    /// Processes one multichannel frame (bin-major, channels inner) and
    /// returns the dereverberated reference-channel frame.
    ///
    /// Per bin: the variance estimate is refreshed, the delayed stacked
    /// observation is built, and the RLS step runs with this frame's
    /// global forgetting factor. The per-bin weight changes then drive the
    /// detector, which fixes the forgetting factor for the next frame.
    pub fn process_frame(&mut self, frame: &[Complex64]) -> Result<FrameOutput, MclpError> {
        let expected = self.bins * self.cfg.channels;
        if frame.len() != expected {
            return Err(MclpError::FrameSizeMismatch {
                got: frame.len(),
                expected,
            });
        }
        let lambda = self.lambda_next();
        let n = self.frame_index;
        self.history.push(frame);

        let cfg = &self.cfg;
        let history = &self.history;
        let denom_floor = self.detector.config().denom_floor;
        let channels = cfg.channels;
        let reference = cfg.reference_channel;

        let per_bin: Result<Vec<(Complex64, f64, f64)>, MclpError> = self
            .states
            .par_iter_mut()
            .enumerate()
            .map(|(k, state)| {
                let x_ref = frame[k * channels + reference];
                if n == 0 {
                    // Seed the variance with the first frame's energy.
                    state.sigma2 = x_ref.norm_sqr().max(cfg.variance_floor);
                } else {
                    update_variance(state, x_ref, cfg.beta, cfg.variance_floor);
                }
                let xt = stack_delayed(history, n, k, cfg);
                let w_old = state.w.clone();
                let d = rls_step(state, &xt, x_ref, lambda)?;
                let delta = relative_change(&state.w, &w_old, denom_floor)?;
                Ok((d, delta, state.sigma2.sqrt()))
            })
            .collect();
        let per_bin = per_bin?;

        let dereverbed: Vec<Complex64> = per_bin.iter().map(|t| t.0).collect();
        let deltas: Vec<f64> = per_bin.iter().map(|t| t.1).collect();
        let rhos: Vec<f64> = per_bin.iter().map(|t| t.2).collect();

        let step = self.detector.step(&deltas, &rhos)?;
        let trace = TraceRecord {
            frame: n,
            delta_t: step.delta_t,
            delta_tw: step.delta_tw,
            lambda,
            phase: step.phase,
            detected: step.detected,
        };
        self.frame_index += 1;
        Ok(FrameOutput { dereverbed, trace })
    }

    /// Runs every frame of a spectrogram in order; returns the per-frame
    /// dereverberated bins and the detector trace.
    pub fn process_spectrogram(
        &mut self,
        spec: &MultichannelSpectrogram,
    ) -> Result<(Vec<Vec<Complex64>>, Vec<TraceRecord>), MclpError> {
        if spec.bins() != self.bins {
            return Err(MclpError::FrameSizeMismatch {
                got: spec.bins() * spec.channels(),
                expected: self.bins * self.cfg.channels,
            });
        }
        let mut out = Vec::with_capacity(spec.frames());
        let mut traces = Vec::with_capacity(spec.frames());
        for nf in 0..spec.frames() {
            let FrameOutput { dereverbed, trace } = self.process_frame(spec.frame(nf))?;
            out.push(dereverbed);
            traces.push(trace);
        }
        Ok((out, traces))
    }
}
