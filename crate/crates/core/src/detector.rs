//! Abrupt-change detection and forgetting-factor control.
//!
//! Per frame the engine reports, for every frequency bin, the relative
//! change of the prediction filter and a weight equal to the square root of
//! the desired-signal variance. The detector smooths the weighted sum into
//! a total weighted relative change, compares it against its recent
//! minimum, and drives a two-phase state machine: after a detected change
//! (or at startup) it holds a small forgetting factor for a fixed tracking
//! interval, then hands control to an adaptive steady-state value.

use num_complex::Complex64;
use std::collections::VecDeque;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("vector length mismatch: {got} vs {expected}")]
    LengthMismatch { got: usize, expected: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

/// Thresholds and time constants of the change detector.
#[derive(Debug, Clone)]
pub struct DetectorConfig {
    /// Magnitude threshold on the change ratio.
    pub gamma: f64,
    /// Length (in frames) of the recent-minimum window.
    pub n0: usize,
    /// Tracking-phase duration in frames.
    pub t0: usize,
    /// Forgetting factor during the tracking phase.
    pub lambda_s: f64,
    /// Lower limit of the steady-state forgetting factor.
    pub lambda_l0: f64,
    /// Scale factor in the steady-state forgetting-factor map.
    pub epsilon: f64,
    /// Smoothing factor for the total (weighted) relative change.
    pub beta_w: f64,
    /// Floor protecting ratio denominators.
    pub denom_floor: f64,
    /// Frames after a (re)start during which detection is suppressed.
    pub warmup: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        let t0 = 375;
        let n0 = 35;
        Self {
            gamma: 1.5,
            n0,
            t0,
            lambda_s: 0.990,
            lambda_l0: 0.998,
            epsilon: 0.01,
            beta_w: 0.99,
            denom_floor: 1e-12,
            warmup: t0 + n0,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), DetectorError> {
        if !(self.gamma > 1.0) {
            return Err(DetectorError::InvalidConfig("gamma must exceed 1".into()));
        }
        if self.n0 == 0 || self.t0 == 0 {
            return Err(DetectorError::InvalidConfig("n0 and t0 must be positive".into()));
        }
        if !(self.lambda_s > 0.0 && self.lambda_s < self.lambda_l0 && self.lambda_l0 <= 1.0) {
            return Err(DetectorError::InvalidConfig(
                "need 0 < lambda_s < lambda_l0 <= 1".into(),
            ));
        }
        if !(self.beta_w > 0.0 && self.beta_w < 1.0) {
            return Err(DetectorError::InvalidConfig("beta_w must be in (0, 1)".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(DetectorError::InvalidConfig("epsilon must be positive".into()));
        }
        if !(self.denom_floor > 0.0) {
            return Err(DetectorError::InvalidConfig("denom_floor must be positive".into()));
        }
        Ok(())
    }
}

/// Controller phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Fast re-convergence with the small forgetting factor.
    Tracking,
    /// Adaptive steady-state forgetting factor.
    Steady,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Phase::Tracking => write!(f, "TRACKING"),
            Phase::Steady => write!(f, "STEADY"),
        }
    }
}

/// Per-frame diagnostic record emitted by the engine.
#[derive(Debug, Clone, Copy)]
pub struct TraceRecord {
    pub frame: usize,
    /// Unweighted total relative change (diagnostic only).
    pub delta_t: f64,
    /// Smoothed total weighted relative change.
    pub delta_tw: f64,
    /// Forgetting factor applied to this frame.
    pub lambda: f64,
    pub phase: Phase,
    pub detected: bool,
}

/// Outcome of one detector update.
#[derive(Debug, Clone, Copy)]
pub struct DetectorStep {
    pub delta_tw: f64,
    pub delta_t: f64,
    pub detected: bool,
    /// Forgetting factor to apply to the next frame.
    pub lambda_next: f64,
    pub phase: Phase,
}

/// Relative change of a filter between consecutive frames:
/// `||w_new - w_old||^2 / max(||w_new||^2, denom_floor)`.
pub fn relative_change(
    w_new: &[Complex64],
    w_old: &[Complex64],
    denom_floor: f64,
) -> Result<f64, DetectorError> {
    if w_new.len() != w_old.len() {
        return Err(DetectorError::LengthMismatch {
            got: w_old.len(),
            expected: w_new.len(),
        });
    }
    let mut diff = 0.0;
    let mut norm = 0.0;
    for (a, b) in w_new.iter().zip(w_old) {
        diff += (a - b).norm_sqr();
        norm += a.norm_sqr();
    }
    Ok(diff / norm.max(denom_floor))
}

/// Change detector plus forgetting-factor state machine.
#[derive(Debug, Clone)]
pub struct Detector {
    cfg: DetectorConfig,
    delta_tw: f64,
    delta_t: f64,
    window: VecDeque<f64>,
    phase: Phase,
    t: usize,
    lambda_next: f64,
}

impl Detector {
    pub fn new(cfg: DetectorConfig) -> Result<Self, DetectorError> {
        cfg.validate()?;
        let lambda_s = cfg.lambda_s;
        Ok(Self {
            window: VecDeque::with_capacity(cfg.n0 + 1),
            cfg,
            delta_tw: 0.0,
            delta_t: 0.0,
            phase: Phase::Tracking,
            t: 0,
            lambda_next: lambda_s,
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.cfg
    }

    /// Forgetting factor the engine should apply to the upcoming frame.
    pub fn lambda_next(&self) -> f64 {
        self.lambda_next
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn delta_tw(&self) -> f64 {
        self.delta_tw
    }

    /// Unweighted total relative change (diagnostic trace).
    pub fn delta_t(&self) -> f64 {
        self.delta_t
    }

    /// Folds the per-bin relative changes into the smoothed totals and
    /// pushes the weighted total into the recent-minimum window.
    ///
    /// `rho[k]` is the square root of the desired-signal variance of bin
    /// `k`. Returns the updated weighted total.
    pub fn total_weighted_change(
        &mut self,
        deltas: &[f64],
        rho: &[f64],
    ) -> Result<f64, DetectorError> {
        if deltas.len() != rho.len() {
            return Err(DetectorError::LengthMismatch {
                got: rho.len(),
                expected: deltas.len(),
            });
        }
        let weighted: f64 = deltas.iter().zip(rho).map(|(&d, &r)| r * d).sum();
        let plain: f64 = deltas.iter().sum();
        let b = self.cfg.beta_w;
        self.delta_tw = b * self.delta_tw + (1.0 - b) * weighted;
        self.delta_t = b * self.delta_t + (1.0 - b) * plain;
        if self.window.len() == self.cfg.n0 + 1 {
            self.window.pop_front();
        }
        self.window.push_back(self.delta_tw);
        Ok(self.delta_tw)
    }

    /// Change criterion: the current weighted total against the minimum of
    /// its own recent window. Suppressed during warm-up.
    pub fn detect_change(&self) -> bool {
        if self.t < self.cfg.warmup {
            return false;
        }
        let min = self
            .window
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
            .max(self.cfg.denom_floor);
        self.delta_tw / min > self.cfg.gamma
    }

    /// Advances the state machine and returns the forgetting factor for
    /// the next frame.
    ///
    /// A detection (re)enters the tracking phase and resets the timer; the
    /// tracking phase holds `lambda_s` for `t0` frames; the steady phase
    /// maps the weighted total through `max(2 - exp(epsilon * delta_tw),
    /// lambda_l0)`.
    pub fn next_lambda(&mut self, detected: bool) -> f64 {
        if detected {
            self.phase = Phase::Tracking;
            self.t = 0;
        }
        if self.phase == Phase::Tracking && self.t >= self.cfg.t0 {
            self.phase = Phase::Steady;
        }
        let lambda = match self.phase {
            Phase::Tracking => self.cfg.lambda_s,
            Phase::Steady => (2.0 - (self.cfg.epsilon * self.delta_tw).exp()).max(self.cfg.lambda_l0),
        };
        self.t += 1;
        self.lambda_next = lambda;
        lambda
    }

    /// One full per-frame update: smooth, detect, advance the FSM.
    pub fn step(&mut self, deltas: &[f64], rho: &[f64]) -> Result<DetectorStep, DetectorError> {
        let delta_tw = self.total_weighted_change(deltas, rho)?;
        let detected = self.detect_change();
        let lambda_next = self.next_lambda(detected);
        Ok(DetectorStep {
            delta_tw,
            delta_t: self.delta_t,
            detected,
            lambda_next,
            phase: self.phase,
        })
    }
}
