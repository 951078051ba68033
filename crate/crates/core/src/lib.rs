//! Streaming multichannel speech dereverberation.
//!
//! The processing core runs recursive-least-squares multichannel linear
//! prediction per STFT frequency bin: the late reverberation in the current
//! frame is predicted from delayed past frames across all microphones and
//! subtracted from the reference channel. A change detector watches the
//! weighted relative change of the prediction filters and switches the
//! forgetting factor between a fast-tracking value and an adaptive
//! steady-state value, so the filter re-converges quickly after an abrupt
//! speaker-position change without giving up steady-state accuracy.
//!
//! Supporting modules provide the STFT front end, an image-method room
//! simulator for reproducible scenes with a mid-signal source switch,
//! objective quality metrics, and a seeded speech-like test signal
//! generator.

pub mod detector;
mod linalg;
pub mod mclp;
pub mod metrics;
pub mod room;
pub mod signal;
pub mod stft;

pub use detector::{Detector, DetectorConfig, Phase, TraceRecord};
pub use mclp::{BinState, Engine, EngineConfig, FrameOutput, LambdaPolicy};
pub use metrics::{ScoreGeometry, ScoreSeries, T60Estimate};
pub use room::{RoomSpec, Scenario};
pub use stft::{MultichannelSpectrogram, StftConfig};
