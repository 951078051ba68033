//! Shared scenario helpers for the integration and acceptance suites.

use derev_core::detector::{DetectorConfig, TraceRecord};
use derev_core::mclp::{Engine, EngineConfig, LambdaPolicy};
use derev_core::metrics::{segmental_srr, ReferenceSignal, ScoreGeometry, ScoreSeries};
use derev_core::room::{synthesize_reference, synthesize_scene, RoomSpec, Scenario};
use derev_core::signal::synthetic_speech;
use derev_core::stft::{analyze, synthesize, MultichannelSpectrogram, StftConfig};
use num_complex::Complex64;

pub const SAMPLE_RATE: f64 = 16000.0;
pub const EARLY_WINDOW_S: f64 = 0.05;

/// Paper-scale scenario: 6.5 x 5.1 x 3.8 m room, three microphones at
/// 0.05 m spacing, sources at +-25 degrees 2.2 m away, switch at 10 s.
pub fn paper_scenario(t60: f64, duration_s: f64, seed: u64) -> Scenario {
    let clean = synthetic_speech(duration_s, SAMPLE_RATE, seed);
    let room = RoomSpec::new([6.5, 5.1, 3.8], t60, SAMPLE_RATE);
    Scenario::default_array(room, clean)
}

pub struct ProcessedRun {
    pub output: Vec<f64>,
    pub traces: Vec<TraceRecord>,
}

/// Peak-normalizes, runs the STFT -> engine -> inverse STFT pipeline on
/// multichannel samples, and restores the input gain, mirroring the CLI
/// processing path.
pub fn process_multichannel(
    channels: &[Vec<f64>],
    stft_cfg: &StftConfig,
    engine_cfg: EngineConfig,
    detector_cfg: DetectorConfig,
    policy: LambdaPolicy,
) -> ProcessedRun {
    let peak = channels
        .iter()
        .flatten()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if peak > 0.0 { 1.0 / peak } else { 1.0 };
    let normalized: Vec<Vec<f64>> = channels
        .iter()
        .map(|ch| ch.iter().map(|v| v * scale).collect())
        .collect();

    let spec = analyze(&normalized, stft_cfg).expect("analyze");
    let mut engine =
        Engine::new(engine_cfg, detector_cfg, spec.bins(), policy).expect("engine construction");
    let (frames, traces) = engine.process_spectrogram(&spec).expect("engine run");

    let mut mono = MultichannelSpectrogram::zeroed(frames.len(), spec.bins(), 1);
    for (n, frame) in frames.iter().enumerate() {
        for (k, &v) in frame.iter().enumerate() {
            mono.set(n, k, 0, v);
        }
    }
    let mut output = synthesize(&mono, stft_cfg).expect("synthesize").remove(0);
    let restore = if peak > 0.0 { peak } else { 1.0 };
    for v in output.iter_mut() {
        *v *= restore;
    }
    output.truncate(channels[0].len());
    ProcessedRun { output, traces }
}

/// Runs the paper scenario end to end and scores the reference channel.
pub struct ScenarioRun {
    pub scene: Vec<Vec<f64>>,
    pub reference: Vec<f64>,
    pub processed: ProcessedRun,
}

pub fn run_scenario(sc: &Scenario, policy: LambdaPolicy) -> ScenarioRun {
    let scene = synthesize_scene(sc).expect("scene");
    let reference = synthesize_reference(sc, 0, EARLY_WINDOW_S).expect("reference");
    let stft_cfg = StftConfig::default();
    let engine_cfg = EngineConfig::new(scene.len());
    let processed = process_multichannel(
        &scene,
        &stft_cfg,
        engine_cfg,
        DetectorConfig::default(),
        policy,
    );
    ScenarioRun {
        scene,
        reference,
        processed,
    }
}

pub fn srr_series(reference: &[f64], test: &[f64]) -> ScoreSeries {
    let geom = ScoreGeometry::default();
    let n = reference.len().min(test.len());
    segmental_srr(
        &ReferenceSignal::from_samples(reference[..n].to_vec()),
        &test[..n],
        &geom,
    )
    .expect("srr")
}

/// Detection timestamps in seconds (frame hop of the default STFT grid).
pub fn detection_times(traces: &[TraceRecord], stft_cfg: &StftConfig) -> Vec<f64> {
    traces
        .iter()
        .filter(|t| t.detected)
        .map(|t| t.frame as f64 * stft_cfg.hop_seconds())
        .collect()
}

#[allow(dead_code)]
pub fn frame_of_time(seconds: f64, stft_cfg: &StftConfig) -> usize {
    (seconds / stft_cfg.hop_seconds()).round() as usize
}

#[allow(dead_code)]
pub fn as_complex(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}
