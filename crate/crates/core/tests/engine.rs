//! End-to-end engine behavior on simulated scenes.

mod common;

use common::*;
use derev_core::detector::DetectorConfig;
use derev_core::mclp::{Engine, EngineConfig, LambdaPolicy};
use derev_core::room::{synthesize_scene, RoomSpec, Scenario};
use derev_core::signal::synthetic_speech;
use derev_core::stft::{analyze, StftConfig};

/// Anechoic input: there is nothing to predict beyond the protective
/// delay, so after convergence the output tracks the input reference
/// channel closely. Recorded as a regression baseline.
#[test]
fn anechoic_scene_passes_through_within_tolerance() {
    let clean = synthetic_speech(8.0, SAMPLE_RATE, 11);
    let room = RoomSpec::new([6.5, 5.1, 3.8], 0.0, SAMPLE_RATE);
    let mut sc = Scenario::default_array(room, clean);
    sc.switch_time = 0.0;
    sc.source_b = sc.source_a; // single position throughout
    let scene = synthesize_scene(&sc).expect("scene");

    let stft_cfg = StftConfig::default();
    let run = process_multichannel(
        &scene,
        &stft_cfg,
        EngineConfig::new(scene.len()),
        DetectorConfig::default(),
        LambdaPolicy::Adaptive,
    );

    let start = (5.0 * SAMPLE_RATE) as usize;
    let end = scene[0].len() - stft_cfg.block_size;
    let mut err = 0.0;
    let mut ref_e = 0.0;
    for i in start..end {
        err += (run.output[i] - scene[0][i]).powi(2);
        ref_e += scene[0][i].powi(2);
    }
    let rel = (err / ref_e).sqrt();
    assert!(
        rel <= 0.05,
        "anechoic output deviates from input by {:.2}% RMS after 5 s",
        100.0 * rel
    );
}

/// A minute of digital silence through the full pipeline: silent output,
/// no detections, every trace value finite.
#[test]
fn silence_stays_silent_and_finite() {
    let stft_cfg = StftConfig::default();
    let channels = vec![vec![0.0f64; (60.0 * SAMPLE_RATE) as usize]; 3];
    let spec = analyze(&channels, &stft_cfg).expect("analyze");
    let mut engine = Engine::new(
        EngineConfig::new(3),
        DetectorConfig::default(),
        spec.bins(),
        LambdaPolicy::Adaptive,
    )
    .expect("engine");
    let (frames, traces) = engine.process_spectrogram(&spec).expect("run");
    for frame in &frames {
        assert!(frame.iter().all(|v| v.norm() == 0.0));
    }
    for t in &traces {
        assert!(!t.detected);
        assert!(t.delta_tw.is_finite() && t.delta_t.is_finite() && t.lambda.is_finite());
    }
    for k in [0usize, 57, 256] {
        let st = engine.bin_state(k);
        assert!(st.w.iter().all(|v| v.norm() == 0.0));
        assert!(st.sigma2.is_finite());
    }
}

/// The reverberant paper scene must score strictly better after
/// processing once the filter has converged.
#[test]
fn processing_improves_srr_on_reverberant_scene() {
    let sc = paper_scenario(0.5, 8.0, 21);
    let sc = Scenario {
        switch_time: 0.0,
        source_b: sc.source_a,
        ..sc
    };
    let run = run_scenario(&sc, LambdaPolicy::Adaptive);

    let raw = srr_series(&run.reference, &run.scene[0]);
    let processed = srr_series(&run.reference, &run.processed.output);
    // Converged region: last 4 seconds.
    let raw_mean = raw.mean_in(4.0, 8.0).expect("raw windows");
    let proc_mean = processed.mean_in(4.0, 8.0).expect("processed windows");
    assert!(
        proc_mean > raw_mean,
        "processed SRR {proc_mean:.2} dB not above unprocessed {raw_mean:.2} dB"
    );
}
