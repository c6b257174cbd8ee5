//! Shared fixtures for the pipeline benchmarks.

use evnoise_core::image::{ImageUnit, IntensityImage};
use evnoise_core::noise_model::CameraParams;
use evnoise_core::reconstruction::ReconstructionConfig;
use evnoise_core::synthesis::{sample_counts, sample_stream, PixelVariability};
use evnoise_core::{CountImage, EventStream};

pub fn bench_params() -> CameraParams {
    CameraParams::new(0.04, 0.05, 20.0, 1e4).unwrap()
}

/// Smooth synthetic scene spanning the supported illuminance decade.
pub fn bench_scene(size: usize) -> IntensityImage {
    let values = (0..size * size)
        .map(|i| {
            let x = (i % size) as f64 / size as f64;
            let y = (i / size) as f64 / size as f64;
            50.0 * (100.0f64).powf(0.5 * (x + y))
        })
        .collect();
    IntensityImage::new(size, size, ImageUnit::PhotonCount, values).unwrap()
}

pub fn bench_counts(size: usize, window: f64) -> CountImage {
    let (counts, _) = sample_counts(
        &bench_scene(size),
        &bench_params(),
        window,
        &PixelVariability::default(),
        7,
    )
    .unwrap();
    counts
}

pub fn bench_stream(size: usize, duration: f64) -> EventStream {
    sample_stream(
        &bench_scene(size),
        &bench_params(),
        duration,
        &PixelVariability::default(),
        7,
    )
    .unwrap()
}

pub fn bench_config(window: f64) -> ReconstructionConfig {
    let mut c = ReconstructionConfig::new(window, 50.0, 5000.0).unwrap();
    c.bin2x2 = false;
    c
}
