//! Shared fixtures for CLI behavior and acceptance tests: synthetic
//! scenes, calibration artifacts, labeled mixed streams, and a harness
//! for the `evnoise` binary.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use evnoise_core::calibration::GrayToLambdaMap;
use evnoise_core::event::{Event, EventStream, Polarity};
use evnoise_core::image::{ImageUnit, IntensityImage};
use evnoise_core::noise_model::{params_to_kv, CameraParams};
use evnoise_core::pgm;
use evnoise_core::synthesis::{sample_stream, PixelVariability};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

pub fn bin_path() -> &'static str {
    env!("CARGO_BIN_EXE_evnoise")
}

/// Runs the binary with the given args and returns its output.
pub fn run(args: &[&str]) -> Output {
    Command::new(bin_path())
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary should run")
}

pub fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "command failed (code {:?}):\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

pub fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("process should exit")
}

pub fn stdout_str(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Fresh scratch directory under the target tmp area.
pub fn scratch(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("evnoise-test-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

/// Desk-scale camera: thresholds small enough that the [50, 5000]
/// illuminance decade keeps measurable rates at both ends.
pub fn desk_params() -> CameraParams {
    CameraParams::new(0.04, 0.05, 20.0, 1e4).unwrap()
}

/// Sparse camera for denoising pipelines: a few events per second per
/// pixel, so background activity stays well below the support window.
pub fn sparse_params() -> CameraParams {
    CameraParams::new(0.04, 0.05, 20.0, 20.0).unwrap()
}

pub fn write_params(dir: &Path, name: &str, params: &CameraParams) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, params_to_kv(params)).unwrap();
    path
}

/// Log-linear gray map: gray g maps to lo * (hi/lo)^(g/255).
pub fn log_gray_map(lo: f64, hi: f64) -> GrayToLambdaMap {
    let grays: Vec<f64> = (0..=255).map(|g| g as f64).collect();
    let lambdas: Vec<f64> = (0..=255)
        .map(|g| lo * (hi / lo).powf(g as f64 / 255.0))
        .collect();
    GrayToLambdaMap::new(grays, lambdas).unwrap()
}

pub fn write_gray_map(dir: &Path, name: &str, map: &GrayToLambdaMap) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, map.to_csv()).unwrap();
    path
}

/// Test scene: smooth horizontal gradient on the left half, four
/// piecewise-constant patches on the right.
pub fn gradient_patch_scene(size: usize) -> IntensityImage {
    let mut values = vec![0.0; size * size];
    for y in 0..size {
        for x in 0..size {
            let g = if x < size / 2 {
                20.0 + (235.0 - 20.0) * x as f64 / (size / 2 - 1) as f64
            } else {
                let right = x >= 3 * size / 4;
                let bottom = y >= size / 2;
                match (bottom, right) {
                    (false, false) => 40.0,
                    (false, true) => 90.0,
                    (true, false) => 160.0,
                    (true, true) => 220.0,
                }
            };
            values[y * size + x] = g.round();
        }
    }
    IntensityImage::new(size, size, ImageUnit::GrayLevel, values).unwrap()
}

pub fn write_pgm8(dir: &Path, name: &str, img: &IntensityImage) -> PathBuf {
    let path = dir.join(name);
    pgm::write_pgm_file(&path, img, 255).unwrap();
    path
}

/// Gray scene -> photon-count scene through a gray map.
pub fn to_photon_scene(scene: &IntensityImage, map: &GrayToLambdaMap) -> IntensityImage {
    IntensityImage::new(
        scene.width(),
        scene.height(),
        ImageUnit::PhotonCount,
        scene.values().iter().map(|&g| map.to_lambda(g)).collect(),
    )
    .unwrap()
}

pub type EventKey = (u64, u16, u16, i8);

pub fn key(e: &Event) -> EventKey {
    (e.t, e.x, e.y, e.polarity.sign())
}

/// Multiset of events for label bookkeeping in mixed streams.
pub fn multiset(events: &[Event]) -> HashMap<EventKey, u32> {
    let mut m = HashMap::new();
    for e in events {
        *m.entry(key(e)).or_insert(0) += 1;
    }
    m
}

/// Fraction of `labeled` recovered in `got` (multiset intersection).
pub fn multiset_overlap(got: &[Event], labeled: &HashMap<EventKey, u32>) -> (u64, u64) {
    let mut remaining = labeled.clone();
    let mut hit = 0u64;
    for e in got {
        if let Some(c) = remaining.get_mut(&key(e)) {
            if *c > 0 {
                *c -= 1;
                hit += 1;
            }
        }
    }
    (hit, got.len() as u64)
}

/// A labeled mixed stream: dense signal along a vertical edge sweeping
/// right at 1 px/ms, over sparse uniform background noise.
pub struct LabeledMix {
    pub mixed: EventStream,
    pub signal: Vec<Event>,
    pub noise: Vec<Event>,
}

pub fn moving_edge_mix(size: u16, bg_rate_hz: f64, seed: u64) -> LabeledMix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut signal = Vec::new();
    let duration_us: u64 = size as u64 * 1000;

    // per column crossing: ~3 darkening events per row within a 400 us burst
    let per_pixel = Poisson::new(3.0).unwrap();
    for col in 0..size {
        let t_col = col as u64 * 1000;
        for row in 0..size {
            let n: f64 = per_pixel.sample(&mut rng);
            for _ in 0..n as u32 {
                let jitter: u64 = rng.random_range(0..400);
                signal.push(Event {
                    t: t_col + jitter,
                    x: col,
                    y: row,
                    polarity: Polarity::Neg,
                });
            }
        }
    }

    // homogeneous background noise
    let mut noise = Vec::new();
    let expected = bg_rate_hz * (size as f64 * size as f64) * (duration_us as f64 * 1e-6);
    let n_noise: f64 = Poisson::new(expected).unwrap().sample(&mut rng);
    for _ in 0..n_noise as u64 {
        noise.push(Event {
            t: rng.random_range(0..duration_us),
            x: rng.random_range(0..size),
            y: rng.random_range(0..size),
            polarity: if rng.random_bool(0.5) { Polarity::Pos } else { Polarity::Neg },
        });
    }

    let mut all: Vec<Event> = signal.iter().chain(noise.iter()).copied().collect();
    all.sort_by_key(|e| e.sort_key());
    LabeledMix {
        mixed: EventStream::new(size as u32, size as u32, all).unwrap(),
        signal,
        noise,
    }
}

/// Moving-disc fixture for the dynamic pipeline: a dark disc parked on a
/// static textured background crosses the frame during
/// [motion_start, motion_end]. Returns the mixed stream, the labeled
/// components, and the ground-truth union of disc supports.
pub struct DiscFixture {
    pub mixed: EventStream,
    pub pure_noise: EventStream,
    pub signal: Vec<Event>,
    pub true_motion: Vec<bool>,
    pub scene_gray: IntensityImage,
    pub duration: f64,
}

pub fn moving_disc_fixture(
    size: usize,
    params: &CameraParams,
    map: &GrayToLambdaMap,
    duration: f64,
    motion_start: f64,
    motion_end: f64,
    seed: u64,
) -> DiscFixture {
    let scene_gray = gradient_patch_scene(size);
    let scene = to_photon_scene(&scene_gray, map);
    let pure_noise = sample_stream(&scene, params, duration, &PixelVariability::default(), seed).unwrap();

    // disc of radius r sweeps horizontally through the middle band
    let radius = (size / 8) as isize;
    let y_c = (size / 2) as isize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xD15C);
    let mut signal: Vec<Event> = Vec::new();
    let mut true_motion = vec![false; size * size];
    let duration_us = (duration * 1e6) as u64;
    let t0_us = (motion_start * 1e6) as u64;
    let t1_us = (motion_end * 1e6) as u64;
    let steps = 200u64;

    let mut prev_cover: Vec<bool> = vec![false; size * size];
    for step in 0..=steps {
        let t = t0_us + step * (t1_us - t0_us) / steps;
        let x_c = (radius
            + ((size as isize - 2 * radius) * step as isize) / steps as isize) as isize;
        let mut cover = vec![false; size * size];
        for dy in -radius..=radius {
            for dx in -radius..=radius {
                if dx * dx + dy * dy <= radius * radius {
                    let (x, y) = (x_c + dx, y_c + dy);
                    if x >= 0 && y >= 0 && (x as usize) < size && (y as usize) < size {
                        cover[y as usize * size + x as usize] = true;
                        true_motion[y as usize * size + x as usize] = true;
                    }
                }
            }
        }
        // edge events where coverage changes: darkening at entry,
        // brightening at exit; several events per change
        for idx in 0..size * size {
            if cover[idx] != prev_cover[idx] {
                let polarity = if cover[idx] { Polarity::Neg } else { Polarity::Pos };
                let burst: u32 = 2 + (rng.random::<u32>() % 3);
                for _ in 0..burst {
                    let jitter: u64 = rng.random_range(0..300);
                    signal.push(Event {
                        t: (t + jitter).min(duration_us - 1),
                        x: (idx % size) as u16,
                        y: (idx / size) as u16,
                        polarity,
                    });
                }
            }
        }
        prev_cover = cover;
    }

    let mut all: Vec<Event> = pure_noise.events().to_vec();
    all.extend(signal.iter().copied());
    all.sort_by_key(|e| e.sort_key());
    DiscFixture {
        mixed: EventStream::new(size as u32, size as u32, all).unwrap(),
        pure_noise,
        signal,
        true_motion,
        scene_gray,
        duration,
    }
}

/// Intersection-over-union of two boolean masks.
pub fn mask_iou(a: &[bool], b: &[bool]) -> f64 {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count() as f64;
    let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count() as f64;
    if union == 0.0 {
        1.0
    } else {
        inter / union
    }
}

/// PSNR over a pixel subset (static region), in gray levels.
pub fn masked_psnr(a: &IntensityImage, b: &IntensityImage, keep: &[bool], peak: f64) -> f64 {
    let mut se = 0.0;
    let mut n = 0usize;
    for (i, (&x, &y)) in a.values().iter().zip(b.values()).enumerate() {
        if keep[i] {
            se += (x - y) * (x - y);
            n += 1;
        }
    }
    let mse = se / n as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}
