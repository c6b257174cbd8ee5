//! Synthetic noise-event generation for static scenes.
//!
//! Counts are drawn per pixel and polarity from a Poisson (or, when the
//! camera model is overdispersed, a gamma-mixed Poisson, i.e. negative
//! binomial) distribution whose mean comes from the forward model.
//! Streams realize the same rates as homogeneous Poisson processes in
//! time, thinned by the per-pixel refractory period.
//!
//! All randomness is derived from per-pixel seeds, so output is
//! independent of iteration order and thread count.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma, Normal, Poisson};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::event::{Event, EventStream, Polarity};
use crate::image::{CountImage, ImageUnit, IntensityImage};
use crate::math::derive_seed;
use crate::noise_model::{p_event, CameraParams, DispersionModel};
use crate::pgm;

/// Fixed-pattern contrast-threshold variability across pixels.
///
/// Per-pixel threshold offsets are frozen from `seed` once per dataset
/// (manufacturing variation, not a per-event effect) and clamped to keep
/// thresholds positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelVariability {
    /// Standard deviation of the per-pixel threshold jitter (log-intensity units).
    pub eps_sigma: f64,
    /// Seed of the frozen jitter map.
    pub seed: u64,
}

impl Default for PixelVariability {
    fn default() -> Self {
        Self { eps_sigma: 0.0, seed: 0 }
    }
}

const MIN_EPS: f64 = 0.01;

// seed-stream channels
const CH_COUNT_POS: u64 = 0;
const CH_COUNT_NEG: u64 = 1;
const CH_STREAM: u64 = 2;
const CH_JITTER_POS: u64 = 10;
const CH_JITTER_NEG: u64 = 11;

/// Counters reported alongside sampled data.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SampleReport {
    /// Pixel/polarity draws where the calibrated variance did not exceed
    /// the mean and sampling fell back to Poisson.
    pub nb_fallbacks: u64,
}

impl PixelVariability {
    fn validate(&self) -> Result<()> {
        if !(self.eps_sigma >= 0.0) || !self.eps_sigma.is_finite() {
            return Err(Error::validation(format!(
                "eps_sigma must be non-negative, got {}",
                self.eps_sigma
            )));
        }
        Ok(())
    }

    /// Frozen per-pixel threshold for one polarity.
    fn eps_at(&self, base_eps: f64, pixel: u64, polarity: Polarity) -> f64 {
        if self.eps_sigma == 0.0 {
            return base_eps;
        }
        let ch = match polarity {
            Polarity::Pos => CH_JITTER_POS,
            Polarity::Neg => CH_JITTER_NEG,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, pixel, ch));
        let jitter = Normal::new(0.0, self.eps_sigma).unwrap().sample(&mut rng);
        (base_eps + jitter).max(MIN_EPS)
    }
}

fn scene_lambda(scene: &IntensityImage, params: &CameraParams, idx: usize) -> f64 {
    scene.values()[idx].max(params.lambda_min)
}

fn check_scene(scene: &IntensityImage) -> Result<()> {
    if scene.unit() != ImageUnit::PhotonCount {
        return Err(Error::validation(
            "synthesis needs a photon-count scene; map gray levels through a calibration gray map first",
        ));
    }
    Ok(())
}

/// Draws one count with the configured dispersion. Returns the count and
/// whether a negative-binomial request fell back to Poisson.
fn draw_count(
    rng: &mut ChaCha8Rng,
    mean: f64,
    lambda: f64,
    dispersion: &DispersionModel,
) -> (u32, bool) {
    if mean <= 0.0 {
        return (0, false);
    }
    match dispersion {
        DispersionModel::Poisson => (sample_poisson(rng, mean), false),
        DispersionModel::NegativeBinomial(_) => {
            let variance = dispersion.variance_for(lambda, mean);
            if variance <= mean {
                return (sample_poisson(rng, mean), true);
            }
            // gamma-Poisson mixture: shape r = mu^2/(sigma^2-mu),
            // scale theta = (sigma^2-mu)/mu, so E = mu and Var = sigma^2
            let r = mean * mean / (variance - mean);
            let theta = (variance - mean) / mean;
            let g = Gamma::new(r, theta).unwrap().sample(rng);
            (sample_poisson(rng, g), false)
        }
    }
}

fn sample_poisson(rng: &mut ChaCha8Rng, mean: f64) -> u32 {
    if mean <= 0.0 {
        return 0;
    }
    let v: f64 = Poisson::new(mean).unwrap().sample(rng);
    v as u32
}

/// Samples a two-polarity count image for a static scene.
///
/// Deterministic for a fixed `(scene, params, window, variability, seed)`
/// tuple, independent of thread count. Scene values below
/// `params.lambda_min` are clamped up to it.
pub fn sample_counts(
    scene: &IntensityImage,
    params: &CameraParams,
    window: f64,
    variability: &PixelVariability,
    seed: u64,
) -> Result<(CountImage, SampleReport)> {
    check_scene(scene)?;
    params.validate()?;
    variability.validate()?;
    if !(window > 0.0) {
        return Err(Error::validation(format!("window must be positive, got {window}")));
    }
    let (w, h) = (scene.width(), scene.height());
    let mut pos = vec![0u32; w * h];
    let mut neg = vec![0u32; w * h];

    let fallbacks: u64 = pos
        .par_chunks_mut(w)
        .zip(neg.par_chunks_mut(w))
        .enumerate()
        .map(|(y, (pos_row, neg_row))| {
            let mut row_fallbacks = 0u64;
            for x in 0..w {
                let idx = y * w + x;
                let lambda = scene_lambda(scene, params, idx);
                for (polarity, slot, ch) in [
                    (Polarity::Pos, &mut pos_row[x], CH_COUNT_POS),
                    (Polarity::Neg, &mut neg_row[x], CH_COUNT_NEG),
                ] {
                    let eps = variability.eps_at(params.eps(polarity), idx as u64, polarity);
                    // eps is clamped positive and lambda >= lambda_min > 0
                    let mean = window * params.n_trials * p_event(lambda, eps, params.b_pr).unwrap();
                    let mut rng =
                        ChaCha8Rng::seed_from_u64(derive_seed(seed, idx as u64, ch));
                    let (count, fell_back) = draw_count(&mut rng, mean, lambda, &params.dispersion);
                    *slot = count;
                    row_fallbacks += fell_back as u64;
                }
            }
            row_fallbacks
        })
        .sum();

    let counts = CountImage::new(w, h, window, pos, neg)?;
    Ok((counts, SampleReport { nb_fallbacks: fallbacks }))
}

/// Samples a fully timestamped noise-event stream for a static scene.
///
/// Per pixel and polarity, event times follow a Poisson process at the
/// model rate (gamma-mixed under negative-binomial dispersion so window
/// counts match `sample_counts` in distribution), then events closer than
/// the refractory period to the previous event at the same pixel (either
/// polarity) are dropped. The merged stream is ordered by
/// (t, y, x, polarity).
pub fn sample_stream(
    scene: &IntensityImage,
    params: &CameraParams,
    duration: f64,
    variability: &PixelVariability,
    seed: u64,
) -> Result<EventStream> {
    check_scene(scene)?;
    params.validate()?;
    variability.validate()?;
    if !(duration >= 0.0) || !duration.is_finite() {
        return Err(Error::validation(format!(
            "duration must be non-negative, got {duration}"
        )));
    }
    let (w, h) = (scene.width(), scene.height());
    crate::event::validate_sensor_dims(w as u32, h as u32)?;
    if duration == 0.0 {
        return EventStream::empty(w as u32, h as u32);
    }

    let per_pixel: Vec<Vec<Event>> = (0..w * h)
        .into_par_iter()
        .map(|idx| sample_pixel_events(scene, params, duration, variability, seed, idx))
        .collect();

    let mut events: Vec<Event> = per_pixel.into_iter().flatten().collect();
    events.par_sort_unstable_by_key(|e| e.sort_key());
    Ok(EventStream::from_generated(w as u32, h as u32, events))
}

fn sample_pixel_events(
    scene: &IntensityImage,
    params: &CameraParams,
    duration: f64,
    variability: &PixelVariability,
    seed: u64,
    idx: usize,
) -> Vec<Event> {
    let w = scene.width();
    let (x, y) = ((idx % w) as u16, (idx / w) as u16);
    let lambda = scene_lambda(scene, params, idx);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, idx as u64, CH_STREAM));

    let mut arrivals: Vec<(u64, Polarity)> = Vec::new();
    for polarity in [Polarity::Pos, Polarity::Neg] {
        let eps = variability.eps_at(params.eps(polarity), idx as u64, polarity);
        let base_rate = params.n_trials * p_event(lambda, eps, params.b_pr).unwrap();
        let rate = match &params.dispersion {
            DispersionModel::Poisson => base_rate,
            DispersionModel::NegativeBinomial(_) => {
                // draw the pixel's window count mean from the mixing gamma so
                // the aggregated count is negative-binomial distributed
                let mean = base_rate * duration;
                if mean <= 0.0 {
                    0.0
                } else {
                    let variance = params.dispersion.variance_for(lambda, mean);
                    if variance <= mean {
                        base_rate
                    } else {
                        let r = mean * mean / (variance - mean);
                        let theta = (variance - mean) / mean;
                        Gamma::new(r, theta).unwrap().sample(&mut rng) / duration
                    }
                }
            }
        };
        if rate <= 0.0 {
            continue;
        }
        let exp = Exp::new(rate).unwrap();
        let mut t = exp.sample(&mut rng);
        while t < duration {
            arrivals.push(((t * 1e6) as u64, polarity));
            t += exp.sample(&mut rng);
        }
    }
    arrivals.sort_unstable();

    // refractory thinning: the pixel is dead for refractory_us after each
    // kept event, regardless of polarity; the later event is dropped
    let mut out = Vec::with_capacity(arrivals.len());
    let mut last_kept: Option<u64> = None;
    for (t, polarity) in arrivals {
        if let Some(prev) = last_kept {
            if t - prev < params.refractory_us {
                continue;
            }
        }
        last_kept = Some(t);
        out.push(Event { t, x, y, polarity });
    }
    out
}

/// One dataset sample: a scene plus its sampled count pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub scene: String,
    pub pos: String,
    pub neg: String,
    pub seed: u64,
    pub window: f64,
}

impl ManifestEntry {
    fn to_line(&self) -> String {
        format!(
            "scene={} pos={} neg={} seed={} window={}",
            self.scene, self.pos, self.neg, self.seed, self.window
        )
    }

    fn parse(line: &str, lineno: usize) -> Result<Self> {
        let mut scene = None;
        let mut pos = None;
        let mut neg = None;
        let mut seed = None;
        let mut window = None;
        for field in line.split_whitespace() {
            let (key, value) = field.split_once('=').ok_or_else(|| {
                Error::validation(format!("manifest line {lineno}: bad field `{field}`"))
            })?;
            match key {
                "scene" => scene = Some(value.to_string()),
                "pos" => pos = Some(value.to_string()),
                "neg" => neg = Some(value.to_string()),
                "seed" => {
                    seed = Some(value.parse::<u64>().map_err(|_| {
                        Error::validation(format!("manifest line {lineno}: bad seed"))
                    })?)
                }
                "window" => {
                    window = Some(value.parse::<f64>().map_err(|_| {
                        Error::validation(format!("manifest line {lineno}: bad window"))
                    })?)
                }
                other => {
                    return Err(Error::validation(format!(
                        "manifest line {lineno}: unknown field `{other}`"
                    )))
                }
            }
        }
        let missing = || Error::validation(format!("manifest line {lineno}: missing field"));
        Ok(Self {
            scene: scene.ok_or_else(missing)?,
            pos: pos.ok_or_else(missing)?,
            neg: neg.ok_or_else(missing)?,
            seed: seed.ok_or_else(missing)?,
            window: window.ok_or_else(missing)?,
        })
    }
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| ManifestEntry::parse(l.trim(), i + 1))
        .collect()
}

/// Generates a synthetic dataset: for each named photon-count scene,
/// writes the (integer-quantized) scene graymap plus positive and
/// negative count graymaps, and a manifest of per-sample seeds.
///
/// Scene values are quantized to 16-bit integers before sampling so a
/// manifest replay regenerates every output byte-for-byte from the files
/// alone.
pub fn generate_dataset(
    scenes: &[(String, IntensityImage)],
    params: &CameraParams,
    window: f64,
    variability: &PixelVariability,
    seed: u64,
    out_dir: impl AsRef<Path>,
) -> Result<PathBuf> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;
    let mut manifest = String::new();
    for (i, (name, scene)) in scenes.iter().enumerate() {
        check_scene(scene)?;
        let quantized = quantize_scene(scene)?;
        let entry = ManifestEntry {
            scene: format!("{name}_scene.pgm"),
            pos: format!("{name}_pos.pgm"),
            neg: format!("{name}_neg.pgm"),
            seed: derive_seed(seed, i as u64, 0xDA7A),
            window,
        };
        let scene_gray = IntensityImage::new(
            quantized.width(),
            quantized.height(),
            ImageUnit::GrayLevel,
            quantized.values().to_vec(),
        )?;
        pgm::write_pgm_file(out_dir.join(&entry.scene), &scene_gray, u16::MAX)?;
        write_sample(out_dir, &entry, &quantized, params, variability)?;
        writeln!(manifest, "{}", entry.to_line()).expect("string write");
    }
    let manifest_path = out_dir.join("manifest.txt");
    std::fs::write(&manifest_path, manifest)?;
    Ok(manifest_path)
}

/// Regenerates the count graymaps listed in a manifest from the stored
/// scene files and seeds. Outputs are byte-identical to the original run.
pub fn replay_dataset(
    manifest_path: impl AsRef<Path>,
    params: &CameraParams,
    variability: &PixelVariability,
) -> Result<()> {
    let manifest_path = manifest_path.as_ref();
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let entries = parse_manifest(&std::fs::read_to_string(manifest_path)?)?;
    for entry in entries {
        let (scene_gray, _) = pgm::read_pgm_file(dir.join(&entry.scene))?;
        // dataset scene graymaps store quantized photon counts
        let scene = IntensityImage::new(
            scene_gray.width(),
            scene_gray.height(),
            ImageUnit::PhotonCount,
            scene_gray.values().to_vec(),
        )?;
        write_sample(dir, &entry, &scene, params, variability)?;
    }
    Ok(())
}

fn write_sample(
    dir: &Path,
    entry: &ManifestEntry,
    scene: &IntensityImage,
    params: &CameraParams,
    variability: &PixelVariability,
) -> Result<()> {
    let (counts, _) = sample_counts(scene, params, entry.window, variability, entry.seed)?;
    pgm::write_pgm_file(dir.join(&entry.pos), &counts.channel_as_gray(Polarity::Pos)?, u16::MAX)?;
    pgm::write_pgm_file(dir.join(&entry.neg), &counts.channel_as_gray(Polarity::Neg)?, u16::MAX)?;
    Ok(())
}

fn quantize_scene(scene: &IntensityImage) -> Result<IntensityImage> {
    let values: Vec<f64> = scene.values().iter().map(|v| v.round()).collect();
    if let Some(v) = values.iter().find(|v| **v > u16::MAX as f64) {
        return Err(Error::validation(format!(
            "scene photon count {v} exceeds the 16-bit dataset scene format"
        )));
    }
    IntensityImage::new(scene.width(), scene.height(), ImageUnit::PhotonCount, values)
}
