//! Static-intensity reconstruction from two-polarity noise-event counts:
//! aggregation, pixel binning, per-pixel maximum-likelihood inversion of
//! the forward model, and smoothness-regularized refinement.

use rayon::prelude::*;

use crate::calibration::GrayToLambdaMap;
use crate::error::{Error, Result};
use crate::event::{EventStream, Polarity};
use crate::image::{CountImage, ImageUnit, IntensityImage};
use crate::math::{ln_gamma, log_space};
use crate::noise_model::{p_event, p_event_dlambda, CameraParams, DispersionModel};

/// Pixel flagged because a second likelihood maximum is nearly as good.
pub const FLAG_AMBIGUOUS: u8 = 1;
/// Pixel whose counts exceed every achievable mean by more than 10 sigma.
pub const FLAG_SATURATED: u8 = 2;
/// Pixel excluded from inversion (masked-out counts).
pub const FLAG_INVALID: u8 = 4;

/// A second local maximum within this log-likelihood gap of the best one
/// marks the pixel ambiguous (a ~2-sigma likelihood-ratio criterion).
pub const AMBIGUITY_LL_GAP: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TieBreak {
    /// Exact likelihood ties resolve to the smaller illuminance.
    SmallestLambda,
    /// Ties resolve toward the log-midpoint of the grid.
    HighestPrior,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolarityMode {
    Both,
    PosOnly,
    NegOnly,
}

impl PolarityMode {
    fn uses(self, polarity: Polarity) -> bool {
        match (self, polarity) {
            (PolarityMode::Both, _) => true,
            (PolarityMode::PosOnly, Polarity::Pos) => true,
            (PolarityMode::NegOnly, Polarity::Neg) => true,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LikelihoodKind {
    Poisson,
    /// Negative-binomial count likelihood using the camera's dispersion
    /// table. The mean model is identical; only tail weights change.
    NegativeBinomial,
}

#[derive(Debug, Clone)]
pub struct ReconstructionConfig {
    /// Aggregation window in seconds.
    pub window: f64,
    /// Ascending positive illuminance grid the inversion searches over.
    pub lambda_grid: Vec<f64>,
    pub bin2x2: bool,
    /// Total-variation weight beta on the log-intensity field; 0 keeps
    /// the raw per-pixel ML estimate.
    pub smoothness_weight: f64,
    pub max_refine_iters: usize,
    pub tie_break: TieBreak,
    pub polarity: PolarityMode,
    pub likelihood: LikelihoodKind,
}

pub const DEFAULT_GRID_POINTS: usize = 512;

impl ReconstructionConfig {
    /// Default configuration with a 512-point log-spaced grid spanning
    /// the given illuminance range.
    pub fn new(window: f64, lambda_lo: f64, lambda_hi: f64) -> Result<Self> {
        let cfg = Self {
            window,
            lambda_grid: log_space(lambda_lo, lambda_hi, DEFAULT_GRID_POINTS)?,
            bin2x2: true,
            smoothness_weight: 0.0,
            max_refine_iters: 200,
            tie_break: TieBreak::SmallestLambda,
            polarity: PolarityMode::Both,
            likelihood: LikelihoodKind::Poisson,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.window > 0.0) {
            return Err(Error::validation(format!(
                "window must be positive, got {}",
                self.window
            )));
        }
        if self.lambda_grid.is_empty() {
            return Err(Error::validation("lambda grid must not be empty"));
        }
        if !(self.lambda_grid[0] > 0.0)
            || self.lambda_grid.windows(2).any(|w| !(w[1] > w[0]))
        {
            return Err(Error::validation(
                "lambda grid must be ascending and positive",
            ));
        }
        if !(self.smoothness_weight >= 0.0) {
            return Err(Error::validation("smoothness weight must be non-negative"));
        }
        if self.max_refine_iters == 0 {
            return Err(Error::validation("max_refine_iters must be positive"));
        }
        Ok(())
    }
}

/// Exact per-pixel counts of events inside [t_start, t_start + window),
/// split by polarity. Bounds are resolved at microsecond resolution.
pub fn aggregate(stream: &EventStream, t_start: f64, window: f64) -> Result<CountImage> {
    if !(window > 0.0) {
        return Err(Error::validation(format!("window must be positive, got {window}")));
    }
    if !(t_start >= 0.0) {
        return Err(Error::validation(format!("t_start must be non-negative, got {t_start}")));
    }
    let t0 = (t_start * 1e6).round() as u64;
    let t1 = t0 + (window * 1e6).round() as u64;
    let (w, h) = (stream.width() as usize, stream.height() as usize);
    let mut counts = CountImage::zeros(w, h, window)?;
    let events = stream.events();
    let lo = events.partition_point(|e| e.t < t0);
    let hi = events.partition_point(|e| e.t < t1);
    for ev in &events[lo..hi] {
        let idx = ev.y as usize * w + ev.x as usize;
        counts.channel_mut(ev.polarity)[idx] += 1;
    }
    Ok(counts)
}

/// Sums 2x2 blocks into a half-resolution count image. Odd trailing rows
/// or columns are dropped (with a warning); a binned pixel is invalid if
/// any contributing pixel was. Callers must scale the trial rate by 4.
pub fn bin2x2(counts: &CountImage) -> CountImage {
    let (w, h) = (counts.width(), counts.height());
    if w % 2 != 0 || h % 2 != 0 {
        log::warn!("bin2x2: dropping odd trailing row/column of {w}x{h} input");
    }
    let (ow, oh) = ((w / 2).max(1), (h / 2).max(1));
    let mut pos = vec![0u32; ow * oh];
    let mut neg = vec![0u32; ow * oh];
    let mut invalid = vec![false; ow * oh];
    let mut any_invalid = false;
    for oy in 0..oh {
        for ox in 0..ow {
            let mut p = 0u32;
            let mut n = 0u32;
            for dy in 0..2 {
                for dx in 0..2 {
                    let idx = (oy * 2 + dy) * w + ox * 2 + dx;
                    p += counts.channel(Polarity::Pos)[idx];
                    n += counts.channel(Polarity::Neg)[idx];
                    if !counts.is_valid(idx) {
                        invalid[oy * ow + ox] = true;
                        any_invalid = true;
                    }
                }
            }
            pos[oy * ow + ox] = p;
            neg[oy * ow + ox] = n;
        }
    }
    let mut out = CountImage::new(ow, oh, counts.window(), pos, neg).expect("valid by construction");
    if any_invalid {
        out.set_invalid(&invalid).expect("mask sized to output");
    }
    out
}

/// Result of per-pixel ML inversion: the illuminance map plus per-pixel
/// diagnostic flags.
#[derive(Debug, Clone)]
pub struct InversionResult {
    pub lambda: IntensityImage,
    pub flags: Vec<u8>,
}

impl InversionResult {
    /// 0/255 gray image of the ambiguity flags.
    pub fn ambiguity_mask(&self) -> IntensityImage {
        IntensityImage::new(
            self.lambda.width(),
            self.lambda.height(),
            ImageUnit::GrayLevel,
            self.flags
                .iter()
                .map(|f| if f & FLAG_AMBIGUOUS != 0 { 255.0 } else { 0.0 })
                .collect(),
        )
        .expect("mask dims match")
    }
}

struct GridTables {
    lambdas: Vec<f64>,
    mu: [Vec<f64>; 2],
    ln_mu: [Vec<f64>; 2],
    /// negative-binomial shape per grid point (NB likelihood only)
    nb_r: Option<[Vec<f64>; 2]>,
    max_mu: [f64; 2],
}

const CH_POS: usize = 0;
const CH_NEG: usize = 1;

fn channel_index(polarity: Polarity) -> usize {
    match polarity {
        Polarity::Pos => CH_POS,
        Polarity::Neg => CH_NEG,
    }
}

fn build_tables(
    counts_window: f64,
    params: &CameraParams,
    config: &ReconstructionConfig,
) -> Result<GridTables> {
    let g = config.lambda_grid.len();
    let mut mu = [vec![0.0; g], vec![0.0; g]];
    let mut ln_mu = [vec![0.0; g], vec![0.0; g]];
    let mut nb_r = if config.likelihood == LikelihoodKind::NegativeBinomial {
        match &params.dispersion {
            DispersionModel::NegativeBinomial(_) => Some([vec![0.0; g], vec![0.0; g]]),
            DispersionModel::Poisson => {
                return Err(Error::validation(
                    "negative-binomial likelihood requires a camera dispersion table",
                ))
            }
        }
    } else {
        None
    };
    for (gi, &lambda) in config.lambda_grid.iter().enumerate() {
        for polarity in [Polarity::Pos, Polarity::Neg] {
            let ch = channel_index(polarity);
            let m = counts_window
                * params.n_trials
                * p_event(lambda, params.eps(polarity), params.b_pr)?;
            mu[ch][gi] = m;
            ln_mu[ch][gi] = m.max(1e-300).ln();
            if let Some(r) = nb_r.as_mut() {
                let variance = params.dispersion.variance_for(lambda, m);
                // ratio tables guarantee variance > mean
                r[ch][gi] = if m > 0.0 { m * m / (variance - m).max(1e-12) } else { 1.0 };
            }
        }
    }
    let max_mu = [
        mu[CH_POS].iter().cloned().fold(0.0, f64::max),
        mu[CH_NEG].iter().cloned().fold(0.0, f64::max),
    ];
    Ok(GridTables {
        lambdas: config.lambda_grid.clone(),
        mu,
        ln_mu,
        nb_r,
        max_mu,
    })
}

impl GridTables {
    /// Log-likelihood of the observed pair at grid index `gi`, up to
    /// k-only constants (identical across the grid, so ordering and gaps
    /// are unaffected).
    fn log_likelihood(&self, gi: usize, k: [f64; 2], mode: PolarityMode) -> f64 {
        let mut ll = 0.0;
        for (ch, polarity) in [(CH_POS, Polarity::Pos), (CH_NEG, Polarity::Neg)] {
            if !mode.uses(polarity) {
                continue;
            }
            ll += match &self.nb_r {
                None => k[ch] * self.ln_mu[ch][gi] - self.mu[ch][gi],
                Some(r_tab) => {
                    let r = r_tab[ch][gi];
                    let m = self.mu[ch][gi].max(1e-300);
                    // NB(k; r, p) with mean m: p = r/(r+m)
                    ln_gamma(k[ch] + r) - ln_gamma(r) + r * (r / (r + m)).ln()
                        + k[ch] * (m / (r + m)).ln()
                }
            };
        }
        ll
    }
}

/// Per-pixel maximum-likelihood inversion of the two-polarity count
/// image over the configured illuminance grid.
///
/// Pixels where a second local likelihood maximum comes within
/// [`AMBIGUITY_LL_GAP`] of the best are flagged ambiguous; counts beyond
/// any achievable mean by more than 10 sigma are flagged saturated (the
/// grid argmax is still reported). Invalid (masked) pixels are skipped
/// and carry the grid's log-midpoint as a placeholder.
pub fn invert_ml(
    counts: &CountImage,
    params: &CameraParams,
    config: &ReconstructionConfig,
) -> Result<InversionResult> {
    config.validate()?;
    params.validate()?;
    let tables = build_tables(counts.window(), params, config)?;
    let (w, h) = (counts.width(), counts.height());
    let g = tables.lambdas.len();
    let mid = (tables.lambdas[0].ln() + tables.lambdas[g - 1].ln()) / 2.0;
    let placeholder = mid.exp();

    let rows: Vec<(Vec<f64>, Vec<u8>)> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut lambda_row = vec![0.0; w];
            let mut flag_row = vec![0u8; w];
            let mut ll = vec![0.0; g];
            for x in 0..w {
                let idx = y * w + x;
                if !counts.is_valid(idx) {
                    lambda_row[x] = placeholder;
                    flag_row[x] = FLAG_INVALID;
                    continue;
                }
                let k = [
                    counts.channel(Polarity::Pos)[idx] as f64,
                    counts.channel(Polarity::Neg)[idx] as f64,
                ];
                for gi in 0..g {
                    ll[gi] = tables.log_likelihood(gi, k, config.polarity);
                }
                let best = pick_best(&ll, &tables.lambdas, mid, config.tie_break);
                lambda_row[x] = tables.lambdas[best];
                let mut flags = 0u8;
                if has_second_maximum(&ll, best) {
                    flags |= FLAG_AMBIGUOUS;
                }
                for (ch, polarity) in [(CH_POS, Polarity::Pos), (CH_NEG, Polarity::Neg)] {
                    if config.polarity.uses(polarity) {
                        let cap = tables.max_mu[ch] + 10.0 * tables.max_mu[ch].sqrt();
                        if k[ch] > cap {
                            flags |= FLAG_SATURATED;
                        }
                    }
                }
                flag_row[x] = flags;
            }
            (lambda_row, flag_row)
        })
        .collect();

    let mut values = Vec::with_capacity(w * h);
    let mut flags = Vec::with_capacity(w * h);
    for (lr, fr) in rows {
        values.extend(lr);
        flags.extend(fr);
    }
    Ok(InversionResult {
        lambda: IntensityImage::new(w, h, ImageUnit::PhotonCount, values)?,
        flags,
    })
}

fn pick_best(ll: &[f64], lambdas: &[f64], log_mid: f64, tie_break: TieBreak) -> usize {
    let mut best = 0usize;
    for i in 1..ll.len() {
        if ll[i] > ll[best] {
            best = i;
        } else if ll[i] == ll[best] {
            match tie_break {
                TieBreak::SmallestLambda => {} // first (smallest) wins
                TieBreak::HighestPrior => {
                    if (lambdas[i].ln() - log_mid).abs() < (lambdas[best].ln() - log_mid).abs() {
                        best = i;
                    }
                }
            }
        }
    }
    best
}

/// True when a local maximum other than the cluster containing `best`
/// lies within [`AMBIGUITY_LL_GAP`] of it.
fn has_second_maximum(ll: &[f64], best: usize) -> bool {
    let n = ll.len();
    let threshold = ll[best] - AMBIGUITY_LL_GAP;
    let is_lmax = |i: usize| -> bool {
        (i == 0 || ll[i] >= ll[i - 1]) && (i == n - 1 || ll[i] >= ll[i + 1])
    };
    // walk local-maximum clusters (plateaus of adjacent indices)
    let mut i = 0;
    while i < n {
        if !is_lmax(i) {
            i += 1;
            continue;
        }
        let start = i;
        while i + 1 < n && is_lmax(i + 1) {
            i += 1;
        }
        let contains_best = best >= start && best <= i;
        if !contains_best {
            let peak = ll[start..=i].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if peak >= threshold {
                return true;
            }
        }
        i += 1;
    }
    false
}

const TV_EPS: f64 = 1e-3;
const REFINE_REL_TOL: f64 = 1e-6;

/// Smoothness-regularized refinement of the per-pixel ML estimate.
///
/// Minimizes the Poisson negative log-likelihood of the counts plus
/// `beta` times a smoothed total variation of the log-intensity field,
/// by monotone backtracking gradient descent on log-lambda initialized
/// at the ML estimate. With `beta = 0` the input is returned unchanged.
/// Invalid pixels carry no data term, so the prior inpaints them.
pub fn refine_map(
    ml_estimate: &IntensityImage,
    counts: &CountImage,
    params: &CameraParams,
    config: &ReconstructionConfig,
) -> Result<IntensityImage> {
    config.validate()?;
    if ml_estimate.width() != counts.width() || ml_estimate.height() != counts.height() {
        return Err(Error::validation("ML estimate and counts dimensions differ"));
    }
    if ml_estimate.unit() != ImageUnit::PhotonCount {
        return Err(Error::validation("refinement expects a photon-count estimate"));
    }
    let beta = config.smoothness_weight;
    if beta == 0.0 {
        return Ok(ml_estimate.clone());
    }

    let (w, h) = (counts.width(), counts.height());
    let n = w * h;
    let mut u: Vec<f64> = ml_estimate.values().iter().map(|v| v.max(1e-9).ln()).collect();
    let scale = counts.window() * params.n_trials;
    let (u_lo, u_hi) = ((1e-9f64).ln(), (1e12f64).ln());

    let active: Vec<(Polarity, usize)> = [Polarity::Pos, Polarity::Neg]
        .into_iter()
        .filter(|&p| config.polarity.uses(p))
        .map(|p| (p, channel_index(p)))
        .collect();

    let objective = |u: &[f64]| -> f64 {
        let mut f = 0.0;
        for idx in 0..n {
            if !counts.is_valid(idx) {
                continue;
            }
            let lambda = u[idx].exp();
            for &(polarity, _) in &active {
                let mu = scale * p_event(lambda, params.eps(polarity), params.b_pr).unwrap();
                let k = counts.channel(polarity)[idx] as f64;
                f += mu - k * mu.max(1e-300).ln();
            }
        }
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let gx = if x + 1 < w { u[i + 1] - u[i] } else { 0.0 };
                let gy = if y + 1 < h { u[i + w] - u[i] } else { 0.0 };
                f += beta * (gx * gx + gy * gy + TV_EPS * TV_EPS).sqrt();
            }
        }
        f
    };

    let gradient = |u: &[f64], grad: &mut Vec<f64>| {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for idx in 0..n {
            if !counts.is_valid(idx) {
                continue;
            }
            let lambda = u[idx].exp();
            let mut df = 0.0;
            for &(polarity, _) in &active {
                let eps = params.eps(polarity);
                let mu = scale * p_event(lambda, eps, params.b_pr).unwrap();
                let dmu = scale * p_event_dlambda(lambda, eps, params.b_pr).unwrap();
                let k = counts.channel(polarity)[idx] as f64;
                df += dmu * (1.0 - k / mu.max(1e-300));
            }
            grad[idx] += lambda * df;
        }
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let gx = if x + 1 < w { u[i + 1] - u[i] } else { 0.0 };
                let gy = if y + 1 < h { u[i + w] - u[i] } else { 0.0 };
                let mag = (gx * gx + gy * gy + TV_EPS * TV_EPS).sqrt();
                if x + 1 < w {
                    grad[i] -= beta * gx / mag;
                    grad[i + 1] += beta * gx / mag;
                }
                if y + 1 < h {
                    grad[i] -= beta * gy / mag;
                    grad[i + w] += beta * gy / mag;
                }
            }
        }
    };

    let mut f = objective(&u);
    if !f.is_finite() {
        return Err(Error::numerical("refinement objective is not finite at the start"));
    }
    let mut grad = vec![0.0; n];
    let mut step = 0.1;
    for _iter in 0..config.max_refine_iters {
        gradient(&u, &mut grad);
        let g2: f64 = grad.iter().map(|g| g * g).sum();
        if g2 == 0.0 {
            break;
        }
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = u
                .iter()
                .zip(&grad)
                .map(|(v, g)| (v - step * g).clamp(u_lo, u_hi))
                .collect();
            let f_trial = objective(&trial);
            if f_trial.is_finite() && f_trial <= f - 1e-4 * step * g2 {
                let rel = (f - f_trial).abs() / (1.0 + f.abs());
                u = trial;
                f = f_trial;
                step *= 1.3;
                accepted = true;
                if rel < REFINE_REL_TOL {
                    let lambda: Vec<f64> = u.iter().map(|v| v.exp()).collect();
                    return IntensityImage::new(w, h, ImageUnit::PhotonCount, lambda);
                }
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break; // no descent direction at any admissible step
        }
        if !f.is_finite() {
            return Err(Error::numerical("refinement objective became non-finite"));
        }
    }
    let lambda: Vec<f64> = u.iter().map(|v| v.exp()).collect();
    IntensityImage::new(w, h, ImageUnit::PhotonCount, lambda)
}

/// Display-maps a photon-count image through the inverse of the
/// calibration gray map, rounding to integer gray levels.
pub fn to_gray(lambda_image: &IntensityImage, gray_map: &GrayToLambdaMap) -> Result<IntensityImage> {
    if lambda_image.unit() != ImageUnit::PhotonCount {
        return Err(Error::validation("to_gray expects a photon-count image"));
    }
    let max_gray = gray_map.max_gray();
    let values = lambda_image
        .values()
        .iter()
        .map(|&l| gray_map.to_gray(l).round().clamp(0.0, max_gray))
        .collect();
    IntensityImage::new(
        lambda_image.width(),
        lambda_image.height(),
        ImageUnit::GrayLevel,
        values,
    )
}

/// Full reconstruction pipeline: optional 2x2 binning (with the trial
/// rate scaled by 4), per-pixel ML inversion, and optional TV refinement.
pub fn reconstruct(
    counts: &CountImage,
    params: &CameraParams,
    config: &ReconstructionConfig,
) -> Result<InversionResult> {
    let (binned, eff_params);
    let (counts_ref, params_ref): (&CountImage, &CameraParams) = if config.bin2x2 {
        binned = bin2x2(counts);
        eff_params = params.with_n_scaled(4.0)?;
        (&binned, &eff_params)
    } else {
        (counts, params)
    };
    let mut result = invert_ml(counts_ref, params_ref, config)?;
    if config.smoothness_weight > 0.0 {
        result.lambda = refine_map(&result.lambda, counts_ref, params_ref, config)?;
    }
    Ok(result)
}
