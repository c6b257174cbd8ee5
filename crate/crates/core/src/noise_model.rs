//! Forward statistical model of photon-noise events.
//!
//! A pixel fires when the log of the (bias-shifted) photon count moves by
//! more than the contrast threshold between two looks. With both looks
//! Gaussian-approximated Poisson draws at mean `lambda`, the per-trial
//! trigger probability has the closed form
//!
//! ```text
//! p_e(lambda) = 1/2 - 1/2 * erf( (lambda + b_pr)(e^eps - 1)
//!                                / sqrt(2 lambda (1 + e^(2 eps))) )
//! ```
//!
//! Expected event counts follow as `window * n_trials * p_e`.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::event::Polarity;
use crate::math::{self, erf, PiecewiseLinear};

pub const DEFAULT_LAMBDA_MIN: f64 = 1.0;

/// Count-dispersion model used when sampling synthetic noise events.
#[derive(Debug, Clone, PartialEq)]
pub enum DispersionModel {
    /// Counts are Poisson with the model mean.
    Poisson,
    /// Overdispersed counts: variance exceeds the mean by an
    /// illuminance-dependent factor taken from calibration data.
    NegativeBinomial(DispersionTable),
}

/// Piecewise-linear variance-to-mean ratio table over lambda.
///
/// Raw calibration measures the count variance at the calibration window;
/// storing the ratio makes the table transfer to any sampling window.
/// Ratios are clamped at fit time to stay strictly above 1 so the
/// negative-binomial parameterization is well defined.
#[derive(Debug, Clone, PartialEq)]
pub struct DispersionTable {
    ratio: PiecewiseLinear,
}

impl DispersionTable {
    pub fn new(lambdas: Vec<f64>, ratios: Vec<f64>) -> Result<Self> {
        if let Some(r) = ratios.iter().find(|r| !(**r > 1.0)) {
            return Err(Error::validation(format!(
                "dispersion ratio must exceed 1 (strict overdispersion), got {r}"
            )));
        }
        Ok(Self {
            ratio: PiecewiseLinear::new(lambdas, ratios)?,
        })
    }

    /// Variance-to-mean ratio at the given illuminance.
    pub fn ratio(&self, lambda: f64) -> f64 {
        self.ratio.eval(lambda)
    }

    pub fn nodes(&self) -> (&[f64], &[f64]) {
        (self.ratio.xs(), self.ratio.ys())
    }
}

impl DispersionModel {
    /// Count variance for a pixel with the given mean at illuminance `lambda`.
    pub fn variance_for(&self, lambda: f64, mean: f64) -> f64 {
        match self {
            DispersionModel::Poisson => mean,
            DispersionModel::NegativeBinomial(t) => mean * t.ratio(lambda),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            DispersionModel::Poisson => "poisson",
            DispersionModel::NegativeBinomial(_) => "negative-binomial",
        }
    }
}

/// Physical camera model: contrast thresholds per polarity, photoreceptor
/// bias, Bernoulli trial rate, refractory period, and count dispersion.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraParams {
    /// Positive contrast threshold (log-intensity units, > 0).
    pub eps_pos: f64,
    /// Negative contrast threshold (log-intensity units, > 0).
    pub eps_neg: f64,
    /// Photoreceptor bias (photon-count units, >= 0).
    pub b_pr: f64,
    /// Bernoulli trials per second; the count mean over a window is
    /// `window * n_trials * p_e`.
    pub n_trials: f64,
    /// Minimum inter-event time per pixel, microseconds.
    pub refractory_us: u64,
    pub dispersion: DispersionModel,
    /// Smallest illuminance the model is evaluated at; callers clamp
    /// scene values up to this floor (the Gaussian approximation needs
    /// lambda bounded away from zero).
    pub lambda_min: f64,
}

impl CameraParams {
    pub fn new(eps_pos: f64, eps_neg: f64, b_pr: f64, n_trials: f64) -> Result<Self> {
        let p = Self {
            eps_pos,
            eps_neg,
            b_pr,
            n_trials,
            refractory_us: 0,
            dispersion: DispersionModel::Poisson,
            lambda_min: DEFAULT_LAMBDA_MIN,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps_pos > 0.0) || !(self.eps_neg > 0.0) {
            return Err(Error::validation(format!(
                "contrast thresholds must be positive, got eps_pos={}, eps_neg={}",
                self.eps_pos, self.eps_neg
            )));
        }
        if !(self.b_pr >= 0.0) {
            return Err(Error::validation(format!(
                "photoreceptor bias must be non-negative, got {}",
                self.b_pr
            )));
        }
        if !(self.n_trials > 0.0) {
            return Err(Error::validation(format!(
                "n_trials must be positive, got {}",
                self.n_trials
            )));
        }
        if !(self.lambda_min > 0.0) {
            return Err(Error::validation(format!(
                "lambda_min must be positive, got {}",
                self.lambda_min
            )));
        }
        // p_e <= 1/2 always, so this bounds the refractory duty cycle at
        // every supported illuminance.
        let refractory_s = self.refractory_us as f64 * 1e-6;
        if self.n_trials * 0.5 * refractory_s >= 0.1 {
            return Err(Error::validation(format!(
                "refractory period {} us is not small against the inter-event interval at n_trials={}",
                self.refractory_us, self.n_trials
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn eps(&self, polarity: Polarity) -> f64 {
        match polarity {
            Polarity::Pos => self.eps_pos,
            Polarity::Neg => self.eps_neg,
        }
    }

    /// Copy with the trial rate scaled, e.g. x4 after 2x2 pixel binning.
    pub fn with_n_scaled(&self, factor: f64) -> Result<Self> {
        let mut p = self.clone();
        p.n_trials *= factor;
        p.validate()?;
        Ok(p)
    }
}

/// Per-trial probability that photon noise triggers an event.
///
/// Returns a value in (0, 1/2]; with `b_pr = 0` this is exactly the
/// unbiased closed form. Errors if `lambda <= 0` (the Gaussian
/// approximation has no meaning there), `eps <= 0`, or `b_pr < 0`.
pub fn p_event(lambda: f64, eps: f64, b_pr: f64) -> Result<f64> {
    check_model_args(lambda, eps, b_pr)?;
    let ee = eps.exp();
    let num = (lambda + b_pr) * (ee - 1.0);
    let den = (2.0 * lambda * (1.0 + ee * ee)).sqrt();
    Ok(0.5 - 0.5 * erf(num / den))
}

/// Analytic derivative of `p_event` with respect to lambda.
///
/// Zero exactly at `lambda = b_pr`: the rate curve rises up to the bias
/// point and decays beyond it (strictly decays everywhere for zero bias).
pub fn p_event_dlambda(lambda: f64, eps: f64, b_pr: f64) -> Result<f64> {
    check_model_args(lambda, eps, b_pr)?;
    let ee = eps.exp();
    let k = (ee - 1.0) / (2.0 * (1.0 + ee * ee)).sqrt();
    let g = k * (lambda + b_pr) / lambda.sqrt();
    let dg = k * (lambda - b_pr) / (2.0 * lambda.powf(1.5));
    Ok(-(1.0 / std::f64::consts::PI.sqrt()) * (-g * g).exp() * dg)
}

fn check_model_args(lambda: f64, eps: f64, b_pr: f64) -> Result<()> {
    if !(lambda > 0.0) {
        return Err(Error::domain(format!(
            "lambda must be positive (no Gaussian approximation at {lambda})"
        )));
    }
    if !(eps > 0.0) {
        return Err(Error::domain(format!("eps must be positive, got {eps}")));
    }
    if !(b_pr >= 0.0) {
        return Err(Error::domain(format!("b_pr must be non-negative, got {b_pr}")));
    }
    Ok(())
}

/// Expected event count for one polarity over a window (seconds).
pub fn expected_count(
    lambda: f64,
    params: &CameraParams,
    polarity: Polarity,
    window: f64,
) -> Result<f64> {
    if !(window >= 0.0) || !window.is_finite() {
        return Err(Error::domain(format!("window must be non-negative, got {window}")));
    }
    let p = p_event(lambda, params.eps(polarity), params.b_pr)?;
    Ok(window * params.n_trials * p)
}

/// Expected event rate (events/s) over an ascending illuminance grid.
pub fn rate_curve(
    params: &CameraParams,
    lambda_grid: &[f64],
    polarity: Polarity,
) -> Result<Vec<(f64, f64)>> {
    check_grid(lambda_grid)?;
    lambda_grid
        .iter()
        .map(|&l| Ok((l, expected_count(l, params, polarity, 1.0)?)))
        .collect()
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::validation("lambda grid must not be empty"));
    }
    if !(grid[0] > 0.0) {
        return Err(Error::validation("lambda grid values must be positive"));
    }
    for w in grid.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::validation("lambda grid must be strictly ascending"));
        }
    }
    Ok(())
}

/// One tabulated grid point of the inverse lookup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InverseEntry {
    pub lambda: f64,
    pub mu_pos: f64,
    pub mu_neg: f64,
}

/// Inverse-lookup candidate, ranked by joint Poisson log-likelihood.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InverseCandidate {
    pub lambda: f64,
    pub log_likelihood: f64,
}

/// Precomputed map lambda -> expected (positive, negative) count pair,
/// with nearest-candidate queries for observed pairs.
///
/// Immutable after construction; queries are read-only.
#[derive(Debug, Clone)]
pub struct InverseIndex {
    window: f64,
    entries: Vec<InverseEntry>,
}

impl InverseIndex {
    pub fn build(params: &CameraParams, lambda_grid: &[f64], window: f64) -> Result<Self> {
        check_grid(lambda_grid)?;
        if !(window > 0.0) {
            return Err(Error::validation(format!("window must be positive, got {window}")));
        }
        let entries = lambda_grid
            .iter()
            .map(|&lambda| {
                Ok(InverseEntry {
                    lambda,
                    mu_pos: expected_count(lambda, params, Polarity::Pos, window)?,
                    mu_neg: expected_count(lambda, params, Polarity::Neg, window)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { window, entries })
    }

    #[inline]
    pub fn window(&self) -> f64 {
        self.window
    }

    pub fn entries(&self) -> &[InverseEntry] {
        &self.entries
    }

    /// Returns every grid lambda whose expected pair lies within
    /// `tol_sigmas` Poisson standard deviations of the observed pair in
    /// both channels, ordered by joint Poisson log-likelihood descending
    /// (ties broken toward smaller lambda). Default tolerance is 3 sigma.
    pub fn query(&self, k_pos: f64, k_neg: f64, tol_sigmas: Option<f64>) -> Vec<InverseCandidate> {
        let tol = tol_sigmas.unwrap_or(3.0);
        let mut out: Vec<InverseCandidate> = self
            .entries
            .iter()
            .filter(|e| {
                (k_pos - e.mu_pos).abs() <= tol * e.mu_pos.sqrt()
                    && (k_neg - e.mu_neg).abs() <= tol * e.mu_neg.sqrt()
            })
            .map(|e| InverseCandidate {
                lambda: e.lambda,
                log_likelihood: math::poisson_log_pmf(k_pos, e.mu_pos)
                    + math::poisson_log_pmf(k_neg, e.mu_neg),
            })
            .collect();
        out.sort_by(|a, b| {
            b.log_likelihood
                .partial_cmp(&a.log_likelihood)
                .unwrap()
                .then(a.lambda.partial_cmp(&b.lambda).unwrap())
        });
        out
    }
}

const PARAMS_KEYS: [&str; 9] = [
    "eps_pos",
    "eps_neg",
    "b_pr",
    "n_trials",
    "refractory_us",
    "dispersion",
    "lambda_min",
    "nb_lambda",
    "nb_ratio",
];

/// Serializes camera parameters as the flat key-value text format shared
/// with the command-line tools.
pub fn params_to_kv(params: &CameraParams) -> String {
    let mut s = String::from("# evnoise-params v1\n");
    s.push_str(&format!("eps_pos = {}\n", params.eps_pos));
    s.push_str(&format!("eps_neg = {}\n", params.eps_neg));
    s.push_str(&format!("b_pr = {}\n", params.b_pr));
    s.push_str(&format!("n_trials = {}\n", params.n_trials));
    s.push_str(&format!("refractory_us = {}\n", params.refractory_us));
    s.push_str(&format!("dispersion = {}\n", params.dispersion.kind_name()));
    s.push_str(&format!("lambda_min = {}\n", params.lambda_min));
    if let DispersionModel::NegativeBinomial(t) = &params.dispersion {
        let (xs, ys) = t.nodes();
        s.push_str(&format!("nb_lambda = {}\n", join_f64(xs)));
        s.push_str(&format!("nb_ratio = {}\n", join_f64(ys)));
    }
    s
}

fn join_f64(v: &[f64]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// Parses the flat key-value parameter format. Unknown keys are rejected.
pub fn params_from_kv(text: &str) -> Result<CameraParams> {
    let mut kv: BTreeMap<&str, &str> = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::validation(format!("params line {}: expected `key = value`", lineno + 1))
        })?;
        let key = key.trim();
        if !PARAMS_KEYS.contains(&key) {
            return Err(Error::validation(format!(
                "params line {}: unknown key `{key}`",
                lineno + 1
            )));
        }
        kv.insert(key, value.trim());
    }
    let f = |key: &str| -> Result<f64> {
        kv.get(key)
            .ok_or_else(|| Error::validation(format!("params file missing key `{key}`")))?
            .parse::<f64>()
            .map_err(|_| Error::validation(format!("params key `{key}` is not a number")))
    };
    let dispersion = match kv.get("dispersion").copied().unwrap_or("poisson") {
        "poisson" => DispersionModel::Poisson,
        "negative-binomial" => {
            let parse_list = |key: &str| -> Result<Vec<f64>> {
                kv.get(key)
                    .ok_or_else(|| {
                        Error::validation(format!(
                            "negative-binomial dispersion requires key `{key}`"
                        ))
                    })?
                    .split(',')
                    .map(|s| {
                        s.trim().parse::<f64>().map_err(|_| {
                            Error::validation(format!("params key `{key}` has a bad entry `{s}`"))
                        })
                    })
                    .collect()
            };
            DispersionModel::NegativeBinomial(DispersionTable::new(
                parse_list("nb_lambda")?,
                parse_list("nb_ratio")?,
            )?)
        }
        other => {
            return Err(Error::validation(format!(
                "dispersion must be `poisson` or `negative-binomial`, got `{other}`"
            )))
        }
    };
    let refractory_us = kv
        .get("refractory_us")
        .map(|v| {
            v.parse::<u64>()
                .map_err(|_| Error::validation("refractory_us must be a non-negative integer"))
        })
        .transpose()?
        .unwrap_or(0);
    let params = CameraParams {
        eps_pos: f("eps_pos")?,
        eps_neg: f("eps_neg")?,
        b_pr: f("b_pr")?,
        n_trials: f("n_trials")?,
        refractory_us,
        dispersion,
        lambda_min: if kv.contains_key("lambda_min") {
            f("lambda_min")?
        } else {
            DEFAULT_LAMBDA_MIN
        },
    };
    params.validate()?;
    Ok(params)
}

pub fn write_params_file(path: impl AsRef<Path>, params: &CameraParams) -> Result<()> {
    std::fs::write(path, params_to_kv(params))?;
    Ok(())
}

pub fn read_params_file(path: impl AsRef<Path>) -> Result<CameraParams> {
    let text = std::fs::read_to_string(path)?;
    params_from_kv(&text)
}
