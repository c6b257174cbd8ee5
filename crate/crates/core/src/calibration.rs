//! Model calibration from measured illuminance-vs-event-rate data:
//! fitting the camera parameters, the empirical dispersion table, and the
//! monotone gray-level to photon-count map.

use std::path::Path;

use crate::error::{Error, Result};
use crate::event::Polarity;
use crate::math::log_space;
use crate::noise_model::{p_event, CameraParams, DispersionModel, DispersionTable};
use crate::optim::{nelder_mead, NelderMeadOptions};

/// One measured point: illuminance (as mean photon count) and the
/// per-pixel event rates of both polarities, optionally with the
/// per-window count variances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveSample {
    pub lambda: f64,
    pub pos_rate: f64,
    pub neg_rate: f64,
    pub pos_var: Option<f64>,
    pub neg_var: Option<f64>,
}

/// Measured (illuminance, rate) pairs per polarity plus the measurement
/// window they were aggregated over.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationCurve {
    pub samples: Vec<CurveSample>,
    pub window: f64,
}

impl CalibrationCurve {
    pub fn new(samples: Vec<CurveSample>, window: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::validation("calibration curve has no samples"));
        }
        if !(window > 0.0) {
            return Err(Error::validation(format!(
                "calibration window must be positive, got {window}"
            )));
        }
        for (i, s) in samples.iter().enumerate() {
            if !(s.lambda > 0.0) {
                return Err(Error::validation(format!(
                    "sample {i}: lambda must be positive, got {}",
                    s.lambda
                )));
            }
            if !(s.pos_rate >= 0.0) || !(s.neg_rate >= 0.0) {
                return Err(Error::validation(format!("sample {i}: rates must be non-negative")));
            }
            if i > 0 && !(s.lambda > samples[i - 1].lambda) {
                return Err(Error::validation(format!(
                    "sample {i}: lambda values must be strictly ascending"
                )));
            }
        }
        Ok(Self { samples, window })
    }

    /// Parses `lambda,pos_rate,neg_rate[,pos_var,neg_var]` rows below a
    /// `# window=<seconds>` header.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut window = None;
        let mut samples = Vec::new();
        let mut offset = 0u64;
        for (lineno, raw) in text.lines().enumerate() {
            let line_offset = offset;
            offset += raw.len() as u64 + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let rest = rest.trim();
                if let Some(v) = rest.strip_prefix("window=") {
                    window = Some(v.trim().parse::<f64>().map_err(|_| {
                        Error::parse(line_offset, format!("line {}: bad window value", lineno + 1))
                    })?);
                }
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 3 && fields.len() != 5 {
                return Err(Error::parse(
                    line_offset,
                    format!(
                        "line {}: expected lambda,pos_rate,neg_rate[,pos_var,neg_var]",
                        lineno + 1
                    ),
                ));
            }
            let num = |i: usize, name: &str| -> Result<f64> {
                fields[i].parse::<f64>().map_err(|_| {
                    Error::parse(line_offset, format!("line {}: bad {name} `{}`", lineno + 1, fields[i]))
                })
            };
            samples.push(CurveSample {
                lambda: num(0, "lambda")?,
                pos_rate: num(1, "pos_rate")?,
                neg_rate: num(2, "neg_rate")?,
                pos_var: if fields.len() == 5 { Some(num(3, "pos_var")?) } else { None },
                neg_var: if fields.len() == 5 { Some(num(4, "neg_var")?) } else { None },
            });
        }
        let window = window
            .ok_or_else(|| Error::parse(0, "missing `# window=<seconds>` header"))?;
        Self::new(samples, window)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("# window={}\n", self.window);
        for s in &self.samples {
            match (s.pos_var, s.neg_var) {
                (Some(pv), Some(nv)) => {
                    out.push_str(&format!("{},{},{},{},{}\n", s.lambda, s.pos_rate, s.neg_rate, pv, nv))
                }
                _ => out.push_str(&format!("{},{},{}\n", s.lambda, s.pos_rate, s.neg_rate)),
            }
        }
        out
    }

    pub fn rate(&self, i: usize, polarity: Polarity) -> f64 {
        match polarity {
            Polarity::Pos => self.samples[i].pos_rate,
            Polarity::Neg => self.samples[i].neg_rate,
        }
    }
}

/// Box bounds for the fitted parameters.
#[derive(Debug, Clone, Copy)]
pub struct FitBounds {
    pub eps: (f64, f64),
    pub b_pr: (f64, f64),
    pub n_trials: (f64, f64),
}

impl Default for FitBounds {
    fn default() -> Self {
        Self {
            eps: (5e-3, 3.0),
            b_pr: (1e-9, 1e5),
            n_trials: (1e-3, 1e12),
        }
    }
}

/// Outcome of a parameter fit.
#[derive(Debug, Clone)]
pub struct FitReport {
    /// Weighted sum of squared relative residuals at the solution.
    pub objective: f64,
    /// Absolute rate RMSE per polarity (events/s/pixel).
    pub rmse_pos: f64,
    pub rmse_neg: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Best objective after each refinement iteration; non-increasing.
    pub trace: Vec<f64>,
    /// Per-sample (lambda, fitted pos rate, fitted neg rate).
    pub fitted: Vec<(f64, f64, f64)>,
}

/// Rates below this floor stop dominating the relative-residual weights.
pub const RATE_FLOOR: f64 = 1e-3;

struct Objective<'a> {
    curve: &'a CalibrationCurve,
    bounds: FitBounds,
}

impl Objective<'_> {
    /// x = [ln eps_pos, ln eps_neg, ln b_pr, ln n_trials]
    fn eval(&self, x: &[f64]) -> f64 {
        let mut penalty = 0.0;
        let mut clamp_ln = |v: f64, (lo, hi): (f64, f64)| -> f64 {
            let (llo, lhi) = (lo.ln(), hi.ln());
            let c = v.clamp(llo, lhi);
            penalty += (v - c) * (v - c);
            c.exp()
        };
        let eps_pos = clamp_ln(x[0], self.bounds.eps);
        let eps_neg = clamp_ln(x[1], self.bounds.eps);
        let b_pr = clamp_ln(x[2], self.bounds.b_pr);
        let n = clamp_ln(x[3], self.bounds.n_trials);
        self.sum_sq(eps_pos, eps_neg, b_pr, n) * (1.0 + penalty)
    }

    fn sum_sq(&self, eps_pos: f64, eps_neg: f64, b_pr: f64, n: f64) -> f64 {
        let mut acc = 0.0;
        for s in &self.curve.samples {
            for (eps, rate) in [(eps_pos, s.pos_rate), (eps_neg, s.neg_rate)] {
                let model = n * p_event(s.lambda, eps, b_pr).unwrap_or(f64::NAN);
                let w = rate.max(RATE_FLOOR);
                let r = (model - rate) / w;
                acc += r * r;
            }
        }
        acc
    }
}

/// Fits (eps_pos, eps_neg, b_pr, n_trials) to a measured curve by
/// minimizing relative-residual least squares jointly over both
/// polarities (shared bias and trial rate, per-polarity threshold).
///
/// A coarse log grid seeds a simplex refinement; if refinement cannot
/// improve on the best grid point the grid solution is returned with
/// `converged = false`.
pub fn fit_params(
    curve: &CalibrationCurve,
    init: Option<&CameraParams>,
    bounds: &FitBounds,
) -> Result<(CameraParams, FitReport)> {
    if curve.samples.iter().all(|s| s.pos_rate == 0.0 && s.neg_rate == 0.0) {
        return Err(Error::validation("degenerate calibration curve: all rates are zero"));
    }
    if curve.samples.len() < 2 {
        return Err(Error::validation("calibration needs at least two samples"));
    }

    let objective = Objective { curve, bounds: *bounds };
    let (grid_x, grid_obj) = grid_seed(curve, bounds)?;

    let mut starts: Vec<Vec<f64>> = vec![grid_x.clone()];
    if let Some(p) = init {
        starts.push(vec![
            p.eps_pos.max(bounds.eps.0).ln(),
            p.eps_neg.max(bounds.eps.0).ln(),
            p.b_pr.max(bounds.b_pr.0).ln(),
            p.n_trials.max(bounds.n_trials.0).ln(),
        ]);
    }

    let opts = NelderMeadOptions { max_iterations: 1500, f_tol: 1e-14, initial_step: 0.25 };
    let mut best: Option<crate::optim::NelderMeadResult> = None;
    for s in &starts {
        let r = nelder_mead(|x| objective.eval(x), s, &opts);
        if best.as_ref().map_or(true, |b| r.fmin < b.fmin) {
            best = Some(r);
        }
    }
    let refined = best.expect("at least one start");

    let (x, obj, converged, trace, iterations) = if refined.fmin < grid_obj {
        let mut trace = vec![grid_obj];
        trace.extend(refined.trace.iter().copied().map(|t| t.min(grid_obj)));
        (refined.x.clone(), refined.fmin, refined.converged, trace, refined.iterations)
    } else {
        (grid_x, grid_obj, false, vec![grid_obj], 0)
    };

    let clamp = |v: f64, (lo, hi): (f64, f64)| v.exp().clamp(lo, hi);
    let params = CameraParams {
        eps_pos: clamp(x[0], bounds.eps),
        eps_neg: clamp(x[1], bounds.eps),
        b_pr: {
            let b = clamp(x[2], bounds.b_pr);
            // the lower bound only exists to keep the log parameterization
            // alive; snap effectively-zero bias to zero
            if b <= 1e-6 {
                0.0
            } else {
                b
            }
        },
        n_trials: clamp(x[3], bounds.n_trials),
        refractory_us: 0,
        dispersion: DispersionModel::Poisson,
        lambda_min: crate::noise_model::DEFAULT_LAMBDA_MIN,
    };
    params.validate()?;

    let mut fitted = Vec::with_capacity(curve.samples.len());
    let (mut se_pos, mut se_neg) = (0.0, 0.0);
    for s in &curve.samples {
        let mp = params.n_trials * p_event(s.lambda, params.eps_pos, params.b_pr)?;
        let mn = params.n_trials * p_event(s.lambda, params.eps_neg, params.b_pr)?;
        se_pos += (mp - s.pos_rate).powi(2);
        se_neg += (mn - s.neg_rate).powi(2);
        fitted.push((s.lambda, mp, mn));
    }
    let n = curve.samples.len() as f64;
    let report = FitReport {
        objective: obj,
        rmse_pos: (se_pos / n).sqrt(),
        rmse_neg: (se_neg / n).sqrt(),
        converged,
        iterations,
        trace,
        fitted,
    };
    Ok((params, report))
}

/// Simplex refinement from an explicit start, without the grid stage.
/// Used for multi-start agreement checks.
pub fn fit_params_from_start(
    curve: &CalibrationCurve,
    start: &CameraParams,
    bounds: &FitBounds,
) -> Result<(CameraParams, f64)> {
    let objective = Objective { curve, bounds: *bounds };
    let x0 = vec![
        start.eps_pos.clamp(bounds.eps.0, bounds.eps.1).ln(),
        start.eps_neg.clamp(bounds.eps.0, bounds.eps.1).ln(),
        start.b_pr.clamp(bounds.b_pr.0, bounds.b_pr.1).ln(),
        start.n_trials.clamp(bounds.n_trials.0, bounds.n_trials.1).ln(),
    ];
    let opts = NelderMeadOptions { max_iterations: 3000, f_tol: 1e-14, initial_step: 0.2 };
    let r = nelder_mead(|x| objective.eval(x), &x0, &opts);
    let clamp = |v: f64, (lo, hi): (f64, f64)| v.exp().clamp(lo, hi);
    let params = CameraParams {
        eps_pos: clamp(r.x[0], bounds.eps),
        eps_neg: clamp(r.x[1], bounds.eps),
        b_pr: clamp(r.x[2], bounds.b_pr),
        n_trials: clamp(r.x[3], bounds.n_trials),
        refractory_us: 0,
        dispersion: DispersionModel::Poisson,
        lambda_min: crate::noise_model::DEFAULT_LAMBDA_MIN,
    };
    Ok((params, r.fmin))
}

/// Coarse search: log grids over threshold and bias; the shared trial
/// rate has a closed-form optimum for fixed thresholds, since the model
/// is linear in it.
fn grid_seed(curve: &CalibrationCurve, bounds: &FitBounds) -> Result<(Vec<f64>, f64)> {
    let eps_grid = log_space(bounds.eps.0.max(5e-3), bounds.eps.1.min(3.0), 24)?;
    let mut b_grid = vec![bounds.b_pr.0.max(1e-9)];
    b_grid.extend(log_space(0.05, bounds.b_pr.1.min(1e5), 18)?);

    let n_samples = curve.samples.len();
    let mut best: Option<(Vec<f64>, f64)> = None;

    // constant part of the objective per polarity
    let d_const: f64 = curve
        .samples
        .iter()
        .flat_map(|s| [s.pos_rate, s.neg_rate])
        .map(|r| (r / r.max(RATE_FLOOR)).powi(2))
        .sum();

    for &b in &b_grid {
        // p_e per (eps, sample); identical for both polarities
        let pe: Vec<Vec<f64>> = eps_grid
            .iter()
            .map(|&e| {
                curve
                    .samples
                    .iter()
                    .map(|s| p_event(s.lambda, e, b).unwrap_or(0.0))
                    .collect()
            })
            .collect();
        // per (eps): a = sum p*r/w^2, c = sum p^2/w^2, for each polarity
        let mut a_pos = vec![0.0; eps_grid.len()];
        let mut c_pos = vec![0.0; eps_grid.len()];
        let mut a_neg = vec![0.0; eps_grid.len()];
        let mut c_neg = vec![0.0; eps_grid.len()];
        for (ei, p_row) in pe.iter().enumerate() {
            for (i, &p) in p_row.iter().enumerate().take(n_samples) {
                let s = &curve.samples[i];
                let wp = s.pos_rate.max(RATE_FLOOR);
                let wn = s.neg_rate.max(RATE_FLOOR);
                a_pos[ei] += p * s.pos_rate / (wp * wp);
                c_pos[ei] += p * p / (wp * wp);
                a_neg[ei] += p * s.neg_rate / (wn * wn);
                c_neg[ei] += p * p / (wn * wn);
            }
        }
        for (ep, _) in eps_grid.iter().enumerate() {
            for (en, _) in eps_grid.iter().enumerate() {
                let denom = c_pos[ep] + c_neg[en];
                if denom <= 0.0 {
                    continue;
                }
                let n_opt = ((a_pos[ep] + a_neg[en]) / denom)
                    .clamp(bounds.n_trials.0, bounds.n_trials.1);
                let obj = n_opt * n_opt * denom - 2.0 * n_opt * (a_pos[ep] + a_neg[en]) + d_const;
                if best.as_ref().map_or(true, |(_, o)| obj < *o) {
                    best = Some((
                        vec![eps_grid[ep].ln(), eps_grid[en].ln(), b.ln(), n_opt.ln()],
                        obj,
                    ));
                }
            }
        }
    }
    best.ok_or_else(|| Error::numerical("calibration grid search produced no candidate"))
}

/// Builds the overdispersion table from the variance columns of a curve.
///
/// Node values are the measured variance-to-mean ratios (averaged across
/// polarities), clamped up to 1.001 so the negative binomial stays well
/// defined; intermediate illuminances interpolate linearly.
pub fn fit_variance_table(curve: &CalibrationCurve) -> Result<DispersionModel> {
    let mut lambdas = Vec::new();
    let mut ratios = Vec::new();
    for (i, s) in curve.samples.iter().enumerate() {
        let (pv, nv) = match (s.pos_var, s.neg_var) {
            (Some(pv), Some(nv)) => (pv, nv),
            _ => {
                return Err(Error::validation(format!(
                    "sample {i} has no variance columns; use Poisson dispersion instead"
                )))
            }
        };
        let mean_pos = s.pos_rate * curve.window;
        let mean_neg = s.neg_rate * curve.window;
        let mut num = 0.0;
        let mut cnt = 0.0;
        if mean_pos > 0.0 {
            num += pv / mean_pos;
            cnt += 1.0;
        }
        if mean_neg > 0.0 {
            num += nv / mean_neg;
            cnt += 1.0;
        }
        if cnt == 0.0 {
            continue; // no usable counts at this illuminance
        }
        lambdas.push(s.lambda);
        ratios.push((num / cnt).max(1.001));
    }
    if lambdas.is_empty() {
        return Err(Error::validation(
            "no calibration sample has positive mean counts; cannot fit a variance table",
        ));
    }
    Ok(DispersionModel::NegativeBinomial(DispersionTable::new(lambdas, ratios)?))
}

/// Monotone gray-level -> mean-photon-count lookup.
///
/// Strictly increasing after isotonic regression; queries clamp to the
/// table range on both axes.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayToLambdaMap {
    grays: Vec<f64>,
    lambdas: Vec<f64>,
}

impl GrayToLambdaMap {
    pub fn new(grays: Vec<f64>, lambdas: Vec<f64>) -> Result<Self> {
        if grays.len() != lambdas.len() || grays.len() < 2 {
            return Err(Error::validation("gray map needs at least two nodes"));
        }
        for w in grays.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::validation("gray map gray levels must be strictly ascending"));
            }
        }
        for w in lambdas.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::validation("gray map lambdas must be strictly increasing"));
            }
        }
        if lambdas.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return Err(Error::validation("gray map lambdas must be non-negative and finite"));
        }
        Ok(Self { grays, lambdas })
    }

    pub fn to_lambda(&self, gray: f64) -> f64 {
        interp_clamped(&self.grays, &self.lambdas, gray)
    }

    /// Inverse interpolation, clamped to the table's gray range.
    pub fn to_gray(&self, lambda: f64) -> f64 {
        interp_clamped(&self.lambdas, &self.grays, lambda)
    }

    pub fn max_gray(&self) -> f64 {
        *self.grays.last().unwrap()
    }

    pub fn lambda_range(&self) -> (f64, f64) {
        (self.lambdas[0], *self.lambdas.last().unwrap())
    }

    pub fn nodes(&self) -> (&[f64], &[f64]) {
        (&self.grays, &self.lambdas)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("# evnoise-graymap v1\n");
        for (g, l) in self.grays.iter().zip(&self.lambdas) {
            out.push_str(&format!("{g},{l}\n"));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut grays = Vec::new();
        let mut lambdas = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (g, l) = line.split_once(',').ok_or_else(|| {
                Error::validation(format!("gray map line {}: expected gray,lambda", lineno + 1))
            })?;
            grays.push(g.trim().parse::<f64>().map_err(|_| {
                Error::validation(format!("gray map line {}: bad gray level", lineno + 1))
            })?);
            lambdas.push(l.trim().parse::<f64>().map_err(|_| {
                Error::validation(format!("gray map line {}: bad lambda", lineno + 1))
            })?);
        }
        Self::new(grays, lambdas)
    }
}

pub fn write_gray_map_file(path: impl AsRef<Path>, map: &GrayToLambdaMap) -> Result<()> {
    std::fs::write(path, map.to_csv())?;
    Ok(())
}

pub fn read_gray_map_file(path: impl AsRef<Path>) -> Result<GrayToLambdaMap> {
    GrayToLambdaMap::from_csv(&std::fs::read_to_string(path)?)
}

fn interp_clamped(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let hi = xs.partition_point(|&v| v <= x);
    let (x0, x1) = (xs[hi - 1], xs[hi]);
    let (y0, y1) = (ys[hi - 1], ys[hi]);
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

/// Fits the gray-level -> lambda map from (gray, lux) light-meter
/// measurements. Repeated gray levels are pooled, the pooled points are
/// made monotone by isotonic regression, and plateaus are separated by a
/// vanishing ramp so the map is strictly increasing and invertible.
pub fn fit_gray_map(
    measurements: &[(u16, f64)],
    lux_to_lambda: f64,
) -> Result<GrayToLambdaMap> {
    if !(lux_to_lambda > 0.0) {
        return Err(Error::validation("lux-to-lambda scale must be positive"));
    }
    if measurements.is_empty() {
        return Err(Error::validation("gray map fit needs measurements"));
    }
    // pool duplicates
    let mut by_gray: std::collections::BTreeMap<u16, (f64, f64)> = Default::default();
    for &(g, lux) in measurements {
        if !(lux >= 0.0) || !lux.is_finite() {
            return Err(Error::validation(format!("bad lux value {lux}")));
        }
        let e = by_gray.entry(g).or_insert((0.0, 0.0));
        e.0 += lux;
        e.1 += 1.0;
    }
    if by_gray.len() < 2 {
        return Err(Error::validation("gray map fit needs at least two distinct gray levels"));
    }
    let grays: Vec<f64> = by_gray.keys().map(|&g| g as f64).collect();
    let ys: Vec<f64> = by_gray.values().map(|(s, n)| s / n * lux_to_lambda).collect();
    let weights: Vec<f64> = by_gray.values().map(|(_, n)| *n).collect();
    if ys.windows(2).all(|w| w[0] == w[1]) {
        return Err(Error::validation("all lux measurements are equal; map is degenerate"));
    }

    let mut fitted = isotonic_non_decreasing(&ys, &weights);
    // strictly increasing: lift ties by a relative epsilon ramp
    for i in 1..fitted.len() {
        let floor = fitted[i - 1] * (1.0 + 1e-9) + 1e-12;
        if fitted[i] < floor {
            fitted[i] = floor;
        }
    }
    GrayToLambdaMap::new(grays, fitted)
}

/// Pool-adjacent-violators: weighted least-squares non-decreasing fit.
pub fn isotonic_non_decreasing(ys: &[f64], weights: &[f64]) -> Vec<f64> {
    assert_eq!(ys.len(), weights.len());
    // (weight sum, weighted value sum, member count)
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(ys.len());
    for (&y, &w) in ys.iter().zip(weights) {
        blocks.push((w, w * y, 1));
        while blocks.len() >= 2 {
            let last = blocks[blocks.len() - 1];
            let prev = blocks[blocks.len() - 2];
            if last.1 / last.0 < prev.1 / prev.0 {
                blocks.pop();
                let top = blocks.last_mut().unwrap();
                top.0 += last.0;
                top.1 += last.1;
                top.2 += last.2;
            } else {
                break;
            }
        }
    }
    let mut out = Vec::with_capacity(ys.len());
    for (w, wy, n) in blocks {
        let v = wy / w;
        out.extend(std::iter::repeat(v).take(n));
    }
    out
}
