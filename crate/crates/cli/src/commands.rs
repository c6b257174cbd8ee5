//! Subcommand implementations.

use std::path::{Path, PathBuf};

use clap::Args;
use evnoise_core::calibration::{
    self, fit_gray_map, fit_params, fit_variance_table, CalibrationCurve, FitBounds,
    GrayToLambdaMap,
};
use evnoise_core::event::Polarity;
use evnoise_core::image::{CountImage, ImageUnit, IntensityImage};
use evnoise_core::math::log_space;
use evnoise_core::noise_model::{self, rate_curve};
use evnoise_core::reconstruction::{
    reconstruct, LikelihoodKind, PolarityMode, ReconstructionConfig, TieBreak,
};
use evnoise_core::stream_io::{self, EventFormat};
use evnoise_core::stream_ops::{baf_split, masked_aggregate, motion_mask, stitch, BafConfig, MotionMask};
use evnoise_core::synthesis::{generate_dataset, replay_dataset, sample_counts, sample_stream, PixelVariability};
use evnoise_core::{metrics, pgm, Error, Result};

use crate::config::{resolve, resolve_required, EffectiveConfig, FileConfig};

fn resolve_path(flag: &Option<PathBuf>, cfg: &FileConfig, key: &str) -> Result<PathBuf> {
    if let Some(p) = flag {
        return Ok(p.clone());
    }
    cfg.get(key)
        .map(PathBuf::from)
        .ok_or_else(|| Error::validation(format!("missing required option `--{}`", key.replace('_', "-"))))
}

fn resolve_path_opt(flag: &Option<PathBuf>, cfg: &FileConfig, key: &str) -> Option<PathBuf> {
    flag.clone().or_else(|| cfg.get(key).map(PathBuf::from))
}

/// Maps a gray scene through the calibration map into photon counts.
fn scene_to_lambda(scene: &IntensityImage, map: &GrayToLambdaMap) -> Result<IntensityImage> {
    let values = scene.values().iter().map(|&g| map.to_lambda(g)).collect();
    IntensityImage::new(scene.width(), scene.height(), ImageUnit::PhotonCount, values)
}

/// Fallback display mapping when no gray map is given: log-linear over
/// the reconstruction grid range.
fn auto_display_map(lambda_img: &IntensityImage, lo: f64, hi: f64) -> Result<IntensityImage> {
    let (llo, lhi) = (lo.ln(), hi.ln());
    let values = lambda_img
        .values()
        .iter()
        .map(|&l| {
            let t = (l.max(lo).ln() - llo) / (lhi - llo);
            (255.0 * t).round().clamp(0.0, 255.0)
        })
        .collect();
    IntensityImage::new(lambda_img.width(), lambda_img.height(), ImageUnit::GrayLevel, values)
}

// ---------------------------------------------------------------- simulate

#[derive(Args)]
pub struct SimulateArgs {
    /// Input scene graymap (gray levels; mapped to photon counts via --graymap).
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Camera parameter file.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Gray-level to photon-count map file.
    #[arg(long)]
    graymap: Option<PathBuf>,
    /// Aggregation window in seconds.
    #[arg(long)]
    window: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output prefix; writes <out>_pos.pgm and <out>_neg.pgm.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Additionally write a timestamped event stream (<out>_events.evn).
    #[arg(long)]
    stream: bool,
    /// Per-pixel contrast-threshold jitter (log-intensity units).
    #[arg(long)]
    eps_sigma: Option<f64>,
    /// Seed of the frozen threshold-jitter map.
    #[arg(long)]
    var_seed: Option<u64>,
}

pub fn run_simulate(args: SimulateArgs, cfg: &FileConfig) -> Result<()> {
    let scene_path = resolve_path(&args.scene, cfg, "scene")?;
    let params_path = resolve_path(&args.params, cfg, "params")?;
    let graymap_path = resolve_path(&args.graymap, cfg, "graymap")?;
    let out = resolve_path(&args.out, cfg, "out")?;
    let window: f64 = resolve_required(args.window, cfg, "window")?;
    let seed: u64 = resolve(args.seed, cfg, "seed", 0)?;
    let eps_sigma: f64 = resolve(args.eps_sigma, cfg, "eps_sigma", 0.0)?;
    let var_seed: u64 = resolve(args.var_seed, cfg, "var_seed", 0)?;
    let stream_wanted = args.stream || cfg.parse::<bool>("stream")?.unwrap_or(false);

    let params = noise_model::read_params_file(&params_path)?;
    let map = calibration::read_gray_map_file(&graymap_path)?;
    let (scene_gray, _) = pgm::read_pgm_file(&scene_path)?;
    let scene = scene_to_lambda(&scene_gray, &map)?;
    let variability = PixelVariability { eps_sigma, seed: var_seed };

    let (counts, report) = sample_counts(&scene, &params, window, &variability, seed)?;
    if report.nb_fallbacks > 0 {
        log::warn!(
            "{} pixel draws fell back to Poisson (variance table at or below the mean)",
            report.nb_fallbacks
        );
    }
    let out_pos = with_suffix(&out, "_pos.pgm");
    let out_neg = with_suffix(&out, "_neg.pgm");
    pgm::write_pgm_file(&out_pos, &counts.channel_as_gray(Polarity::Pos)?, u16::MAX)?;
    pgm::write_pgm_file(&out_neg, &counts.channel_as_gray(Polarity::Neg)?, u16::MAX)?;

    let mut echo = EffectiveConfig::new("simulate");
    echo.set_path("scene", &scene_path);
    echo.set_path("params", &params_path);
    echo.set_path("graymap", &graymap_path);
    echo.set("window", window);
    echo.set("seed", seed);
    echo.set("eps_sigma", eps_sigma);
    echo.set("var_seed", var_seed);
    echo.set("stream", stream_wanted);
    echo.set_path("out_pos", &out_pos);
    echo.set_path("out_neg", &out_neg);

    if stream_wanted {
        let events = sample_stream(&scene, &params, window, &variability, seed)?;
        let out_events = with_suffix(&out, "_events.evn");
        stream_io::write_events_file(&out_events, &events, EventFormat::Binary)?;
        echo.set_path("out_events", &out_events);
        log::info!("wrote {} events to {}", events.len(), out_events.display());
    }
    echo.write_next_to(&out)?;
    Ok(())
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut name = prefix
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    name.push_str(suffix);
    prefix.with_file_name(name)
}

// --------------------------------------------------------------- calibrate

#[derive(Args)]
pub struct CalibrateArgs {
    /// Measured curve CSV: `lambda,pos_rate,neg_rate[,pos_var,neg_var]`
    /// under a `# window=<seconds>` header.
    #[arg(long)]
    curve: Option<PathBuf>,
    /// Output camera parameter file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report format: `json-lines` streams per-sample residuals to stdout.
    #[arg(long)]
    report: Option<String>,
    /// Also fit the dispersion table from the variance columns.
    #[arg(long)]
    fit_variance: bool,
}

pub fn run_calibrate(args: CalibrateArgs, cfg: &FileConfig) -> Result<()> {
    let curve_path = resolve_path(&args.curve, cfg, "curve")?;
    let out = resolve_path(&args.out, cfg, "out")?;
    let report_mode = args.report.or_else(|| cfg.get("report").map(String::from));
    let fit_variance = args.fit_variance || cfg.parse::<bool>("fit_variance")?.unwrap_or(false);

    let curve = CalibrationCurve::from_csv(&std::fs::read_to_string(&curve_path)?)?;
    let (mut params, report) = fit_params(&curve, None, &FitBounds::default())?;
    if fit_variance {
        params.dispersion = fit_variance_table(&curve)?;
    }
    noise_model::write_params_file(&out, &params)?;

    log::info!(
        "fit: eps_pos={:.6} eps_neg={:.6} b_pr={:.4} n_trials={:.4} rmse_pos={:.4} rmse_neg={:.4} converged={}",
        params.eps_pos, params.eps_neg, params.b_pr, params.n_trials,
        report.rmse_pos, report.rmse_neg, report.converged
    );

    if matches!(report_mode.as_deref(), Some("json-lines")) {
        for (s, &(lambda, fit_pos, fit_neg)) in curve.samples.iter().zip(&report.fitted) {
            let line = serde_json::json!({
                "lambda": lambda,
                "pos_rate": s.pos_rate,
                "pos_fit": fit_pos,
                "pos_residual": fit_pos - s.pos_rate,
                "neg_rate": s.neg_rate,
                "neg_fit": fit_neg,
                "neg_residual": fit_neg - s.neg_rate,
            });
            println!("{line}");
        }
        let summary = serde_json::json!({
            "objective": report.objective,
            "rmse_pos": report.rmse_pos,
            "rmse_neg": report.rmse_neg,
            "converged": report.converged,
            "iterations": report.iterations,
            "eps_pos": params.eps_pos,
            "eps_neg": params.eps_neg,
            "b_pr": params.b_pr,
            "n_trials": params.n_trials,
        });
        println!("{summary}");
    } else if report_mode.is_some() {
        return Err(Error::validation("unknown --report mode; supported: json-lines"));
    }

    let mut echo = EffectiveConfig::new("calibrate");
    echo.set_path("curve", &curve_path);
    echo.set_path("out", &out);
    echo.set("fit_variance", fit_variance);
    echo.set("converged", report.converged);
    echo.write_next_to(&out)?;
    Ok(())
}

// ------------------------------------------------------------- reconstruct

#[derive(Args)]
pub struct ReconstructArgs {
    /// Event file input (aggregated over [--t-start, --t-start + --window)).
    #[arg(long, conflicts_with_all = ["pos", "neg"])]
    events: Option<PathBuf>,
    /// Positive-count graymap input (pair with --neg).
    #[arg(long, requires = "neg")]
    pos: Option<PathBuf>,
    /// Negative-count graymap input (pair with --pos).
    #[arg(long, requires = "pos")]
    neg: Option<PathBuf>,
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    window: Option<f64>,
    #[arg(long)]
    t_start: Option<f64>,
    /// Output prefix; writes <out>_gray.pgm and <out>_ambiguity.pgm.
    #[arg(long)]
    out: Option<PathBuf>,
    /// 2x2 pixel binning before inversion (trial rate scaled by 4).
    #[arg(long)]
    bin2x2: Option<bool>,
    /// Total-variation refinement weight on log intensity (0 = off).
    #[arg(long)]
    beta: Option<f64>,
    /// Motion-mask graymap; masked pixels are excluded from inversion.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Which polarities drive the likelihood: both | pos | neg.
    #[arg(long)]
    polarity: Option<String>,
    /// Gray map for display mapping (also sets the default grid range).
    #[arg(long)]
    graymap: Option<PathBuf>,
    #[arg(long)]
    lambda_min: Option<f64>,
    #[arg(long)]
    lambda_max: Option<f64>,
    /// Grid size (log-spaced points).
    #[arg(long)]
    grid: Option<usize>,
    /// Count likelihood: poisson | negative-binomial.
    #[arg(long)]
    likelihood: Option<String>,
    /// Tie break for equal likelihoods: smallest-lambda | highest-prior.
    #[arg(long)]
    tie_break: Option<String>,
    #[arg(long)]
    max_refine_iters: Option<usize>,
    /// Reference gray image; prints psnr_db/ssim against it.
    #[arg(long)]
    reference: Option<PathBuf>,
}

pub fn run_reconstruct(args: ReconstructArgs, cfg: &FileConfig) -> Result<()> {
    let params_path = resolve_path(&args.params, cfg, "params")?;
    let out = resolve_path(&args.out, cfg, "out")?;
    let window: f64 = resolve_required(args.window, cfg, "window")?;
    let t_start: f64 = resolve(args.t_start, cfg, "t_start", 0.0)?;
    let bin: bool = resolve(args.bin2x2, cfg, "bin2x2", true)?;
    let beta: f64 = resolve(args.beta, cfg, "beta", 0.0)?;
    let max_refine_iters: usize = resolve(args.max_refine_iters, cfg, "max_refine_iters", 200)?;
    let polarity = parse_polarity(&resolve(args.polarity, cfg, "polarity", "both".into())?)?;
    let likelihood = parse_likelihood(&resolve(args.likelihood, cfg, "likelihood", "poisson".into())?)?;
    let tie_break = parse_tie_break(&resolve(args.tie_break, cfg, "tie_break", "smallest-lambda".into())?)?;

    let params = noise_model::read_params_file(&params_path)?;
    let graymap_path = resolve_path_opt(&args.graymap, cfg, "graymap");
    let map = graymap_path.as_deref().map(calibration::read_gray_map_file).transpose()?;

    // grid range: explicit flags beat the gray-map range beats a wide default
    let (gm_lo, gm_hi) = map
        .as_ref()
        .map(|m| m.lambda_range())
        .unwrap_or((params.lambda_min, 1e5));
    let lo: f64 = resolve(args.lambda_min, cfg, "lambda_min", gm_lo.max(params.lambda_min))?;
    let hi: f64 = resolve(args.lambda_max, cfg, "lambda_max", gm_hi)?;
    let grid_n: usize = resolve(args.grid, cfg, "grid", 512)?;

    let events_path = resolve_path_opt(&args.events, cfg, "events");
    let mask_path = resolve_path_opt(&args.mask, cfg, "mask");
    let mask = mask_path
        .as_deref()
        .map(|p| -> Result<MotionMask> {
            let (img, _) = pgm::read_pgm_file(p)?;
            MotionMask::from_image(&img, t_start, window)
        })
        .transpose()?;

    let counts: CountImage = if let Some(events_path) = &events_path {
        let stream = stream_io::read_events_file(events_path)?;
        match &mask {
            Some(m) => masked_aggregate(&stream, m, t_start, window)?,
            None => evnoise_core::reconstruction::aggregate(&stream, t_start, window)?,
        }
    } else {
        let pos_path = resolve_path(&args.pos, cfg, "pos")?;
        let neg_path = resolve_path(&args.neg, cfg, "neg")?;
        let (pos_img, _) = pgm::read_pgm_file(&pos_path)?;
        let (neg_img, _) = pgm::read_pgm_file(&neg_path)?;
        if pos_img.width() != neg_img.width() || pos_img.height() != neg_img.height() {
            return Err(Error::validation("count graymaps differ in size"));
        }
        let to_u32 = |img: &IntensityImage| img.values().iter().map(|&v| v as u32).collect();
        let mut c = CountImage::new(
            pos_img.width(),
            pos_img.height(),
            window,
            to_u32(&pos_img),
            to_u32(&neg_img),
        )?;
        if let Some(m) = &mask {
            c.set_invalid(m.flags())?;
        }
        c
    };

    let config = ReconstructionConfig {
        window,
        lambda_grid: log_space(lo, hi, grid_n)?,
        bin2x2: bin,
        smoothness_weight: beta,
        max_refine_iters,
        tie_break,
        polarity,
        likelihood,
    };
    config.validate()?;
    let result = reconstruct(&counts, &params, &config)?;

    let gray = match &map {
        Some(m) => evnoise_core::reconstruction::to_gray(&result.lambda, m)?,
        None => auto_display_map(&result.lambda, lo, hi)?,
    };
    let out_gray = with_suffix(&out, "_gray.pgm");
    let out_ambiguity = with_suffix(&out, "_ambiguity.pgm");
    let max_gray = map.as_ref().map(|m| m.max_gray() as u16).unwrap_or(255);
    pgm::write_pgm_file(&out_gray, &gray, max_gray)?;
    pgm::write_pgm_file(&out_ambiguity, &result.ambiguity_mask(), 255)?;

    if let Some(ref_path) = resolve_path_opt(&args.reference, cfg, "reference") {
        let (reference, ref_max) = pgm::read_pgm_file(&ref_path)?;
        let peak = ref_max as f64;
        let p = metrics::psnr(&reference, &gray, peak)?;
        println!("psnr_db={}", if p.is_infinite() { "inf".to_string() } else { format!("{p:.4}") });
        if reference.width() >= 11 && reference.height() >= 11 {
            println!("ssim={:.6}", metrics::ssim(&reference, &gray, peak)?);
        }
    }

    let mut echo = EffectiveConfig::new("reconstruct");
    echo.set_path("params", &params_path);
    echo.set_opt_path("events", &events_path);
    echo.set_opt_path("mask", &mask_path);
    echo.set_opt_path("graymap", &graymap_path);
    echo.set("window", window);
    echo.set("t_start", t_start);
    echo.set("bin2x2", bin);
    echo.set("beta", beta);
    echo.set("polarity", polarity_name(polarity));
    echo.set("likelihood", likelihood_name(likelihood));
    echo.set("tie_break", tie_break_name(tie_break));
    echo.set("lambda_min", lo);
    echo.set("lambda_max", hi);
    echo.set("grid", grid_n);
    echo.set("max_refine_iters", max_refine_iters);
    echo.set_path("out_gray", &out_gray);
    echo.set_path("out_ambiguity", &out_ambiguity);
    echo.write_next_to(&out)?;
    Ok(())
}

fn parse_polarity(s: &str) -> Result<PolarityMode> {
    match s {
        "both" => Ok(PolarityMode::Both),
        "pos" => Ok(PolarityMode::PosOnly),
        "neg" => Ok(PolarityMode::NegOnly),
        other => Err(Error::validation(format!("polarity must be both|pos|neg, got `{other}`"))),
    }
}

fn polarity_name(p: PolarityMode) -> &'static str {
    match p {
        PolarityMode::Both => "both",
        PolarityMode::PosOnly => "pos",
        PolarityMode::NegOnly => "neg",
    }
}

fn parse_likelihood(s: &str) -> Result<LikelihoodKind> {
    match s {
        "poisson" => Ok(LikelihoodKind::Poisson),
        "negative-binomial" => Ok(LikelihoodKind::NegativeBinomial),
        other => Err(Error::validation(format!(
            "likelihood must be poisson|negative-binomial, got `{other}`"
        ))),
    }
}

fn likelihood_name(l: LikelihoodKind) -> &'static str {
    match l {
        LikelihoodKind::Poisson => "poisson",
        LikelihoodKind::NegativeBinomial => "negative-binomial",
    }
}

fn parse_tie_break(s: &str) -> Result<TieBreak> {
    match s {
        "smallest-lambda" => Ok(TieBreak::SmallestLambda),
        "highest-prior" => Ok(TieBreak::HighestPrior),
        other => Err(Error::validation(format!(
            "tie-break must be smallest-lambda|highest-prior, got `{other}`"
        ))),
    }
}

fn tie_break_name(t: TieBreak) -> &'static str {
    match t {
        TieBreak::SmallestLambda => "smallest-lambda",
        TieBreak::HighestPrior => "highest-prior",
    }
}

// ------------------------------------------------------------------- split

#[derive(Args)]
pub struct SplitArgs {
    #[arg(long)]
    events: Option<PathBuf>,
    #[arg(long)]
    signal_out: Option<PathBuf>,
    #[arg(long)]
    noise_out: Option<PathBuf>,
    /// Support window in microseconds.
    #[arg(long)]
    dt_us: Option<u64>,
    /// Chebyshev neighborhood radius in pixels.
    #[arg(long)]
    radius: Option<u32>,
}

pub fn run_split(args: SplitArgs, cfg: &FileConfig) -> Result<()> {
    let events_path = resolve_path(&args.events, cfg, "events")?;
    let signal_out = resolve_path(&args.signal_out, cfg, "signal_out")?;
    let noise_out = resolve_path(&args.noise_out, cfg, "noise_out")?;
    let dt_us: u64 = resolve(args.dt_us, cfg, "dt_us", 2000)?;
    let radius: u32 = resolve(args.radius, cfg, "radius", 1)?;

    let bytes = std::fs::read(&events_path)?;
    let format = stream_io::detect_format(&bytes);
    let stream = stream_io::read_events(&bytes, format)?;
    let (signal, noise) = baf_split(&stream, &BafConfig { dt_us, radius })?;
    stream_io::write_events_file(&signal_out, &signal, format)?;
    stream_io::write_events_file(&noise_out, &noise, format)?;
    log::info!("split {} events into {} signal / {} noise", stream.len(), signal.len(), noise.len());

    let mut echo = EffectiveConfig::new("split");
    echo.set_path("events", &events_path);
    echo.set_path("signal_out", &signal_out);
    echo.set_path("noise_out", &noise_out);
    echo.set("dt_us", dt_us);
    echo.set("radius", radius);
    echo.write_next_to(&signal_out)?;
    Ok(())
}

// -------------------------------------------------------------------- mask

#[derive(Args)]
pub struct MaskArgs {
    /// Signal-event file.
    #[arg(long)]
    events: Option<PathBuf>,
    /// Output mask graymap (0 = static, 255 = motion).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    t_start: Option<f64>,
    #[arg(long)]
    window: Option<f64>,
    /// Signal-event count required to flag a pixel.
    #[arg(long)]
    count_threshold: Option<u32>,
    /// Chebyshev dilation radius applied to the thresholded mask.
    #[arg(long)]
    dilation: Option<u32>,
}

pub fn run_mask(args: MaskArgs, cfg: &FileConfig) -> Result<()> {
    let events_path = resolve_path(&args.events, cfg, "events")?;
    let out = resolve_path(&args.out, cfg, "out")?;
    let t_start: f64 = resolve(args.t_start, cfg, "t_start", 0.0)?;
    let window: f64 = resolve_required(args.window, cfg, "window")?;
    let count_threshold: u32 = resolve(args.count_threshold, cfg, "count_threshold", 3)?;
    let dilation: u32 = resolve(args.dilation, cfg, "dilation", 2)?;

    let stream = stream_io::read_events_file(&events_path)?;
    let mask = motion_mask(&stream, t_start, window, count_threshold, dilation)?;
    pgm::write_pgm_file(&out, &mask.to_image(), 255)?;
    log::info!("mask flags {} of {} pixels", mask.count_motion(), mask.width() * mask.height());

    let mut echo = EffectiveConfig::new("mask");
    echo.set_path("events", &events_path);
    echo.set_path("out", &out);
    echo.set("t_start", t_start);
    echo.set("window", window);
    echo.set("count_threshold", count_threshold);
    echo.set("dilation", dilation);
    echo.write_next_to(&out)?;
    Ok(())
}

// ------------------------------------------------------------------ stitch

#[derive(Args)]
pub struct StitchArgs {
    /// Static background reconstruction.
    #[arg(long = "static")]
    static_img: Option<PathBuf>,
    /// Externally produced dynamic-foreground frame.
    #[arg(long)]
    dynamic: Option<PathBuf>,
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Blend 1 pixel across the mask boundary.
    #[arg(long)]
    feather: bool,
}

pub fn run_stitch(args: StitchArgs, cfg: &FileConfig) -> Result<()> {
    let static_path = resolve_path(&args.static_img, cfg, "static")?;
    let dynamic_path = resolve_path(&args.dynamic, cfg, "dynamic")?;
    let mask_path = resolve_path(&args.mask, cfg, "mask")?;
    let out = resolve_path(&args.out, cfg, "out")?;
    let feather = args.feather || cfg.parse::<bool>("feather")?.unwrap_or(false);

    let (static_img, static_max) = pgm::read_pgm_file(&static_path)?;
    let (dynamic_img, _) = pgm::read_pgm_file(&dynamic_path)?;
    let (mask_img, _) = pgm::read_pgm_file(&mask_path)?;
    let mask = MotionMask::from_image(&mask_img, 0.0, 1.0)?;
    let composite = stitch(&static_img, &dynamic_img, &mask, feather)?;
    pgm::write_pgm_file(&out, &composite, static_max)?;

    let mut echo = EffectiveConfig::new("stitch");
    echo.set_path("static", &static_path);
    echo.set_path("dynamic", &dynamic_path);
    echo.set_path("mask", &mask_path);
    echo.set_path("out", &out);
    echo.set("feather", feather);
    echo.write_next_to(&out)?;
    Ok(())
}

// -------------------------------------------------------------------- eval

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    a: Option<PathBuf>,
    #[arg(long)]
    b: Option<PathBuf>,
}

pub fn run_eval(args: EvalArgs, cfg: &FileConfig) -> Result<()> {
    let a_path = resolve_path(&args.a, cfg, "a")?;
    let b_path = resolve_path(&args.b, cfg, "b")?;
    let (a, a_max) = pgm::read_pgm_file(&a_path)?;
    let (b, b_max) = pgm::read_pgm_file(&b_path)?;
    if a_max != b_max {
        return Err(Error::validation(format!(
            "graymaps have different sample ranges ({a_max} vs {b_max})"
        )));
    }
    let peak = a_max as f64;
    let p = metrics::psnr(&a, &b, peak)?;
    println!("psnr_db={}", if p.is_infinite() { "inf".to_string() } else { format!("{p:.4}") });
    println!("ssim={:.6}", metrics::ssim(&a, &b, peak)?);
    Ok(())
}

// ------------------------------------------------------------------- curve

#[derive(Args)]
pub struct CurveArgs {
    #[arg(long)]
    params: Option<PathBuf>,
    /// Output CSV of (lambda, pos events/s, neg events/s).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    lambda_min: Option<f64>,
    #[arg(long)]
    lambda_max: Option<f64>,
    #[arg(long)]
    points: Option<usize>,
}

pub fn run_curve(args: CurveArgs, cfg: &FileConfig) -> Result<()> {
    let params_path = resolve_path(&args.params, cfg, "params")?;
    let out = resolve_path(&args.out, cfg, "out")?;
    let params = noise_model::read_params_file(&params_path)?;
    let lo: f64 = resolve(args.lambda_min, cfg, "lambda_min", params.lambda_min)?;
    let hi: f64 = resolve(args.lambda_max, cfg, "lambda_max", 1e5)?;
    let points: usize = resolve(args.points, cfg, "points", 256)?;

    let grid = log_space(lo, hi, points)?;
    let pos = rate_curve(&params, &grid, Polarity::Pos)?;
    let neg = rate_curve(&params, &grid, Polarity::Neg)?;
    // rates are per second, so the curve doubles as a window=1 calibration input
    let mut csv = String::from("# evnoise-curve v1 lambda,pos_rate,neg_rate\n# window=1\n");
    for (&(l, pr), &(_, nr)) in pos.iter().zip(&neg) {
        csv.push_str(&format!("{l},{pr},{nr}\n"));
    }
    std::fs::write(&out, csv)?;

    let mut echo = EffectiveConfig::new("curve");
    echo.set_path("params", &params_path);
    echo.set_path("out", &out);
    echo.set("lambda_min", lo);
    echo.set("lambda_max", hi);
    echo.set("points", points);
    echo.write_next_to(&out)?;
    Ok(())
}

// ----------------------------------------------------------------- dataset

#[derive(Args)]
pub struct DatasetArgs {
    /// Directory of scene graymaps (*.pgm), mapped via --graymap.
    #[arg(long, conflicts_with = "replay")]
    scenes: Option<PathBuf>,
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    graymap: Option<PathBuf>,
    #[arg(long)]
    window: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (receives scene/pos/neg graymaps and manifest.txt).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    eps_sigma: Option<f64>,
    #[arg(long)]
    var_seed: Option<u64>,
    /// Regenerate count graymaps byte-identically from an existing manifest.
    #[arg(long)]
    replay: Option<PathBuf>,
}

pub fn run_dataset(args: DatasetArgs, cfg: &FileConfig) -> Result<()> {
    let params_path = resolve_path(&args.params, cfg, "params")?;
    let params = noise_model::read_params_file(&params_path)?;
    let eps_sigma: f64 = resolve(args.eps_sigma, cfg, "eps_sigma", 0.0)?;
    let var_seed: u64 = resolve(args.var_seed, cfg, "var_seed", 0)?;
    let variability = PixelVariability { eps_sigma, seed: var_seed };

    if let Some(manifest) = resolve_path_opt(&args.replay, cfg, "replay") {
        replay_dataset(&manifest, &params, &variability)?;
        log::info!("replayed dataset from {}", manifest.display());
        return Ok(());
    }

    let scenes_dir = resolve_path(&args.scenes, cfg, "scenes")?;
    let graymap_path = resolve_path(&args.graymap, cfg, "graymap")?;
    let out = resolve_path(&args.out, cfg, "out")?;
    let window: f64 = resolve_required(args.window, cfg, "window")?;
    let seed: u64 = resolve(args.seed, cfg, "seed", 0)?;
    let map = calibration::read_gray_map_file(&graymap_path)?;

    let mut scene_files: Vec<PathBuf> = std::fs::read_dir(&scenes_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "pgm"))
        .collect();
    scene_files.sort();
    if scene_files.is_empty() {
        return Err(Error::validation(format!(
            "no .pgm scenes found in {}",
            scenes_dir.display()
        )));
    }
    let mut scenes = Vec::with_capacity(scene_files.len());
    for path in &scene_files {
        let (gray, _) = pgm::read_pgm_file(path)?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scene".into());
        scenes.push((name, scene_to_lambda(&gray, &map)?));
    }
    let manifest = generate_dataset(&scenes, &params, window, &variability, seed, &out)?;
    log::info!("wrote {} samples and {}", scenes.len(), manifest.display());

    let mut echo = EffectiveConfig::new("dataset");
    echo.set_path("scenes", &scenes_dir);
    echo.set_path("params", &params_path);
    echo.set_path("graymap", &graymap_path);
    echo.set("window", window);
    echo.set("seed", seed);
    echo.set("eps_sigma", eps_sigma);
    echo.set("var_seed", var_seed);
    echo.set_path("manifest", &manifest);
    echo.write_next_to(&manifest)?;
    Ok(())
}

// ----------------------------------------------------------------- graymap

#[derive(Args)]
pub struct GraymapArgs {
    /// CSV of `gray,lux` light-meter measurements.
    #[arg(long)]
    measurements: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Proportionality constant from lux to mean photon count.
    #[arg(long)]
    lux_to_lambda: Option<f64>,
}

pub fn run_graymap(args: GraymapArgs, cfg: &FileConfig) -> Result<()> {
    let meas_path = resolve_path(&args.measurements, cfg, "measurements")?;
    let out = resolve_path(&args.out, cfg, "out")?;
    let scale: f64 = resolve(args.lux_to_lambda, cfg, "lux_to_lambda", 1.0)?;

    let text = std::fs::read_to_string(&meas_path)?;
    let mut measurements = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (g, lux) = line.split_once(',').ok_or_else(|| {
            Error::validation(format!("measurements line {}: expected gray,lux", lineno + 1))
        })?;
        let g = g.trim().parse::<u16>().map_err(|_| {
            Error::validation(format!("measurements line {}: bad gray level", lineno + 1))
        })?;
        let lux = lux.trim().parse::<f64>().map_err(|_| {
            Error::validation(format!("measurements line {}: bad lux value", lineno + 1))
        })?;
        measurements.push((g, lux));
    }
    let map = fit_gray_map(&measurements, scale)?;
    calibration::write_gray_map_file(&out, &map)?;

    let mut echo = EffectiveConfig::new("graymap");
    echo.set_path("measurements", &meas_path);
    echo.set_path("out", &out);
    echo.set("lux_to_lambda", scale);
    echo.write_next_to(&out)?;
    Ok(())
}
