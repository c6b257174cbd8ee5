//! Independent oracles for the closed-form trigger probability: direct
//! Gaussian quadrature and true-Poisson Monte-Carlo, plus a brute-force
//! likelihood scan backing the inverse index.

use evnoise_core::event::Polarity;
use evnoise_core::math::{log_space, poisson_log_pmf};
use evnoise_core::noise_model::{expected_count, p_event, CameraParams, InverseIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

/// Standard normal upper-tail probability by composite Simpson
/// integration of the density; no error function involved.
pub fn gaussian_tail_quadrature(z0: f64) -> f64 {
    if z0 > 40.0 {
        return 0.0;
    }
    let span = 8.0;
    let n = 16_000usize; // even
    let h = span / n as f64;
    let phi = |t: f64| (-0.5 * t * t).exp();
    let mut acc = phi(z0) + phi(z0 + span);
    for i in 1..n {
        let t = z0 + h * i as f64;
        acc += phi(t) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0 / (2.0 * std::f64::consts::PI).sqrt()
}

/// Trigger probability via the quadrature oracle: integrates the tail of
/// the Gaussian model Pr((n + b) - e^eps (n0 + b) > 0) directly.
pub fn p_event_quadrature(lambda: f64, eps: f64, b_pr: f64) -> f64 {
    let ee = eps.exp();
    let mean = (lambda + b_pr) * (1.0 - ee);
    let sd = (lambda * (1.0 + ee * ee)).sqrt();
    gaussian_tail_quadrature(-mean / sd)
}

#[test]
fn closed_form_matches_quadrature_oracle() {
    // randomized grid over the supported ranges
    let mut rng = ChaCha8Rng::seed_from_u64(0xE43);
    let u = |rng: &mut ChaCha8Rng| rand::Rng::random::<f64>(rng);
    let mut worst = 0.0f64;
    for _ in 0..300 {
        let lambda = 10.0 * (1e4f64).powf(u(&mut rng));
        let eps = 0.05 + 0.95 * u(&mut rng);
        let b_pr = 200.0 * u(&mut rng);
        let closed = p_event(lambda, eps, b_pr).unwrap();
        let oracle = p_event_quadrature(lambda, eps, b_pr);
        worst = worst.max((closed - oracle).abs());
    }
    // the named example from the model contract
    let closed = p_event(50.0, 0.3, 20.0).unwrap();
    let oracle = p_event_quadrature(50.0, 0.3, 20.0);
    worst = worst.max((closed - oracle).abs());
    assert!(worst <= 1e-9, "worst |closed - quadrature| = {worst:e}");
}

#[test]
fn gaussian_approximation_holds_against_true_poisson_pairs() {
    // 1e7 true-Poisson pairs at a photography-regime illuminance
    let (lambda, eps, b_pr): (f64, f64, f64) = (50.0, 0.3, 20.0);
    let n = 10_000_000usize;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let pois = Poisson::new(lambda).unwrap();
    let ee = eps.exp();
    let mut hits = 0u64;
    for _ in 0..n {
        let a: f64 = pois.sample(&mut rng);
        let b: f64 = pois.sample(&mut rng);
        if a + b_pr - ee * (b + b_pr) > 0.0 {
            hits += 1;
        }
    }
    let mc = hits as f64 / n as f64;
    let closed = p_event(lambda, eps, b_pr).unwrap();
    assert!(
        (mc - closed).abs() < 1e-2,
        "Monte-Carlo {mc} vs closed form {closed}"
    );
}

#[test]
fn inverse_index_agrees_with_brute_force_scan_on_sampled_pairs() {
    let params = CameraParams::new(0.04, 0.05, 20.0, 1e4).unwrap();
    let grid = log_space(50.0, 5000.0, 512).unwrap();
    let window = 10.0;
    let index = InverseIndex::build(&params, &grid, window).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);

    for &lambda_true in &[120.0, 500.0, 2500.0] {
        let mu_pos = expected_count(lambda_true, &params, Polarity::Pos, window).unwrap();
        let mu_neg = expected_count(lambda_true, &params, Polarity::Neg, window).unwrap();
        let k_pos: f64 = Poisson::new(mu_pos).unwrap().sample(&mut rng);
        let k_neg: f64 = Poisson::new(mu_neg).unwrap().sample(&mut rng);

        let candidates = index.query(k_pos, k_neg, None);
        assert!(!candidates.is_empty(), "lambda={lambda_true}: no candidates");
        let top = candidates[0].lambda;

        // oracle: exhaustive joint-likelihood scan over the same grid
        let brute = index
            .entries()
            .iter()
            .map(|e| {
                (
                    e.lambda,
                    poisson_log_pmf(k_pos, e.mu_pos) + poisson_log_pmf(k_neg, e.mu_neg),
                )
            })
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(top, brute, "top candidate must match the brute-force argmax");

        // the estimate lands near the truth (counts are large; a few
        // grid steps of statistical slack)
        let step = (grid[1].ln() - grid[0].ln()).abs();
        assert!(
            (top.ln() - lambda_true.ln()).abs() <= 4.0 * step,
            "lambda={lambda_true}: top candidate {top} too far"
        );
    }
}
