//! Small numerical helpers shared across modules.

use crate::error::{Error, Result};

/// Gauss error function. Delegates to the platform-quality libm port
/// (absolute error well below 1e-12 over the full range).
#[inline]
pub fn erf(x: f64) -> f64 {
    libm::erf(x)
}

/// ln(k!) via the log-gamma function.
#[inline]
pub fn ln_factorial(k: f64) -> f64 {
    if k <= 0.0 {
        0.0
    } else {
        libm::lgamma(k + 1.0)
    }
}

/// ln Γ(x).
#[inline]
pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// Poisson log-pmf with a floor on the mean so k > 0 against a vanishing
/// mean scores a large-but-finite penalty instead of -inf * 0 artifacts.
#[inline]
pub fn poisson_log_pmf(k: f64, mean: f64) -> f64 {
    let mu = mean.max(1e-300);
    k * mu.ln() - mu - ln_factorial(k)
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn log_space(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0) || !(hi > lo) {
        return Err(Error::domain(format!(
            "log_space requires 0 < lo < hi, got lo={lo}, hi={hi}"
        )));
    }
    if n < 2 {
        return Err(Error::domain("log_space requires n >= 2"));
    }
    let (llo, lhi) = (lo.ln(), hi.ln());
    let step = (lhi - llo) / (n - 1) as f64;
    Ok((0..n)
        .map(|i| {
            if i == n - 1 {
                hi
            } else {
                (llo + step * i as f64).exp()
            }
        })
        .collect())
}

/// SplitMix64 finalizer; the standard 64-bit avalanche mix.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic per-(pixel, channel) seed derivation. Independent of
/// iteration order, so parallel generation is schedule-invariant.
#[inline]
pub fn derive_seed(base: u64, index: u64, channel: u64) -> u64 {
    mix64(base ^ mix64(index.wrapping_add(0x51_7C_C1_B7_27_22_0A_95)) ^ mix64(channel) << 1)
}

/// Piecewise-linear table y(x) over strictly ascending nodes.
/// Queries clamp to the end values outside the node range.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinear {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl PiecewiseLinear {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.is_empty() || xs.len() != ys.len() {
            return Err(Error::validation(
                "piecewise-linear table needs equal, non-zero node counts",
            ));
        }
        for w in xs.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::validation(format!(
                    "piecewise-linear nodes must be strictly ascending: {} then {}",
                    w[0], w[1]
                )));
            }
        }
        if xs.iter().chain(ys.iter()).any(|v| !v.is_finite()) {
            return Err(Error::validation("piecewise-linear nodes must be finite"));
        }
        Ok(Self { xs, ys })
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.ys[0];
        }
        if x >= self.xs[n - 1] {
            return self.ys[n - 1];
        }
        // partition_point returns the first node > x; x is strictly inside the range here
        let hi = self.xs.partition_point(|&v| v <= x);
        let (x0, x1) = (self.xs[hi - 1], self.xs[hi]);
        let (y0, y1) = (self.ys[hi - 1], self.ys[hi]);
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }
}
