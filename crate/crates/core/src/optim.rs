//! Derivative-free simplex minimizer (Nelder-Mead).

/// Options for the simplex search.
#[derive(Debug, Clone, Copy)]
pub struct NelderMeadOptions {
    pub max_iterations: usize,
    /// Converged when the simplex function spread falls below
    /// `f_tol * (1 + |f_best|)`.
    pub f_tol: f64,
    /// Initial simplex step added to each coordinate.
    pub initial_step: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_iterations: 800,
            f_tol: 1e-12,
            initial_step: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub fmin: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Best objective value after each iteration; non-increasing.
    pub trace: Vec<f64>,
}

/// Minimizes `f` starting from `x0`. The classic reflect / expand /
/// contract / shrink scheme with standard coefficients.
pub fn nelder_mead(
    mut f: impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    options: &NelderMeadOptions,
) -> NelderMeadResult {
    const ALPHA: f64 = 1.0; // reflection
    const GAMMA: f64 = 2.0; // expansion
    const RHO: f64 = 0.5; // contraction
    const SIGMA: f64 = 0.5; // shrink

    let n = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), f(x0)));
    for i in 0..n {
        let mut x = x0.to_vec();
        let step = if x[i].abs() > 1e-12 {
            options.initial_step * x[i].abs()
        } else {
            options.initial_step
        };
        x[i] += step;
        let fx = f(&x);
        simplex.push((x, fx));
    }

    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    for iter in 0..options.max_iterations {
        iterations = iter + 1;
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        trace.push(best);
        if (worst - best).abs() <= options.f_tol * (1.0 + best.abs()) {
            converged = true;
            break;
        }

        // centroid of all but the worst vertex
        let mut centroid = vec![0.0; n];
        for (x, _) in simplex.iter().take(n) {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / n as f64;
            }
        }

        let lerp = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> {
            a.iter().zip(b).map(|(p, q)| p + t * (q - p)).collect()
        };

        let reflected = lerp(&centroid, &simplex[n].0, -ALPHA);
        let f_r = f(&reflected);
        if f_r < simplex[0].1 {
            let expanded = lerp(&centroid, &simplex[n].0, -GAMMA);
            let f_e = f(&expanded);
            simplex[n] = if f_e < f_r { (expanded, f_e) } else { (reflected, f_r) };
        } else if f_r < simplex[n - 1].1 {
            simplex[n] = (reflected, f_r);
        } else {
            let contracted = if f_r < simplex[n].1 {
                lerp(&centroid, &reflected, RHO)
            } else {
                lerp(&centroid, &simplex[n].0, RHO)
            };
            let f_c = f(&contracted);
            if f_c < simplex[n].1.min(f_r) {
                simplex[n] = (contracted, f_c);
            } else {
                let best_x = simplex[0].0.clone();
                for v in simplex.iter_mut().skip(1) {
                    v.0 = lerp(&best_x, &v.0, SIGMA);
                    v.1 = f(&v.0);
                }
            }
        }
    }

    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
    trace.push(simplex[0].1);
    // report best-so-far so the trace is monotone even across shrink steps
    let mut running = f64::INFINITY;
    for t in trace.iter_mut() {
        running = running.min(*t);
        *t = running;
    }
    NelderMeadResult {
        x: simplex[0].0.clone(),
        fmin: simplex[0].1,
        iterations,
        converged,
        trace,
    }
}
