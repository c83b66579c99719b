//! Local search and seeded multi-start drivers.
//!
//! Everything minimizes; maximizers negate. Multi-start runs are farmed out
//! with rayon, each start drawing from its own ChaCha stream, so results do
//! not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LocalMethod {
    /// Adaptive Nelder-Mead with simplex rebuilds at convergence.
    NelderMead,
    /// BFGS on forward-difference gradients.
    QuasiNewton,
    /// Quasi-Newton followed by a Nelder-Mead polish.
    Hybrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalOptions {
    pub method: LocalMethod,
    pub max_evals: usize,
    /// Absolute tolerance on objective progress.
    pub f_tol: f64,
    /// Tolerance on step/simplex size.
    pub x_tol: f64,
    pub initial_step: f64,
}

impl Default for LocalOptions {
    fn default() -> Self {
        Self { method: LocalMethod::NelderMead, max_evals: 4000, f_tol: 1e-10, x_tol: 1e-8, initial_step: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    pub converged: bool,
}

pub fn minimize<F: Fn(&[f64]) -> f64>(f: &F, x0: Vec<f64>, opts: &LocalOptions) -> LocalResult {
    match opts.method {
        LocalMethod::NelderMead => nelder_mead(f, x0, opts),
        LocalMethod::QuasiNewton => quasi_newton(f, x0, opts),
        LocalMethod::Hybrid => {
            let half = LocalOptions { max_evals: opts.max_evals * 2 / 3, ..*opts };
            let first = quasi_newton(f, x0, &half);
            let rest = LocalOptions {
                max_evals: opts.max_evals.saturating_sub(first.evals).max(1),
                initial_step: opts.initial_step * 0.1,
                ..*opts
            };
            let second = nelder_mead(f, first.x.clone(), &rest);
            let evals = first.evals + second.evals;
            if second.value <= first.value {
                LocalResult { evals, ..second }
            } else {
                LocalResult { evals, ..first }
            }
        }
    }
}

struct Counted<'a, F> {
    f: &'a F,
    evals: usize,
}

impl<F: Fn(&[f64]) -> f64> Counted<'_, F> {
    fn call(&mut self, x: &[f64]) -> f64 {
        self.evals += 1;
        let v = (self.f)(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }
}

/// Nelder-Mead with the dimension-adaptive coefficients of Gao and Han.
/// When the simplex collapses it is rebuilt around the best vertex; the run
/// stops once a rebuild no longer improves the value.
pub fn nelder_mead<F: Fn(&[f64]) -> f64>(f: &F, x0: Vec<f64>, opts: &LocalOptions) -> LocalResult {
    let n = x0.len();
    let mut fc = Counted { f, evals: 0 };
    if n == 0 {
        let v = fc.call(&x0);
        return LocalResult { x: x0, value: v, evals: 1, converged: true };
    }
    let nf = n as f64;
    let (alpha, beta, gamma, delta) = (1.0, 1.0 + 2.0 / nf, 0.75 - 0.5 / nf, 1.0 - 1.0 / nf);

    let mut best_x = x0;
    let mut best_v = fc.call(&best_x);
    let mut step = opts.initial_step;
    let mut converged = false;

    'rebuild: loop {
        let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
        simplex.push(best_x.clone());
        for i in 0..n {
            let mut v = best_x.clone();
            v[i] += step;
            simplex.push(v);
        }
        let mut values: Vec<f64> = simplex.iter().map(|v| fc.call(v)).collect();
        let start_v = best_v;

        loop {
            let mut order: Vec<usize> = (0..=n).collect();
            order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
            simplex = order.iter().map(|&i| simplex[i].clone()).collect();
            values = order.iter().map(|&i| values[i]).collect();

            let spread = values[n] - values[0];
            let size = simplex[1..]
                .iter()
                .map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
                .fold(0.0, f64::max);
            if (spread <= opts.f_tol && size <= opts.x_tol.max(1e-12) * 1e3) || size <= opts.x_tol {
                break;
            }
            if fc.evals >= opts.max_evals {
                if values[0] < best_v {
                    best_v = values[0];
                    best_x = simplex[0].clone();
                }
                break 'rebuild;
            }

            let mut centroid = vec![0.0; n];
            for v in &simplex[..n] {
                for (c, x) in centroid.iter_mut().zip(v) {
                    *c += x / nf;
                }
            }
            let along = |t: f64| -> Vec<f64> {
                centroid.iter().zip(&simplex[n]).map(|(c, w)| c + t * (c - w)).collect()
            };
            let xr = along(alpha);
            let fr = fc.call(&xr);
            if fr < values[0] {
                let xe = along(beta);
                let fe = fc.call(&xe);
                if fe < fr {
                    simplex[n] = xe;
                    values[n] = fe;
                } else {
                    simplex[n] = xr;
                    values[n] = fr;
                }
            } else if fr < values[n - 1] {
                simplex[n] = xr;
                values[n] = fr;
            } else {
                let outside = fr < values[n];
                let xc = if outside { along(gamma) } else { along(-gamma) };
                let fcv = fc.call(&xc);
                if fcv < if outside { fr } else { values[n] } {
                    simplex[n] = xc;
                    values[n] = fcv;
                } else {
                    let best = simplex[0].clone();
                    for i in 1..=n {
                        simplex[i] = best.iter().zip(&simplex[i]).map(|(b, x)| b + delta * (x - b)).collect();
                        values[i] = fc.call(&simplex[i]);
                    }
                }
            }
        }

        let improved = values[0] < start_v - opts.f_tol.max(1e-14);
        if values[0] < best_v {
            best_v = values[0];
            best_x = simplex[0].clone();
        }
        if !improved {
            converged = true;
            break;
        }
        step = (step * 0.5).max(opts.x_tol * 10.0);
        if fc.evals >= opts.max_evals {
            break;
        }
    }
    LocalResult { x: best_x, value: best_v, evals: fc.evals, converged }
}

fn fd_gradient<F: Fn(&[f64]) -> f64>(fc: &mut Counted<'_, F>, x: &[f64], fx: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let h = 1e-7 * x[i].abs().max(1.0);
        xp[i] = x[i] + h;
        let fp = fc.call(&xp);
        g[i] = (fp - fx) / h;
        xp[i] = x[i];
    }
    g
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// BFGS with an Armijo backtracking line search on forward-difference
/// gradients.
pub fn quasi_newton<F: Fn(&[f64]) -> f64>(f: &F, x0: Vec<f64>, opts: &LocalOptions) -> LocalResult {
    let n = x0.len();
    let mut fc = Counted { f, evals: 0 };
    let mut x = x0;
    let mut fx = fc.call(&x);
    if n == 0 {
        return LocalResult { x, value: fx, evals: 1, converged: true };
    }
    let mut g = fd_gradient(&mut fc, &x, fx);
    let mut h = vec![0.0; n * n];
    let reset = |h: &mut Vec<f64>, scale: f64| {
        h.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            h[i * n + i] = scale;
        }
    };
    let gnorm = dot(&g, &g).sqrt();
    reset(&mut h, opts.initial_step / gnorm.max(1e-12));
    let mut converged = false;
    let mut stalls = 0;

    while fc.evals < opts.max_evals {
        let gn = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if gn < 1e-9 {
            converged = true;
            break;
        }
        let mut d: Vec<f64> = (0..n).map(|i| -(0..n).map(|j| h[i * n + j] * g[j]).sum::<f64>()).collect();
        let mut slope = dot(&g, &d);
        if slope >= 0.0 {
            reset(&mut h, opts.initial_step / dot(&g, &g).sqrt().max(1e-12));
            d = g.iter().map(|v| -v * h[0]).collect();
            slope = dot(&g, &d);
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let xt: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            let ft = fc.call(&xt);
            if ft <= fx + 1e-4 * t * slope {
                accepted = Some((xt, ft));
                break;
            }
            t *= 0.5;
            if fc.evals >= opts.max_evals {
                break;
            }
        }
        let Some((xn, fnew)) = accepted else {
            // Line search failed: the finite-difference direction is
            // unreliable here.
            converged = true;
            break;
        };
        let gnew = fd_gradient(&mut fc, &xn, fnew);
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gnew.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h[i * n + j] * y[j]).sum()).collect();
            let yhy = dot(&y, &hy);
            let rho = 1.0 / sy;
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] += rho * ((1.0 + rho * yhy) * s[i] * s[j] - hy[i] * s[j] - s[i] * hy[j]);
                }
            }
        }
        let progress = fx - fnew;
        x = xn;
        fx = fnew;
        g = gnew;
        let step = s.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if progress < opts.f_tol || step < opts.x_tol {
            stalls += 1;
            if stalls >= 3 {
                converged = true;
                break;
            }
        } else {
            stalls = 0;
        }
    }
    LocalResult { x, value: fx, evals: fc.evals, converged }
}

/// Limited-memory BFGS (history 10) with Armijo backtracking, for
/// objectives that return their own gradient.
pub fn lbfgs<F: Fn(&[f64]) -> (f64, Vec<f64>)>(fg: &F, x0: Vec<f64>, opts: &LocalOptions) -> LocalResult {
    const HISTORY: usize = 10;
    let mut evals = 1;
    let mut x = x0;
    let (mut fx, mut g) = fg(&x);
    let mut hist: std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)> = std::collections::VecDeque::new();
    let mut converged = false;
    let mut stalls = 0;
    while evals < opts.max_evals {
        let gn = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if gn < 1e-10 {
            converged = true;
            break;
        }
        // two-loop recursion
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        let gamma = match hist.back() {
            Some((s, y, _)) => dot(s, y) / dot(y, y),
            None => opts.initial_step / dot(&g, &g).sqrt().max(1e-12),
        };
        q.iter_mut().for_each(|v| *v *= gamma);
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut d: Vec<f64> = q.into_iter().map(|v| -v).collect();
        let mut slope = dot(&g, &d);
        if slope >= 0.0 || !slope.is_finite() {
            hist.clear();
            let scale = opts.initial_step / dot(&g, &g).sqrt().max(1e-12);
            d = g.iter().map(|v| -v * scale).collect();
            slope = dot(&g, &d);
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            let xt: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            let (ft, gt) = fg(&xt);
            evals += 1;
            if ft.is_finite() && ft <= fx + 1e-4 * t * slope {
                accepted = Some((xt, ft, gt));
                break;
            }
            t *= 0.5;
            if evals >= opts.max_evals {
                break;
            }
        }
        let Some((xn, fnew, gnew)) = accepted else {
            if hist.is_empty() {
                converged = true;
                break;
            }
            hist.clear();
            continue;
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gnew.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if hist.len() == HISTORY {
                hist.pop_front();
            }
            hist.push_back((s.clone(), y, 1.0 / sy));
        }
        let progress = fx - fnew;
        x = xn;
        fx = fnew;
        g = gnew;
        let step = s.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if progress < opts.f_tol || step < opts.x_tol {
            stalls += 1;
            if stalls >= 3 {
                converged = true;
                break;
            }
        } else {
            stalls = 0;
        }
    }
    LocalResult { x, value: fx, evals, converged }
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiStartResult {
    pub best: LocalResult,
    pub best_start: usize,
    /// Final value of every start, in start order.
    pub values: Vec<f64>,
    pub converged_starts: usize,
    pub total_evals: usize,
}

/// Runs `starts` local searches from `init(start_index, rng)` and keeps
/// the best (lowest index on ties).
pub fn multistart<F, I>(f: &F, init: I, starts: usize, seed: u64, opts: &LocalOptions) -> MultiStartResult
where
    F: Fn(&[f64]) -> f64 + Sync,
    I: Fn(usize, &mut ChaCha8Rng) -> Vec<f64> + Sync,
{
    multistart_with(|x0| minimize(f, x0, opts), init, starts, seed)
}

/// [`multistart`] with a caller-supplied local solver.
pub fn multistart_with<L, I>(local: L, init: I, starts: usize, seed: u64) -> MultiStartResult
where
    L: Fn(Vec<f64>) -> LocalResult + Sync,
    I: Fn(usize, &mut ChaCha8Rng) -> Vec<f64> + Sync,
{
    let results: Vec<LocalResult> = (0..starts.max(1))
        .into_par_iter()
        .map(|s| {
            let mut rng = stream_rng(seed, s as u64);
            local(init(s, &mut rng))
        })
        .collect();
    collect_best(results)
}

fn collect_best(results: Vec<LocalResult>) -> MultiStartResult {
    let mut best_start = 0;
    for (i, r) in results.iter().enumerate() {
        if r.value < results[best_start].value {
            best_start = i;
        }
    }
    MultiStartResult {
        best: results[best_start].clone(),
        best_start,
        values: results.iter().map(|r| r.value).collect(),
        converged_starts: results.iter().filter(|r| r.converged).count(),
        total_evals: results.iter().map(|r| r.evals).sum(),
    }
}

/// Softmax of unconstrained logits onto the probability simplex.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Logits reproducing `p` under [`softmax`]; zeros map to a large negative
/// logit.
pub fn logits_from_probs(p: &[f64]) -> Vec<f64> {
    p.iter().map(|&v| if v > 1e-300 { v.ln() } else { -700.0 }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn rosenbrock(x: &[f64]) -> f64 {
        x.windows(2).map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (1.0 - w[0]).powi(2)).sum()
    }

    #[test]
    fn nelder_mead_finds_rosenbrock_minimum() {
        let opts = LocalOptions { max_evals: 20_000, f_tol: 1e-14, x_tol: 1e-10, ..Default::default() };
        let r = nelder_mead(&rosenbrock, vec![-1.2, 1.0], &opts);
        assert!(r.value < 1e-8, "{r:?}");
    }

    #[test]
    fn quasi_newton_finds_quadratic_minimum() {
        let f = |x: &[f64]| x.iter().enumerate().map(|(i, v)| (i as f64 + 1.0) * (v - 0.3).powi(2)).sum::<f64>();
        let opts = LocalOptions { method: LocalMethod::QuasiNewton, max_evals: 5000, ..Default::default() };
        let r = quasi_newton(&f, vec![1.0; 10], &opts);
        assert!(r.value < 1e-9, "{r:?}");
    }

    #[test]
    fn lbfgs_minimizes_rosenbrock_with_gradient() {
        let fg = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            let f = 100.0 * (b - a * a).powi(2) + (1.0 - a).powi(2);
            let g = vec![-400.0 * a * (b - a * a) - 2.0 * (1.0 - a), 200.0 * (b - a * a)];
            (f, g)
        };
        let opts = LocalOptions { max_evals: 5000, f_tol: 1e-14, x_tol: 1e-12, ..Default::default() };
        let r = lbfgs(&fg, vec![-1.2, 1.0], &opts);
        assert!(r.value < 1e-10, "{r:?}");
    }

    #[test]
    fn nelder_mead_handles_kinks() {
        let f = |x: &[f64]| -(x[0].min(1.0).min(1.0 - x[1]) + 0.5 * x[1].min(0.4));
        let opts = LocalOptions { max_evals: 5000, ..Default::default() };
        let r = nelder_mead(&f, vec![0.0, 0.0], &opts);
        assert!((r.value + 1.0).abs() < 1e-6, "{r:?}");
    }

    #[test]
    fn multistart_is_deterministic_and_picks_global_basin() {
        let f = |x: &[f64]| (x[0] * x[0] - 1.0).powi(2) + 0.1 * x[0];
        let init = |_: usize, rng: &mut ChaCha8Rng| vec![rng.random_range(-2.0..2.0)];
        let opts = LocalOptions::default();
        let a = multistart(&f, init, 8, 42, &opts);
        let b = multistart(&f, init, 8, 42, &opts);
        assert_eq!(a, b);
        assert!(a.best.x[0] < 0.0);
    }

    #[test]
    fn softmax_round_trip() {
        let p = [0.2, 0.5, 0.3];
        let q = softmax(&logits_from_probs(&p));
        for (a, b) in p.iter().zip(&q) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
