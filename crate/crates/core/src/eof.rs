//! Entanglement of formation.
//!
//! The numeric route minimizes the average marginal entropy over pure-state
//! decompositions. A decomposition of size `m` of a state with weighted
//! eigenvectors `w_1..w_r` is `psi_j = sum_i U_ji w_i` for an `m x r`
//! matrix with orthonormal columns; `U` is the polar factor of an
//! unconstrained complex matrix. Every value returned is attained by an
//! explicit decomposition, so it is an upper bound on the infimum.
//!
//! Two-qubit states default to the closed form through the concurrence.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, c, CMatrix, CVector};
use crate::optimize::{self, LocalMethod, LocalOptions};
use crate::state::DensityOperator;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EofMethod {
    /// Closed form for 2x2 cuts, numeric search otherwise.
    Auto,
    Numeric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EofOptions {
    pub method: EofMethod,
    pub starts: usize,
    /// Decomposition size; `None` means `rank^2`.
    pub max_decomposition: Option<usize>,
    pub local: LocalOptions,
    pub seed: u64,
}

impl Default for EofOptions {
    fn default() -> Self {
        Self {
            method: EofMethod::Auto,
            starts: 32,
            max_decomposition: None,
            local: LocalOptions {
                method: LocalMethod::QuasiNewton,
                max_evals: 40_000,
                f_tol: 1e-12,
                x_tol: 1e-10,
                initial_step: 0.1,
            },
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EofRoute {
    PureState,
    Concurrence,
    Numeric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EofEstimate {
    pub value: f64,
    pub route: EofRoute,
    /// Every local search reported convergence.
    pub converged: bool,
    /// Set when the value comes from a non-converged search and should be
    /// read as an upper bound only.
    pub upper_bound_only: bool,
    pub decomposition_size: usize,
}

pub fn binary_entropy(p: f64) -> f64 {
    let h = |x: f64| if x <= 0.0 || x >= 1.0 { 0.0 } else { -x * x.log2() };
    h(p) + h(1.0 - p)
}

/// Wootters concurrence of a two-qubit state.
pub fn concurrence(rho: &CMatrix) -> Result<f64> {
    if rho.nrows() != 4 || rho.ncols() != 4 {
        return Err(Error::DimensionMismatch { expected: 4, found: rho.nrows() });
    }
    let sy = CMatrix::from_row_slice(2, 2, &[linalg::ZERO, c(0.0, -1.0), c(0.0, 1.0), linalg::ZERO]);
    let yy = linalg::kron(&sy, &sy);
    let tilde = &yy * rho.conjugate() * &yy;
    let s = linalg::psd_sqrt(rho);
    let r = &s * tilde * &s;
    let mut l: Vec<f64> = linalg::hermitian_eigenvalues(&r).iter().map(|v| v.max(0.0).sqrt()).collect();
    l.sort_by(|a, b| b.total_cmp(a));
    Ok((l[0] - l[1] - l[2] - l[3]).max(0.0))
}

pub fn eof_from_concurrence(conc: f64) -> f64 {
    let x = (1.0 - conc * conc).max(0.0).sqrt();
    binary_entropy(0.5 * (1.0 + x))
}

/// Entanglement of formation of `rho` across `cut_a | rest`.
pub fn entanglement_of_formation<S: AsRef<str>>(
    rho: &DensityOperator,
    cut_a: &[S],
    opts: &EofOptions,
) -> Result<EofEstimate> {
    let sys = rho.systems();
    let a_pos = sys.positions(cut_a)?;
    if a_pos.is_empty() || a_pos.len() == sys.dims.len() {
        return Err(Error::InvalidParameter("cut must leave both sides non-empty".into()));
    }
    let b_labels: Vec<String> = (0..sys.dims.len())
        .filter(|p| !a_pos.contains(p))
        .map(|p| sys.labels[p].clone())
        .collect();
    let mut order: Vec<String> = a_pos.iter().map(|&p| sys.labels[p].clone()).collect();
    order.extend(b_labels.iter().cloned());
    let ordered = rho.reorder(&order)?;
    let d_a: usize = a_pos.iter().map(|&p| sys.dims[p]).product();
    let d_b = rho.dim() / d_a;

    let (vals, vecs) = linalg::hermitian_eigen(ordered.matrix());
    let ws: Vec<CVector> = vals
        .iter()
        .enumerate()
        .filter(|(_, &l)| l > linalg::EIGEN_FLOOR)
        .map(|(i, &l)| vecs.column(i).into_owned() * c(l.sqrt(), 0.0))
        .collect();
    if ws.len() == 1 {
        let h = pure_marginal_entropy(&ws[0], d_a, d_b);
        return Ok(EofEstimate {
            value: h,
            route: EofRoute::PureState,
            converged: true,
            upper_bound_only: false,
            decomposition_size: 1,
        });
    }
    if opts.method == EofMethod::Auto && d_a == 2 && d_b == 2 {
        let conc = concurrence(ordered.matrix())?;
        return Ok(EofEstimate {
            value: eof_from_concurrence(conc),
            route: EofRoute::Concurrence,
            converged: true,
            upper_bound_only: false,
            decomposition_size: ws.len(),
        });
    }
    Ok(eof_from_vectors(&ws, d_a, d_b, opts))
}

/// Numeric EoF from any vectors with `sum_i w_i w_i^dagger = rho`, each
/// laid out as `d_a x d_b` row-major (cut side first).
pub fn eof_from_vectors(ws: &[CVector], d_a: usize, d_b: usize, opts: &EofOptions) -> EofEstimate {
    let r = ws.len();
    let m = opts.max_decomposition.unwrap_or(r * r).max(r);
    let objective = |x: &[f64]| decomposition_entropy(x, ws, m, d_a, d_b);
    let init = |s: usize, rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        if s == 0 {
            // spectral (or purifier-basis) decomposition padded with zeros
            let mut x = vec![0.0; 2 * m * r];
            for i in 0..r {
                x[2 * (i * r + i)] = 1.0;
            }
            for v in x.iter_mut() {
                *v += 1e-3 * (rng.random::<f64>() - 0.5);
            }
            x
        } else {
            (0..2 * m * r).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect()
        }
    };
    let res = match opts.local.method {
        LocalMethod::QuasiNewton => {
            let fg = |x: &[f64]| decomposition_entropy_with_gradient(x, ws, m, d_a, d_b);
            optimize::multistart_with(|x0| optimize::lbfgs(&fg, x0, &opts.local), init, opts.starts, opts.seed)
        }
        _ => optimize::multistart(&objective, init, opts.starts, opts.seed, &opts.local),
    };
    let converged = res.converged_starts == opts.starts.max(1);
    EofEstimate {
        value: res.best.value.max(0.0),
        route: EofRoute::Numeric,
        converged,
        upper_bound_only: !converged,
        decomposition_size: m,
    }
}

fn pure_marginal_entropy(w: &CVector, d_a: usize, d_b: usize) -> f64 {
    let x = CMatrix::from_fn(d_a, d_b, |a, b| w[a * d_b + b]);
    let sigma = if d_a <= d_b { &x * x.adjoint() } else { x.adjoint() * &x };
    let p = sigma.trace().re;
    if p <= 0.0 {
        return 0.0;
    }
    linalg::entropy_bits(&(sigma / c(p, 0.0)))
}

/// Average marginal entropy of the decomposition encoded by `x`.
fn decomposition_entropy(x: &[f64], ws: &[CVector], m: usize, d_a: usize, d_b: usize) -> f64 {
    let r = ws.len();
    let u = linalg::isometry_from_reals(x, m, r);
    let n = d_a * d_b;
    let mut total = 0.0;
    let mut psi = CVector::zeros(n);
    for j in 0..m {
        psi.fill(linalg::ZERO);
        for i in 0..r {
            psi.axpy(u[(j, i)], &ws[i], linalg::ONE);
        }
        let p = psi.norm_squared();
        if p < 1e-300 {
            continue;
        }
        let x = CMatrix::from_fn(d_a, d_b, |a, b| psi[a * d_b + b]);
        let sigma = if d_a <= d_b { &x * x.adjoint() } else { x.adjoint() * &x };
        // p H(sigma/p) = -sum mu log mu + p log p
        let mut acc = p * p.log2();
        for mu in linalg::hermitian_eigenvalues(&sigma) {
            if mu > 1e-300 {
                acc -= mu * mu.log2();
            }
        }
        total += acc;
    }
    total
}

/// [`decomposition_entropy`] with its gradient in the same real layout.
/// The isometry is the polar factor `U = G (G^dagger G)^{-1/2}`; the inverse
/// square root is differentiated through its eigen-decomposition.
fn decomposition_entropy_with_gradient(x: &[f64], ws: &[CVector], m: usize, d_a: usize, d_b: usize) -> (f64, Vec<f64>) {
    let r = ws.len();
    let g = linalg::complex_matrix_from_reals(x, m, r);
    let (lam, v) = linalg::hermitian_eigen(&(g.adjoint() * &g));
    let lam: Vec<f64> = lam.iter().map(|l| l.max(1e-300)).collect();
    let diag = |f: &dyn Fn(f64) -> f64| CMatrix::from_diagonal(&CVector::from_iterator(r, lam.iter().map(|&l| c(f(l), 0.0))));
    let t = &v * diag(&|l| l.powf(-0.5)) * v.adjoint();
    let u = &g * &t;
    let n = d_a * d_b;
    let mut total = 0.0;
    let mut gu = CMatrix::zeros(m, r);
    let mut psi = CVector::zeros(n);
    for j in 0..m {
        psi.fill(linalg::ZERO);
        for i in 0..r {
            psi.axpy(u[(j, i)], &ws[i], linalg::ONE);
        }
        let p = psi.norm_squared();
        if p < 1e-300 {
            continue;
        }
        let xm = CMatrix::from_fn(d_a, d_b, |a, b| psi[a * d_b + b]);
        let small_a = d_a <= d_b;
        let sigma = if small_a { &xm * xm.adjoint() } else { xm.adjoint() * &xm };
        let (mu, e) = linalg::hermitian_eigen(&sigma);
        let mut acc = p * p.log2();
        for &l in &mu {
            if l > 1e-300 {
                acc -= l * l.log2();
            }
        }
        total += acc;
        let logs = CVector::from_iterator(mu.len(), mu.iter().map(|&l| c(if l > 1e-300 { l.log2() } else { 0.0 }, 0.0)));
        let log_sigma = &e * CMatrix::from_diagonal(&logs) * e.adjoint();
        let gx = if small_a { &xm * c(p.log2(), 0.0) - &log_sigma * &xm } else { &xm * c(p.log2(), 0.0) - &xm * &log_sigma };
        for i in 0..r {
            let mut acc = linalg::ZERO;
            for a in 0..d_a {
                for b in 0..d_b {
                    acc += gx[(a, b)] * ws[i][a * d_b + b].conj();
                }
            }
            gu[(j, i)] = acc;
        }
    }
    // chain rule through U = G S^{-1/2}, S = G^dagger G
    let bm = v.adjoint() * (gu.adjoint() * &g) * &v;
    let f = |l: f64| l.powf(-0.5);
    let cm = CMatrix::from_fn(r, r, |i, k| {
        let li = lam[i];
        let lk = lam[k];
        let dd = if (li - lk).abs() > 1e-12 * li.max(lk) { (f(li) - f(lk)) / (li - lk) } else { -0.5 * li.powf(-1.5) };
        bm[(k, i)] * c(dd, 0.0)
    });
    let k = &v * cm.transpose() * v.adjoint();
    let gg = &gu * &t + &g * (&k + k.adjoint());
    let grad = linalg::reals_from_complex_matrix(&gg).into_iter().map(|v| 2.0 * v).collect();
    (total, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::PureState;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn werner(f: f64) -> DensityOperator {
        let phi = PureState::maximally_entangled(2, "A", "B").unwrap();
        let p = linalg::projector(phi.vector());
        let m = p * c(f, 0.0) + linalg::identity(4) * c((1.0 - f) / 4.0, 0.0);
        DensityOperator::new(m, &[2, 2], &["A", "B"]).unwrap()
    }

    fn numeric() -> EofOptions {
        EofOptions { method: EofMethod::Numeric, starts: 8, ..Default::default() }
    }

    #[test]
    fn bell_state_has_one_ebit() {
        let phi = DensityOperator::from_pure(&PureState::maximally_entangled(2, "A", "B").unwrap());
        let e = entanglement_of_formation(&phi, &["A"], &EofOptions::default()).unwrap();
        assert!((e.value - 1.0).abs() < 1e-12);
        assert_eq!(e.route, EofRoute::PureState);
    }

    #[test]
    fn product_mixed_state_is_unentangled() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = DensityOperator::new(linalg::random_density_matrix(2, 2, &mut rng), &[2], &["A"]).unwrap();
        let b = DensityOperator::new(linalg::random_density_matrix(2, 2, &mut rng), &[2], &["B"]).unwrap();
        let e = entanglement_of_formation(&a.tensor(&b).unwrap(), &["A"], &numeric()).unwrap();
        assert!(e.value < 1e-4, "{e:?}");
    }

    #[test]
    fn werner_state_numeric_matches_closed_form() {
        // Werner fidelity parameter 0.9: concurrence (3f-1)/2 = 0.85
        let rho = werner(0.9);
        let conc = concurrence(rho.matrix()).unwrap();
        assert!((conc - 0.85).abs() < 1e-12);
        let exact = eof_from_concurrence(conc);
        let e = entanglement_of_formation(&rho, &["A"], &numeric()).unwrap();
        assert!((e.value - exact).abs() < 1e-3, "{} vs {}", e.value, exact);
    }

    #[test]
    fn qubit_qutrit_pure_state_uses_marginal_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let psi = PureState::new(linalg::random_unit_vector(6, &mut rng), &[2, 3], &["A", "B"]).unwrap();
        let e = entanglement_of_formation(&DensityOperator::from_pure(&psi), &["B"], &numeric()).unwrap();
        let h = psi.marginal_entropy(&["A"]).unwrap();
        assert!((e.value - h).abs() < 1e-6);
    }

    #[test]
    fn cut_must_be_proper() {
        let rho = werner(0.5);
        assert!(entanglement_of_formation(&rho, &["A", "B"], &numeric()).is_err());
        assert!(entanglement_of_formation(&rho, &["C"], &numeric()).is_err());
    }

    #[test]
    fn decomposition_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rho = linalg::random_density_matrix(6, 3, &mut rng);
        let (vals, vecs) = linalg::hermitian_eigen(&rho);
        let ws: Vec<CVector> = vals.iter().enumerate().filter(|(_, &l)| l > 1e-12).map(|(i, &l)| vecs.column(i).into_owned() * c(l.sqrt(), 0.0)).collect();
        let (m, r) = (5, ws.len());
        for (d_a, d_b) in [(2, 3), (3, 2)] {
            let x: Vec<f64> = (0..2 * m * r).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
            let (f0, g) = decomposition_entropy_with_gradient(&x, &ws, m, d_a, d_b);
            assert!((f0 - decomposition_entropy(&x, &ws, m, d_a, d_b)).abs() < 1e-12);
            for k in 0..x.len() {
                let h = 1e-6;
                let mut xp = x.clone();
                xp[k] += h;
                let mut xm = x.clone();
                xm[k] -= h;
                let fd = (decomposition_entropy(&xp, &ws, m, d_a, d_b) - decomposition_entropy(&xm, &ws, m, d_a, d_b)) / (2.0 * h);
                assert!((fd - g[k]).abs() < 1e-6, "component {k}: {fd} vs {}", g[k]);
            }
        }
    }
}
