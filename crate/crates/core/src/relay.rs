//! Primitive relay bounds (receiver 1 only helps receiver 2 over a quantum
//! conferencing link) and conferencing-rate accounting.
//!
//! Each bound is evaluated on a grid of link rates. A witness found at one
//! rate is a valid witness at every rate, so the witnesses of the whole grid
//! are pooled and each grid value is the best pooled value; bound curves
//! are then nondecreasing by construction.

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::broadcast::BroadcastChannel;
use crate::channel::KrausFile;
use crate::eof::{self, EofEstimate, EofOptions};
use crate::error::{Error, Result};
use crate::linalg::{self, c, CMatrix, CVector, C64};
use crate::optimize::{self, LocalMethod, LocalOptions, LocalResult};
use crate::quantum::{self, Dilation};
use crate::regions::{self, QuantumInputState};
use crate::state::SCHEMA_VERSION;

pub const SINGLE_LETTER_FLAG: &str = "single-letter evaluation of a regularized expression";

/// Rate of the entanglement-assisted quantum link obtained by teleporting
/// over a classical link of rate `c12`.
pub fn teleport_convert(c12: f64) -> Result<f64> {
    check_rate(c12)?;
    Ok(c12 / 2.0)
}

/// Classical rate of a quantum link used for super-dense coding.
pub fn superdense_convert(cq12: f64) -> Result<f64> {
    check_rate(cq12)?;
    Ok(2.0 * cq12)
}

fn check_rate(x: f64) -> Result<()> {
    if x < 0.0 || !x.is_finite() {
        return Err(Error::InvalidParameter(format!("rate must be non-negative, got {x}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConferencingLink {
    pub classical_rate: f64,
    pub quantum_rate: f64,
    pub entangled_decoders: bool,
}

impl ConferencingLink {
    /// Classical link; with shared entanglement it also carries qubits at
    /// half the rate.
    pub fn classical(c12: f64, entangled_decoders: bool) -> Result<Self> {
        let quantum_rate = if entangled_decoders { teleport_convert(c12)? } else { check_rate(c12).map(|_| 0.0)? };
        Ok(Self { classical_rate: c12, quantum_rate, entangled_decoders })
    }

    /// Quantum link; with shared entanglement it carries bits at twice the
    /// rate, otherwise at the same rate.
    pub fn quantum(cq12: f64, entangled_decoders: bool) -> Result<Self> {
        let classical_rate = if entangled_decoders { superdense_convert(cq12)? } else { check_rate(cq12).map(|_| cq12)? };
        Ok(Self { classical_rate, quantum_rate: cq12, entangled_decoders })
    }
}

/// Throughput of a chain `hop0, link0, hop1, link1, ...`: the smallest
/// coherent information or link rate along the way.
pub fn repeater_chain(hops: &[f64], links: &[f64]) -> Result<f64> {
    if hops.is_empty() {
        return Err(Error::InvalidParameter("empty repeater chain".into()));
    }
    if links.len() + 1 != hops.len() {
        return Err(Error::InvalidParameter(format!("{} hops need {} links, got {}", hops.len(), hops.len() - 1, links.len())));
    }
    for &l in links {
        check_rate(l)?;
    }
    Ok(hops.iter().chain(links).copied().fold(f64::INFINITY, f64::min))
}

/// Which register plays `T` in the cut through receiver 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CutsetAuxiliary {
    /// `T = D(B1)`, what receiver 1 forwards; `D` is optimized.
    #[default]
    ForwardedRegister,
    /// `T` is a reference system of the input state.
    InputReference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelayOptions {
    pub restarts: usize,
    pub seed: u64,
    pub local: LocalOptions,
    /// `(A1, A2)` for decode-forward; the cutset and the EoF bound use
    /// `A = A1 A2`. `None` uses the input dimension for both.
    pub ref_dims: Option<(usize, usize)>,
    pub t_dim: usize,
    pub auxiliary: CutsetAuxiliary,
    /// Dimension of the simulated output `B1^`; `None` means `dim B1`.
    pub bhat_dim: Option<usize>,
    pub penalty_weights: Vec<f64>,
    pub eof_check: EofOptions,
}

impl Default for RelayOptions {
    fn default() -> Self {
        Self {
            restarts: 8,
            seed: 0,
            local: LocalOptions { method: LocalMethod::QuasiNewton, max_evals: 6000, f_tol: 1e-11, x_tol: 1e-9, initial_step: 0.5 },
            ref_dims: None,
            t_dim: 4,
            auxiliary: CutsetAuxiliary::default(),
            bhat_dim: None,
            penalty_weights: vec![10.0, 100.0, 1000.0],
            eof_check: EofOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeForwardWitness {
    pub state: QuantumInputState,
    /// `I(A1>B1)`
    pub i1: f64,
    /// `I(A2>B2)`
    pub i2: f64,
}

impl DecodeForwardWitness {
    pub fn value(&self, cq12: f64) -> f64 {
        self.i2 + self.i1.min(cq12)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutsetWitness {
    pub state: QuantumInputState,
    /// Kraus form of `D: B1 -> T` (forwarded-register reading only).
    pub forward: Option<KrausFile>,
    /// `I(A T > B2)`
    pub cut_b2: f64,
    /// `I(A > B1 B2)`
    pub cut_b1b2: f64,
}

impl CutsetWitness {
    pub fn value(&self, cq12: f64) -> f64 {
        (self.cut_b2 + cq12).min(self.cut_b1b2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EofWitness {
    pub state: QuantumInputState,
    /// Kraus form of `F: B1 -> B1^`.
    pub simulation: KrausFile,
    /// `I(A > B1^ B2)`
    pub coherent_info: f64,
    /// Average entanglement of an explicit decomposition across
    /// `B1^ | A B2 E`; an upper bound on the entanglement of formation.
    pub eof_upper: f64,
    /// Independent estimate with doubled restarts (filled in for reported
    /// witnesses).
    pub eof_check: Option<EofEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelayBounds {
    pub cq12: f64,
    pub cutset: f64,
    pub decode_forward: f64,
    pub eof_lower: f64,
    pub cutset_witness: CutsetWitness,
    pub decode_forward_witness: DecodeForwardWitness,
    pub eof_witness: EofWitness,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelayReport {
    pub version: String,
    pub points: Vec<RelayBounds>,
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl RelayReport {
    pub fn csv(&self) -> String {
        let mut s = String::from("cq12,cutset,decode_forward,eof_lower\n");
        for p in &self.points {
            s.push_str(&format!("{},{},{},{}\n", p.cq12, p.cutset, p.decode_forward, p.eof_lower));
        }
        s
    }
}

/// `v` with the matrix `m` applied to subsystem `pos`.
fn apply_on(v: &CVector, dims: &[usize], pos: usize, m: &CMatrix) -> CVector {
    let left: usize = dims[..pos].iter().product();
    let right: usize = dims[pos + 1..].iter().product();
    let (din, dout) = (dims[pos], m.nrows());
    let mut out = CVector::zeros(left * dout * right);
    for l in 0..left {
        for o in 0..dout {
            for i in 0..din {
                let mo = m[(o, i)];
                if mo == linalg::ZERO {
                    continue;
                }
                for r in 0..right {
                    out[(l * dout + o) * right + r] += mo * v[(l * din + i) * right + r];
                }
            }
        }
    }
    out
}

fn softmin2(a: f64, b: f64, tau: f64) -> (f64, f64, f64) {
    let m = a.min(b);
    let (ea, eb) = ((-(a - m) / tau).exp(), (-(b - m) / tau).exp());
    let z = ea + eb;
    (m - tau * z.ln(), ea / z, eb / z)
}

fn validate(opts: &RelayOptions, grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty conferencing grid".into()));
    }
    for &q in grid {
        check_rate(q)?;
    }
    if opts.t_dim == 0 || opts.bhat_dim == Some(0) {
        return Err(Error::InvalidParameter("auxiliary dimensions must be positive".into()));
    }
    Ok(())
}

fn refs(bc: &BroadcastChannel, opts: &RelayOptions) -> (usize, usize) {
    opts.ref_dims.unwrap_or((bc.in_dim(), bc.in_dim()))
}

fn best_by<T, F: Fn(&T) -> f64>(pool: &[T], f: F) -> usize {
    let mut best = 0;
    for i in 1..pool.len() {
        if f(&pool[i]) > f(&pool[best]) {
            best = i;
        }
    }
    best
}

fn product_input(dims: &[usize]) -> CVector {
    let n: usize = dims.iter().product();
    linalg::basis_vector(n, 0)
}

fn df_witness(dil: &Dilation, r: (usize, usize), phi: &CVector) -> Result<DecodeForwardWitness> {
    let ([i1, i2], _) = regions::inner_terms(dil, phi, [r.0, r.1], false);
    let state = QuantumInputState::new(phi, &[r.0, r.1, dil.d_in], &["A1", "A2", "A'"])?;
    Ok(DecodeForwardWitness { state, i1, i2 })
}

/// Pooled decode-forward witnesses for every grid point, plus the product
/// input (value 0).
fn decode_forward_pool(bc: &BroadcastChannel, grid: &[f64], opts: &RelayOptions) -> Result<Vec<DecodeForwardWitness>> {
    let dil = Dilation::of(bc);
    let r = refs(bc, opts);
    let dim = r.0 * r.1 * bc.in_dim();
    let local = LocalOptions { method: LocalMethod::QuasiNewton, ..opts.local };
    let search = |slot: usize, _s: usize, rng: &mut ChaCha8Rng| {
        let cq = grid[slot];
        let mut x = regions::gaussian_vec(2 * dim, rng);
        let mut res = LocalResult { x: x.clone(), value: f64::NAN, evals: 0, converged: true };
        for &tau in &regions::TAUS {
            let fg = |x: &[f64]| {
                let (phi, n) = regions::unit_with_norm(x);
                let ([i1, i2], g) = regions::inner_terms(&dil, &phi, [r.0, r.1], true);
                let [g1, g2] = g.expect("gradient requested");
                let (m, w1, _) = softmin2(i1, cq, tau);
                let g = &g2 + &g1 * c(w1, 0.0);
                (-(i2 + m), regions::real_gradient(&phi, &g, n).iter().map(|v| -v).collect())
            };
            let step = optimize::lbfgs(&fg, x, &local);
            res.evals += step.evals;
            res.converged &= step.converged;
            x = step.x;
        }
        res.x = x;
        res
    };
    let exact = |slot: usize, x: &[f64]| {
        let (phi, _) = regions::unit_with_norm(x);
        let ([i1, i2], _) = regions::inner_terms(&dil, &phi, [r.0, r.1], false);
        i2 + i1.min(grid[slot])
    };
    let best = regions::run_tasks(grid.len(), opts.restarts, opts.seed, search, exact);
    let mut pool = vec![df_witness(&dil, r, &product_input(&[r.0, r.1, bc.in_dim()]))?];
    for (o, _, _) in best {
        pool.push(df_witness(&dil, r, &regions::unit_with_norm(&o.x).0)?);
    }
    Ok(pool)
}

/// Evaluates both cuts for `phi` on `A A'` (or `A T A'` for the literal
/// reading) and forwarding isometry `d`.
struct CutModel<'a> {
    dil: &'a Dilation,
    aux: CutsetAuxiliary,
    a: usize,
    t: usize,
}

impl CutModel<'_> {
    fn phi_len(&self) -> usize {
        match self.aux {
            CutsetAuxiliary::ForwardedRegister => self.a * self.dil.d_in,
            CutsetAuxiliary::InputReference => self.a * self.t * self.dil.d_in,
        }
    }

    fn d_shape(&self) -> (usize, usize) {
        match self.aux {
            CutsetAuxiliary::ForwardedRegister => (self.t * self.dil.d1, self.dil.d1),
            CutsetAuxiliary::InputReference => (0, 0),
        }
    }

    fn split(&self, x: &[f64]) -> (CVector, Option<CMatrix>) {
        let n = 2 * self.phi_len();
        let phi = quantum::unit(&x[..n]);
        let (rows, cols) = self.d_shape();
        let d = (rows > 0).then(|| linalg::isometry_from_reals(&x[n..], rows, cols));
        (phi, d)
    }

    fn nparams(&self) -> usize {
        let (rows, cols) = self.d_shape();
        2 * self.phi_len() + 2 * rows * cols
    }

    fn cuts(&self, phi: &CVector, d: Option<&CMatrix>) -> [f64; 2] {
        let dil = self.dil;
        match self.aux {
            CutsetAuxiliary::ForwardedRegister => {
                let psi = dil.push(phi);
                let dims = dil.output_dims(&[self.a]);
                let cut2 = quantum::h(&psi, &dims, &[1, 2]) - quantum::h(&psi, &dims, &[3]);
                let d = d.expect("forwarding map");
                let fwd = apply_on(&psi, &dims, 1, d);
                // A T F B2 E
                let fd = [self.a, self.t, dil.d1, dil.d2, dil.env];
                let cut1 = quantum::h(&fwd, &fd, &[3]) - quantum::h(&fwd, &fd, &[0, 1, 3]);
                [cut1, cut2]
            }
            CutsetAuxiliary::InputReference => {
                let psi = dil.push(phi);
                // A T B1 B2 E
                let dims = dil.output_dims(&[self.a, self.t]);
                let cut1 = quantum::h(&psi, &dims, &[3]) - quantum::h(&psi, &dims, &[0, 1, 3]);
                let cut2 = quantum::h(&psi, &dims, &[2, 3]) - quantum::h(&psi, &dims, &[0, 2, 3]);
                [cut1, cut2]
            }
        }
    }

    fn witness(&self, phi: &CVector, d: Option<&CMatrix>) -> Result<CutsetWitness> {
        let [cut_b2, cut_b1b2] = self.cuts(phi, d);
        let state = match self.aux {
            CutsetAuxiliary::ForwardedRegister => QuantumInputState::new(phi, &[self.a, self.dil.d_in], &["A", "A'"])?,
            CutsetAuxiliary::InputReference => {
                QuantumInputState::new(phi, &[self.a, self.t, self.dil.d_in], &["A", "T", "A'"])?
            }
        };
        let forward = d.map(|d| isometry_to_kraus(d, self.t, self.dil.d1, "B1", "T"));
        Ok(CutsetWitness { state, forward, cut_b2, cut_b1b2 })
    }
}

/// Channel `rho -> Tr_F V rho V^dag` for an isometry `V: in -> out (x) F`.
fn isometry_to_kraus(v: &CMatrix, out: usize, din: usize, in_label: &str, out_label: &str) -> KrausFile {
    let f = v.nrows() / out;
    let kraus = (0..f)
        .map(|e| {
            let k = CMatrix::from_fn(out, din, |o, i| v[(o * f + e, i)]);
            crate::state::matrix_to_rows(&k)
        })
        .collect();
    KrausFile {
        in_dims: vec![din],
        in_labels: vec![in_label.into()],
        out_dims: vec![out],
        out_labels: vec![out_label.into()],
        kraus,
    }
}

/// `|b> -> |b>_T |0>_F` when `T` is large enough, and `|b> -> |0>_T |b>_F`.
fn forwarding_seeds(t: usize, d1: usize) -> Vec<CMatrix> {
    let mut out = vec![CMatrix::from_fn(t * d1, d1, |r, b| if r == b { linalg::ONE } else { linalg::ZERO })];
    if t >= d1 {
        out.push(CMatrix::from_fn(t * d1, d1, |r, b| if r == b * d1 { linalg::ONE } else { linalg::ZERO }));
    }
    out
}

fn cutset_pool(
    bc: &BroadcastChannel,
    grid: &[f64],
    opts: &RelayOptions,
    df_pool: &[DecodeForwardWitness],
) -> Result<Vec<CutsetWitness>> {
    let dil = Dilation::of(bc);
    let (r1, r2) = refs(bc, opts);
    let model = CutModel { dil: &dil, aux: opts.auxiliary, a: r1 * r2, t: opts.t_dim };
    let mut pool = Vec::new();
    // decode-forward inputs with A = A1 A2
    let seeds_phi: Vec<CVector> = df_pool.iter().map(|w| w.state.vector()).collect();
    match opts.auxiliary {
        CutsetAuxiliary::ForwardedRegister => {
            for phi in &seeds_phi {
                for d in forwarding_seeds(opts.t_dim, bc.d1()) {
                    pool.push(model.witness(phi, Some(&d))?);
                }
            }
        }
        CutsetAuxiliary::InputReference => {
            for phi in &seeds_phi {
                let e = linalg::permute_vector(
                    &linalg::kron_vec(&linalg::basis_vector(opts.t_dim, 0), phi),
                    &[opts.t_dim, r1 * r2, bc.in_dim()],
                    &[1, 0, 2],
                );
                pool.push(model.witness(&e, None)?);
            }
        }
    }
    let n = model.nparams();
    let local = LocalOptions { method: LocalMethod::QuasiNewton, ..opts.local };
    let search = |slot: usize, _s: usize, rng: &mut ChaCha8Rng| {
        let cq = grid[slot];
        let mut x = regions::gaussian_vec(n, rng);
        let mut evals = 0;
        let mut converged = true;
        for &tau in &regions::TAUS {
            let f = |x: &[f64]| {
                let (phi, d) = model.split(x);
                let [a, b] = model.cuts(&phi, d.as_ref());
                -softmin2(a + cq, b, tau).0
            };
            let r = optimize::minimize(&f, x, &local);
            evals += r.evals;
            converged &= r.converged;
            x = r.x;
        }
        LocalResult { value: f64::NAN, x, evals, converged }
    };
    let exact = |slot: usize, x: &[f64]| {
        let (phi, d) = model.split(x);
        let [a, b] = model.cuts(&phi, d.as_ref());
        (a + grid[slot]).min(b)
    };
    for (o, _, _) in regions::run_tasks(grid.len(), opts.restarts, opts.seed ^ 0x5eed_0001, search, exact) {
        let (phi, d) = model.split(&o.x);
        pool.push(model.witness(&phi, d.as_ref())?);
    }
    Ok(pool)
}

/// Input `phi` on `A A'`, simulation isometry `F: B1 -> B1^ (x) E_F`, and a
/// decomposition isometry mixing the `E_F` branches.
struct EofModel<'a> {
    dil: &'a Dilation,
    a: usize,
    bhat: usize,
    ef: usize,
    m: usize,
}

struct EofEval {
    coherent: f64,
    bound: f64,
    /// Branch vectors on `B1^ A B2 E`, one per basis state of `E_F`.
    branches: Vec<CVector>,
}

impl EofModel<'_> {
    fn sizes(&self) -> [usize; 3] {
        [2 * self.a * self.dil.d_in, 2 * self.bhat * self.ef * self.dil.d1, 2 * self.m * self.ef]
    }

    fn nparams(&self) -> usize {
        self.sizes().iter().sum()
    }

    fn split(&self, x: &[f64]) -> (CVector, CMatrix, CMatrix) {
        let [n0, n1, _] = self.sizes();
        (
            quantum::unit(&x[..n0]),
            linalg::isometry_from_reals(&x[n0..n0 + n1], self.bhat * self.ef, self.dil.d1),
            linalg::isometry_from_reals(&x[n0 + n1..], self.m, self.ef),
        )
    }

    fn eval(&self, phi: &CVector, f: &CMatrix, u: &CMatrix) -> EofEval {
        let dil = self.dil;
        let psi = dil.push(phi);
        let dims = dil.output_dims(&[self.a]);
        let sim = apply_on(&psi, &dims, 1, f);
        // A B1^ E_F B2 E
        let sd = [self.a, self.bhat, self.ef, dil.d2, dil.env];
        let coherent = quantum::h(&sim, &sd, &[1, 3]) - quantum::h(&sim, &sd, &[0, 1, 3]);
        let moved = linalg::permute_vector(&sim, &sd, &[2, 1, 0, 3, 4]);
        let rest = sim.len() / self.ef;
        let branches: Vec<CVector> = (0..self.ef).map(|k| moved.rows(k * rest, rest).into_owned()).collect();
        let mut bound = 0.0;
        for j in 0..self.m {
            let mut u_j = CVector::zeros(rest);
            for (k, b) in branches.iter().enumerate() {
                u_j += b * u[(j, k)];
            }
            let p = u_j.norm_squared();
            if p > 1e-14 {
                bound += p * quantum::h(&(u_j / c(p.sqrt(), 0.0)), &[self.bhat, rest / self.bhat], &[0]);
            }
        }
        EofEval { coherent, bound, branches }
    }

    fn witness(&self, phi: &CVector, f: &CMatrix, u: &CMatrix) -> Result<EofWitness> {
        let e = self.eval(phi, f, u);
        Ok(EofWitness {
            state: QuantumInputState::new(phi, &[self.a, self.dil.d_in], &["A", "A'"])?,
            simulation: isometry_to_kraus(f, self.bhat, self.dil.d1, "B1", "B1^"),
            coherent_info: e.coherent,
            eof_upper: e.bound,
            eof_check: None,
        })
    }
}

const EOF_MARGIN: f64 = 2e-3;

fn eof_pool(bc: &BroadcastChannel, grid: &[f64], opts: &RelayOptions, df_pool: &[DecodeForwardWitness]) -> Result<Vec<EofWitness>> {
    let dil = Dilation::of(bc);
    let (r1, r2) = refs(bc, opts);
    let bhat = opts.bhat_dim.unwrap_or(bc.d1());
    let ef = bc.d1();
    let model = EofModel { dil: &dil, a: r1 * r2, bhat, ef, m: 2 * ef };
    let mut pool = Vec::new();
    let u0 = CMatrix::from_fn(model.m, ef, |j, k| if j == k { linalg::ONE } else { linalg::ZERO });
    // B1 swapped out to E_F (decoupled output) and, when B1^ holds B1, kept
    let mut seeds_f = vec![CMatrix::from_fn(bhat * ef, bc.d1(), |r, b| if r == b { linalg::ONE } else { linalg::ZERO })];
    if bhat >= bc.d1() {
        seeds_f.push(CMatrix::from_fn(bhat * ef, bc.d1(), |r, b| if r == b * ef { linalg::ONE } else { linalg::ZERO }));
    }
    for w in df_pool {
        for f in &seeds_f {
            pool.push(model.witness(&w.state.vector(), f, &u0)?);
        }
    }
    let n = model.nparams();
    let local = LocalOptions { method: LocalMethod::QuasiNewton, ..opts.local };
    let complex_reals = |v: &[C64]| -> Vec<f64> { v.iter().flat_map(|z| [z.re, z.im]).collect() };
    // first restart per rate: the best decode-forward state with B1 kept
    let df_start = |cq: f64| -> Option<Vec<f64>> {
        let w = df_pool.iter().max_by(|a, b| a.value(cq).total_cmp(&b.value(cq)))?;
        let keep = seeds_f.last()?;
        let mut x = complex_reals(w.state.vector().as_slice());
        x.extend(linalg::reals_from_complex_matrix(keep));
        x.extend(linalg::reals_from_complex_matrix(&u0));
        (x.len() == n).then_some(x)
    };
    let search = |slot: usize, s: usize, rng: &mut ChaCha8Rng| {
        // the quadratic penalty leaves a violation of order 1/lambda
        let cq = grid[slot] - EOF_MARGIN;
        let random = regions::gaussian_vec(n, rng);
        let mut x = if s == 0 { df_start(grid[slot]).unwrap_or(random) } else { random };
        let mut evals = 0;
        let mut converged = true;
        for &lambda in &opts.penalty_weights {
            let f = |x: &[f64]| {
                let (phi, fm, u) = model.split(x);
                let e = model.eval(&phi, &fm, &u);
                -e.coherent + lambda * (e.bound - cq).max(0.0).powi(2)
            };
            let r = optimize::minimize(&f, x, &local);
            evals += r.evals;
            converged &= r.converged;
            x = r.x;
        }
        LocalResult { value: f64::NAN, x, evals, converged }
    };
    let exact = |slot: usize, x: &[f64]| {
        let (phi, fm, u) = model.split(x);
        let e = model.eval(&phi, &fm, &u);
        if e.bound <= grid[slot] {
            e.coherent
        } else {
            f64::NEG_INFINITY
        }
    };
    for (o, _, _) in regions::run_tasks(grid.len(), opts.restarts, opts.seed ^ 0x5eed_0002, search, exact) {
        if o.exact.is_finite() {
            let (phi, fm, u) = model.split(&o.x);
            pool.push(model.witness(&phi, &fm, &u)?);
        }
    }
    Ok(pool)
}

/// Recomputes the entanglement of formation of a witness's state across
/// `B1^ | A B2 E` with the given options.
pub fn check_eof_witness(bc: &BroadcastChannel, w: &EofWitness, opts: &EofOptions) -> Result<EofEstimate> {
    let dil = Dilation::of(bc);
    let phi = w.state.vector();
    let f = w.simulation.clone().into_channel()?;
    let a = w.state.dims[0];
    let bhat = f.out_dim();
    let ef = f.kraus().len();
    let iso = CMatrix::from_fn(bhat * ef, bc.d1(), |r, i| f.kraus()[r % ef][(r / ef, i)]);
    let model = EofModel { dil: &dil, a, bhat, ef, m: ef };
    let ident = CMatrix::identity(ef, ef);
    let e = model.eval(&phi, &iso, &ident);
    let rest = e.branches[0].len() / bhat;
    Ok(eof::eof_from_vectors(&e.branches, bhat, rest, opts))
}

fn pick<'a, T>(pool: &'a [T], value: impl Fn(&T) -> f64) -> (&'a T, f64) {
    let i = best_by(pool, &value);
    (&pool[i], value(&pool[i]))
}

/// Cutset, decode-forward and EoF bounds on a grid of link rates.
pub fn relay_bounds(bc: &BroadcastChannel, grid: &[f64], opts: &RelayOptions) -> Result<RelayReport> {
    validate(opts, grid)?;
    let df = decode_forward_pool(bc, grid, opts)?;
    let cs = cutset_pool(bc, grid, opts, &df)?;
    let ef = eof_pool(bc, grid, opts, &df)?;
    let check_opts = EofOptions { starts: 2 * opts.eof_check.starts, ..opts.eof_check.clone() };
    let mut points = Vec::with_capacity(grid.len());
    for &cq in grid {
        let (dw, dv) = pick(&df, |w| w.value(cq));
        let (cw, cv) = pick(&cs, |w| w.value(cq));
        let (ew, ev) = pick(&ef, |w| if w.eof_upper <= cq { w.coherent_info } else { f64::NEG_INFINITY });
        let mut ew = ew.clone();
        ew.eof_check = Some(check_eof_witness(bc, &ew, &check_opts)?);
        points.push(RelayBounds {
            cq12: cq,
            cutset: cv,
            decode_forward: dv,
            eof_lower: ev,
            cutset_witness: cw.clone(),
            decode_forward_witness: dw.clone(),
            eof_witness: ew,
        });
    }
    let mut metadata = BTreeMap::new();
    metadata.insert("evaluation".into(), serde_json::json!(SINGLE_LETTER_FLAG));
    metadata.insert("cutset_auxiliary".into(), serde_json::to_value(opts.auxiliary).unwrap_or_default());
    metadata.insert("t_dim".into(), serde_json::json!(opts.t_dim));
    metadata.insert("bhat_dim".into(), serde_json::json!(opts.bhat_dim.unwrap_or(bc.d1())));
    metadata.insert("restarts".into(), serde_json::json!(opts.restarts));
    metadata.insert("seed".into(), serde_json::json!(opts.seed));
    Ok(RelayReport { version: SCHEMA_VERSION.into(), points, metadata })
}

/// Decode-forward values on a grid, with witnesses.
pub fn decode_forward_curve(bc: &BroadcastChannel, grid: &[f64], opts: &RelayOptions) -> Result<Vec<(f64, DecodeForwardWitness)>> {
    validate(opts, grid)?;
    let pool = decode_forward_pool(bc, grid, opts)?;
    Ok(grid
        .iter()
        .map(|&cq| {
            let (w, v) = pick(&pool, |w| w.value(cq));
            (v, w.clone())
        })
        .collect())
}

pub fn decode_forward(bc: &BroadcastChannel, cq12: f64, opts: &RelayOptions) -> Result<(f64, DecodeForwardWitness)> {
    Ok(decode_forward_curve(bc, &[cq12], opts)?.remove(0))
}

pub fn cutset_curve(bc: &BroadcastChannel, grid: &[f64], opts: &RelayOptions) -> Result<Vec<(f64, CutsetWitness)>> {
    validate(opts, grid)?;
    let df = decode_forward_pool(bc, grid, opts)?;
    let pool = cutset_pool(bc, grid, opts, &df)?;
    Ok(grid
        .iter()
        .map(|&cq| {
            let (w, v) = pick(&pool, |w| w.value(cq));
            (v, w.clone())
        })
        .collect())
}

pub fn cutset(bc: &BroadcastChannel, cq12: f64, opts: &RelayOptions) -> Result<(f64, CutsetWitness)> {
    Ok(cutset_curve(bc, &[cq12], opts)?.remove(0))
}

pub fn eof_lower(bc: &BroadcastChannel, cq12: f64, opts: &RelayOptions) -> Result<(f64, EofWitness)> {
    validate(opts, &[cq12])?;
    let df = decode_forward_pool(bc, &[cq12], opts)?;
    let pool = eof_pool(bc, &[cq12], opts, &df)?;
    let (w, v) = pick(&pool, |w| if w.eof_upper <= cq12 { w.coherent_info } else { f64::NEG_INFINITY });
    let mut w = w.clone();
    let check_opts = EofOptions { starts: 2 * opts.eof_check.starts, ..opts.eof_check.clone() };
    w.eof_check = Some(check_eof_witness(bc, &w, &check_opts)?);
    Ok((v, w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::broadcast;
    use crate::eof::binary_entropy;

    fn quick() -> RelayOptions {
        RelayOptions { restarts: 2, local: LocalOptions { max_evals: 2000, ..RelayOptions::default().local }, ..Default::default() }
    }

    fn identity_to_b1() -> BroadcastChannel {
        broadcast::route_to_b1(2, &linalg::projector(&linalg::basis_vector(2, 0))).unwrap()
    }

    #[test]
    fn conversions_are_exact() {
        assert_eq!(teleport_convert(1.0).unwrap(), 0.5);
        assert_eq!(teleport_convert(0.0).unwrap(), 0.0);
        assert_eq!(superdense_convert(teleport_convert(0.7).unwrap()).unwrap(), 0.7);
        assert!(teleport_convert(-0.1).is_err() && superdense_convert(f64::NAN).is_err());
        let link = ConferencingLink::classical(1.0, true).unwrap();
        assert_eq!(link.quantum_rate, 0.5);
        assert_eq!(ConferencingLink::quantum(0.25, true).unwrap().classical_rate, 0.5);
    }

    #[test]
    fn repeater_chain_folds_minimum() {
        assert_eq!(repeater_chain(&[0.7], &[]).unwrap(), 0.7);
        assert_eq!(repeater_chain(&[1.0, 1.0], &[0.5]).unwrap(), 0.5);
        assert_eq!(repeater_chain(&[0.8, 0.6, 0.9], &[0.7, 0.5]).unwrap(), 0.5);
        assert!(repeater_chain(&[], &[]).is_err());
        assert!(repeater_chain(&[1.0, 1.0], &[]).is_err());
    }

    #[test]
    fn decode_forward_arithmetic() {
        let st = QuantumInputState::new(&linalg::basis_vector(8, 0), &[2, 2, 2], &["A1", "A2", "A'"]).unwrap();
        let w = DecodeForwardWitness { state: st, i1: 0.3, i2: 0.2 };
        assert!((w.value(0.5) - 0.5).abs() < 1e-15);
        assert!((w.value(0.1) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn identity_to_b1_flows_through_the_link() {
        let bc = identity_to_b1();
        let (df, w) = decode_forward(&bc, 0.5, &quick()).unwrap();
        assert!((df - 0.5).abs() < 1e-6, "{df} {w:?}");
        let (cs, _) = cutset(&bc, 0.5, &quick()).unwrap();
        assert!(cs >= df - 1e-6 && cs <= 0.5 + 1e-6, "{cs}");
        let (df0, _) = decode_forward(&bc, 0.0, &quick()).unwrap();
        assert!(df0.abs() < 1e-6);
    }

    #[test]
    fn literal_auxiliary_reading_undercuts_decode_forward() {
        let bc = identity_to_b1();
        let opts = RelayOptions { auxiliary: CutsetAuxiliary::InputReference, t_dim: 2, restarts: 4, ..quick() };
        let (cs, _) = cutset(&bc, 0.5, &opts).unwrap();
        assert!((cs - 0.25).abs() < 1e-4, "{cs}");
    }

    #[test]
    fn ordering_and_saturation_on_random_channels() {
        let grid = [0.0, 0.25, 0.5, 1.0, 2.0];
        for seed in 0..3 {
            let bc = broadcast::random_broadcast(2, 2, 2, 2, 100 + seed).unwrap();
            let df = decode_forward_curve(&bc, &grid, &quick()).unwrap();
            let cs = cutset_curve(&bc, &grid, &quick()).unwrap();
            for k in 0..grid.len() {
                assert!(df[k].0 <= cs[k].0 + 1e-6, "seed {seed} cq {}: {} > {}", grid[k], df[k].0, cs[k].0);
                if k > 0 {
                    assert!(df[k].0 >= df[k - 1].0);
                }
            }
            let top = &df[grid.len() - 1];
            for k in 0..grid.len() {
                if grid[k] > top.1.i1 + 1e-6 {
                    assert_eq!(df[k].0, top.0);
                }
            }
        }
    }

    #[test]
    fn eof_bound_limits() {
        let bc = identity_to_b1();
        let opts = quick();
        let (v0, w0) = eof_lower(&bc, 0.0, &opts).unwrap();
        assert!(v0.abs() < 1e-6 && w0.eof_upper <= 1e-12, "{v0}");
        let (v1, w1) = eof_lower(&bc, 1.0, &opts).unwrap();
        assert!(v1 >= 1.0 - 1e-6, "{v1}");
        let check = w1.eof_check.unwrap();
        assert!(check.value.min(w1.eof_upper) <= 1.0 + 1e-9);
    }

    #[test]
    fn eof_bound_tracks_decode_forward_on_dephasing() {
        let bc = broadcast::qubit_dephasing_broadcast(0.1, 0.1).unwrap();
        let report = relay_bounds(&bc, &[0.0, 0.5, 1.0], &quick()).unwrap();
        assert!(report.points.iter().any(|p| p.eof_lower >= p.decode_forward - 0.05));
        for p in &report.points {
            assert!(p.eof_lower >= 0.0 && p.decode_forward <= p.cutset + 1e-6);
            assert!(p.eof_witness.eof_upper <= p.cq12);
        }
        // B2 only sees the dephased error flag, so all flow goes through B1
        assert!(report.points[0].decode_forward.abs() < 1e-6);
        assert!((report.points[2].decode_forward - (1.0 - binary_entropy(0.1))).abs() < 1e-4);
        assert_eq!(report.metadata["evaluation"], SINGLE_LETTER_FLAG);
    }
}
